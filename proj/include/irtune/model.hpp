#pragma once

#include "irtune/importance.hpp"
#include "irtune/lora.hpp"
#include "irtune/types.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace irtune {

struct ModelConfig {
  Index layers = 8;
  Index dim = 64;
  Index heads = 4;
  Index ff_dim = 256;
  Index vocab = 512;
  Index max_len = 256;
  Index classes = 4;
  std::uint64_t seed = 0;

  Index head_dim() const { return dim / heads; }
  void validate() const;
};

// Base parameters of one pre-norm encoder block. `weight`/`bias` are indexed by LoraTarget:
// query/key/value/output are dim x dim, ffn_up is ff_dim x dim, ffn_down is dim x ff_dim.
template <typename Scalar>
struct LayerParams {
  Vector<Scalar> ln1_gain, ln1_bias;
  std::array<Matrix<Scalar>, kLoraTargetCount> weight;
  std::array<Vector<Scalar>, kLoraTargetCount> bias;
  Vector<Scalar> ln2_gain, ln2_bias;

  Matrix<Scalar>& w(LoraTarget t) { return weight[static_cast<int>(t)]; }
  const Matrix<Scalar>& w(LoraTarget t) const { return weight[static_cast<int>(t)]; }
  Vector<Scalar>& b(LoraTarget t) { return bias[static_cast<int>(t)]; }
  const Vector<Scalar>& b(LoraTarget t) const { return bias[static_cast<int>(t)]; }

  Index parameter_count() const;
  Vector<Scalar> flatten() const;
};

template <typename Scalar>
struct Parameters {
  Matrix<Scalar> token_embedding;     // dim x vocab
  Matrix<Scalar> position_embedding;  // dim x max_len
  std::vector<LayerParams<Scalar>> layers;
  Vector<Scalar> final_gain, final_bias;
  Matrix<Scalar> head_weight;  // classes x dim, applied to the mean-pooled final states
  Vector<Scalar> head_bias;

  static Parameters init(const ModelConfig& config);
  static Parameters zeros_like(const Parameters& other);

  // Calls fn(name, data, size) for every tensor in a fixed order.
  void visit(const std::function<void(const std::string&, Scalar*, Index)>& fn);
  Index parameter_count() const;
  Index head_parameter_count() const { return head_weight.size() + head_bias.size(); }
};

template <typename Scalar>
struct Model {
  ModelConfig config;
  Parameters<Scalar> params;
  AdapterSet<Scalar> adapters;  // one entry per layer; may be empty slots

  static Model create(const ModelConfig& config);
  static Model create(const ModelConfig& config, const LoraConfig& lora);
};

// Attaches freshly initialized adapters (B = 0) to the listed targets of every layer.
template <typename Scalar>
AdapterSet<Scalar> make_adapters(const ModelConfig& config, const LoraConfig& lora, std::uint64_t seed);

// Token ids padded to a rectangle; mask marks the real tokens. Position of a token is its column.
struct Batch {
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> tokens;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> mask;

  Index size() const { return tokens.rows(); }
  static Batch from_sequences(const std::vector<std::vector<int>>& sequences, int pad_id = 0);
};

template <typename Scalar>
struct LayerNormCache {
  Matrix<Scalar> normalized;  // (x - mean) / std, per column
  Vector<Scalar> inv_std;
};

template <typename Scalar>
struct LayerCache {
  Matrix<Scalar> h_in;
  LayerNormCache<Scalar> ln1;
  Matrix<Scalar> attn_in;  // ln1 output
  Matrix<Scalar> q, k, v;
  std::vector<Matrix<Scalar>> probs;  // per head, row i = query position i
  Matrix<Scalar> context;
  Matrix<Scalar> h_mid;
  LayerNormCache<Scalar> ln2;
  Matrix<Scalar> ffn_in;  // ln2 output
  Matrix<Scalar> ffn_pre;
  Matrix<Scalar> ffn_act;
  std::array<Matrix<Scalar>, kLoraTargetCount> lora_hidden;  // A x for targets that carry an adapter
  Matrix<Scalar> h_out;
};

template <typename Scalar>
struct ExampleCache {
  std::vector<int> tokens;
  std::vector<int> positions;
  std::vector<LayerCache<Scalar>> layers;
  LayerNormCache<Scalar> final_ln;
  Vector<Scalar> pooled;
};

template <typename Scalar>
struct ForwardTrace {
  Matrix<Scalar> logits;  // batch x classes
  std::vector<ExampleCache<Scalar>> examples;

  // Per-layer (h_in, h_out) with every real token of every example as a column.
  HiddenStateTrace<Scalar> hidden_states() const;
};

template <typename Scalar>
struct LoraGrad {
  Matrix<Scalar> A;
  Matrix<Scalar> B;
};

template <typename Scalar>
struct Gradients {
  Parameters<Scalar> base;
  std::vector<std::array<std::optional<LoraGrad<Scalar>>, kLoraTargetCount>> adapters;

  GradSnapshot<Scalar> layer_snapshot() const;
};

enum class AdapterGrads { All, EnabledOnly };

template <typename Scalar>
ForwardTrace<Scalar> forward(const Model<Scalar>& model, const Batch& batch);

template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& logits);

// Mean softmax cross-entropy over the batch.
template <typename Scalar>
Scalar loss(const Matrix<Scalar>& logits, std::span<const int> labels);

template <typename Scalar>
Gradients<Scalar> backward(const Model<Scalar>& model, const ForwardTrace<Scalar>& trace, std::span<const int> labels,
                           AdapterGrads which = AdapterGrads::All);

// Flattened base parameters of every layer (adapters excluded).
template <typename Scalar>
std::vector<Vector<Scalar>> layer_weights(const Parameters<Scalar>& params);

extern template struct LayerParams<double>;
extern template struct Parameters<double>;
extern template struct Model<double>;
extern template struct Gradients<double>;
extern template struct ForwardTrace<double>;
extern template struct LayerParams<float>;
extern template struct Parameters<float>;
extern template struct Model<float>;
extern template struct Gradients<float>;
extern template struct ForwardTrace<float>;

}  // namespace irtune
