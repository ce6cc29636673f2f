#pragma once

#include "irtune/error.hpp"
#include "irtune/types.hpp"

#include <array>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace irtune {

// Weight matrices inside one transformer layer that can carry an adapter.
enum class LoraTarget : int { Query = 0, Key, Value, Output, FfnUp, FfnDown };
inline constexpr int kLoraTargetCount = 6;
inline constexpr std::array<LoraTarget, kLoraTargetCount> kAllLoraTargets{
    LoraTarget::Query, LoraTarget::Key, LoraTarget::Value, LoraTarget::Output, LoraTarget::FfnUp, LoraTarget::FfnDown};

std::string to_string(LoraTarget target);
LoraTarget parse_lora_target(const std::string& name);

struct LoraConfig {
  Index rank = 8;
  double alpha = 16.0;
  std::vector<LoraTarget> targets{kAllLoraTargets.begin(), kAllLoraTargets.end()};
};

// Low-rank delta on a frozen weight: W x + (alpha / r) B (A x).
template <typename Scalar>
struct LoraAdapter {
  Matrix<Scalar> A;  // r x d_in
  Matrix<Scalar> B;  // d_out x r
  Scalar alpha{1};
  bool enabled = true;

  Index rank() const { return A.rows(); }
  Index in_dim() const { return A.cols(); }
  Index out_dim() const { return B.rows(); }
  Scalar scale() const { return alpha / static_cast<Scalar>(rank()); }
  Index parameter_count() const { return A.size() + B.size(); }
};

// B starts at zero so the adapter contributes nothing until trained; A ~ U(-1/sqrt(d_in), 1/sqrt(d_in)).
template <typename Scalar, typename Rng>
LoraAdapter<Scalar> make_lora_adapter(Index d_in, Index d_out, Index rank, Scalar alpha, Rng& rng) {
  if (rank < 1 || rank > std::min(d_in, d_out)) {
    throw ConfigError("lora rank " + std::to_string(rank) + " must lie in [1, min(d_in, d_out)]");
  }
  if (!(alpha > Scalar(0))) throw ConfigError("lora alpha must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  LoraAdapter<Scalar> adapter;
  adapter.A = Matrix<Scalar>::NullaryExpr(rank, d_in, [&]() { return static_cast<Scalar>(dist(rng)); });
  adapter.B = Matrix<Scalar>::Zero(d_out, rank);
  adapter.alpha = alpha;
  return adapter;
}

namespace detail {

template <typename Scalar, typename WeightDerived, typename InputDerived>
void check_lora_shapes(const LoraAdapter<Scalar>& adapter, const Eigen::MatrixBase<WeightDerived>& weight,
                       const Eigen::MatrixBase<InputDerived>& x) {
  if (adapter.B.cols() != adapter.rank() || weight.rows() != adapter.out_dim() || weight.cols() != adapter.in_dim() ||
      x.rows() != adapter.in_dim()) {
    throw ContractError("lora: adapter, weight and input shapes do not conform");
  }
}

}  // namespace detail

// Frozen adapters still contribute; `enabled` only controls whether they train.
template <typename Scalar, typename WeightDerived, typename InputDerived>
Matrix<Scalar> effective_forward(const LoraAdapter<Scalar>& adapter, const Eigen::MatrixBase<WeightDerived>& weight,
                                 const Eigen::MatrixBase<InputDerived>& x) {
  detail::check_lora_shapes(adapter, weight, x);
  Matrix<Scalar> y = weight * x;
  y.noalias() += adapter.scale() * (adapter.B * (adapter.A * x));
  return y;
}

template <typename Scalar, typename WeightDerived>
Matrix<Scalar> merge(const LoraAdapter<Scalar>& adapter, const Eigen::MatrixBase<WeightDerived>& weight) {
  if (weight.rows() != adapter.out_dim() || weight.cols() != adapter.in_dim()) {
    throw ContractError("lora merge: weight shape does not match adapter");
  }
  Matrix<Scalar> merged = weight;
  merged.noalias() += adapter.scale() * (adapter.B * adapter.A);
  return merged;
}

// Adapter slots of one transformer layer, indexed by LoraTarget.
template <typename Scalar>
struct LayerAdapters {
  std::array<std::optional<LoraAdapter<Scalar>>, kLoraTargetCount> slots;

  std::optional<LoraAdapter<Scalar>>& operator[](LoraTarget t) { return slots[static_cast<int>(t)]; }
  const std::optional<LoraAdapter<Scalar>>& operator[](LoraTarget t) const { return slots[static_cast<int>(t)]; }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& s : slots) n += s ? s->parameter_count() : 0;
    return n;
  }
};

template <typename Scalar>
using AdapterSet = std::vector<LayerAdapters<Scalar>>;

// Marks adapters in `selected` trainable and freezes the rest. Adapter values are untouched.
template <typename Scalar>
void set_trainable(AdapterSet<Scalar>& adapters, const LayerSet& selected) {
  std::vector<bool> on(adapters.size(), false);
  for (int i : selected) {
    if (i < 0 || static_cast<std::size_t>(i) >= adapters.size()) {
      throw ContractError("set_trainable: layer " + std::to_string(i) + " out of range");
    }
    on[static_cast<std::size_t>(i)] = true;
  }
  for (std::size_t i = 0; i < adapters.size(); ++i) {
    for (auto& slot : adapters[i].slots) {
      if (slot) slot->enabled = on[i];
    }
  }
}

template <typename Scalar>
Index trainable_parameter_count(const AdapterSet<Scalar>& adapters) {
  Index n = 0;
  for (const auto& layer : adapters) {
    for (const auto& slot : layer.slots) {
      if (slot && slot->enabled) n += slot->parameter_count();
    }
  }
  return n;
}

template <typename Scalar>
LayerSet enabled_layers(const AdapterSet<Scalar>& adapters) {
  LayerSet out;
  for (std::size_t i = 0; i < adapters.size(); ++i) {
    for (const auto& slot : adapters[i].slots) {
      if (slot && slot->enabled) {
        out.push_back(static_cast<int>(i));
        break;
      }
    }
  }
  return out;
}

}  // namespace irtune
