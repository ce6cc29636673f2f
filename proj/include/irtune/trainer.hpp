#pragma once

#include "irtune/data.hpp"
#include "irtune/error.hpp"
#include "irtune/importance.hpp"
#include "irtune/metrics.hpp"
#include "irtune/model.hpp"
#include "irtune/selector.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace irtune {

struct TrainConfig {
  PolicyConfig policy;
  ImportanceMetric importance_metric = ImportanceMetric::Gradient;
  int reselect_interval = 1;
  int batch_size = 16;
  double learning_rate = 2e-4;
  int epochs = 4;
  int log_every = 10;
  double grad_clip = 0.0;  // global-norm clip on the update; 0 disables
  bool train_head = false;  // when set, the classification head trains alongside the adapters
  std::uint64_t seed = 0;

  void validate() const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moments and step count of one parameter tensor.
template <typename Scalar>
struct AdamMoments {
  Matrix<Scalar> m;
  Matrix<Scalar> v;
  long step = 0;
};

// Bias-corrected Adam update of `param` in place. Throws NumericalError on non-finite gradients
// without touching the parameter or the moments.
template <typename Scalar, typename Derived, typename GradDerived>
void adam_step(Eigen::MatrixBase<Derived>& param, const Eigen::MatrixBase<GradDerived>& grad, AdamMoments<Scalar>& state,
               double lr, const AdamConfig& cfg = {}) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols()) throw ContractError("adam_step: shape mismatch");
  if (!grad.allFinite()) throw NumericalError("adam_step: non-finite gradient");
  if (state.m.size() == 0) {
    state.m = Matrix<Scalar>::Zero(param.rows(), param.cols());
    state.v = Matrix<Scalar>::Zero(param.rows(), param.cols());
  }
  ++state.step;
  const Scalar b1 = static_cast<Scalar>(cfg.beta1);
  const Scalar b2 = static_cast<Scalar>(cfg.beta2);
  state.m = b1 * state.m + (Scalar(1) - b1) * grad;
  state.v = b2 * state.v + (Scalar(1) - b2) * grad.cwiseAbs2();
  const Scalar c1 = Scalar(1) - static_cast<Scalar>(std::pow(cfg.beta1, static_cast<double>(state.step)));
  const Scalar c2 = Scalar(1) - static_cast<Scalar>(std::pow(cfg.beta2, static_cast<double>(state.step)));
  param.array() -= static_cast<Scalar>(lr) * (state.m.array() / c1) /
                   ((state.v.array() / c2).sqrt() + static_cast<Scalar>(cfg.eps));
}

struct AdapterMoments {
  AdamMoments<double> A;
  AdamMoments<double> B;
};

// Moments survive freeze/unfreeze cycles; only enabled adapters advance.
struct OptimizerState {
  std::vector<std::array<AdapterMoments, kLoraTargetCount>> adapters;
  AdamMoments<double> head_weight;
  AdamMoments<double> head_bias;
};

struct StepLog {
  int step = 0;
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  LayerSet selected;
  std::vector<double> scores;
  Index trainable_params = 0;

  bool operator==(const StepLog&) const = default;
};

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  MetricsReport validation;
};

struct RunArtifacts {
  Model<double> model;
  std::vector<StepLog> steps;
  std::vector<EpochLog> epochs;
  MetricsReport test;
  double wall_seconds = 0.0;
};

struct TrainHooks {
  // Replaces the computed scores at a re-selection step when it returns a value.
  std::function<std::optional<ScoreVector>(int step, const ScoreVector& computed)> scores;
  std::function<void(const StepLog&)> on_step;
};

// Adapter + head parameters that the optimizer updates under the current trainable mask.
Index trainable_parameter_count(const Model<double>& model, const TrainConfig& config);

ScoreVector compute_scores(ImportanceMetric metric, const Model<double>& model, const ForwardTrace<double>& trace,
                           const Gradients<double>& grads);

RunArtifacts train(Model<double> model, const EncodedSplit& train_split, const EncodedSplit& val_split,
                   const EncodedSplit& test_split, const TrainConfig& config, const TrainHooks& hooks = {});

// Class probabilities of every example in `split`, in split order.
PredictionSet predict(const Model<double>& model, const EncodedSplit& split, int batch_size = 64);
MetricsReport evaluate(const Model<double>& model, const EncodedSplit& split, int batch_size = 64);

// CSV with columns step, loss, lr, trainable_params, mask, a_0..a_{l-1}; one row per `log_every`
// steps plus the final step.
void write_runlog(const std::filesystem::path& path, const std::vector<StepLog>& steps, Index layer_count,
                  int log_every);

// Exponential moving average with span `window` (alpha = 2 / (window + 1)).
std::vector<double> smooth_ema(const std::vector<double>& values, int window);

}  // namespace irtune
