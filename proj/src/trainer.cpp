#include "irtune/trainer.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

namespace irtune {

void TrainConfig::validate() const {
  if (reselect_interval < 1) throw ConfigError("train.reselect_k must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train.lr must be positive");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (log_every < 1) throw ConfigError("train.log_every must be >= 1");
  if (grad_clip < 0.0) throw ConfigError("train.grad_clip must be >= 0");
  if (policy.max_splits < 1) throw ConfigError("train.max_splits must be >= 1");
}

Index trainable_parameter_count(const Model<double>& model, const TrainConfig& config) {
  Index n = trainable_parameter_count(model.adapters);
  if (config.train_head) n += model.params.head_parameter_count();
  return n;
}

ScoreVector compute_scores(ImportanceMetric metric, const Model<double>& model, const ForwardTrace<double>& trace,
                           const Gradients<double>& grads) {
  switch (metric) {
    case ImportanceMetric::Gradient: return gradient_norm_scores(grads.layer_snapshot());
    case ImportanceMetric::Magnitude: return magnitude_scores(layer_weights(model.params));
    case ImportanceMetric::Similarity: return similarity_scores(trace.hidden_states()).scores;
  }
  throw ContractError("unknown importance metric");
}

namespace {

Batch make_batch(const EncodedSplit& split, std::span<const std::size_t> ids, std::vector<int>& labels) {
  std::vector<std::vector<int>> seqs;
  seqs.reserve(ids.size());
  labels.clear();
  for (std::size_t i : ids) {
    seqs.push_back(split.sequences[i]);
    labels.push_back(split.labels[i]);
  }
  return Batch::from_sequences(seqs, Vocabulary::kPad);
}

// Scales enabled adapter (and head) gradients so their joint L2 norm is at most `limit`.
void clip_update(Gradients<double>& grads, const Model<double>& model, bool train_head, double limit) {
  double sq = 0.0;
  for (std::size_t l = 0; l < model.adapters.size(); ++l) {
    for (int t = 0; t < kLoraTargetCount; ++t) {
      const auto& a = model.adapters[l].slots[static_cast<std::size_t>(t)];
      const auto& g = grads.adapters[l][static_cast<std::size_t>(t)];
      if (a && a->enabled && g) sq += g->A.squaredNorm() + g->B.squaredNorm();
    }
  }
  if (train_head) sq += grads.base.head_weight.squaredNorm() + grads.base.head_bias.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm <= limit || norm == 0.0) return;
  const double f = limit / norm;
  for (auto& layer : grads.adapters) {
    for (auto& g : layer) {
      if (g) {
        g->A *= f;
        g->B *= f;
      }
    }
  }
  grads.base.head_weight *= f;
  grads.base.head_bias *= f;
}

void apply_updates(Model<double>& model, const Gradients<double>& grads, OptimizerState& state,
                   const TrainConfig& config) {
  for (std::size_t l = 0; l < model.adapters.size(); ++l) {
    for (int t = 0; t < kLoraTargetCount; ++t) {
      auto& a = model.adapters[l].slots[static_cast<std::size_t>(t)];
      if (!a || !a->enabled) continue;
      const auto& g = grads.adapters[l][static_cast<std::size_t>(t)];
      if (!g) throw ContractError("missing gradient for an enabled adapter");
      auto& m = state.adapters[l][static_cast<std::size_t>(t)];
      adam_step(a->A, g->A, m.A, config.learning_rate);
      adam_step(a->B, g->B, m.B, config.learning_rate);
    }
  }
  if (config.train_head) {
    adam_step(model.params.head_weight, grads.base.head_weight, state.head_weight, config.learning_rate);
    adam_step(model.params.head_bias, grads.base.head_bias, state.head_bias, config.learning_rate);
  }
}

}  // namespace

PredictionSet predict(const Model<double>& model, const EncodedSplit& split, int batch_size) {
  if (split.size() == 0) throw ContractError("predict: empty split");
  MatrixXd probs(split.size(), model.config.classes);
  std::vector<std::size_t> ids;
  std::vector<int> labels;
  for (Index start = 0; start < split.size(); start += batch_size) {
    const Index end = std::min<Index>(split.size(), start + batch_size);
    ids.resize(static_cast<std::size_t>(end - start));
    std::iota(ids.begin(), ids.end(), static_cast<std::size_t>(start));
    const Batch batch = make_batch(split, ids, labels);
    probs.middleRows(start, end - start) = softmax_rows(forward(model, batch).logits);
  }
  return PredictionSet::from_probabilities(split.labels, std::move(probs));
}

MetricsReport evaluate(const Model<double>& model, const EncodedSplit& split, int batch_size) {
  return evaluate_predictions(predict(model, split, batch_size));
}

RunArtifacts train(Model<double> model, const EncodedSplit& train_split, const EncodedSplit& val_split,
                   const EncodedSplit& test_split, const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  config.policy.validate(model.config.layers);
  if (train_split.size() == 0 || val_split.size() == 0 || test_split.size() == 0) {
    throw ContractError("train: every dataset split must be non-empty");
  }
  const auto started = std::chrono::steady_clock::now();

  std::mt19937_64 order_rng(config.seed);
  std::mt19937_64 policy_rng(config.seed ^ 0x5bd1e995ULL);
  OptimizerState state;
  state.adapters.resize(model.adapters.size());

  RunArtifacts run;
  std::vector<std::size_t> order(static_cast<std::size_t>(train_split.size()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<int> labels;
  std::vector<double> last_scores;
  LayerSet selected;
  int step = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const Batch batch = make_batch(train_split, std::span(order).subspan(start, end - start), labels);

      const ForwardTrace<double> trace = forward(model, batch);
      const double batch_loss = loss(trace.logits, std::span<const int>(labels));
      Gradients<double> grads = backward(model, trace, labels, AdapterGrads::All);

      if (step % config.reselect_interval == 0) {
        ScoreVector scores = compute_scores(config.importance_metric, model, trace, grads);
        if (hooks.scores) {
          if (auto replaced = hooks.scores(step, scores)) scores = std::move(*replaced);
        }
        selected = select_layers(scores, config.policy, policy_rng);
        set_trainable(model.adapters, selected);
        last_scores.assign(scores.span().begin(), scores.span().end());
      }

      if (config.grad_clip > 0.0) clip_update(grads, model, config.train_head, config.grad_clip);
      apply_updates(model, grads, state, config);

      StepLog log{step, epoch, batch_loss, config.learning_rate, selected, last_scores,
                  trainable_parameter_count(model, config)};
      if (hooks.on_step) hooks.on_step(log);
      run.steps.push_back(std::move(log));
      loss_sum += batch_loss;
      ++batches;
      ++step;
    }
    run.epochs.push_back(EpochLog{epoch, loss_sum / batches, evaluate(model, val_split)});
  }

  run.test = evaluate(model, test_split);
  run.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  run.model = std::move(model);
  return run;
}

void write_runlog(const std::filesystem::path& path, const std::vector<StepLog>& steps, Index layer_count,
                  int log_every) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "step,loss,lr,trainable_params,mask";
  for (Index i = 0; i < layer_count; ++i) out << ",a_" << i;
  out << '\n';
  char buf[64];
  for (std::size_t s = 0; s < steps.size(); ++s) {
    const auto& log = steps[s];
    if (log.step % log_every != 0 && s + 1 != steps.size()) continue;
    out << log.step;
    std::snprintf(buf, sizeof buf, ",%.10g,%.6g,", log.loss, log.lr);
    out << buf << log.trainable_params << ',' << mask_to_hex(log.selected, layer_count);
    for (double a : log.scores) {
      std::snprintf(buf, sizeof buf, ",%.10g", a);
      out << buf;
    }
    out << '\n';
  }
}

std::vector<double> smooth_ema(const std::vector<double>& values, int window) {
  std::vector<double> out;
  out.reserve(values.size());
  const double alpha = 2.0 / (static_cast<double>(window) + 1.0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    out.push_back(i == 0 ? values[0] : alpha * values[i] + (1.0 - alpha) * out.back());
  }
  return out;
}

}  // namespace irtune
