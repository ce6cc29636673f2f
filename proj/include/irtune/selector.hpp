#pragma once

#include "irtune/types.hpp"

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace irtune {

// Per-layer importance scores a_0..a_{l-1}. Every entry is finite and >= 0.
class ScoreVector {
 public:
  ScoreVector() = default;
  explicit ScoreVector(VectorXd scores);
  explicit ScoreVector(std::span<const double> scores);
  ScoreVector(std::initializer_list<double> scores);

  Index size() const { return scores_.size(); }
  bool empty() const { return scores_.size() == 0; }
  double operator[](Index i) const { return scores_[i]; }
  const VectorXd& values() const { return scores_; }
  std::span<const double> span() const { return {scores_.data(), static_cast<std::size_t>(scores_.size())}; }

 private:
  VectorXd scores_;
};

// O(1) population variance over any half-open range after O(n) setup.
// Sums are accumulated around the global mean in long double to keep the
// E[x^2] - E[x]^2 form from cancelling on large, tightly clustered inputs.
class PrefixVariance {
 public:
  explicit PrefixVariance(std::span<const double> values);

  Index size() const { return static_cast<Index>(sum_.size()) - 1; }
  // Variance of values[lo, hi). Zero for empty and singleton ranges.
  double variance(Index lo, Index hi) const;

 private:
  long double shift_ = 0;
  std::vector<long double> sum_;
  std::vector<long double> sum_sq_;
};

double variance(const ScoreVector& scores, Index lo, Index hi);

struct SplitResult {
  double gamma_star = 0.0;
  // Position j* in the descending-sorted scores; the prefix [0, j*) is the candidate important set.
  Index split_index = 0;
  LayerSet important;
  LayerSet redundant;
  double variance_sum = 0.0;
  // True when the scores carry no usable spread (or the threshold left the
  // important side empty) and every layer was selected instead.
  bool degenerate = false;
};

inline constexpr double kDegenerateVariance = 1e-12;

SplitResult split_once(const ScoreVector& scores);

struct Tiering {
  std::vector<LayerSet> tiers;  // most important first
  std::vector<double> thresholds;
  int splits_performed = 0;
};

Tiering split_hierarchical(const ScoreVector& scores, int max_splits);

enum class PolicyKind { IR, IST, LISA, FULL };

std::string to_string(PolicyKind kind);
PolicyKind parse_policy(const std::string& name);

struct PolicyConfig {
  PolicyKind kind = PolicyKind::IR;
  int max_splits = 1;
  int k_layers = 0;  // 0 selects the per-policy default (IST 8, LISA 4)
  std::uint64_t seed = 0;

  int resolved_k_layers() const;
  void validate(Index layer_count) const;
};

// k for the fixed-count baselines rescaled from a 32-layer backbone to `layer_count`
// (IST 8/32, LISA 4/32), never below one layer.
int scaled_k_layers(PolicyKind kind, Index layer_count);

LayerSet select_layers(const ScoreVector& scores, const PolicyConfig& policy, std::mt19937_64& rng);

// Hex rendering of a layer set as a bitmask, bit i = layer i, most significant nibble first.
std::string mask_to_hex(const LayerSet& layers, Index layer_count);
LayerSet hex_to_mask(const std::string& hex, Index layer_count);

}  // namespace irtune
