#include "irtune/selector.hpp"

#include "irtune/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace irtune {

namespace {

void check_scores(const VectorXd& s) {
  for (Index i = 0; i < s.size(); ++i) {
    if (!std::isfinite(s[i]) || s[i] < 0.0) {
      throw ContractError("score " + std::to_string(i) + " is not a finite nonnegative number");
    }
  }
}

// Welford sweep: out[j] = population variance of values[0, j), j = 0..n.
std::vector<double> running_variances(std::span<const double> values) {
  std::vector<double> out(values.size() + 1, 0.0);
  double mean = 0.0;
  double m2 = 0.0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    const double delta = values[k] - mean;
    mean += delta / static_cast<double>(k + 1);
    m2 += delta * (values[k] - mean);
    out[k + 1] = m2 / static_cast<double>(k + 1);
  }
  return out;
}

}  // namespace

ScoreVector::ScoreVector(VectorXd scores) : scores_(std::move(scores)) { check_scores(scores_); }

ScoreVector::ScoreVector(std::span<const double> scores)
    : scores_(Eigen::Map<const VectorXd>(scores.data(), static_cast<Index>(scores.size()))) {
  check_scores(scores_);
}

ScoreVector::ScoreVector(std::initializer_list<double> scores)
    : ScoreVector(std::span<const double>(scores.begin(), scores.size())) {}

PrefixVariance::PrefixVariance(std::span<const double> values)
    : sum_(values.size() + 1, 0.0L), sum_sq_(values.size() + 1, 0.0L) {
  if (!values.empty()) {
    long double total = 0;
    for (double v : values) total += v;
    shift_ = total / static_cast<long double>(values.size());
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    const long double d = static_cast<long double>(values[i]) - shift_;
    sum_[i + 1] = sum_[i] + d;
    sum_sq_[i + 1] = sum_sq_[i] + d * d;
  }
}

double PrefixVariance::variance(Index lo, Index hi) const {
  if (lo < 0 || hi < lo || hi > size()) {
    throw ContractError("variance range [" + std::to_string(lo) + ", " + std::to_string(hi) +
                        ") out of bounds for length " + std::to_string(size()));
  }
  const Index n = hi - lo;
  if (n <= 1) return 0.0;
  const long double s = sum_[hi] - sum_[lo];
  const long double sq = sum_sq_[hi] - sum_sq_[lo];
  const long double mean = s / n;
  const long double var = sq / n - mean * mean;
  return var > 0 ? static_cast<double>(var) : 0.0;
}

double variance(const ScoreVector& scores, Index lo, Index hi) {
  return PrefixVariance(scores.span()).variance(lo, hi);
}

SplitResult split_once(const ScoreVector& scores) {
  const Index l = scores.size();
  if (l == 0) throw ContractError("split_once requires at least one score");

  std::vector<double> sorted(scores.span().begin(), scores.span().end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());

  const std::vector<double> prefix = running_variances(sorted);
  std::vector<double> reversed(sorted.rbegin(), sorted.rend());
  const std::vector<double> suffix_rev = running_variances(reversed);
  // Var(sorted[j:]) is the variance of the last l - j values.
  auto suffix_var = [&](Index j) { return suffix_rev[static_cast<std::size_t>(l - j)]; };

  // Candidates within rounding of the running minimum count as ties and keep the earlier j.
  const double tie_band = 1e-12 * suffix_var(0);
  Index best = 0;
  double best_value = prefix[0] + suffix_var(0);
  for (Index j = 1; j < l; ++j) {
    const double v = prefix[static_cast<std::size_t>(j)] + suffix_var(j);
    if (v < best_value - tie_band) {
      best_value = v;
      best = j;
    }
  }

  SplitResult result;
  result.split_index = best;
  result.gamma_star = sorted[static_cast<std::size_t>(best)];
  result.variance_sum = best_value;
  for (Index i = 0; i < l; ++i) {
    (scores[i] > result.gamma_star ? result.important : result.redundant).push_back(static_cast<int>(i));
  }

  const double total_variance = suffix_var(0);
  if (total_variance <= kDegenerateVariance || result.important.empty()) {
    result.degenerate = true;
    result.important.resize(static_cast<std::size_t>(l));
    std::iota(result.important.begin(), result.important.end(), 0);
    result.redundant.clear();
  }
  return result;
}

Tiering split_hierarchical(const ScoreVector& scores, int max_splits) {
  if (max_splits < 1) throw ContractError("max_splits must be >= 1");

  Tiering tiering;
  const SplitResult first = split_once(scores);
  if (first.degenerate) {
    tiering.tiers.push_back(first.important);
    return tiering;
  }

  std::vector<LayerSet> peeled{first.redundant};
  LayerSet current = first.important;
  tiering.thresholds.push_back(first.gamma_star);
  tiering.splits_performed = 1;

  while (tiering.splits_performed < max_splits && current.size() > 2) {
    VectorXd sub(static_cast<Index>(current.size()));
    for (std::size_t i = 0; i < current.size(); ++i) sub[static_cast<Index>(i)] = scores[current[i]];
    const ScoreVector sub_scores(std::move(sub));
    const SplitResult next = split_once(sub_scores);
    if (next.degenerate) break;

    LayerSet important;
    LayerSet redundant;
    for (int i : next.important) important.push_back(current[static_cast<std::size_t>(i)]);
    for (int i : next.redundant) redundant.push_back(current[static_cast<std::size_t>(i)]);
    peeled.push_back(std::move(redundant));
    current = std::move(important);
    tiering.thresholds.push_back(next.gamma_star);
    ++tiering.splits_performed;
  }

  tiering.tiers.push_back(std::move(current));
  for (auto it = peeled.rbegin(); it != peeled.rend(); ++it) tiering.tiers.push_back(std::move(*it));
  return tiering;
}

std::string to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::IR: return "ir";
    case PolicyKind::IST: return "ist";
    case PolicyKind::LISA: return "lisa";
    case PolicyKind::FULL: return "full";
  }
  return "unknown";
}

PolicyKind parse_policy(const std::string& name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "ir") return PolicyKind::IR;
  if (lower == "ist") return PolicyKind::IST;
  if (lower == "lisa") return PolicyKind::LISA;
  if (lower == "full") return PolicyKind::FULL;
  throw ConfigError("unknown policy '" + name + "' (expected ir, ist, lisa or full)");
}

int PolicyConfig::resolved_k_layers() const {
  if (k_layers > 0) return k_layers;
  switch (kind) {
    case PolicyKind::IST: return 8;
    case PolicyKind::LISA: return 4;
    default: return 0;
  }
}

void PolicyConfig::validate(Index layer_count) const {
  if (max_splits < 1) throw ConfigError("max_splits must be >= 1");
  if (k_layers < 0) throw ConfigError("k_layers must be >= 1");
  if (kind == PolicyKind::IST || kind == PolicyKind::LISA) {
    const int k = resolved_k_layers();
    if (k > layer_count) {
      throw ConfigError("k_layers = " + std::to_string(k) + " exceeds layer count " + std::to_string(layer_count));
    }
  }
}

int scaled_k_layers(PolicyKind kind, Index layer_count) {
  const double fraction = kind == PolicyKind::IST ? 8.0 / 32.0 : kind == PolicyKind::LISA ? 4.0 / 32.0 : 1.0;
  const int k = static_cast<int>(std::lround(fraction * static_cast<double>(layer_count)));
  return std::clamp(k, 1, static_cast<int>(layer_count));
}

LayerSet select_layers(const ScoreVector& scores, const PolicyConfig& policy, std::mt19937_64& rng) {
  const Index l = scores.size();
  if (l == 0) throw ContractError("select_layers requires at least one score");
  policy.validate(l);

  LayerSet all(static_cast<std::size_t>(l));
  std::iota(all.begin(), all.end(), 0);

  switch (policy.kind) {
    case PolicyKind::IR:
      return split_hierarchical(scores, policy.max_splits).tiers.front();
    case PolicyKind::IST: {
      LayerSet order = all;
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
      order.resize(static_cast<std::size_t>(policy.resolved_k_layers()));
      std::sort(order.begin(), order.end());
      return order;
    }
    case PolicyKind::LISA: {
      LayerSet picked;
      std::sample(all.begin(), all.end(), std::back_inserter(picked), policy.resolved_k_layers(), rng);
      return picked;
    }
    case PolicyKind::FULL:
      return all;
  }
  return all;
}

std::string mask_to_hex(const LayerSet& layers, Index layer_count) {
  const Index nibbles = std::max<Index>(1, (layer_count + 3) / 4);
  std::vector<int> bits(static_cast<std::size_t>(nibbles * 4), 0);
  for (int i : layers) {
    if (i < 0 || i >= layer_count) throw ContractError("layer index out of range in mask");
    bits[static_cast<std::size_t>(i)] = 1;
  }
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  for (Index n = nibbles - 1; n >= 0; --n) {
    int v = 0;
    for (int b = 3; b >= 0; --b) v = (v << 1) | bits[static_cast<std::size_t>(n * 4 + b)];
    out.push_back(kDigits[v]);
  }
  return out;
}

LayerSet hex_to_mask(const std::string& hex, Index layer_count) {
  LayerSet layers;
  const Index nibbles = static_cast<Index>(hex.size());
  for (Index n = 0; n < nibbles; ++n) {
    const char c = hex[static_cast<std::size_t>(nibbles - 1 - n)];
    int v = 0;
    if (c >= '0' && c <= '9') v = c - '0';
    else if (c >= 'a' && c <= 'f') v = c - 'a' + 10;
    else if (c >= 'A' && c <= 'F') v = c - 'A' + 10;
    else throw ParseError("invalid hex digit in mask '" + hex + "'", static_cast<std::size_t>(nibbles - n));
    for (int b = 0; b < 4; ++b) {
      if (v & (1 << b)) {
        const Index layer = n * 4 + b;
        if (layer >= layer_count) throw ContractError("mask '" + hex + "' sets a bit beyond the layer count");
        layers.push_back(static_cast<int>(layer));
      }
    }
  }
  return layers;
}

}  // namespace irtune
