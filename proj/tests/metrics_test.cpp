#include "irtune/error.hpp"
#include "irtune/metrics.hpp"
#include "metrics_oracle.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

using namespace irtune;
using namespace irtune::oracle;

TEST(MacroPrf, WorkedExample) {
  // truths [A, A, B], predictions [A, B, B]
  const MetricsReport r = macro_prf(one_hot({0, 0, 1}, {0, 1, 1}, 2));
  EXPECT_DOUBLE_EQ(r.per_class[0].precision, 1.0);
  EXPECT_DOUBLE_EQ(r.per_class[0].recall, 0.5);
  EXPECT_DOUBLE_EQ(r.per_class[0].f1, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.per_class[1].precision, 0.5);
  EXPECT_DOUBLE_EQ(r.per_class[1].recall, 1.0);
  EXPECT_DOUBLE_EQ(r.per_class[1].f1, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.macro_f1, 2.0 / 3.0);
  EXPECT_EQ(r.confusion(0, 0), 1);
  EXPECT_EQ(r.confusion(0, 1), 1);
  EXPECT_EQ(r.confusion(1, 1), 1);
  EXPECT_EQ(r.confusion(1, 0), 0);
}

TEST(MacroPrf, NeverPredictedClassScoresZero) {
  const MetricsReport r = macro_prf(one_hot({0, 1, 2, 3}, {0, 0, 0, 0}, 4));
  for (int c = 1; c < 4; ++c) {
    EXPECT_EQ(r.per_class[static_cast<std::size_t>(c)].precision, 0.0);
    EXPECT_EQ(r.per_class[static_cast<std::size_t>(c)].f1, 0.0);
  }
  EXPECT_DOUBLE_EQ(r.per_class[0].precision, 0.25);
  EXPECT_DOUBLE_EQ(r.macro_f1, (2 * 0.25 * 1.0 / 1.25) / 4);
}

TEST(MacroPrf, AbsentClassesLeftOutOfMean) {
  // class 2 has no support; its false positive still lowers class-2 precision but not the mean
  const MetricsReport r = macro_prf(one_hot({0, 0, 1, 1}, {0, 2, 1, 1}, 3));
  EXPECT_DOUBLE_EQ(r.macro_recall, (0.5 + 1.0) / 2);
  EXPECT_DOUBLE_EQ(r.macro_precision, (1.0 + 1.0) / 2);
}

TEST(MacroPrf, MatchesHandCountsOnTinyCases) {
  const auto& cases = tiny_cases();
  ASSERT_EQ(cases.size(), 20u);
  for (std::size_t k = 0; k < cases.size(); ++k) {
    const auto& tc = cases[k];
    const MetricsReport r = macro_prf(one_hot(tc.truth, tc.predicted, tc.classes));
    const auto counts = tally(tc.truth, tc.predicted, tc.classes);
    double f1_sum = 0.0, p_sum = 0.0, r_sum = 0.0;
    int present = 0;
    for (int c = 0; c < tc.classes; ++c) {
      const auto& n = counts[static_cast<std::size_t>(c)];
      const double p = n.tp + n.fp == 0 ? 0.0 : static_cast<double>(n.tp) / (n.tp + n.fp);
      const double rc = n.tp + n.fn == 0 ? 0.0 : static_cast<double>(n.tp) / (n.tp + n.fn);
      const double f1 = p + rc == 0.0 ? 0.0 : 2 * p * rc / (p + rc);
      const auto& m = r.per_class[static_cast<std::size_t>(c)];
      EXPECT_EQ(m.precision, p) << "case " << k << " class " << c;
      EXPECT_EQ(m.recall, rc) << "case " << k << " class " << c;
      EXPECT_EQ(m.f1, f1) << "case " << k << " class " << c;
      EXPECT_EQ(m.support, n.tp + n.fn);
      EXPECT_EQ(r.confusion(c, c), n.tp);
      EXPECT_EQ(r.confusion.col(c).sum() - n.tp, n.fp);
      EXPECT_EQ(r.confusion.row(c).sum() - n.tp, n.fn);
      if (n.tp + n.fn > 0) {
        f1_sum += f1;
        p_sum += p;
        r_sum += rc;
        ++present;
      }
    }
    EXPECT_EQ(r.macro_f1, f1_sum / present) << "case " << k;
    EXPECT_EQ(r.macro_precision, p_sum / present) << "case " << k;
    EXPECT_EQ(r.macro_recall, r_sum / present) << "case " << k;
    EXPECT_EQ(r.confusion.sum(), static_cast<int>(tc.truth.size()));
  }
}

TEST(MacroPrf, InvariantToClassRelabeling) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> label(0, 4);
  std::vector<int> truth(200), pred(200);
  for (auto& t : truth) t = label(rng);
  for (auto& p : pred) p = label(rng);
  std::vector<int> perm{3, 0, 4, 1, 2};
  std::vector<int> truth2(200), pred2(200);
  for (std::size_t i = 0; i < 200; ++i) {
    truth2[i] = perm[static_cast<std::size_t>(truth[i])];
    pred2[i] = perm[static_cast<std::size_t>(pred[i])];
  }
  EXPECT_NEAR(macro_prf(one_hot(truth, pred, 5)).macro_f1, macro_prf(one_hot(truth2, pred2, 5)).macro_f1, 1e-15);
}

TEST(AveragePrecision, HandValue) {
  const std::vector<double> scores{0.9, 0.5, 0.1};
  const std::vector<int> rel{1, 0, 1};
  EXPECT_DOUBLE_EQ(average_precision(scores, rel), (1.0 + 2.0 / 3.0) / 2);
}

TEST(AveragePrecision, ConstantScoresFollowIndexOrder) {
  const std::vector<double> scores(4, 0.25);
  EXPECT_DOUBLE_EQ(average_precision(scores, std::vector<int>{0, 1, 0, 1}), (0.5 + 0.5) / 2);
  EXPECT_DOUBLE_EQ(average_precision(scores, std::vector<int>{1, 1, 0, 0}), 1.0);
}

TEST(AveragePrecision, ExhaustiveRankingsUpToEight) {
  double worst = 0.0;
  for (int n = 1; n <= 8; ++n) {
    std::vector<double> scores(static_cast<std::size_t>(n));
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::vector<int> rel(static_cast<std::size_t>(n));
    for (unsigned mask = 1; mask < (1u << n); ++mask) {
      for (int i = 0; i < n; ++i) rel[static_cast<std::size_t>(i)] = (mask >> i) & 1;
      std::iota(perm.begin(), perm.end(), 0);
      do {
        for (int i = 0; i < n; ++i) scores[static_cast<std::size_t>(i)] = perm[static_cast<std::size_t>(i)];
        worst = std::max(worst, std::abs(average_precision(scores, rel) - brute_force_ap(scores, rel)));
      } while (std::next_permutation(perm.begin(), perm.end()));
    }
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(AveragePrecision, TiedScoresMatchOracle) {
  // every score pattern over {0, 1, 2} for up to 7 items, every relevance pattern
  double worst = 0.0;
  for (int n = 1; n <= 7; ++n) {
    int patterns = 1;
    for (int i = 0; i < n; ++i) patterns *= 3;
    std::vector<double> scores(static_cast<std::size_t>(n));
    std::vector<int> rel(static_cast<std::size_t>(n));
    for (int code = 0; code < patterns; ++code) {
      int c = code;
      for (int i = 0; i < n; ++i, c /= 3) scores[static_cast<std::size_t>(i)] = c % 3;
      for (unsigned mask = 1; mask < (1u << n); ++mask) {
        for (int i = 0; i < n; ++i) rel[static_cast<std::size_t>(i)] = (mask >> i) & 1;
        worst = std::max(worst, std::abs(average_precision(scores, rel) - brute_force_ap(scores, rel)));
      }
    }
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(AveragePrecision, MonotoneTransformInvariant) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::bernoulli_distribution b(0.3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s(40), t(40);
    std::vector<int> rel(40);
    for (std::size_t i = 0; i < 40; ++i) {
      s[i] = u(rng);
      t[i] = std::exp(3 * s[i]) - 7;
      rel[i] = b(rng);
    }
    EXPECT_DOUBLE_EQ(average_precision(s, rel), average_precision(t, rel));
  }
}

TEST(AveragePrecision, RandomRankingAbovePrevalenceSquared) {
  std::mt19937_64 rng(6);
  constexpr int n = 2000;
  const double prevalence = 0.25;
  std::vector<int> rel(n, 0);
  std::fill(rel.begin(), rel.begin() + n / 4, 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> aps;
  for (int trial = 0; trial < 60; ++trial) {
    std::shuffle(rel.begin(), rel.end(), rng);
    std::vector<double> s(n);
    for (auto& x : s) x = u(rng);
    aps.push_back(average_precision(s, rel));
  }
  double mean = std::accumulate(aps.begin(), aps.end(), 0.0) / aps.size();
  double var = 0.0;
  for (double a : aps) var += (a - mean) * (a - mean);
  const double sigma = std::sqrt(var / (aps.size() - 1));
  for (double a : aps) EXPECT_GE(a + 3 * sigma, prevalence * prevalence);
  EXPECT_NEAR(mean, prevalence, 6 * sigma);
}

TEST(Auprc, PerfectPredictor) {
  std::vector<int> truth{0, 1, 2, 2, 1, 0, 3};
  MatrixXd p = MatrixXd::Constant(7, 4, 0.1);
  for (std::size_t i = 0; i < truth.size(); ++i) p(static_cast<Index>(i), truth[i]) = 0.7;
  const MetricsReport r = evaluate_predictions(PredictionSet::from_probabilities(truth, p));
  EXPECT_EQ(r.macro_f1, 1.0);
  EXPECT_EQ(r.macro_auprc, 1.0);
  EXPECT_EQ(r.macro_precision, 1.0);
  EXPECT_EQ(r.macro_recall, 1.0);
  for (const auto& m : r.per_class) EXPECT_EQ(m.average_precision, 1.0);
}

TEST(Auprc, ClassWithoutPositivesExcluded) {
  std::vector<int> truth{0, 1, 0, 1};
  MatrixXd p(4, 3);
  p << 0.6, 0.3, 0.1, 0.2, 0.7, 0.1, 0.5, 0.4, 0.1, 0.1, 0.2, 0.7;
  const MetricsReport r = evaluate_predictions(PredictionSet::from_probabilities(truth, p));
  EXPECT_EQ(r.auprc_excluded, (std::vector<int>{2}));
  const double want = (r.per_class[0].average_precision + r.per_class[1].average_precision) / 2;
  EXPECT_DOUBLE_EQ(r.macro_auprc, want);
  // class 0 ranking by p(.,0): ex0 (rel), ex2 (rel), ex1, ex3 -> AP 1
  EXPECT_DOUBLE_EQ(r.per_class[0].average_precision, 1.0);
  // class 1 ranking by p(.,1): ex1 (rel), ex2, ex0, ex3 (rel) -> (1 + 2/4) / 2
  EXPECT_DOUBLE_EQ(r.per_class[1].average_precision, 0.75);
}

TEST(Evaluate, UniformRandomPredictorNearChance) {
  std::mt19937_64 rng(11);
  constexpr int C = 4;
  constexpr int n = 4000;
  std::vector<int> truth(n);
  for (int i = 0; i < n; ++i) truth[static_cast<std::size_t>(i)] = i % C;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MatrixXd p(n, C);
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < C; ++c) p(i, c) = u(rng);
    p.row(i) /= p.row(i).sum();
  }
  const MetricsReport r = evaluate_predictions(PredictionSet::from_probabilities(truth, p));
  // binomial noise on per-class recall is about sqrt(0.25 * 0.75 / 1000) ~ 0.014
  EXPECT_NEAR(r.macro_f1, 1.0 / C, 0.04);
  EXPECT_NEAR(r.macro_auprc, 1.0 / C, 0.04);
}

TEST(PredictionSet, Validation) {
  MatrixXd p(2, 2);
  p << 0.5, 0.5, 0.2, 0.7;
  EXPECT_THROW(macro_prf(PredictionSet{{0, 1}, {0, 1}, p}), ContractError);
  p(1, 1) = 0.8;
  EXPECT_NO_THROW(macro_prf(PredictionSet{{0, 1}, {0, 1}, p}));
  EXPECT_THROW(macro_prf(PredictionSet{{0, 2}, {0, 1}, p}), ContractError);
  EXPECT_THROW(macro_prf(PredictionSet{{}, {}, MatrixXd(0, 2)}), ContractError);
  EXPECT_THROW(macro_prf(PredictionSet{{0}, {0}, MatrixXd::Ones(1, 1)}), ContractError);
}

TEST(PrCurve, EndsAtFullRecall) {
  const std::vector<double> s{0.9, 0.8, 0.3, 0.2};
  const std::vector<int> rel{1, 0, 1, 0};
  const auto curve = pr_curve(s, rel);
  ASSERT_EQ(curve.size(), 4u);
  EXPECT_DOUBLE_EQ(curve[0].precision, 1.0);
  EXPECT_DOUBLE_EQ(curve[0].recall, 0.5);
  EXPECT_DOUBLE_EQ(curve[2].precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(curve[3].recall, 1.0);
}

TEST(MetricsJson, HasReportFields) {
  const MetricsReport r = evaluate_predictions(one_hot({0, 0, 1}, {0, 1, 1}, 2));
  const auto j = to_json(r, {"A", "B"});
  EXPECT_EQ(j["per_class"][1]["class"], "B");
  EXPECT_EQ(j["confusion"][0][1], 1);
  EXPECT_DOUBLE_EQ(j["macro_f1"].get<double>(), 2.0 / 3.0);
  for (const char* key : {"macro_precision", "macro_recall", "macro_auprc", "auprc_excluded", "examples"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
}
