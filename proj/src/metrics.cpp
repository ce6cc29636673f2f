#include "irtune/metrics.hpp"

#include "irtune/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace irtune {

void PredictionSet::validate() const {
  if (truth.empty()) throw ContractError("prediction set is empty");
  if (predicted.size() != truth.size() || probabilities.rows() != size()) {
    throw ContractError("prediction set columns differ in length");
  }
  if (class_count() < 2) throw ContractError("prediction set needs at least two classes");
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= class_count() || predicted[i] < 0 || predicted[i] >= class_count()) {
      throw ContractError("label out of range at example " + std::to_string(i));
    }
  }
  for (Index r = 0; r < probabilities.rows(); ++r) {
    const auto row = probabilities.row(r);
    if (!row.allFinite() || (row.array() < 0.0).any() || std::abs(row.sum() - 1.0) > 1e-9) {
      throw ContractError("probability row " + std::to_string(r) + " is not a distribution");
    }
  }
}

PredictionSet PredictionSet::from_probabilities(std::vector<int> truth, MatrixXd probabilities) {
  PredictionSet p;
  p.truth = std::move(truth);
  p.probabilities = std::move(probabilities);
  p.predicted.resize(p.truth.size());
  for (Index r = 0; r < p.probabilities.rows(); ++r) {
    Index best = 0;
    p.probabilities.row(r).maxCoeff(&best);
    p.predicted[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return p;
}

namespace {

double safe_div(double num, double den) { return den > 0.0 ? num / den : 0.0; }

std::vector<std::size_t> ranking(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

MetricsReport macro_prf(const PredictionSet& preds) {
  preds.validate();
  const Index C = preds.class_count();
  MetricsReport report;
  report.examples = preds.size();
  report.confusion = Eigen::MatrixXi::Zero(C, C);
  for (std::size_t i = 0; i < preds.truth.size(); ++i) ++report.confusion(preds.truth[i], preds.predicted[i]);

  report.per_class.resize(static_cast<std::size_t>(C));
  Index present = 0;
  for (Index c = 0; c < C; ++c) {
    auto& m = report.per_class[static_cast<std::size_t>(c)];
    const double tp = report.confusion(c, c);
    const double predicted = report.confusion.col(c).sum();
    m.support = report.confusion.row(c).sum();
    m.precision = safe_div(tp, predicted);
    m.recall = safe_div(tp, static_cast<double>(m.support));
    m.f1 = safe_div(2.0 * m.precision * m.recall, m.precision + m.recall);
    if (m.support > 0) {
      report.macro_precision += m.precision;
      report.macro_recall += m.recall;
      report.macro_f1 += m.f1;
      ++present;
    }
  }
  report.macro_precision = safe_div(report.macro_precision, static_cast<double>(present));
  report.macro_recall = safe_div(report.macro_recall, static_cast<double>(present));
  report.macro_f1 = safe_div(report.macro_f1, static_cast<double>(present));
  return report;
}

double average_precision(std::span<const double> scores, std::span<const int> relevant) {
  if (scores.size() != relevant.size()) throw ContractError("average_precision: length mismatch");
  const auto order = ranking(scores);
  double hits = 0.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (relevant[order[k]]) {
      hits += 1.0;
      sum += hits / static_cast<double>(k + 1);
    }
  }
  return safe_div(sum, hits);
}

std::vector<PrPoint> pr_curve(std::span<const double> scores, std::span<const int> relevant) {
  if (scores.size() != relevant.size()) throw ContractError("pr_curve: length mismatch");
  const auto order = ranking(scores);
  const double positives = static_cast<double>(std::count_if(relevant.begin(), relevant.end(), [](int r) { return r != 0; }));
  std::vector<PrPoint> out;
  double hits = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (relevant[order[k]]) hits += 1.0;
    out.push_back({scores[order[k]], hits / static_cast<double>(k + 1), safe_div(hits, positives)});
  }
  return out;
}

void auprc(const PredictionSet& preds, MetricsReport& report) {
  preds.validate();
  const Index C = preds.class_count();
  report.per_class.resize(static_cast<std::size_t>(C));
  report.auprc_excluded.clear();
  std::vector<double> scores(preds.truth.size());
  std::vector<int> relevant(preds.truth.size());
  double total = 0.0;
  Index used = 0;
  for (Index c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < preds.truth.size(); ++i) {
      scores[i] = preds.probabilities(static_cast<Index>(i), c);
      relevant[i] = preds.truth[i] == c ? 1 : 0;
    }
    auto& m = report.per_class[static_cast<std::size_t>(c)];
    if (std::find(relevant.begin(), relevant.end(), 1) == relevant.end()) {
      m.average_precision = 0.0;
      report.auprc_excluded.push_back(static_cast<int>(c));
      continue;
    }
    m.average_precision = average_precision(scores, relevant);
    total += m.average_precision;
    ++used;
  }
  report.macro_auprc = safe_div(total, static_cast<double>(used));
}

MetricsReport evaluate_predictions(const PredictionSet& preds) {
  MetricsReport report = macro_prf(preds);
  auprc(preds, report);
  return report;
}

nlohmann::ordered_json to_json(const MetricsReport& report, const std::vector<std::string>& class_names) {
  nlohmann::ordered_json j;
  j["examples"] = report.examples;
  j["macro_precision"] = report.macro_precision;
  j["macro_recall"] = report.macro_recall;
  j["macro_f1"] = report.macro_f1;
  j["macro_auprc"] = report.macro_auprc;
  nlohmann::ordered_json classes = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    const auto& m = report.per_class[c];
    nlohmann::ordered_json row;
    row["class"] = c < class_names.size() ? class_names[c] : std::to_string(c);
    row["support"] = m.support;
    row["precision"] = m.precision;
    row["recall"] = m.recall;
    row["f1"] = m.f1;
    row["average_precision"] = m.average_precision;
    classes.push_back(row);
  }
  j["per_class"] = classes;
  j["auprc_excluded"] = report.auprc_excluded;
  nlohmann::ordered_json confusion = nlohmann::ordered_json::array();
  for (Index r = 0; r < report.confusion.rows(); ++r) {
    std::vector<int> row;
    for (Index c = 0; c < report.confusion.cols(); ++c) row.push_back(report.confusion(r, c));
    confusion.push_back(row);
  }
  j["confusion"] = confusion;
  return j;
}

}  // namespace irtune
