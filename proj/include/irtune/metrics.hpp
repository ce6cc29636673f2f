#pragma once

#include "irtune/types.hpp"

#include <json.hpp>

#include <span>
#include <string>
#include <vector>

namespace irtune {

// One row per example: true label, predicted label and class probabilities.
struct PredictionSet {
  std::vector<int> truth;
  std::vector<int> predicted;
  MatrixXd probabilities;  // examples x classes

  Index size() const { return static_cast<Index>(truth.size()); }
  Index class_count() const { return probabilities.cols(); }
  void validate() const;

  // Predicted label is the first argmax of each row.
  static PredictionSet from_probabilities(std::vector<int> truth, MatrixXd probabilities);
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double average_precision = 0.0;
  Index support = 0;
};

struct MetricsReport {
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double macro_auprc = 0.0;
  Eigen::MatrixXi confusion;  // rows: true class, columns: predicted class
  std::vector<int> auprc_excluded;  // classes without positives
  Index examples = 0;
};

// Per-class and macro precision/recall/F1; the macro mean runs over classes present in the truth.
// Fills per_class P/R/F1/support, the macro P/R/F1 and the confusion matrix.
MetricsReport macro_prf(const PredictionSet& preds);

// Step-interpolated average precision of one ranking; ties keep the input order.
double average_precision(std::span<const double> scores, std::span<const int> relevant);

struct PrPoint {
  double threshold;
  double precision;
  double recall;
};
std::vector<PrPoint> pr_curve(std::span<const double> scores, std::span<const int> relevant);

// One-vs-rest AP per class and its unweighted mean over classes with at least one positive.
// Fills per_class average_precision, macro_auprc and auprc_excluded.
void auprc(const PredictionSet& preds, MetricsReport& report);

MetricsReport evaluate_predictions(const PredictionSet& preds);

nlohmann::ordered_json to_json(const MetricsReport& report, const std::vector<std::string>& class_names);

}  // namespace irtune
