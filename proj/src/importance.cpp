#include "irtune/importance.hpp"

namespace irtune {

std::string to_string(ImportanceMetric metric) {
  switch (metric) {
    case ImportanceMetric::Gradient: return "gradient";
    case ImportanceMetric::Magnitude: return "magnitude";
    case ImportanceMetric::Similarity: return "similarity";
  }
  return "unknown";
}

ImportanceMetric parse_importance_metric(const std::string& name) {
  if (name == "gradient") return ImportanceMetric::Gradient;
  if (name == "magnitude") return ImportanceMetric::Magnitude;
  if (name == "similarity") return ImportanceMetric::Similarity;
  throw ConfigError("unknown importance metric '" + name + "' (expected gradient, magnitude or similarity)");
}

}  // namespace irtune
