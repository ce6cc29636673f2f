#pragma once

#include "irtune/error.hpp"
#include "irtune/selector.hpp"
#include "irtune/types.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace irtune {

enum class ImportanceMetric { Gradient, Magnitude, Similarity };

std::string to_string(ImportanceMetric metric);
ImportanceMetric parse_importance_metric(const std::string& name);

// Flattened gradient of the loss w.r.t. each layer's base parameters.
template <typename Scalar>
struct GradSnapshot {
  std::vector<Vector<Scalar>> per_layer;
};

// Hidden states entering and leaving one layer; one column per token position.
template <typename Scalar>
struct LayerStates {
  Matrix<Scalar> h_in;
  Matrix<Scalar> h_out;
};

template <typename Scalar>
struct HiddenStateTrace {
  std::vector<LayerStates<Scalar>> layers;
};

struct SimilarityScores {
  ScoreVector scores;
  // Layers where every position had a zero vector; their score is 0.
  std::vector<int> zero_state_layers;
};

namespace detail {

template <typename Scalar>
ScoreVector per_layer_l2(const std::vector<Vector<Scalar>>& per_layer, const char* what) {
  if (per_layer.empty()) throw ContractError(std::string(what) + ": no layers supplied");
  VectorXd out(static_cast<Index>(per_layer.size()));
  for (std::size_t i = 0; i < per_layer.size(); ++i) {
    const auto& v = per_layer[i];
    if (v.size() == 0) throw ContractError(std::string(what) + ": layer " + std::to_string(i) + " is missing");
    if (!v.allFinite()) throw ContractError(std::string(what) + ": layer " + std::to_string(i) + " is not finite");
    out[static_cast<Index>(i)] = static_cast<double>(v.norm());
  }
  return ScoreVector(std::move(out));
}

}  // namespace detail

// a_i = ||grad of layer i's base parameters||_2
template <typename Scalar>
ScoreVector gradient_norm_scores(const GradSnapshot<Scalar>& snapshot) {
  return detail::per_layer_l2(snapshot.per_layer, "gradient_norm_scores");
}

// a_i = ||layer i's base weights||_2 (adapters excluded by the caller's flattening)
template <typename Scalar>
ScoreVector magnitude_scores(const std::vector<Vector<Scalar>>& per_layer_weights) {
  return detail::per_layer_l2(per_layer_weights, "magnitude_scores");
}

// a_i = mean over positions of 1 - cos(h_in, h_out); positions with a zero vector are skipped.
template <typename Scalar>
SimilarityScores similarity_scores(const HiddenStateTrace<Scalar>& trace) {
  if (trace.layers.empty()) throw ContractError("similarity_scores: no layers supplied");
  SimilarityScores result;
  VectorXd out(static_cast<Index>(trace.layers.size()));
  for (std::size_t i = 0; i < trace.layers.size(); ++i) {
    const auto& s = trace.layers[i];
    if (s.h_in.rows() != s.h_out.rows() || s.h_in.cols() != s.h_out.cols() || s.h_in.cols() == 0) {
      throw ContractError("similarity_scores: layer " + std::to_string(i) + " has mismatched or empty states");
    }
    double total = 0.0;
    Index used = 0;
    for (Index p = 0; p < s.h_in.cols(); ++p) {
      const double a = static_cast<double>(s.h_in.col(p).norm());
      const double b = static_cast<double>(s.h_out.col(p).norm());
      if (a == 0.0 || b == 0.0) continue;
      const double cosine = std::clamp(static_cast<double>(s.h_in.col(p).dot(s.h_out.col(p))) / (a * b), -1.0, 1.0);
      total += 1.0 - cosine;
      ++used;
    }
    if (used == 0) result.zero_state_layers.push_back(static_cast<int>(i));
    out[static_cast<Index>(i)] = used == 0 ? 0.0 : total / static_cast<double>(used);
  }
  result.scores = ScoreVector(std::move(out));
  return result;
}

}  // namespace irtune
