#pragma once

#include "irtune/config.hpp"
#include "irtune/model.hpp"
#include "irtune/trainer.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace irtune {

// Writes train/val/test.jsonl, vocab.txt and manifest.json into `out_dir`. Returns the manifest.
nlohmann::ordered_json cmd_gen_data(const RunConfig& config, const std::filesystem::path& out_dir, std::ostream& log);

// Label scheme of a dataset directory: manifest.json when present, otherwise the sorted
// distinct labels of train.jsonl.
LabelScheme load_scheme(const std::filesystem::path& data_dir);

struct TrainOptions {
  bool write_pr_curves = false;
  TrainHooks hooks;
};

// Trains on `data_dir` and writes runlog.csv, summary.json and metrics.json into `out_dir`.
RunArtifacts cmd_train(const RunConfig& config, const std::filesystem::path& data_dir,
                       const std::filesystem::path& out_dir, std::ostream& out, const TrainOptions& options = {});

// Parses one JSON array or one comma-separated row of numbers. ParseError carries the byte offset
// (the element index for a non-numeric JSON element).
std::vector<double> parse_score_text(const std::string& text);

nlohmann::ordered_json split_to_json(const ScoreVector& scores, int max_splits);
nlohmann::ordered_json cmd_split(const std::filesystem::path& scores_file, int max_splits);

struct GradcheckResult {
  std::uint64_t seed = 0;
  double max_relative_error = 0.0;
  std::string worst_parameter;
  Index checked = 0;
};

// Relative error |a - n| / max(|a|, |n|, floor) between analytic and central-difference
// gradients; the floor keeps near-zero entries from dominating.
inline constexpr double kGradcheckFloor = 1e-6;
inline constexpr double kGradcheckStep = 1e-5;
inline constexpr double kGradcheckTolerance = 1e-4;

using GradientTamper = std::function<void(Gradients<double>&)>;

// Finite-difference check of every base and adapter parameter of a 2-layer, d=32 micro model
// with randomized norms, biases and adapters. `tamper` edits the analytic gradients first.
GradcheckResult gradcheck(std::uint64_t seed, const GradientTamper& tamper = {});

// Runs `seeds` consecutive seeds from `first_seed`, one line each. Returns 0 when all pass.
int cmd_gradcheck(std::uint64_t first_seed, int seeds, std::ostream& out, const GradientTamper& tamper = {});

// Step-aligned loss columns of every run, then one row per final metric.
void cmd_report(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out_file);

inline constexpr int kReportSmoothingWindow = 50;

}  // namespace irtune
