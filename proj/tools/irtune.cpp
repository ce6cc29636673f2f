#include "irtune/commands.hpp"
#include "irtune/error.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <optional>

namespace {

using irtune::RunConfig;

// Flags that replace single config keys after the config file is read.
struct Overrides {
  std::optional<std::string> policy;
  std::optional<int> max_splits;
  std::optional<int> k_layers;
  std::optional<int> reselect_k;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<std::string> metric;
  std::optional<std::string> format;
  std::optional<int> log_every;

  void attach(CLI::App& cmd) {
    cmd.add_option("--policy", policy, "ir | ist | lisa | full");
    cmd.add_option("--max-splits", max_splits, "hierarchical split depth for ir");
    cmd.add_option("--k-layers", k_layers, "layer count for ist / lisa");
    cmd.add_option("--reselect-k", reselect_k, "steps between re-selections");
    cmd.add_option("--seed", seed, "train.seed (takes precedence over IRTUNE_SEED)");
    cmd.add_option("--epochs", epochs, "train.epochs");
    cmd.add_option("--metric", metric, "gradient | magnitude | similarity");
    cmd.add_option("--format", format, "vanilla | instruction");
    cmd.add_option("--log-every", log_every, "runlog row interval");
  }

  void apply(nlohmann::json& j) const {
    if (policy) j["train.policy"] = *policy;
    if (max_splits) j["train.max_splits"] = *max_splits;
    if (k_layers) j["train.k_layers"] = *k_layers;
    if (reselect_k) j["train.reselect_k"] = *reselect_k;
    if (seed) j["train.seed"] = *seed;
    if (epochs) j["train.epochs"] = *epochs;
    if (metric) j["train.importance_metric"] = *metric;
    if (format) j["train.format"] = *format;
    if (log_every) j["train.log_every"] = *log_every;
  }
};

RunConfig resolve_config(const std::string& path, const Overrides& overrides) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw irtune::ConfigError("cannot open config file " + path);
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw irtune::ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw irtune::ConfigError("config file " + path + " must hold a JSON object");
  }
  overrides.apply(j);
  RunConfig config = RunConfig::from_json(j);
  if (!overrides.seed) irtune::apply_env_overrides(config);
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Importance-driven dynamic layer selection for LoRA fine-tuning"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string data_dir;
  Overrides overrides;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic revision-intent dataset");
  gen->add_option("--config", config_path, "flat JSON run configuration");
  gen->add_option("--out", out_dir, "output directory")->required();
  overrides.attach(*gen);

  auto* train = app.add_subcommand("train", "fine-tune on a dataset directory");
  bool pr_curves = false;
  train->add_option("--config", config_path, "flat JSON run configuration");
  train->add_option("--data", data_dir, "directory with train/val/test.jsonl")->required();
  train->add_option("--out", out_dir, "run output directory")->required();
  train->add_flag("--pr-curves", pr_curves, "also write pr_<class>.csv");
  Overrides train_overrides;
  train_overrides.attach(*train);

  auto* split = app.add_subcommand("split", "split a score vector into important and redundant layers");
  std::string scores_file;
  int split_depth = 1;
  split->add_option("scores", scores_file, "file with a JSON array or one CSV row")->required();
  split->add_option("--max-splits", split_depth, "hierarchical split depth")->check(CLI::PositiveNumber);

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the analytic gradients");
  std::uint64_t grad_seed = 0;
  int grad_seeds = 5;
  grad->add_option("--seed", grad_seed, "first seed");
  grad->add_option("--seeds", grad_seeds, "number of consecutive seeds")->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "merge run directories into comparison.csv");
  std::vector<std::string> run_dirs;
  std::string report_out = "comparison.csv";
  report->add_option("runs", run_dirs, "run directories")->required();
  report->add_option("--out", report_out, "output CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      irtune::cmd_gen_data(resolve_config(config_path, overrides), out_dir, std::cout);
    } else if (*train) {
      irtune::TrainOptions options;
      options.write_pr_curves = pr_curves;
      irtune::cmd_train(resolve_config(config_path, train_overrides), data_dir, out_dir, std::cout, options);
    } else if (*split) {
      std::cout << irtune::cmd_split(scores_file, split_depth).dump(2) << '\n';
    } else if (*grad) {
      return irtune::cmd_gradcheck(grad_seed, grad_seeds, std::cout);
    } else if (*report) {
      std::vector<std::filesystem::path> dirs(run_dirs.begin(), run_dirs.end());
      irtune::cmd_report(dirs, report_out);
      std::cout << "wrote " << report_out << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
