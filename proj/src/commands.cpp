#include "irtune/commands.hpp"

#include "irtune/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

namespace irtune {

namespace fs = std::filesystem;

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string csv_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

nlohmann::ordered_json layer_set_json(const LayerSet& s) { return nlohmann::ordered_json(s); }

}  // namespace

// ---------------------------------------------------------------------------
// gen-data

nlohmann::ordered_json cmd_gen_data(const RunConfig& config, const fs::path& out_dir, std::ostream& log) {
  config.data.validate();
  const LabelScheme scheme = synthetic_scheme(config.data.classes);
  const auto examples = generate_synthetic(config.data);
  const DatasetSplits splits = split_dataset(examples, scheme.size(), config.data.seed);

  ensure_dir(out_dir);
  write_jsonl(out_dir / "train.jsonl", splits.train, scheme);
  write_jsonl(out_dir / "val.jsonl", splits.val, scheme);
  write_jsonl(out_dir / "test.jsonl", splits.test, scheme);
  Vocabulary::synthetic(config.data.vocab, scheme).save(out_dir / "vocab.txt");

  nlohmann::ordered_json manifest;
  manifest["seed"] = config.data.seed;
  manifest["labels"] = scheme.names;
  manifest["total"] = examples.size();
  nlohmann::ordered_json classes = nlohmann::ordered_json::object();
  for (std::size_t c = 0; c < scheme.names.size(); ++c) {
    const auto& n = splits.per_class[c];
    classes[scheme.names[c]] = {{"total", n.train + n.val + n.test}, {"train", n.train}, {"val", n.val}, {"test", n.test}};
  }
  manifest["classes"] = classes;
  manifest["splits"] = {{"train", splits.train.size()}, {"val", splits.val.size()}, {"test", splits.test.size()}};
  nlohmann::ordered_json data = nlohmann::ordered_json::object();
  const nlohmann::ordered_json resolved = config.to_json();
  for (const auto& [key, value] : resolved.items()) {
    if (key.rfind("data.", 0) == 0) data[key] = value;
  }
  manifest["config"] = data;
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");

  log << "wrote " << examples.size() << " examples to " << out_dir.string() << " (train " << splits.train.size()
      << ", val " << splits.val.size() << ", test " << splits.test.size() << ")\n";
  return manifest;
}

// ---------------------------------------------------------------------------
// train

LabelScheme load_scheme(const fs::path& data_dir) {
  const fs::path manifest_path = data_dir / "manifest.json";
  if (fs::exists(manifest_path)) {
    try {
      const auto manifest = nlohmann::json::parse(read_text(manifest_path));
      LabelScheme scheme{manifest.at("labels").get<std::vector<std::string>>()};
      if (scheme.size() < 2) throw InputError(manifest_path.string() + " lists fewer than two labels");
      return scheme;
    } catch (const nlohmann::json::exception& e) {
      throw InputError(manifest_path.string() + " is malformed: " + e.what());
    }
  }
  const fs::path train_path = data_dir / "train.jsonl";
  std::ifstream in(train_path);
  if (!in) throw InputError("cannot open " + train_path.string());
  std::set<std::string> labels;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      labels.insert(j.at("label").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(train_path.string() + ": " + e.what(), number);
    }
  }
  if (labels.size() < 2) throw InputError(train_path.string() + " holds fewer than two distinct labels");
  return LabelScheme{{labels.begin(), labels.end()}};
}

RunArtifacts cmd_train(const RunConfig& config, const fs::path& data_dir, const fs::path& out_dir, std::ostream& out,
                       const TrainOptions& options) {
  config.validate();
  const LabelScheme scheme = load_scheme(data_dir);
  if (scheme.size() != config.model.classes) {
    throw ConfigError("model.classes = " + std::to_string(config.model.classes) + " but the dataset has " +
                      std::to_string(scheme.size()) + " labels");
  }
  const auto train_examples = load_jsonl(data_dir / "train.jsonl", scheme);
  const auto val_examples = load_jsonl(data_dir / "val.jsonl", scheme);
  const auto test_examples = load_jsonl(data_dir / "test.jsonl", scheme);
  const fs::path vocab_path = data_dir / "vocab.txt";
  const Vocabulary vocab =
      fs::exists(vocab_path) ? Vocabulary::load(vocab_path) : Vocabulary::build(train_examples, scheme);
  if (vocab.size() > config.model.vocab) {
    throw ConfigError("model.vocab = " + std::to_string(config.model.vocab) + " is smaller than the dataset vocabulary (" +
                      std::to_string(vocab.size()) + " tokens)");
  }

  const Index cutoff = config.cutoff();
  const EncodedSplit train_split = encode(train_examples, config.format, scheme, vocab, cutoff);
  const EncodedSplit val_split = encode(val_examples, config.format, scheme, vocab, cutoff);
  const EncodedSplit test_split = encode(test_examples, config.format, scheme, vocab, cutoff);

  ensure_dir(out_dir);
  RunArtifacts run = train(Model<double>::create(config.model, config.lora), train_split, val_split, test_split,
                           config.train, options.hooks);

  write_runlog(out_dir / "runlog.csv", run.steps, config.model.layers, config.train.log_every);

  std::vector<double> losses;
  std::set<std::size_t> cardinalities;
  double trainable_sum = 0.0;
  for (const auto& s : run.steps) {
    losses.push_back(s.loss);
    cardinalities.insert(s.selected.size());
    trainable_sum += static_cast<double>(s.trainable_params);
  }
  const auto smoothed = smooth_ema(losses, kReportSmoothingWindow);

  nlohmann::ordered_json summary;
  summary["run_id"] = to_string(config.train.policy.kind) + "-seed" + std::to_string(config.train.seed);
  summary["policy"] = to_string(config.train.policy.kind);
  summary["seed"] = config.train.seed;
  summary["config"] = config.to_json();
  summary["data_dir"] = data_dir.string();
  summary["examples"] = {{"train", train_split.size()}, {"val", val_split.size()}, {"test", test_split.size()}};
  summary["unknown_tokens"] = train_split.unknown_tokens + val_split.unknown_tokens + test_split.unknown_tokens;
  summary["steps"] = run.steps.size();
  summary["final_loss"] = losses.empty() ? 0.0 : losses.back();
  summary["final_smoothed_loss"] = smoothed.empty() ? 0.0 : smoothed.back();
  summary["smoothing_window"] = kReportSmoothingWindow;
  summary["mask_cardinalities"] = std::vector<std::size_t>(cardinalities.begin(), cardinalities.end());
  summary["mean_trainable_params"] = run.steps.empty() ? 0.0 : trainable_sum / static_cast<double>(run.steps.size());
  nlohmann::ordered_json epochs = nlohmann::ordered_json::array();
  for (const auto& e : run.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"mean_loss", e.mean_loss},
                      {"val_macro_f1", e.validation.macro_f1},
                      {"val_macro_auprc", e.validation.macro_auprc}});
  }
  summary["validation"] = epochs;
  summary["test"] = {{"macro_precision", run.test.macro_precision},
                     {"macro_recall", run.test.macro_recall},
                     {"macro_f1", run.test.macro_f1},
                     {"macro_auprc", run.test.macro_auprc}};
  summary["wall_seconds"] = run.wall_seconds;
  write_text(out_dir / "summary.json", summary.dump(2) + "\n");
  write_text(out_dir / "metrics.json", to_json(run.test, scheme.names).dump(2) + "\n");

  if (options.write_pr_curves) {
    const PredictionSet preds = predict(run.model, test_split);
    for (Index c = 0; c < scheme.size(); ++c) {
      std::vector<double> scores(static_cast<std::size_t>(preds.size()));
      std::vector<int> relevant(scores.size());
      for (Index i = 0; i < preds.size(); ++i) {
        scores[static_cast<std::size_t>(i)] = preds.probabilities(i, c);
        relevant[static_cast<std::size_t>(i)] = preds.truth[static_cast<std::size_t>(i)] == c ? 1 : 0;
      }
      std::ostringstream csv;
      csv << "threshold,precision,recall\n";
      for (const auto& p : pr_curve(scores, relevant)) {
        csv << csv_number(p.threshold) << ',' << csv_number(p.precision) << ',' << csv_number(p.recall) << '\n';
      }
      write_text(out_dir / ("pr_" + scheme.names[static_cast<std::size_t>(c)] + ".csv"), csv.str());
    }
  }

  out << "test macro_f1=" << fixed(run.test.macro_f1, 4) << " auprc=" << fixed(run.test.macro_auprc, 4) << '\n';
  return run;
}

// ---------------------------------------------------------------------------
// split

std::vector<double> parse_score_text(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) throw ParseError("no scores in input", 0);

  std::vector<double> values;
  if (text[first] == '[') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("invalid JSON array: ") + e.what(), e.byte == 0 ? 0 : e.byte - 1);
    }
    if (!j.is_array()) throw ParseError("expected a JSON array of numbers", first);
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (!j[i].is_number()) throw ParseError("element " + std::to_string(i) + " is not a number", i);
      values.push_back(j[i].get<double>());
    }
  } else {
    const auto last = text.find_last_not_of(" \t\r\n");
    if (text.find('\n', first) < last) throw ParseError("expected a single CSV row", text.find('\n', first));
    std::size_t pos = first;
    while (pos <= last) {
      std::size_t end = text.find(',', pos);
      if (end == std::string::npos || end > last) end = last + 1;
      std::size_t a = pos;
      std::size_t b = end;
      while (a < b && std::isspace(static_cast<unsigned char>(text[a]))) ++a;
      while (b > a && std::isspace(static_cast<unsigned char>(text[b - 1]))) --b;
      double v = 0.0;
      const char* begin = text.data() + a;
      if (*begin == '+') ++begin;
      const auto [ptr, ec] = std::from_chars(begin, text.data() + b, v);
      if (a == b || ec != std::errc() || ptr != text.data() + b) {
        throw ParseError("non-numeric field '" + text.substr(a, b - a) + "'", a);
      }
      values.push_back(v);
      pos = end + 1;
      if (end == last + 1) break;
      if (pos > last) throw ParseError("trailing comma", end);
    }
  }
  if (values.empty()) throw ParseError("no scores in input", first);
  return values;
}

nlohmann::ordered_json split_to_json(const ScoreVector& scores, int max_splits) {
  const SplitResult r = split_once(scores);
  nlohmann::ordered_json j;
  j["gamma_star"] = r.gamma_star;
  j["split_index"] = r.split_index;
  j["important"] = layer_set_json(r.important);
  j["redundant"] = layer_set_json(r.redundant);
  j["variance_sum"] = r.variance_sum;
  j["degenerate"] = r.degenerate;
  if (max_splits > 1) {
    const Tiering t = split_hierarchical(scores, max_splits);
    nlohmann::ordered_json tiers = nlohmann::ordered_json::array();
    for (const auto& tier : t.tiers) tiers.push_back(layer_set_json(tier));
    j["tiers"] = tiers;
    j["thresholds"] = t.thresholds;
    j["splits_performed"] = t.splits_performed;
  }
  return j;
}

nlohmann::ordered_json cmd_split(const fs::path& scores_file, int max_splits) {
  if (max_splits < 1) throw ConfigError("max_splits must be >= 1");
  const auto values = parse_score_text(read_text(scores_file));
  return split_to_json(ScoreVector(std::span<const double>(values)), max_splits);
}

// ---------------------------------------------------------------------------
// gradcheck

namespace {

struct MicroProblem {
  Model<double> model;
  Batch batch;
  std::vector<int> labels;
};

MicroProblem micro_problem(std::uint64_t seed) {
  ModelConfig mc;
  mc.layers = 2;
  mc.dim = 32;
  mc.heads = 2;
  mc.ff_dim = 64;
  mc.vocab = 12;
  mc.max_len = 8;
  mc.classes = 3;
  mc.seed = seed;
  LoraConfig lc;
  lc.rank = 4;
  lc.alpha = 8.0;

  MicroProblem p{Model<double>::create(mc, lc), {}, {}};
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + 17);
  std::normal_distribution<double> noise(0.0, 1.0);
  auto jitter = [&](auto& v, double center, double spread) {
    for (Index i = 0; i < v.size(); ++i) v.data()[i] = center + spread * noise(rng);
  };
  for (auto& layer : p.model.params.layers) {
    jitter(layer.ln1_gain, 1.0, 0.2);
    jitter(layer.ln1_bias, 0.0, 0.1);
    jitter(layer.ln2_gain, 1.0, 0.2);
    jitter(layer.ln2_bias, 0.0, 0.1);
    for (auto& b : layer.bias) jitter(b, 0.0, 0.1);
  }
  jitter(p.model.params.final_gain, 1.0, 0.2);
  jitter(p.model.params.final_bias, 0.0, 0.1);
  jitter(p.model.params.head_bias, 0.0, 0.1);
  for (auto& layer : p.model.adapters) {
    for (auto& slot : layer.slots) {
      if (slot) jitter(slot->B, 0.0, 0.1);
    }
  }

  // Ragged lengths exercise the padding mask.
  std::uniform_int_distribution<int> token(0, static_cast<int>(mc.vocab) - 1);
  std::vector<std::vector<int>> seqs;
  for (int len : {5, 8, 3}) {
    std::vector<int> s(static_cast<std::size_t>(len));
    for (auto& t : s) t = token(rng);
    seqs.push_back(s);
  }
  p.batch = Batch::from_sequences(seqs, 0);
  p.labels = {0, 2, 1};
  return p;
}

double batch_loss(const MicroProblem& p) { return loss(forward(p.model, p.batch).logits, std::span<const int>(p.labels)); }

struct Tracker {
  GradcheckResult& result;

  void check(const std::string& name, double* values, const double* analytic, Index size, MicroProblem& p) {
    for (Index i = 0; i < size; ++i) {
      const double saved = values[i];
      values[i] = saved + kGradcheckStep;
      const double up = batch_loss(p);
      values[i] = saved - kGradcheckStep;
      const double down = batch_loss(p);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * kGradcheckStep);
      const double a = analytic[i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), kGradcheckFloor});
      if (!(err <= result.max_relative_error)) {
        result.max_relative_error = std::isnan(err) ? INFINITY : err;
        result.worst_parameter = name + "[" + std::to_string(i) + "]";
      }
      ++result.checked;
    }
  }
};

}  // namespace

GradcheckResult gradcheck(std::uint64_t seed, const GradientTamper& tamper) {
  MicroProblem p = micro_problem(seed);
  const ForwardTrace<double> trace = forward(p.model, p.batch);
  Gradients<double> grads = backward(p.model, trace, std::span<const int>(p.labels), AdapterGrads::All);
  if (tamper) tamper(grads);

  GradcheckResult result;
  result.seed = seed;
  Tracker tracker{result};

  std::vector<std::pair<std::string, std::pair<double*, Index>>> params;
  p.model.params.visit([&](const std::string& name, double* data, Index size) { params.push_back({name, {data, size}}); });
  std::vector<const double*> analytic;
  grads.base.visit([&](const std::string&, double* data, Index) { analytic.push_back(data); });
  for (std::size_t k = 0; k < params.size(); ++k) {
    tracker.check(params[k].first, params[k].second.first, analytic[k], params[k].second.second, p);
  }

  for (std::size_t l = 0; l < p.model.adapters.size(); ++l) {
    for (LoraTarget t : kAllLoraTargets) {
      auto& slot = p.model.adapters[l][t];
      if (!slot) continue;
      const auto& g = grads.adapters[l][static_cast<std::size_t>(t)];
      if (!g) throw ContractError("gradcheck: missing adapter gradient");
      const std::string prefix = "layer" + std::to_string(l) + ".lora_" + to_string(t);
      tracker.check(prefix + ".A", slot->A.data(), g->A.data(), slot->A.size(), p);
      tracker.check(prefix + ".B", slot->B.data(), g->B.data(), slot->B.size(), p);
    }
  }
  return result;
}

int cmd_gradcheck(std::uint64_t first_seed, int seeds, std::ostream& out, const GradientTamper& tamper) {
  if (seeds < 1) throw ConfigError("gradcheck needs at least one seed");
  int failures = 0;
  for (int k = 0; k < seeds; ++k) {
    const GradcheckResult r = gradcheck(first_seed + static_cast<std::uint64_t>(k), tamper);
    const bool pass = r.max_relative_error <= kGradcheckTolerance;
    if (!pass) ++failures;
    char err[32];
    std::snprintf(err, sizeof err, "%.3e", r.max_relative_error);
    out << (pass ? "PASS" : "FAIL") << " seed=" << r.seed << " max_rel_err=" << err << " params=" << r.checked
        << " worst=" << r.worst_parameter << '\n';
  }
  return failures == 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------
// report

namespace {

struct RunColumns {
  std::string label;
  std::map<long, double> loss;
  nlohmann::json summary;
};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

RunColumns read_run(const fs::path& dir) {
  const fs::path runlog = dir / "runlog.csv";
  const fs::path summary_path = dir / "summary.json";
  if (!fs::exists(runlog)) throw InputError("missing " + runlog.string());
  if (!fs::exists(summary_path)) throw InputError("missing " + summary_path.string());

  RunColumns run;
  try {
    run.summary = nlohmann::json::parse(read_text(summary_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(summary_path.string() + " is not valid JSON: " + e.what());
  }
  for (const char* key : {"run_id", "policy", "seed", "final_smoothed_loss", "test", "wall_seconds"}) {
    if (!run.summary.contains(key)) throw InputError(summary_path.string() + " lacks the '" + key + "' field");
  }
  if (!run.summary["test"].contains("macro_f1") || !run.summary["test"].contains("macro_auprc")) {
    throw InputError(summary_path.string() + " lacks test macro_f1/macro_auprc");
  }
  run.label = run.summary["run_id"].get<std::string>();

  std::ifstream in(runlog);
  std::string line;
  if (!std::getline(in, line)) throw InputError(runlog.string() + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv(line);
  static const std::vector<std::string> kLeading{"step", "loss", "lr", "trainable_params", "mask"};
  if (header.size() < kLeading.size() || !std::equal(kLeading.begin(), kLeading.end(), header.begin())) {
    throw InputError(runlog.string() + " has an unexpected header: " + line);
  }
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw InputError(runlog.string() + " line " + std::to_string(number) + " has " + std::to_string(cells.size()) +
                       " fields, expected " + std::to_string(header.size()));
    }
    try {
      std::size_t used = 0;
      const long step = std::stol(cells[0], &used);
      if (used != cells[0].size()) throw std::invalid_argument("step");
      run.loss[step] = std::stod(cells[1]);
    } catch (const std::exception&) {
      throw InputError(runlog.string() + " line " + std::to_string(number) + " is not numeric");
    }
  }
  return run;
}

}  // namespace

void cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out_file) {
  if (run_dirs.empty()) throw ConfigError("report needs at least one run directory");
  std::vector<RunColumns> runs;
  for (const auto& dir : run_dirs) runs.push_back(read_run(dir));

  // Duplicate run ids fall back to the directory name.
  std::map<std::string, int> seen;
  for (const auto& r : runs) ++seen[r.label];
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (seen[runs[i].label] > 1) runs[i].label = run_dirs[i].filename().string();
  }

  std::set<long> steps;
  for (const auto& r : runs) {
    for (const auto& [s, _] : r.loss) steps.insert(s);
  }

  std::ostringstream csv;
  csv << "step";
  for (const auto& r : runs) csv << ',' << r.label;
  csv << '\n';
  for (long s : steps) {
    csv << s;
    for (const auto& r : runs) {
      csv << ',';
      if (const auto it = r.loss.find(s); it != r.loss.end()) csv << csv_number(it->second);
    }
    csv << '\n';
  }

  auto metric_row = [&](const std::string& name, auto value_of) {
    csv << name;
    for (const auto& r : runs) csv << ',' << value_of(r.summary);
    csv << '\n';
  };
  csv << "metric";
  for (const auto& r : runs) csv << ',' << r.label;
  csv << '\n';
  metric_row("policy", [](const nlohmann::json& s) { return s["policy"].get<std::string>(); });
  metric_row("seed", [](const nlohmann::json& s) { return std::to_string(s["seed"].get<std::uint64_t>()); });
  metric_row("final_smoothed_loss",
             [](const nlohmann::json& s) { return csv_number(s["final_smoothed_loss"].get<double>()); });
  metric_row("test_macro_f1", [](const nlohmann::json& s) { return csv_number(s["test"]["macro_f1"].get<double>()); });
  metric_row("test_macro_auprc",
             [](const nlohmann::json& s) { return csv_number(s["test"]["macro_auprc"].get<double>()); });
  metric_row("wall_seconds", [](const nlohmann::json& s) { return csv_number(s["wall_seconds"].get<double>()); });

  if (out_file.has_parent_path()) ensure_dir(out_file.parent_path());
  write_text(out_file, csv.str());
}

}  // namespace irtune
