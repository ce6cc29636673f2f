// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 when any criterion fails.

#include "irtune/commands.hpp"
#include "irtune/config.hpp"
#include "irtune/data.hpp"
#include "irtune/lora.hpp"
#include "irtune/metrics.hpp"
#include "irtune/model.hpp"
#include "irtune/selector.hpp"
#include "irtune/trainer.hpp"
#include "metrics_oracle.hpp"
#include "split_oracle.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

using namespace irtune;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* pattern, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, value);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o) {
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << o.detail << std::endl;
}

template <typename Fn>
void run_criterion(int id, const std::string& name, Fn fn) {
  try {
    report(id, name, fn());
  } catch (const std::exception& e) {
    report(id, name, Outcome{false, std::string("exception: ") + e.what()});
  }
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome splitter_oracle() {
  std::mt19937_64 rng(1000);
  std::uniform_int_distribution<std::size_t> len(2, 64);
  int matched = 0, inequality_ok = 0;
  double worst_rel = 0.0;
  const auto start = Clock::now();
  for (int trial = 0; trial < 1000; ++trial) {
    const auto scores = oracle::random_scores(rng, len(rng));
    const SplitResult r = split_once(ScoreVector{std::span<const double>(scores)});
    const oracle::Exhaustive want = oracle::exhaustive_split(scores);
    const double rel = std::abs(r.variance_sum - want.value) / std::max(want.value, 1e-300);
    if (static_cast<std::size_t>(r.split_index) == want.j && (rel <= 1e-9 || want.value == r.variance_sum)) ++matched;
    if (want.value != 0.0) worst_rel = std::max(worst_rel, rel);
    const double total = oracle::naive_variance(scores, 0, scores.size());
    if (r.variance_sum <= total * (1 + 1e-12) + 1e-15) ++inequality_ok;
  }
  const double elapsed = seconds_since(start);
  return {matched == 1000 && inequality_ok == 1000 && elapsed < 1.0,
          std::to_string(matched) + "/1000 exact index match, variance bound held " + std::to_string(inequality_ok) +
              "/1000, max rel err " + fmt("%.2e", worst_rel) + ", " + fmt("%.3f", elapsed) + " s (limit 1 s)"};
}

Outcome hierarchical_example() {
  const Tiering t = split_hierarchical(ScoreVector{9, 6, 10, 1, 2}, 2);
  const std::vector<LayerSet> want{{0, 2}, {1}, {3, 4}};
  std::string got;
  for (const auto& tier : t.tiers) {
    got += "{";
    for (std::size_t i = 0; i < tier.size(); ++i) got += (i ? "," : "") + std::to_string(tier[i]);
    got += "}";
  }
  return {t.tiers == want, "tiers " + got + " (expected {0,2}{1}{3,4})"};
}

double best_split_seconds(std::size_t n) {
  std::mt19937_64 rng(n);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  const ScoreVector scores{std::span<const double>(v)};
  double best = INFINITY;
  for (int rep = 0; rep < 3; ++rep) {
    const auto start = Clock::now();
    const SplitResult r = split_once(scores);
    best = std::min(best, seconds_since(start));
    if (r.important.empty()) throw std::runtime_error("empty important set");
  }
  return best;
}

Outcome split_complexity() {
  const double small = best_split_seconds(100000);
  const double large = best_split_seconds(1000000);
  const double ratio = large / small;
  return {large <= 1.0 && ratio <= 15.0, "n=1e6 " + fmt("%.3f", large) + " s (limit 1 s), n=1e5 " +
                                             fmt("%.4f", small) + " s, ratio " + fmt("%.2f", ratio) + " (limit 15)"};
}

Outcome gradient_check() {
  const auto start = Clock::now();
  double worst = 0.0;
  Index checked = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const GradcheckResult r = gradcheck(seed);
    worst = std::max(worst, r.max_relative_error);
    checked = std::min(checked == 0 ? r.checked : checked, r.checked);
  }
  const double elapsed = seconds_since(start);
  return {worst <= kGradcheckTolerance && elapsed < 120.0,
          "5 seeds x " + std::to_string(checked) + " parameters, max rel err " + fmt("%.2e", worst) +
              " (limit 1e-4), " + fmt("%.1f", elapsed) + " s (limit 120 s)"};
}

Outcome lora_zero_init() {
  const RunConfig defaults = RunConfig::from_json(nlohmann::json::object());
  ModelConfig mc = defaults.model;
  mc.max_len = 32;
  const auto base = Model<double>::create(mc);
  auto adapted = Model<double>::create(mc, defaults.lora);
  const Batch batch = Batch::from_sequences({{2, 40, 41, 3, 42}, {2, 7, 3, 9, 9, 9, 100, 200}, {5}}, Vocabulary::kPad);
  const double fresh_gap = (forward(base, batch).logits - forward(adapted, batch).logits).cwiseAbs().maxCoeff();

  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 0.05);
  for (auto& layer : adapted.adapters) {
    for (auto& slot : layer.slots) slot->B = MatrixXd::NullaryExpr(slot->B.rows(), slot->B.cols(), [&] { return n(rng); });
  }
  auto merged = Model<double>::create(mc);
  for (std::size_t l = 0; l < adapted.adapters.size(); ++l) {
    for (LoraTarget t : kAllLoraTargets) {
      merged.params.layers[l].w(t) = merge(*adapted.adapters[l][t], adapted.params.layers[l].w(t));
    }
  }
  const MatrixXd a = forward(adapted, batch).logits;
  const double merge_rel = (a - forward(merged, batch).logits).norm() / a.norm();
  return {fresh_gap <= 1e-12 && merge_rel <= 1e-10, "fresh-adapter max abs gap " + fmt("%.2e", fresh_gap) +
                                                        " (limit 1e-12), merged rel gap " + fmt("%.2e", merge_rel) +
                                                        " (limit 1e-10)"};
}

struct DefaultRun {
  bool done = false;
  double macro_f1 = 0.0;
  double seconds = 0.0;
  std::set<std::size_t> cardinalities;
};

Outcome learnability(const fs::path& work, DefaultRun& out) {
  const RunConfig config = RunConfig::from_json(nlohmann::json::object());
  const auto start = Clock::now();
  std::ostringstream log;
  cmd_gen_data(config, work / "data", log);
  const RunArtifacts run = cmd_train(config, work / "data", work / "ir-default", log);
  out.seconds = seconds_since(start);
  out.macro_f1 = run.test.macro_f1;
  for (const auto& s : run.steps) out.cardinalities.insert(s.selected.size());
  out.done = true;
  return {run.test.macro_f1 >= 0.90 && out.seconds <= 300.0,
          "test macro F1 " + fmt("%.4f", run.test.macro_f1) + " (limit 0.90), AUPRC " +
              fmt("%.4f", run.test.macro_auprc) + ", " + std::to_string(run.steps.size()) + " steps, " +
              fmt("%.1f", out.seconds) + " s (limit 300 s)"};
}

// A scripted score schedule on a small model must produce the exact selected set at every step.
bool scripted_schedule_holds() {
  SynthConfig sc;
  sc.per_class = 10;
  sc.vocab = 12;
  sc.min_len = 3;
  sc.max_len = 4;
  const auto parts = split_dataset(generate_synthetic(sc), 4, 0);
  const LabelScheme scheme = synthetic_scheme();
  const Vocabulary v = Vocabulary::synthetic(sc.vocab, scheme);
  auto enc = [&](const auto& xs) { return encode(xs, TextFormat::Vanilla, scheme, v, 16); };
  ModelConfig mc;
  mc.layers = 5;
  mc.dim = 8;
  mc.heads = 2;
  mc.ff_dim = 16;
  mc.vocab = 64;
  mc.max_len = 16;
  TrainConfig tc;
  tc.batch_size = 4;
  tc.epochs = 1;
  tc.policy.max_splits = 2;
  const std::vector<ScoreVector> schedule{ScoreVector{9, 6, 10, 1, 2}, ScoreVector{1, 1, 1, 1, 8},
                                          ScoreVector{3, 3, 3, 3, 3}, ScoreVector{5, 5, 0, 0, 5}};
  const std::vector<LayerSet> want{{0, 2}, {4}, {0, 1, 2, 3, 4}, {0, 1, 4}};
  TrainHooks hooks;
  hooks.scores = [&](int step, const ScoreVector&) -> std::optional<ScoreVector> {
    return schedule[static_cast<std::size_t>(step) % schedule.size()];
  };
  const auto run = train(Model<double>::create(mc, LoraConfig{2, 4.0}), enc(parts.train), enc(parts.val),
                         enc(parts.test), tc, hooks);
  for (const auto& s : run.steps) {
    if (s.selected != want[static_cast<std::size_t>(s.step) % want.size()]) return false;
  }
  return !run.steps.empty();
}

Outcome dynamic_selection(const DefaultRun& run) {
  if (!run.done) return {false, "criterion 6 run did not complete"};
  std::string seen;
  for (std::size_t c : run.cardinalities) seen += (seen.empty() ? "" : ",") + std::to_string(c);
  const bool scripted = scripted_schedule_holds();
  return {run.cardinalities.size() >= 2 && scripted,
          std::to_string(run.cardinalities.size()) + " distinct mask cardinalities {" + seen +
              "} (need >= 2), scripted schedule " + (scripted ? "matched" : "mismatched")};
}

Outcome policy_comparison(const fs::path& work) {
  const fs::path data = work / "data";
  if (!fs::exists(data / "manifest.json")) {
    std::ostringstream log;
    cmd_gen_data(RunConfig::from_json(nlohmann::json::object()), data, log);
  }
  const std::vector<std::string> policies{"ir", "ist", "lisa", "full"};
  std::vector<fs::path> dirs;
  std::map<std::string, double> final_loss;
  for (int seed = 1; seed <= 3; ++seed) {
    for (const auto& policy : policies) {
      const RunConfig config = RunConfig::from_json({{"train.policy", policy}, {"train.seed", seed}});
      const std::string id = policy + "-seed" + std::to_string(seed);
      dirs.push_back(work / "compare" / id);
      std::ostringstream log;
      cmd_train(config, data, dirs.back(), log);
      final_loss[id] = nlohmann::json::parse(slurp(dirs.back() / "summary.json"))["final_smoothed_loss"];
    }
  }
  const fs::path csv = work / "compare" / "comparison.csv";
  cmd_report(dirs, csv);

  std::ifstream in(csv);
  std::string header, line;
  std::getline(in, header);
  std::size_t loss_rows = 0;
  bool complete = std::count(header.begin(), header.end(), ',') == 12;
  bool metrics_block = false;
  while (std::getline(in, line)) {
    if (line.rfind("metric,", 0) == 0) {
      metrics_block = true;
      break;
    }
    ++loss_rows;
    complete = complete && std::count(line.begin(), line.end(), ',') == 12 && line.find(",,") == std::string::npos &&
               line.back() != ',';
  }
  int ir_wins = 0;
  std::string per_seed;
  for (int seed = 1; seed <= 3; ++seed) {
    const double ir = final_loss["ir-seed" + std::to_string(seed)];
    const double lisa = final_loss["lisa-seed" + std::to_string(seed)];
    ir_wins += ir <= lisa ? 1 : 0;
    per_seed += (seed == 1 ? " seed" : ", seed") + std::to_string(seed) + " ir " + fmt("%.4f", ir) + " lisa " +
                fmt("%.4f", lisa);
  }
  return {complete && metrics_block && loss_rows > 0,
          "12 runs merged into " + std::to_string(loss_rows) + " aligned loss rows + metrics block; trend (informational): "
              "IR smoothed final loss <= LISA in " + std::to_string(ir_wins) + "/3 seeds (" +
              (ir_wins >= 2 ? "holds" : "does not hold") + ";" + per_seed};
}

Outcome metrics_oracles() {
  int prf_ok = 0;
  for (const auto& tc : oracle::tiny_cases()) {
    const MetricsReport r = macro_prf(oracle::one_hot(tc.truth, tc.predicted, tc.classes));
    const auto counts = oracle::tally(tc.truth, tc.predicted, tc.classes);
    bool ok = true;
    double f1_sum = 0.0;
    int present = 0;
    for (int c = 0; c < tc.classes; ++c) {
      const auto& n = counts[static_cast<std::size_t>(c)];
      const double p = n.tp + n.fp == 0 ? 0.0 : static_cast<double>(n.tp) / (n.tp + n.fp);
      const double rc = n.tp + n.fn == 0 ? 0.0 : static_cast<double>(n.tp) / (n.tp + n.fn);
      const double f1 = p + rc == 0.0 ? 0.0 : 2 * p * rc / (p + rc);
      const auto& m = r.per_class[static_cast<std::size_t>(c)];
      ok = ok && m.precision == p && m.recall == rc && m.f1 == f1;
      if (n.tp + n.fn > 0) {
        f1_sum += f1;
        ++present;
      }
    }
    ok = ok && r.macro_f1 == f1_sum / present;
    prf_ok += ok ? 1 : 0;
  }

  double worst_ap = 0.0;
  long rankings = 0;
  for (int n = 1; n <= 8; ++n) {
    std::vector<double> scores(static_cast<std::size_t>(n));
    std::vector<int> perm(static_cast<std::size_t>(n)), rel(static_cast<std::size_t>(n));
    for (unsigned mask = 1; mask < (1u << n); ++mask) {
      for (int i = 0; i < n; ++i) rel[static_cast<std::size_t>(i)] = (mask >> i) & 1;
      std::iota(perm.begin(), perm.end(), 0);
      do {
        for (int i = 0; i < n; ++i) scores[static_cast<std::size_t>(i)] = perm[static_cast<std::size_t>(i)];
        worst_ap = std::max(worst_ap, std::abs(average_precision(scores, rel) - oracle::brute_force_ap(scores, rel)));
        ++rankings;
      } while (std::next_permutation(perm.begin(), perm.end()));
    }
  }

  const std::vector<int> truth{0, 1, 2, 3, 0, 1, 2, 3, 2};
  MatrixXd probs = MatrixXd::Constant(9, 4, 0.1);
  for (int i = 0; i < 9; ++i) probs(i, truth[static_cast<std::size_t>(i)]) = 0.7;
  const MetricsReport perfect = evaluate_predictions(PredictionSet::from_probabilities(truth, probs));

  return {prf_ok == 20 && worst_ap <= 1e-12 && perfect.macro_f1 == 1.0 && perfect.macro_auprc == 1.0,
          std::to_string(prf_ok) + "/20 hand-count cases exact, " + std::to_string(rankings) +
              " rankings max AP err " + fmt("%.1e", worst_ap) + " (limit 1e-12), perfect F1 " +
              fmt("%.1f", perfect.macro_f1) + " AUPRC " + fmt("%.1f", perfect.macro_auprc)};
}

Outcome formatting(const fs::path& work) {
  const LabelScheme scheme = synthetic_scheme();
  const Vocabulary vocab = Vocabulary::synthetic(24, scheme);
  const RevisionExample ex{{"t4", "t5", "t6"}, {"t4", "t6", "t5"}, 2};
  const std::string text = instruction_text(ex, scheme);
  const bool has_template = text.find("Identify the intention of the revision") != std::string::npos &&
                            text.find("### Original Sentence: t4 t5 t6") != std::string::npos &&
                            text.find("### Revised Sentence: t4 t6 t5") != std::string::npos;
  const auto ids = format_instruction(ex, scheme, vocab);
  bool ids_match = ids.size() == split_whitespace(text).size();
  for (std::size_t i = 0; ids_match && i < ids.size(); ++i) ids_match = vocab.token(ids[i]) == split_whitespace(text)[i];

  const RevisionExample huge{std::vector<std::string>(900, "t7"), std::vector<std::string>(900, "t8"), 0};
  const std::size_t instruction_len = format_instruction(huge, scheme, vocab).size();
  const std::size_t vanilla_len = format_vanilla(huge, vocab).size();

  const std::vector<RevisionExample> sides{{{}, {"t1", "t2"}, 0}, {{"t3"}, {}, 1}, {{"t5"}, {"t6"}, 3}};
  const bool empty_conventions =
      format_vanilla(sides[0], vocab) ==
          std::vector<int>{Vocabulary::kBegin, Vocabulary::kSep, vocab.id("t1"), vocab.id("t2")} &&
      format_vanilla(sides[1], vocab) == std::vector<int>{Vocabulary::kBegin, vocab.id("t3"), Vocabulary::kSep};
  fs::create_directories(work / "formatting");
  write_jsonl(work / "formatting" / "a.jsonl", sides, scheme);
  const auto loaded = load_jsonl(work / "formatting" / "a.jsonl", scheme);
  write_jsonl(work / "formatting" / "b.jsonl", loaded, scheme);
  const bool round_trip = loaded == sides && slurp(work / "formatting" / "a.jsonl") == slurp(work / "formatting" / "b.jsonl");

  return {has_template && ids_match && instruction_len == 1024 && vanilla_len == 256 && empty_conventions && round_trip,
          std::string("template fields ") + (has_template && ids_match ? "present" : "missing") +
              ", instruction length " + std::to_string(instruction_len) + " (cutoff 1024), vanilla length " +
              std::to_string(vanilla_len) + " (cutoff 256), empty-side conventions " +
              (empty_conventions ? "ok" : "wrong") + ", JSONL round trip " + (round_trip ? "byte-identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  fs::path work = fs::temp_directory_path() / "irtune_acceptance";
  std::set<int> only;
  app.add_option("--work-dir", work, "Directory for generated data and run artifacts");
  app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);
  fs::remove_all(work);
  fs::create_directories(work);
  auto wanted = [&](int id) { return only.empty() || only.count(id) != 0; };

  DefaultRun default_run;
  if (wanted(1)) run_criterion(1, "splitter oracle", splitter_oracle);
  if (wanted(2)) run_criterion(2, "hierarchical example", hierarchical_example);
  if (wanted(3)) run_criterion(3, "split complexity", split_complexity);
  if (wanted(4)) run_criterion(4, "gradient correctness", gradient_check);
  if (wanted(5)) run_criterion(5, "adapter zero-init and merge", lora_zero_init);
  if (wanted(6) || wanted(7)) {
    Outcome six;
    try {
      six = learnability(work, default_run);
    } catch (const std::exception& e) {
      six = {false, std::string("exception: ") + e.what()};
    }
    if (wanted(6)) report(6, "learnability", six);
  }
  if (wanted(7)) run_criterion(7, "dynamic selection", [&] { return dynamic_selection(default_run); });
  if (wanted(8)) run_criterion(8, "policy comparison harness", [&] { return policy_comparison(work); });
  if (wanted(9)) run_criterion(9, "metrics oracles", metrics_oracles);
  if (wanted(10)) run_criterion(10, "formatting", [&] { return formatting(work); });
  return failures == 0 ? 0 : 1;
}
