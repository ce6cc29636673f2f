#include "irtune/data.hpp"

#include "irtune/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace irtune {

int LabelScheme::index_of(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw InputError("unknown label '" + name + "'");
  return static_cast<int>(it - names.begin());
}

LabelScheme synthetic_scheme(int classes) {
  static const std::vector<std::string> kNames{"INSERT-CONNECTIVE", "SUBSTITUTE-SYNONYM", "SWAP-ADJACENT",
                                               "REWRITE-SUFFIX"};
  if (classes < 2 || classes > kEditKindCount) {
    throw ConfigError("synthetic class count must lie in [2, " + std::to_string(kEditKindCount) + "]");
  }
  return LabelScheme{{kNames.begin(), kNames.begin() + classes}};
}

void SynthConfig::validate() const {
  synthetic_scheme(classes);
  if (per_class < 1) throw ConfigError("data.per_class must be >= 1");
  if (min_len < 2 || max_len < min_len) throw ConfigError("data.min_len/max_len must satisfy 2 <= min_len <= max_len");
  if (!(noise >= 0.0 && noise < 1.0)) throw ConfigError("data.noise must lie in [0, 1)");
  SynthLayout::for_vocab(vocab);
}

SynthLayout SynthLayout::for_vocab(int vocab) {
  SynthLayout l;
  const int words = vocab - l.connective_count;
  l.base_count = words / 3;
  if (l.base_count < 2) {
    throw ConfigError("data.vocab = " + std::to_string(vocab) + " is too small for synonym pairing (need >= 10)");
  }
  l.base_begin = l.connective_count;
  l.synonym_begin = l.base_begin + l.base_count;
  l.fresh_begin = l.synonym_begin + l.base_count;
  l.fresh_count = vocab - l.fresh_begin;
  return l;
}

std::string token_surface(int synthetic_id) { return "t" + std::to_string(synthetic_id); }

std::vector<int> insert_connective(const std::vector<int>& base, int connective) {
  std::vector<int> out;
  out.reserve(base.size() + 1);
  out.push_back(connective);
  out.insert(out.end(), base.begin(), base.end());
  return out;
}

std::vector<int> substitute_synonym(const std::vector<int>& base, std::size_t position, const SynthLayout& layout) {
  if (position >= base.size()) throw ContractError("substitute_synonym: position out of range");
  std::vector<int> out = base;
  out[position] = layout.synonym_of(base[position]);
  return out;
}

std::vector<int> swap_adjacent(const std::vector<int>& base, std::size_t position) {
  if (position + 1 >= base.size()) throw ContractError("swap_adjacent: position out of range");
  std::vector<int> out = base;
  std::swap(out[position], out[position + 1]);
  return out;
}

std::size_t rewrite_suffix_length(std::size_t base_length) { return (base_length + 2) / 3; }

std::vector<int> rewrite_suffix(const std::vector<int>& base, const std::vector<int>& fresh) {
  const std::size_t k = rewrite_suffix_length(base.size());
  if (fresh.size() != k) throw ContractError("rewrite_suffix: wrong number of fresh tokens");
  std::vector<int> out(base.begin(), base.end() - static_cast<std::ptrdiff_t>(k));
  out.insert(out.end(), fresh.begin(), fresh.end());
  return out;
}

namespace {

std::vector<std::string> surfaces(const std::vector<int>& ids) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(token_surface(id));
  return out;
}

std::string join(const std::vector<std::string>& words, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += sep;
    out += words[i];
  }
  return out;
}

}  // namespace

std::vector<RevisionExample> generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const SynthLayout layout = SynthLayout::for_vocab(cfg.vocab);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<int> length(cfg.min_len, cfg.max_len);
  std::uniform_int_distribution<int> base_word(layout.base_begin, layout.base_begin + layout.base_count - 1);
  std::uniform_int_distribution<int> fresh_word(layout.fresh_begin, layout.fresh_begin + layout.fresh_count - 1);
  std::uniform_int_distribution<int> connective(0, layout.connective_count - 1);
  std::uniform_int_distribution<int> any_label(0, cfg.classes - 1);
  std::bernoulli_distribution flip(cfg.noise);

  auto draw_base = [&]() {
    std::vector<int> s(static_cast<std::size_t>(length(rng)));
    for (int& t : s) t = base_word(rng);
    return s;
  };
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };

  std::vector<RevisionExample> out;
  out.reserve(static_cast<std::size_t>(cfg.classes * cfg.per_class));
  for (int c = 0; c < cfg.classes; ++c) {
    for (int i = 0; i < cfg.per_class; ++i) {
      std::vector<int> base = draw_base();
      std::vector<int> revised;
      switch (static_cast<EditKind>(c)) {
        case EditKind::InsertConnective:
          revised = insert_connective(base, connective(rng));
          break;
        case EditKind::SubstituteSynonym:
          revised = substitute_synonym(base, pick(base.size()), layout);
          break;
        case EditKind::SwapAdjacent: {
          std::vector<std::size_t> candidates;
          while (true) {
            candidates.clear();
            for (std::size_t p = 0; p + 1 < base.size(); ++p) {
              if (base[p] != base[p + 1]) candidates.push_back(p);
            }
            if (!candidates.empty()) break;
            base = draw_base();
          }
          revised = swap_adjacent(base, candidates[pick(candidates.size())]);
          break;
        }
        case EditKind::RewriteSuffix: {
          std::vector<int> fresh(rewrite_suffix_length(base.size()));
          for (int& t : fresh) t = fresh_word(rng);
          revised = rewrite_suffix(base, fresh);
          break;
        }
      }
      int label = c;
      if (flip(rng)) label = any_label(rng);
      out.push_back(RevisionExample{surfaces(base), surfaces(revised), label});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary and formatting

namespace {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> kSpecials{"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
  return kSpecials;
}

void add_template_words(Vocabulary& vocab, const LabelScheme& scheme) {
  for (const auto& w : instruction_words(RevisionExample{}, scheme)) vocab.add(w);
}

}  // namespace

Vocabulary::Vocabulary() {
  for (const auto& s : special_tokens()) add(s);
}

Vocabulary Vocabulary::synthetic(int data_vocab, const LabelScheme& scheme) {
  Vocabulary v;
  add_template_words(v, scheme);
  for (int i = 0; i < data_vocab; ++i) v.add(token_surface(i));
  return v;
}

Vocabulary Vocabulary::build(const std::vector<RevisionExample>& examples, const LabelScheme& scheme) {
  Vocabulary v;
  add_template_words(v, scheme);
  for (const auto& ex : examples) {
    for (const auto& w : ex.original) v.add(w);
    for (const auto& w : ex.revised) v.add(w);
  }
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open vocabulary file " + path.string());
  Vocabulary v;
  v.tokens_.clear();
  v.index_.clear();
  std::string line;
  while (std::getline(in, line)) v.add(line);
  for (std::size_t i = 0; i < special_tokens().size(); ++i) {
    if (v.tokens_.size() <= i || v.tokens_[i] != special_tokens()[i]) {
      throw InputError("vocabulary file " + path.string() + " does not start with the special tokens");
    }
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary file " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

int Vocabulary::add(const std::string& token) {
  const auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

int Vocabulary::id(const std::string& token) const {
  const auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::string to_string(TextFormat format) { return format == TextFormat::Vanilla ? "vanilla" : "instruction"; }

TextFormat parse_text_format(const std::string& name) {
  if (name == "vanilla") return TextFormat::Vanilla;
  if (name == "instruction") return TextFormat::Instruction;
  throw ConfigError("unknown format '" + name + "' (expected vanilla or instruction)");
}

Index default_cutoff(TextFormat format) {
  return format == TextFormat::Vanilla ? kVanillaCutoff : kInstructionCutoff;
}

namespace {

void append_ids(std::vector<int>& out, const std::vector<std::string>& words, const Vocabulary& vocab, Index* unknown) {
  for (const auto& w : words) {
    const int id = vocab.id(w);
    if (id == Vocabulary::kUnk && unknown) ++*unknown;
    out.push_back(id);
  }
}

void truncate(std::vector<int>& ids, Index cutoff) {
  if (cutoff < 1) throw ConfigError("sequence cutoff must be >= 1");
  if (static_cast<Index>(ids.size()) > cutoff) ids.resize(static_cast<std::size_t>(cutoff));
}

}  // namespace

std::vector<int> format_vanilla(const RevisionExample& example, const Vocabulary& vocab, Index cutoff, Index* unknown) {
  std::vector<int> ids{Vocabulary::kBegin};
  append_ids(ids, example.original, vocab, unknown);
  ids.push_back(Vocabulary::kSep);
  append_ids(ids, example.revised, vocab, unknown);
  truncate(ids, cutoff);
  return ids;
}

std::string instruction_text(const RevisionExample& example, const LabelScheme& scheme) {
  std::string text =
      "### Instruction: Identify the intention of the revision between the original sentence and the revised "
      "sentence. The possible intentions include: ";
  text += join(scheme.names, ", ");
  text += ". ### Original Sentence: ";
  text += join(example.original, " ");
  text += " . ### Revised Sentence: ";
  text += join(example.revised, " ");
  text += " .";
  return text;
}

std::vector<std::string> instruction_words(const RevisionExample& example, const LabelScheme& scheme) {
  return split_whitespace(instruction_text(example, scheme));
}

std::vector<int> format_instruction(const RevisionExample& example, const LabelScheme& scheme, const Vocabulary& vocab,
                                    Index cutoff, Index* unknown) {
  std::vector<int> ids;
  append_ids(ids, instruction_words(example, scheme), vocab, unknown);
  truncate(ids, cutoff);
  return ids;
}

EncodedSplit encode(const std::vector<RevisionExample>& examples, TextFormat format, const LabelScheme& scheme,
                    const Vocabulary& vocab, Index cutoff) {
  EncodedSplit out;
  out.sequences.reserve(examples.size());
  out.labels.reserve(examples.size());
  for (const auto& ex : examples) {
    out.sequences.push_back(format == TextFormat::Vanilla
                                ? format_vanilla(ex, vocab, cutoff, &out.unknown_tokens)
                                : format_instruction(ex, scheme, vocab, cutoff, &out.unknown_tokens));
    out.labels.push_back(ex.label);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits

DatasetSplits split_dataset(const std::vector<RevisionExample>& examples, Index class_count, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(class_count));
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const int y = examples[i].label;
    if (y < 0 || y >= class_count) throw InputError("example " + std::to_string(i) + " has an out-of-range label");
    by_class[static_cast<std::size_t>(y)].push_back(i);
  }

  std::mt19937_64 rng(seed);
  DatasetSplits splits;
  splits.per_class.resize(static_cast<std::size_t>(class_count));
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    if (idx.size() < 10) {
      throw ConfigError("class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                        " examples; at least 10 are needed for an 80/10/10 split");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t held = idx.size() / 10;
    auto& counts = splits.per_class[c];
    counts.val = static_cast<Index>(held);
    counts.test = static_cast<Index>(held);
    counts.train = static_cast<Index>(idx.size() - 2 * held);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto& target = k < held ? splits.val : k < 2 * held ? splits.test : splits.train;
      target.push_back(examples[idx[k]]);
    }
  }
  std::shuffle(splits.train.begin(), splits.train.end(), rng);
  return splits;
}

// ---------------------------------------------------------------------------
// JSONL

std::vector<std::string> split_whitespace(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string word;
  while (in >> word) out.push_back(word);
  return out;
}

std::string to_jsonl_line(const RevisionExample& example, const LabelScheme& scheme) {
  if (example.label < 0 || example.label >= scheme.size()) throw ContractError("example label outside the scheme");
  nlohmann::ordered_json j;
  j["original"] = join(example.original, " ");
  j["revised"] = join(example.revised, " ");
  j["label"] = scheme.names[static_cast<std::size_t>(example.label)];
  return j.dump();
}

RevisionExample parse_jsonl_line(const std::string& line, const LabelScheme& scheme, std::size_t line_number) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed JSON line: ") + e.what(), line_number);
  }
  if (!j.is_object()) throw ParseError("JSONL line is not an object", line_number);
  for (const char* key : {"original", "revised", "label"}) {
    if (!j.contains(key) || !j[key].is_string()) {
      throw ParseError(std::string("missing or non-string field '") + key + "'", line_number);
    }
  }
  RevisionExample ex;
  ex.original = split_whitespace(j["original"].get<std::string>());
  ex.revised = split_whitespace(j["revised"].get<std::string>());
  if (ex.original.empty() && ex.revised.empty()) {
    throw InputError("line " + std::to_string(line_number) + ": original and revised are both empty");
  }
  const std::string label = j["label"].get<std::string>();
  try {
    ex.label = scheme.index_of(label);
  } catch (const InputError&) {
    throw InputError("line " + std::to_string(line_number) + ": unknown label '" + label + "'");
  }
  return ex;
}

std::vector<RevisionExample> load_jsonl(const std::filesystem::path& path, const LabelScheme& scheme) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<RevisionExample> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_jsonl_line(line, scheme, number));
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<RevisionExample>& examples,
                 const LabelScheme& scheme) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& ex : examples) out << to_jsonl_line(ex, scheme) << '\n';
}

}  // namespace irtune
