#pragma once

#include "irtune/types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace irtune {

struct LabelScheme {
  std::vector<std::string> names;

  Index size() const { return static_cast<Index>(names.size()); }
  // Throws InputError naming the label when it is not part of the scheme.
  int index_of(const std::string& name) const;
};

enum class EditKind { InsertConnective = 0, SubstituteSynonym, SwapAdjacent, RewriteSuffix };
inline constexpr int kEditKindCount = 4;

// INSERT-CONNECTIVE, SUBSTITUTE-SYNONYM, SWAP-ADJACENT, REWRITE-SUFFIX (first `classes` of them).
LabelScheme synthetic_scheme(int classes = kEditKindCount);

struct RevisionExample {
  std::vector<std::string> original;  // may be empty for an added sentence
  std::vector<std::string> revised;   // may be empty for a deleted sentence
  int label = 0;

  bool operator==(const RevisionExample&) const = default;
};

struct SynthConfig {
  int classes = kEditKindCount;
  int per_class = 500;
  int min_len = 4;
  int max_len = 8;
  int vocab = 24;
  double noise = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Synthetic token-id ranges: connective markers, base words, their synonyms (base + base_count),
// and fresh words used by suffix rewrites. Ranges are disjoint.
struct SynthLayout {
  int connective_count = 4;
  int base_begin = 0;
  int base_count = 0;
  int synonym_begin = 0;
  int fresh_begin = 0;
  int fresh_count = 0;

  static SynthLayout for_vocab(int vocab);
  int synonym_of(int base_token) const { return base_token - base_begin + synonym_begin; }
};

std::string token_surface(int synthetic_id);

std::vector<int> insert_connective(const std::vector<int>& base, int connective);
std::vector<int> substitute_synonym(const std::vector<int>& base, std::size_t position, const SynthLayout& layout);
std::vector<int> swap_adjacent(const std::vector<int>& base, std::size_t position);
// Replaces the final ceil(n/3) tokens with `fresh` (which must hold exactly that many).
std::vector<int> rewrite_suffix(const std::vector<int>& base, const std::vector<int>& fresh);
std::size_t rewrite_suffix_length(std::size_t base_length);

std::vector<RevisionExample> generate_synthetic(const SynthConfig& cfg);

// Token inventory shared by both input formats: specials, instruction-template words, corpus tokens.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBegin = 2;
  static constexpr int kSep = 3;

  Vocabulary();

  // Specials + template words for `scheme` + t0..t{data_vocab-1}.
  static Vocabulary synthetic(int data_vocab, const LabelScheme& scheme);
  // Specials + template words + every token of `examples` in first-seen order.
  static Vocabulary build(const std::vector<RevisionExample>& examples, const LabelScheme& scheme);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int add(const std::string& token);
  // kUnk for tokens outside the vocabulary.
  int id(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  Index size() const { return static_cast<Index>(tokens_.size()); }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

enum class TextFormat { Vanilla, Instruction };
inline constexpr Index kVanillaCutoff = 256;
inline constexpr Index kInstructionCutoff = 1024;

std::string to_string(TextFormat format);
TextFormat parse_text_format(const std::string& name);
Index default_cutoff(TextFormat format);

// [BEGIN] R1 [SEP] R2, keeping the first `cutoff` tokens.
std::vector<int> format_vanilla(const RevisionExample& example, const Vocabulary& vocab, Index cutoff = kVanillaCutoff,
                                Index* unknown = nullptr);

// Whitespace words of the instruction prompt before tokenization.
std::vector<std::string> instruction_words(const RevisionExample& example, const LabelScheme& scheme);
std::string instruction_text(const RevisionExample& example, const LabelScheme& scheme);
std::vector<int> format_instruction(const RevisionExample& example, const LabelScheme& scheme, const Vocabulary& vocab,
                                    Index cutoff = kInstructionCutoff, Index* unknown = nullptr);

struct EncodedSplit {
  std::vector<std::vector<int>> sequences;
  std::vector<int> labels;
  Index unknown_tokens = 0;

  Index size() const { return static_cast<Index>(labels.size()); }
};

EncodedSplit encode(const std::vector<RevisionExample>& examples, TextFormat format, const LabelScheme& scheme,
                    const Vocabulary& vocab, Index cutoff);

struct SplitCounts {
  Index train = 0;
  Index val = 0;
  Index test = 0;
};

struct DatasetSplits {
  std::vector<RevisionExample> train;
  std::vector<RevisionExample> val;
  std::vector<RevisionExample> test;
  std::vector<SplitCounts> per_class;  // stratification report, indexed by label
};

// Stratified 80/10/10 split; per class val = test = floor(n/10), the remainder goes to train.
DatasetSplits split_dataset(const std::vector<RevisionExample>& examples, Index class_count, std::uint64_t seed);

std::vector<RevisionExample> load_jsonl(const std::filesystem::path& path, const LabelScheme& scheme);
void write_jsonl(const std::filesystem::path& path, const std::vector<RevisionExample>& examples,
                 const LabelScheme& scheme);
std::string to_jsonl_line(const RevisionExample& example, const LabelScheme& scheme);
RevisionExample parse_jsonl_line(const std::string& line, const LabelScheme& scheme, std::size_t line_number);

std::vector<std::string> split_whitespace(const std::string& text);

}  // namespace irtune
