#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace pfdfl {

/// Input rendering. qa_dialogue: context [SEP] response [SEP] knowledge;
/// summary: document [SEP] summary (the knowledge field stays empty).
enum class TemplateKind { kQaDialogue, kSummary };

std::string_view template_name(TemplateKind t);
/// Accepts qa, dialogue, qa_dialogue, summary.
TemplateKind parse_template(std::string_view name);

struct PairedExample {
  std::string pair_id;
  std::string context;
  std::string response;
  std::string knowledge;
  int label = 0;  // 1 = hallucinated
};

/// Whitespace word tokenizer over a closed vocabulary.
///
/// Ids 0..3 are CLS, SEP, PAD, UNK; words take ids from 4 upwards in
/// insertion order.
class Tokenizer {
 public:
  Tokenizer() = default;
  explicit Tokenizer(std::span<const std::string> words);

  /// Adds a word if absent; returns its id.
  std::size_t add(const std::string& word);
  std::size_t id(std::string_view word) const;  // UNK when absent
  bool contains(std::string_view word) const;
  /// Number of ids including the special ones.
  std::size_t size() const;
  const std::vector<std::string>& words() const { return words_; }

  std::vector<std::size_t> encode_text(std::string_view text) const;
  /// Inverse of encode_text; specials render as [CLS], [SEP], [PAD], [UNK].
  std::string decode(std::span<const std::size_t> ids) const;

  /// Sidecar format: one "word<TAB>id" line per word.
  void save(const std::filesystem::path& path) const;
  static Tokenizer load(const std::filesystem::path& path);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Dataset {
  TemplateKind kind = TemplateKind::kQaDialogue;
  std::vector<PairedExample> examples;
  Tokenizer tokenizer;
};

struct SyntheticSpec {
  std::size_t n_pairs = 4000;
  std::size_t vocab_words = 4096;
  std::size_t knowledge_len = 12;
  std::size_t response_len = 8;
  std::size_t context_len = 4;
  std::size_t corrupt_count = 3;
  std::uint64_t seed = 0;
  TemplateKind kind = TemplateKind::kQaDialogue;

  /// Throws ArgumentError on infeasible sizes.
  void validate() const;
};

/// Seeded matched-pair generator.
///
/// Per pair: knowledge is knowledge_len distinct words, the factual response
/// a random ordered subset of response_len knowledge words, and the
/// hallucinated response the same list with corrupt_count positions swapped
/// for words absent from the knowledge. Both members share context and
/// knowledge. For the summary template the knowledge becomes the document
/// (context field) and the response the summary.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// Throws ValidationError unless every pair id occurs exactly twice, once
/// per label, with identical context and knowledge.
void validate_pairs(std::span<const PairedExample> examples);

std::filesystem::path vocab_path_for(const std::filesystem::path& jsonl);

/// Reads one JSON object per line. Uses the sidecar vocabulary next to the
/// file when present, otherwise builds one in first-seen order.
Dataset load_jsonl(const std::filesystem::path& path, TemplateKind kind);

/// JSONL text (one object per line, keys sorted).
std::string to_jsonl(std::span<const PairedExample> examples);
/// Writes the JSONL file and its vocabulary sidecar atomically.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);

/// [CLS] context [SEP] response [SEP] knowledge (summary: no knowledge
/// segment), truncated and PAD-filled to exactly max_len ids.
std::vector<std::size_t> encode(const PairedExample& ex, TemplateKind kind, const Tokenizer& tok, std::size_t max_len);

/// Example indices of a pair-preserving split.
struct Split {
  std::vector<std::size_t> train, validation, test;
};

/// 80/10/10 split by pair, shuffled with the seed.
Split split_pairs(const Dataset& ds, std::uint64_t seed);

}  // namespace pfdfl
