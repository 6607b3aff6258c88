#include "pfdfl/data.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <map>
#include <sstream>

#include "json.hpp"

#include "pfdfl/encoder.hpp"
#include "pfdfl/errors.hpp"
#include "pfdfl/io.hpp"
#include "pfdfl/rng.hpp"

namespace pfdfl {

namespace {

const char* const kSpecialText[special::kCount] = {"[CLS]", "[SEP]", "[PAD]", "[UNK]"};

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string s;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) s += ' ';
    s += words[i];
  }
  return s;
}

/// n distinct values from [0, range) that are not in `exclude`.
std::vector<std::size_t> draw_distinct(Rng& rng, std::size_t n, std::size_t range,
                                       const std::vector<std::size_t>& exclude) {
  std::vector<std::size_t> out;
  out.reserve(n);
  while (out.size() < n) {
    const auto w = static_cast<std::size_t>(rng.below(range));
    if (std::find(out.begin(), out.end(), w) != out.end()) continue;
    if (std::find(exclude.begin(), exclude.end(), w) != exclude.end()) continue;
    out.push_back(w);
  }
  return out;
}

std::string word_name(std::size_t w) { return "w" + std::to_string(w); }

std::string render(const std::vector<std::size_t>& ws) {
  std::vector<std::string> words;
  for (std::size_t w : ws) words.push_back(word_name(w));
  return join_words(words);
}

}  // namespace

std::string_view template_name(TemplateKind t) { return t == TemplateKind::kSummary ? "summary" : "qa_dialogue"; }

TemplateKind parse_template(std::string_view name) {
  if (name == "qa" || name == "dialogue" || name == "qa_dialogue") return TemplateKind::kQaDialogue;
  if (name == "summary") return TemplateKind::kSummary;
  throw ArgumentError("unknown template '" + std::string(name) + "' (expected qa_dialogue or summary)");
}

Tokenizer::Tokenizer(std::span<const std::string> words) {
  for (const auto& w : words) add(w);
}

std::size_t Tokenizer::add(const std::string& word) {
  auto it = index_.find(word);
  if (it != index_.end()) return it->second;
  const std::size_t id = special::kCount + words_.size();
  words_.push_back(word);
  index_.emplace(word, id);
  return id;
}

std::size_t Tokenizer::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? special::kUnk : it->second;
}

bool Tokenizer::contains(std::string_view word) const { return index_.count(std::string(word)) != 0; }

std::size_t Tokenizer::size() const { return special::kCount + words_.size(); }

std::vector<std::size_t> Tokenizer::encode_text(std::string_view text) const {
  std::vector<std::size_t> ids;
  for (const auto& w : split_words(text)) ids.push_back(id(w));
  return ids;
}

std::string Tokenizer::decode(std::span<const std::size_t> ids) const {
  std::vector<std::string> words;
  for (std::size_t id : ids) {
    if (id < special::kCount) {
      words.emplace_back(kSpecialText[id]);
    } else if (id - special::kCount < words_.size()) {
      words.push_back(words_[id - special::kCount]);
    } else {
      throw VocabularyError("decode: id " + std::to_string(id) + " outside vocabulary of " + std::to_string(size()));
    }
  }
  return join_words(words);
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::string out;
  for (std::size_t i = 0; i < words_.size(); ++i) {
    out += words_[i];
    out += '\t';
    out += std::to_string(special::kCount + i);
    out += '\n';
  }
  write_file_atomic(path, out);
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  Tokenizer tok;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(path.string() + ":" + std::to_string(line_no) + ": missing tab");
    const std::string word = line.substr(0, tab);
    std::size_t id = 0;
    try {
      id = std::stoul(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad id");
    }
    if (tok.add(word) != id) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": ids must be consecutive from 4");
    }
  }
  return tok;
}

void SyntheticSpec::validate() const {
  if (n_pairs == 0) throw ArgumentError("synthetic data: n_pairs must be positive");
  if (!(corrupt_count <= response_len && response_len <= knowledge_len)) {
    throw ArgumentError("synthetic data: need corrupt_count <= response_len <= knowledge_len");
  }
  if (knowledge_len == 0) throw ArgumentError("synthetic data: knowledge_len must be positive");
  if (vocab_words < 2 * knowledge_len) throw ArgumentError("synthetic data: vocab_words must be >= 2*knowledge_len");
  if (context_len > vocab_words) throw ArgumentError("synthetic data: context_len exceeds vocabulary");
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.kind = spec.kind;
  for (std::size_t w = 0; w < spec.vocab_words; ++w) ds.tokenizer.add(word_name(w));
  Rng rng = Rng::derive(spec.seed, "synthetic");
  const int width = static_cast<int>(std::to_string(spec.n_pairs).size());
  ds.examples.reserve(2 * spec.n_pairs);
  for (std::size_t p = 0; p < spec.n_pairs; ++p) {
    const std::vector<std::size_t> context = draw_distinct(rng, spec.context_len, spec.vocab_words, {});
    const std::vector<std::size_t> knowledge = draw_distinct(rng, spec.knowledge_len, spec.vocab_words, {});
    std::vector<std::size_t> order(spec.knowledge_len);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<std::size_t> factual;
    for (std::size_t i = 0; i < spec.response_len; ++i) factual.push_back(knowledge[order[i]]);

    std::vector<std::size_t> hallucinated = factual;
    std::vector<std::size_t> slots(spec.response_len);
    for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
    rng.shuffle(slots);
    const std::vector<std::size_t> fakes = draw_distinct(rng, spec.corrupt_count, spec.vocab_words, knowledge);
    for (std::size_t i = 0; i < spec.corrupt_count; ++i) hallucinated[slots[i]] = fakes[i];

    char id_buf[32];
    std::snprintf(id_buf, sizeof id_buf, "p%0*zu", width, p);
    PairedExample base;
    base.pair_id = id_buf;
    if (spec.kind == TemplateKind::kSummary) {
      base.context = render(knowledge);
    } else {
      base.context = render(context);
      base.knowledge = render(knowledge);
    }
    PairedExample fact = base, hall = base;
    fact.response = render(factual);
    fact.label = 0;
    hall.response = render(hallucinated);
    hall.label = 1;
    ds.examples.push_back(std::move(fact));
    ds.examples.push_back(std::move(hall));
  }
  return ds;
}

void validate_pairs(std::span<const PairedExample> examples) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < examples.size(); ++i) groups[examples[i].pair_id].push_back(i);
  std::vector<std::string> orphans, duplicates, mismatched;
  for (const auto& [id, idx] : groups) {
    if (idx.size() == 1) {
      orphans.push_back(id);
    } else if (idx.size() != 2 || examples[idx[0]].label == examples[idx[1]].label) {
      duplicates.push_back(id);
    } else if (examples[idx[0]].context != examples[idx[1]].context ||
               examples[idx[0]].knowledge != examples[idx[1]].knowledge) {
      mismatched.push_back(id);
    }
  }
  auto list = [](const std::vector<std::string>& ids) {
    std::string s;
    for (std::size_t i = 0; i < ids.size() && i < 20; ++i) s += (i ? ", " : "") + ids[i];
    if (ids.size() > 20) s += ", ...";
    return s;
  };
  if (!orphans.empty()) throw ValidationError("orphan pair ids (one member only): " + list(orphans));
  if (!duplicates.empty()) {
    throw ValidationError("pair ids without exactly one factual and one hallucinated member: " + list(duplicates));
  }
  if (!mismatched.empty()) throw ValidationError("pair members differ in context or knowledge: " + list(mismatched));
}

std::filesystem::path vocab_path_for(const std::filesystem::path& jsonl) {
  std::filesystem::path p = jsonl;
  p += ".vocab.tsv";
  return p;
}

Dataset load_jsonl(const std::filesystem::path& path, TemplateKind kind) {
  using nlohmann::json;
  Dataset ds;
  ds.kind = kind;
  const std::filesystem::path vocab = vocab_path_for(path);
  const bool have_vocab = std::filesystem::exists(vocab);
  if (have_vocab) ds.tokenizer = Tokenizer::load(vocab);

  std::istringstream in(read_file(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ": line " + std::to_string(line_no);
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(where + ": invalid JSON (" + e.what() + ")");
    }
    if (!obj.is_object()) throw ParseError(where + ": expected a JSON object");
    PairedExample ex;
    auto text_field = [&](const char* key, std::string& dst, bool required) {
      auto it = obj.find(key);
      if (it == obj.end()) {
        if (required) throw ParseError(where + ": missing field '" + key + "'");
        return;
      }
      if (!it->is_string()) throw ParseError(where + ": field '" + key + "' must be a string");
      dst = it->get<std::string>();
    };
    text_field("pair_id", ex.pair_id, true);
    text_field("context", ex.context, true);
    text_field("response", ex.response, true);
    text_field("knowledge", ex.knowledge, kind == TemplateKind::kQaDialogue);
    auto lab = obj.find("label");
    if (lab == obj.end()) throw ParseError(where + ": missing field 'label'");
    if (!lab->is_number_integer() || (lab->get<long long>() != 0 && lab->get<long long>() != 1)) {
      throw ParseError(where + ": field 'label' must be 0 or 1");
    }
    ex.label = lab->get<int>();
    if (!have_vocab) {
      for (const std::string* field : {&ex.context, &ex.response, &ex.knowledge})
        for (const auto& w : split_words(*field)) ds.tokenizer.add(w);
    }
    ds.examples.push_back(std::move(ex));
  }
  validate_pairs(ds.examples);
  return ds;
}

std::string to_jsonl(std::span<const PairedExample> examples) {
  std::string out;
  for (const auto& ex : examples) {
    nlohmann::json obj = {{"pair_id", ex.pair_id},
                          {"context", ex.context},
                          {"response", ex.response},
                          {"knowledge", ex.knowledge},
                          {"label", ex.label}};
    out += obj.dump();
    out += '\n';
  }
  return out;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  write_file_atomic(path, to_jsonl(ds.examples));
  ds.tokenizer.save(vocab_path_for(path));
}

std::vector<std::size_t> encode(const PairedExample& ex, TemplateKind kind, const Tokenizer& tok,
                                std::size_t max_len) {
  std::vector<std::size_t> ids{special::kCls};
  auto append = [&](std::string_view text) {
    for (std::size_t id : tok.encode_text(text)) ids.push_back(id);
  };
  append(ex.context);
  ids.push_back(special::kSep);
  append(ex.response);
  if (kind == TemplateKind::kQaDialogue) {
    ids.push_back(special::kSep);
    append(ex.knowledge);
  }
  ids.resize(max_len, special::kPad);
  return ids;
}

Split split_pairs(const Dataset& ds, std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < ds.examples.size(); ++i) groups[ds.examples[i].pair_id].push_back(i);
  std::vector<const std::vector<std::size_t>*> pairs;
  for (const auto& [id, idx] : groups) pairs.push_back(&idx);
  Rng rng = Rng::derive(seed, "split");
  rng.shuffle(pairs);
  const std::size_t n = pairs.size();
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_val = n / 10;
  Split s;
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = i < n_train ? s.train : (i < n_train + n_val ? s.validation : s.test);
    for (std::size_t e : *pairs[i]) dst.push_back(e);
  }
  return s;
}

}  // namespace pfdfl
