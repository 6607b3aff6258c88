#include "pfdfl/config.hpp"

#include <set>
#include <string>

#include "pfdfl/errors.hpp"
#include "pfdfl/io.hpp"

namespace pfdfl {

namespace {

void check_keys(const Json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ParseError(where + ": expected an object");
  std::set<std::string> ok;
  for (const char* k : allowed) ok.insert(k);
  for (const auto& [key, value] : obj.items()) {
    if (!ok.count(key)) throw ParseError("unknown key '" + where + "." + key + "'");
  }
}

template <typename T>
void read(const Json& obj, const std::string& where, const char* key, T& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ParseError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer() || (it->is_number_integer() && it->template get<long long>() < 0 && std::is_unsigned_v<T>)) {
        throw ParseError("");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw ParseError("");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) throw ParseError("");
    }
    out = it->template get<T>();
  } catch (const std::exception&) {
    throw ParseError("invalid value for '" + where + "." + key + "'");
  }
}

const Json& section(const Json& doc, const char* name) {
  static const Json empty = Json::object();
  auto it = doc.find(name);
  return it == doc.end() ? empty : *it;
}

}  // namespace

void RunConfig::validate() const {
  encoder.validate();
  train.validate();
  data.validate();
  if (analysis.ratios.empty()) throw ArgumentError("analysis.ratios must not be empty");
  for (double r : analysis.ratios) RetentionPolicy{r}.validate();
}

Json to_json(const RunConfig& c) {
  Json doc;
  doc["encoder"] = {{"vocab_size", c.encoder.vocab_size}, {"d_model", c.encoder.d_model},
                    {"n_layers", c.encoder.n_layers},     {"n_heads", c.encoder.n_heads},
                    {"d_ff", c.encoder.d_ff},             {"max_len", c.encoder.max_len},
                    {"dropout", c.encoder.dropout_p}};
  const TrainConfig& t = c.train;
  doc["train"] = {{"epochs", t.epochs},
                  {"batch_size", t.batch_size},
                  {"accumulation_steps", t.accumulation_steps},
                  {"lr_start", t.lr_start},
                  {"lr_min", t.lr_min},
                  {"weight_decay", t.weight_decay},
                  {"beta1", t.beta1},
                  {"beta2", t.beta2},
                  {"adam_epsilon", t.adam_epsilon},
                  {"seed", t.seed},
                  {"variant", std::string(variant_name(t.variant))},
                  {"alpha", t.alpha},
                  {"proj_dim", t.proj_dim},
                  {"proj_bias", t.proj_bias},
                  {"shared_fusion", t.shared_fusion},
                  {"head_dropout", t.head_dropout}};
  doc["loss"] = {{"hall", t.loss.hall},
                 {"correct", t.loss.correct},
                 {"diff", t.loss.diff},
                 {"contrastive", t.loss.contrastive},
                 {"margin", t.loss.margin}};
  const SyntheticSpec& d = c.data;
  doc["data"] = {{"n_pairs", d.n_pairs},         {"vocab_words", d.vocab_words},
                 {"knowledge_len", d.knowledge_len}, {"response_len", d.response_len},
                 {"context_len", d.context_len}, {"corrupt_count", d.corrupt_count},
                 {"seed", d.seed},               {"template", std::string(template_name(d.kind))}};
  doc["analysis"] = {{"ratios", c.analysis.ratios}, {"epochs", c.analysis.epochs}};
  return doc;
}

RunConfig merge_run_config(const RunConfig& base, const Json& doc) {
  RunConfig c = base;
  check_keys(doc, "config", {"encoder", "train", "data", "loss", "analysis"});

  const Json& e = section(doc, "encoder");
  check_keys(e, "encoder", {"vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_len", "dropout"});
  read(e, "encoder", "vocab_size", c.encoder.vocab_size);
  read(e, "encoder", "d_model", c.encoder.d_model);
  read(e, "encoder", "n_layers", c.encoder.n_layers);
  read(e, "encoder", "n_heads", c.encoder.n_heads);
  read(e, "encoder", "d_ff", c.encoder.d_ff);
  read(e, "encoder", "max_len", c.encoder.max_len);
  read(e, "encoder", "dropout", c.encoder.dropout_p);

  const Json& t = section(doc, "train");
  check_keys(t, "train",
             {"epochs", "batch_size", "accumulation_steps", "lr_start", "lr_min", "weight_decay", "beta1", "beta2",
              "adam_epsilon", "seed", "variant", "alpha", "proj_dim", "proj_bias", "shared_fusion", "head_dropout"});
  read(t, "train", "epochs", c.train.epochs);
  read(t, "train", "batch_size", c.train.batch_size);
  read(t, "train", "accumulation_steps", c.train.accumulation_steps);
  read(t, "train", "lr_start", c.train.lr_start);
  read(t, "train", "lr_min", c.train.lr_min);
  read(t, "train", "weight_decay", c.train.weight_decay);
  read(t, "train", "beta1", c.train.beta1);
  read(t, "train", "beta2", c.train.beta2);
  read(t, "train", "adam_epsilon", c.train.adam_epsilon);
  read(t, "train", "seed", c.train.seed);
  if (t.contains("variant")) {
    std::string v;
    read(t, "train", "variant", v);
    try {
      c.train.variant = parse_variant(v);
    } catch (const Error&) {
      throw ParseError("invalid value for 'train.variant': " + v);
    }
  }
  read(t, "train", "alpha", c.train.alpha);
  read(t, "train", "proj_dim", c.train.proj_dim);
  read(t, "train", "proj_bias", c.train.proj_bias);
  read(t, "train", "shared_fusion", c.train.shared_fusion);
  read(t, "train", "head_dropout", c.train.head_dropout);

  const Json& l = section(doc, "loss");
  check_keys(l, "loss", {"hall", "correct", "diff", "contrastive", "margin"});
  read(l, "loss", "hall", c.train.loss.hall);
  read(l, "loss", "correct", c.train.loss.correct);
  read(l, "loss", "diff", c.train.loss.diff);
  read(l, "loss", "contrastive", c.train.loss.contrastive);
  read(l, "loss", "margin", c.train.loss.margin);

  const Json& d = section(doc, "data");
  check_keys(d, "data",
             {"n_pairs", "vocab_words", "knowledge_len", "response_len", "context_len", "corrupt_count", "seed",
              "template"});
  read(d, "data", "n_pairs", c.data.n_pairs);
  read(d, "data", "vocab_words", c.data.vocab_words);
  read(d, "data", "knowledge_len", c.data.knowledge_len);
  read(d, "data", "response_len", c.data.response_len);
  read(d, "data", "context_len", c.data.context_len);
  read(d, "data", "corrupt_count", c.data.corrupt_count);
  read(d, "data", "seed", c.data.seed);
  if (d.contains("template")) {
    std::string v;
    read(d, "data", "template", v);
    try {
      c.data.kind = parse_template(v);
    } catch (const Error&) {
      throw ParseError("invalid value for 'data.template': " + v);
    }
  }

  const Json& a = section(doc, "analysis");
  check_keys(a, "analysis", {"ratios", "epochs"});
  if (a.contains("ratios")) {
    const Json& r = a["ratios"];
    if (!r.is_array()) throw ParseError("invalid value for 'analysis.ratios'");
    c.analysis.ratios.clear();
    for (const Json& v : r) {
      if (!v.is_number()) throw ParseError("invalid value for 'analysis.ratios'");
      c.analysis.ratios.push_back(v.get<double>());
    }
  }
  read(a, "analysis", "epochs", c.analysis.epochs);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return merge_run_config(RunConfig{}, doc);
}

Json to_json(const ModelConfig& m) {
  return {{"encoder",
           {{"vocab_size", m.encoder.vocab_size},
            {"d_model", m.encoder.d_model},
            {"n_layers", m.encoder.n_layers},
            {"n_heads", m.encoder.n_heads},
            {"d_ff", m.encoder.d_ff},
            {"max_len", m.encoder.max_len},
            {"dropout", m.encoder.dropout_p}}},
          {"variant", std::string(variant_name(m.variant))},
          {"alpha", m.alpha},
          {"proj_dim", m.proj_dim},
          {"proj_bias", m.proj_bias},
          {"shared_fusion", m.shared_fusion},
          {"head_dropout", m.head_dropout},
          {"identical_init", m.identical_init},
          {"seed", m.seed}};
}

ModelConfig model_config_from_json(const Json& doc) {
  ModelConfig m;
  check_keys(doc, "model",
             {"encoder", "variant", "alpha", "proj_dim", "proj_bias", "shared_fusion", "head_dropout", "identical_init",
              "seed"});
  const Json& e = section(doc, "encoder");
  check_keys(e, "model.encoder", {"vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_len", "dropout"});
  read(e, "model.encoder", "vocab_size", m.encoder.vocab_size);
  read(e, "model.encoder", "d_model", m.encoder.d_model);
  read(e, "model.encoder", "n_layers", m.encoder.n_layers);
  read(e, "model.encoder", "n_heads", m.encoder.n_heads);
  read(e, "model.encoder", "d_ff", m.encoder.d_ff);
  read(e, "model.encoder", "max_len", m.encoder.max_len);
  read(e, "model.encoder", "dropout", m.encoder.dropout_p);
  std::string v = std::string(variant_name(m.variant));
  read(doc, "model", "variant", v);
  m.variant = parse_variant(v);
  read(doc, "model", "alpha", m.alpha);
  read(doc, "model", "proj_dim", m.proj_dim);
  read(doc, "model", "proj_bias", m.proj_bias);
  read(doc, "model", "shared_fusion", m.shared_fusion);
  read(doc, "model", "head_dropout", m.head_dropout);
  read(doc, "model", "identical_init", m.identical_init);
  read(doc, "model", "seed", m.seed);
  return m;
}

Json to_json(const EvalReport& r) {
  return {{"accuracy", r.accuracy}, {"precision", r.precision}, {"recall", r.recall},
          {"f1", r.f1},             {"pairwise_accuracy", r.pairwise_accuracy},
          {"tp", r.tp},             {"fp", r.fp},
          {"tn", r.tn},             {"fn", r.fn},
          {"pairs", r.pairs}};
}

EvalReport eval_report_from_json(const Json& doc) {
  EvalReport r;
  check_keys(doc, "report", {"accuracy", "precision", "recall", "f1", "pairwise_accuracy", "tp", "fp", "tn", "fn", "pairs"});
  read(doc, "report", "accuracy", r.accuracy);
  read(doc, "report", "precision", r.precision);
  read(doc, "report", "recall", r.recall);
  read(doc, "report", "f1", r.f1);
  read(doc, "report", "pairwise_accuracy", r.pairwise_accuracy);
  read(doc, "report", "tp", r.tp);
  read(doc, "report", "fp", r.fp);
  read(doc, "report", "tn", r.tn);
  read(doc, "report", "fn", r.fn);
  read(doc, "report", "pairs", r.pairs);
  return r;
}

Json to_json(const RunRecord& r) {
  Json epochs = Json::array();
  for (const EpochRecord& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"step_losses", e.step_losses},
                      {"validation", to_json(e.validation)},
                      {"layer_weights", {{"hall", e.layer_weights.empty() ? std::vector<double>{} : e.layer_weights[0]},
                                         {"fact", e.layer_weights.size() < 2 ? std::vector<double>{} : e.layer_weights[1]}}},
                      {"selected_features", e.selected_features}});
  }
  Json doc = {{"variant", r.variant},         {"alpha", r.alpha},
              {"k", r.k},                     {"parameters", r.parameters},
              {"total_steps", r.total_steps}, {"epochs", epochs},
              {"cumulative_unique", r.cumulative_unique()}};
  doc["test"] = r.test ? to_json(*r.test) : Json(nullptr);
  return doc;
}

RunRecord run_record_from_json(const Json& doc) {
  try {
    RunRecord r;
    r.variant = doc.at("variant").get<std::string>();
    r.alpha = doc.at("alpha").get<double>();
    r.k = doc.at("k").get<std::size_t>();
    r.parameters = doc.at("parameters").get<std::size_t>();
    r.total_steps = doc.at("total_steps").get<std::size_t>();
    for (const Json& e : doc.at("epochs")) {
      EpochRecord er;
      er.epoch = e.at("epoch").get<std::size_t>();
      er.train_loss = e.at("train_loss").get<double>();
      er.step_losses = e.at("step_losses").get<std::vector<double>>();
      er.validation = eval_report_from_json(e.at("validation"));
      er.layer_weights = {e.at("layer_weights").at("hall").get<std::vector<double>>(),
                          e.at("layer_weights").at("fact").get<std::vector<double>>()};
      er.selected_features = e.at("selected_features").get<std::vector<std::vector<std::size_t>>>();
      r.epochs.push_back(std::move(er));
    }
    if (doc.contains("test") && !doc["test"].is_null()) r.test = eval_report_from_json(doc["test"]);
    return r;
  } catch (const Json::exception& e) {
    throw ParseError(std::string("run record: ") + e.what());
  }
}

RunRecord load_run_record(const std::filesystem::path& path) {
  Json doc;
  try {
    doc = Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (doc.contains("record")) return run_record_from_json(doc["record"]);
  return run_record_from_json(doc);
}

std::string dump_json(const Json& doc) { return doc.dump(2) + "\n"; }

}  // namespace pfdfl
