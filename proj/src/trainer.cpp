#include "pfdfl/trainer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>

#include "pfdfl/checkpoint.hpp"
#include "pfdfl/errors.hpp"

namespace pfdfl {

void TrainConfig::validate() const {
  if (epochs == 0) throw ArgumentError("epochs must be positive");
  if (batch_size < 2 || batch_size % 2 != 0) throw ArgumentError("batch_size must be even and at least 2");
  if (accumulation_steps == 0) throw ArgumentError("accumulation_steps must be positive");
  if (!(lr_start > 0.0) || !(lr_min >= 0.0) || lr_min > lr_start) {
    throw ArgumentError("learning rates must satisfy 0 <= lr_min <= lr_start, lr_start > 0");
  }
  if (weight_decay < 0.0) throw ArgumentError("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ArgumentError("betas must lie in [0, 1)");
  if (!(adam_epsilon > 0.0)) throw ArgumentError("adam_epsilon must be positive");
  RetentionPolicy{alpha}.validate();
  if (!(head_dropout >= 0.0 && head_dropout < 1.0)) throw ArgumentError("head_dropout must lie in [0, 1)");
  if (loss.hall < 0 || loss.correct < 0 || loss.diff < 0 || loss.contrastive < 0) {
    throw ArgumentError("loss weights must be non-negative");
  }
}

ModelConfig make_model_config(const EncoderConfig& enc, const TrainConfig& cfg) {
  ModelConfig m;
  m.encoder = enc;
  m.variant = cfg.variant;
  m.alpha = cfg.alpha;
  m.proj_dim = cfg.proj_dim;
  m.proj_bias = cfg.proj_bias;
  m.shared_fusion = cfg.shared_fusion;
  m.head_dropout = cfg.head_dropout;
  m.seed = cfg.seed;
  return m;
}

double cosine_lr(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  if (total_steps == 0) return cfg.lr_start;
  if (step >= total_steps) return cfg.lr_min;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return cfg.lr_min + 0.5 * (cfg.lr_start - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

void adamw_step(const ParamList& params, AdamState& state, double lr, const TrainConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.size(), 0.0);
      state.v.emplace_back(p.tensor.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ArgumentError("adamw_step: optimizer state does not match parameters");
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    auto w = t.data();
    auto g = t.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      w[j] -= lr * cfg.weight_decay * w[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mh = m[j] / bc1;
      const double vh = v[j] / bc2;
      w[j] -= lr * mh / (std::sqrt(vh) + cfg.adam_epsilon);
    }
  }
}

EncodedSet EncodedSet::build(const Dataset& ds, std::span<const std::size_t> indices, std::size_t max_len) {
  EncodedSet s;
  std::map<std::string, std::size_t> keys;
  for (std::size_t idx : indices) {
    if (idx >= ds.examples.size()) throw ArgumentError("EncodedSet::build: index out of range");
    const PairedExample& ex = ds.examples[idx];
    s.tokens.push_back(encode(ex, ds.kind, ds.tokenizer, max_len));
    s.labels.push_back(ex.label);
    auto [it, inserted] = keys.emplace(ex.pair_id, keys.size());
    s.pair_keys.push_back(it->second);
    s.pair_ids.push_back(ex.pair_id);
  }
  return s;
}

EvalResult evaluate(const DualModel& model, const EncodedSet& set, std::size_t batch_size) {
  if (batch_size == 0) throw ArgumentError("evaluate: batch_size must be positive");
  EvalResult r;
  const std::size_t n_layers = model.config().encoder.n_layers + 1;
  if (uses_dfl(model.config().variant)) r.selected.resize(n_layers);
  Rng unused(0);
  const std::size_t max_len = model.config().encoder.max_len;
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    const std::size_t end = std::min(set.size(), start + batch_size);
    std::span<const std::vector<std::size_t>> seqs(set.tokens.data() + start, end - start);
    TokenBatch batch = TokenBatch::from_sequences(seqs, max_len);
    Graph g(false);
    ModelOutput out = model.forward(g, batch, false, unused);
    for (const PairScores& s : out.scores()) {
      r.scores.push_back(s);
      r.predictions.push_back(s.decision ? 1 : 0);
    }
    for (std::size_t l = 0; l < out.masks.size(); ++l) {
      for (const FeatureMask& m : out.masks[l]) r.selected[l].insert(m.indices.begin(), m.indices.end());
    }
  }
  r.report = classify_report(r.predictions, set.labels, set.pair_ids);
  return r;
}

std::vector<std::size_t> RunRecord::cumulative_unique() const {
  std::vector<std::set<std::size_t>> acc;
  for (const EpochRecord& e : epochs) {
    if (acc.size() < e.selected_features.size()) acc.resize(e.selected_features.size());
    for (std::size_t l = 0; l < e.selected_features.size(); ++l) {
      acc[l].insert(e.selected_features[l].begin(), e.selected_features[l].end());
    }
  }
  std::vector<std::size_t> out;
  for (const auto& s : acc) out.push_back(s.size());
  return out;
}

Trainer::Trainer(DualModel& model, const TrainConfig& cfg)
    : model_(model), cfg_(cfg), params_(model.parameters()), dropout_rng_(Rng::derive(cfg.seed, "dropout")) {
  cfg_.validate();
}

std::size_t Trainer::total_steps(std::size_t n_examples) const {
  const std::size_t pairs_per_batch = cfg_.batch_size / 2;
  const std::size_t n_pairs = n_examples / 2;
  const std::size_t n_batches = (n_pairs + pairs_per_batch - 1) / pairs_per_batch;
  return cfg_.epochs * ((n_batches + cfg_.accumulation_steps - 1) / cfg_.accumulation_steps);
}

double Trainer::accumulate(const EncodedSet& set, std::span<const std::size_t> members, double grad_scale) {
  std::vector<std::vector<std::size_t>> seqs;
  std::vector<int> labels;
  std::vector<std::size_t> keys;
  for (std::size_t i : members) {
    seqs.push_back(set.tokens[i]);
    labels.push_back(set.labels[i]);
    keys.push_back(set.pair_keys[i]);
  }
  TokenBatch batch = TokenBatch::from_sequences(seqs, model_.config().encoder.max_len);
  Graph g;
  ModelOutput out = model_.forward(g, batch, true, dropout_rng_);
  Tensor loss = pair_loss(g, out, labels, keys, cfg_.loss);
  const double value = loss.item();
  if (!std::isfinite(value)) return value;
  Tensor scaled = g.affine(loss, grad_scale, 0.0);
  g.backward(scaled);
  return value;
}

void Trainer::step(double lr) {
  adamw_step(params_, adam_, lr, cfg_);
  zero_grads(params_);
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t epoch) {
  char name[48];
  std::snprintf(name, sizeof(name), "checkpoint_epoch%03zu.pfdl", epoch);
  return dir / name;
}

RunRecord Trainer::train(const Dataset& ds, const Split& split,
                         const std::optional<std::filesystem::path>& checkpoint_dir) {
  const std::size_t max_len = model_.config().encoder.max_len;
  const EncodedSet train_set = EncodedSet::build(ds, split.train, max_len);
  const EncodedSet val_set = EncodedSet::build(ds, split.validation, max_len);
  const EncodedSet test_set = EncodedSet::build(ds, split.test, max_len);

  // Pairs as (factual, hallucinated) index tuples in first-seen order.
  std::vector<std::array<std::size_t, 2>> pairs;
  {
    std::map<std::size_t, std::size_t> slot;
    for (std::size_t i = 0; i < train_set.size(); ++i) {
      auto [it, inserted] = slot.emplace(train_set.pair_keys[i], pairs.size());
      if (inserted) pairs.push_back({0, 0});
      pairs[it->second][train_set.labels[i]] = i;
    }
  }

  RunRecord rec;
  rec.variant = std::string(variant_name(model_.config().variant));
  rec.alpha = model_.config().alpha;
  rec.k = uses_dfl(model_.config().variant) ? model_.policy().k(model_.config().encoder.d_model) : 0;
  rec.parameters = count_parameters(params_);
  rec.total_steps = total_steps(train_set.size());

  if (checkpoint_dir) save_checkpoint(model_, checkpoint_path(*checkpoint_dir, 0));

  const std::size_t pairs_per_batch = cfg_.batch_size / 2;
  std::size_t global_step = 0;
  zero_grads(params_);
  for (std::size_t epoch = 1; epoch <= cfg_.epochs; ++epoch) {
    Rng shuffle = Rng::derive(cfg_.seed ^ (epoch * 0x9E3779B97F4A7C15ULL), "shuffle");
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle.shuffle(order);

    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < order.size(); start += pairs_per_batch) {
      std::vector<std::size_t> members;
      for (std::size_t p = start; p < std::min(order.size(), start + pairs_per_batch); ++p) {
        members.push_back(pairs[order[p]][0]);
        members.push_back(pairs[order[p]][1]);
      }
      batches.push_back(std::move(members));
    }

    EpochRecord er;
    er.epoch = epoch;
    double loss_sum = 0.0;
    for (std::size_t w = 0; w < batches.size(); w += cfg_.accumulation_steps) {
      const std::size_t w_end = std::min(batches.size(), w + cfg_.accumulation_steps);
      const double scale = 1.0 / static_cast<double>(w_end - w);
      double window_loss = 0.0;
      for (std::size_t b = w; b < w_end; ++b) {
        const double l = accumulate(train_set, batches[b], scale);
        if (!std::isfinite(l)) {
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(global_step) + ", micro-batch " + std::to_string(b));
        }
        window_loss += l;
      }
      step(cosine_lr(global_step, rec.total_steps, cfg_));
      ++global_step;
      er.step_losses.push_back(window_loss * scale);
      loss_sum += window_loss;
    }
    er.train_loss = batches.empty() ? 0.0 : loss_sum / static_cast<double>(batches.size());

    EvalResult val = evaluate(model_, val_set);
    er.validation = val.report;
    er.layer_weights = {model_.layer_weights(0), model_.layer_weights(1)};
    for (const auto& s : val.selected) er.selected_features.emplace_back(s.begin(), s.end());
    rec.epochs.push_back(std::move(er));

    if (checkpoint_dir) save_checkpoint(model_, checkpoint_path(*checkpoint_dir, epoch));
  }
  if (test_set.size() > 0) rec.test = evaluate(model_, test_set).report;
  return rec;
}

}  // namespace pfdfl
