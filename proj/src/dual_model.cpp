#include "pfdfl/dual_model.hpp"

#include <cmath>
#include <map>

#include "pfdfl/errors.hpp"

namespace pfdfl {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kBaseline:
      return "baseline";
    case Variant::kPfOnly:
      return "pf_only";
    case Variant::kDflOnly:
      return "dfl_only";
    case Variant::kPfDfl:
      return "pf_dfl";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  if (name == "baseline") return Variant::kBaseline;
  if (name == "pf" || name == "pf_only") return Variant::kPfOnly;
  if (name == "dfl" || name == "dfl_only") return Variant::kDflOnly;
  if (name == "pf_dfl") return Variant::kPfDfl;
  throw ArgumentError("unknown variant '" + std::string(name) + "' (expected baseline, pf, dfl or pf_dfl)");
}

void ModelConfig::validate() const {
  encoder.validate();
  RetentionPolicy{alpha}.validate();
  if (head_dropout < 0.0 || head_dropout >= 1.0) throw ArgumentError("head_dropout must lie in [0, 1)");
}

ScoreHead::ScoreHead(std::size_t in_dim, double dropout_p, Rng& rng) : dropout_p_(dropout_p) {
  const std::size_t hid = hidden_dim(in_dim);
  w1_ = normal_param({in_dim, hid}, 1.0 / std::sqrt(static_cast<double>(in_dim)), rng);
  b1_ = const_param({hid}, 0.0);
  ln_g_ = const_param({hid}, 1.0);
  ln_b_ = const_param({hid}, 0.0);
  w2_ = normal_param({hid, 1}, 1.0 / std::sqrt(static_cast<double>(hid)), rng);
  b2_ = const_param({1}, 0.0);
}

Tensor ScoreHead::forward(Graph& g, const Tensor& x, bool train, Rng& dropout_rng) const {
  Tensor h = g.add_bias(g.matmul(x, w1_), b1_);
  h = g.gelu(g.layernorm(h, ln_g_, ln_b_));
  h = g.dropout(h, dropout_p_, dropout_rng, train);
  Tensor s = g.sigmoid(g.add_bias(g.matmul(h, w2_), b2_));
  return g.reshape(s, {x.dim(0)});
}

ParamList ScoreHead::parameters(const std::string& prefix) const {
  return {{prefix + "fc1.weight", w1_}, {prefix + "fc1.bias", b1_},  {prefix + "ln.gain", ln_g_},
          {prefix + "ln.bias", ln_b_},  {prefix + "fc2.weight", w2_}, {prefix + "fc2.bias", b2_}};
}

std::size_t ScoreHead::param_count(std::size_t in_dim) {
  const std::size_t hid = hidden_dim(in_dim);
  return in_dim * hid + hid + 2 * hid + hid + 1;
}

std::vector<PairScores> ModelOutput::scores() const {
  std::vector<PairScores> out(s_hall.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].s_hall = s_hall[i];
    out[i].s_correct = s_correct[i];
    out[i].decision = s_hall[i] - s_correct[i] > 0.0;
  }
  return out;
}

namespace {

Encoder make_encoder(const ModelConfig& cfg, const char* label) {
  cfg.validate();
  Rng rng = Rng::derive(cfg.seed, label);
  return Encoder(cfg.encoder, rng);
}

PFBlock make_pf(const ModelConfig& cfg, const char* label) {
  Rng rng = Rng::derive(cfg.seed, label);
  return PFBlock(cfg.encoder.n_layers + 1, cfg.encoder.d_model, cfg.projected_dim(), cfg.proj_bias, rng);
}

ScoreHead make_head(const ModelConfig& cfg, const char* label) {
  Rng rng = Rng::derive(cfg.seed, label);
  return ScoreHead(cfg.head_input_dim(), cfg.head_dropout, rng);
}

}  // namespace

DualModel::DualModel(const ModelConfig& cfg)
    : cfg_(cfg),
      enc_hall_(make_encoder(cfg, "encoder.hall")),
      enc_fact_(make_encoder(cfg, cfg.identical_init ? "encoder.hall" : "encoder.fact")),
      pf_hall_(make_pf(cfg, "pf.hall")),
      pf_fact_(make_pf(cfg, "pf.fact")),
      head_hall_(make_head(cfg, "head.hall")),
      head_correct_(make_head(cfg, "head.correct")) {}

Tensor DualModel::uniform_fuse(Graph& g, std::span<const Tensor> states) const {
  const std::size_t n = states.size();
  return g.weighted_sum(states, Tensor::filled({n}, 1.0 / static_cast<double>(n)));
}

ModelOutput DualModel::forward(Graph& g, const TokenBatch& batch, bool train, Rng& rng) const {
  ModelOutput out;
  const Variant v = cfg_.variant;
  HiddenStack hall = enc_hall_.forward(g, batch, train, rng);
  if (v == Variant::kBaseline) {
    const Tensor& h = hall.states.back();
    out.s_hall = head_hall_.forward(g, h, train, rng);
    out.s_correct = head_correct_.forward(g, h, train, rng);
    return out;
  }
  HiddenStack fact = enc_fact_.forward(g, batch, train, rng);
  std::vector<Tensor> hs = std::move(hall.states);
  std::vector<Tensor> fs = std::move(fact.states);
  if (uses_dfl(v)) {
    const RetentionPolicy pol = policy();
    for (std::size_t i = 0; i < hs.size(); ++i) {
      MaskedLayer ml = mask_layer(g, hs[i], fs[i], pol, i);
      hs[i] = ml.hall;
      fs[i] = ml.fact;
      out.masks.push_back(std::move(ml.masks));
    }
  }
  auto fuse_branch = [&](const PFBlock& pf, std::span<const Tensor> states) {
    return uses_pf(v) ? pf.forward(g, states) : uniform_fuse(g, states);
  };
  if (cfg_.shared_fusion) {
    std::vector<Tensor> diffs;
    for (std::size_t i = 0; i < hs.size(); ++i) diffs.push_back(g.sub(hs[i], fs[i]));
    Tensor fused = fuse_branch(pf_hall_, diffs);
    out.s_hall = head_hall_.forward(g, fused, train, rng);
    out.s_correct = head_correct_.forward(g, fused, train, rng);
  } else {
    Tensor fused_hall = fuse_branch(pf_hall_, hs);
    Tensor fused_fact = fuse_branch(pf_fact_, fs);
    out.s_hall = head_hall_.forward(g, fused_hall, train, rng);
    out.s_correct = head_correct_.forward(g, fused_fact, train, rng);
  }
  return out;
}

ParamList DualModel::parameters() const {
  const Variant v = cfg_.variant;
  ParamList ps = enc_hall_.parameters("encoder.hall.");
  if (uses_second_encoder(v)) {
    for (auto& p : enc_fact_.parameters("encoder.fact.")) ps.push_back(std::move(p));
  }
  if (uses_pf(v)) {
    for (auto& p : pf_hall_.parameters("pf.hall.")) ps.push_back(std::move(p));
    if (!cfg_.shared_fusion) {
      for (auto& p : pf_fact_.parameters("pf.fact.")) ps.push_back(std::move(p));
    }
  }
  for (auto& p : head_hall_.parameters("head.hall.")) ps.push_back(std::move(p));
  for (auto& p : head_correct_.parameters("head.correct.")) ps.push_back(std::move(p));
  return ps;
}

ParamList DualModel::all_parameters() const {
  ParamList ps = enc_hall_.parameters("encoder.hall.");
  for (auto& p : enc_fact_.parameters("encoder.fact.")) ps.push_back(std::move(p));
  for (auto& p : pf_hall_.parameters("pf.hall.")) ps.push_back(std::move(p));
  for (auto& p : pf_fact_.parameters("pf.fact.")) ps.push_back(std::move(p));
  for (auto& p : head_hall_.parameters("head.hall.")) ps.push_back(std::move(p));
  for (auto& p : head_correct_.parameters("head.correct.")) ps.push_back(std::move(p));
  return ps;
}

std::vector<double> DualModel::layer_weights(std::size_t branch) const {
  const std::size_t n = cfg_.encoder.n_layers + 1;
  switch (cfg_.variant) {
    case Variant::kBaseline: {
      std::vector<double> w(n, 0.0);
      w.back() = 1.0;
      return w;
    }
    case Variant::kDflOnly:
      return std::vector<double>(n, 1.0 / static_cast<double>(n));
    default:
      return (branch == 0 || cfg_.shared_fusion ? pf_hall_ : pf_fact_).layer_weights();
  }
}

std::size_t DualModel::param_count(const ModelConfig& cfg) {
  const Variant v = cfg.variant;
  const std::size_t enc = encoder_param_count(cfg.encoder);
  const std::size_t pf =
      PFBlock::param_count(cfg.encoder.n_layers + 1, cfg.encoder.d_model, cfg.projected_dim(), cfg.proj_bias);
  std::size_t total = enc + 2 * ScoreHead::param_count(cfg.head_input_dim());
  if (uses_second_encoder(v)) total += enc;
  if (uses_pf(v)) total += cfg.shared_fusion ? pf : 2 * pf;
  return total;
}

Tensor pair_loss(Graph& g, const ModelOutput& out, std::span<const int> labels, std::span<const std::size_t> pair_keys,
                 const LossWeights& w) {
  const std::size_t n = out.s_hall.size();
  if (n == 0) throw ArgumentError("pair_loss: empty batch");
  if (labels.size() != n || pair_keys.size() != n) throw DimensionError("pair_loss: labels/pair keys length mismatch");
  std::vector<double> y(n), y_flip(n), target(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) {
      throw ValidationError("pair_loss: label " + std::to_string(labels[i]) + " at position " + std::to_string(i) +
                            " is not 0 or 1");
    }
    y[i] = labels[i];
    y_flip[i] = 1.0 - y[i];
    target[i] = 2.0 * y[i] - 1.0;
  }
  const Shape shape{n};
  Tensor d = g.sub(out.s_hall, out.s_correct);
  Tensor total;
  auto accumulate = [&](const Tensor& term, double weight) {
    if (weight == 0.0) return;
    Tensor t = weight == 1.0 ? term : g.affine(term, weight, 0.0);
    total = total.defined() ? g.add(total, t) : t;
  };
  if (w.hall != 0.0) accumulate(g.bce_loss(out.s_hall, Tensor::from(shape, y)), w.hall);
  if (w.correct != 0.0) accumulate(g.bce_loss(out.s_correct, Tensor::from(shape, y_flip)), w.correct);
  if (w.diff != 0.0) accumulate(g.mse_loss(d, Tensor::from(shape, target)), w.diff);
  if (w.contrastive != 0.0) {
    std::map<std::size_t, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> members;
    for (std::size_t i = 0; i < n; ++i) {
      auto& m = members[pair_keys[i]];
      (labels[i] == 1 ? m.first : m.second).push_back(i);
    }
    std::vector<std::size_t> pos, neg;
    for (const auto& [key, m] : members) {
      const std::size_t c = std::min(m.first.size(), m.second.size());
      for (std::size_t j = 0; j < c; ++j) {
        pos.push_back(m.first[j]);
        neg.push_back(m.second[j]);
      }
    }
    if (!pos.empty()) {
      Tensor d2 = g.reshape(d, {n, 1});
      Tensor gap = g.sub(g.gather_rows(d2, pos), g.gather_rows(d2, neg));
      Tensor hinge = g.relu(g.affine(gap, -1.0, w.margin));
      accumulate(g.mean(hinge), w.contrastive);
    }
  }
  if (!total.defined()) total = Tensor::scalar(0.0);
  return total;
}

}  // namespace pfdfl
