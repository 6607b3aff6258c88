#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "pfdfl/dual_model.hpp"
#include "pfdfl/errors.hpp"

using namespace pfdfl;

namespace {

ModelConfig small(Variant v) {
  ModelConfig c;
  c.encoder.vocab_size = 40;
  c.encoder.d_model = 16;
  c.encoder.n_layers = 2;
  c.encoder.n_heads = 2;
  c.encoder.d_ff = 32;
  c.encoder.max_len = 16;
  c.encoder.dropout_p = 0.0;
  c.head_dropout = 0.0;
  c.variant = v;
  c.seed = 11;
  return c;
}

TokenBatch sample_batch() {
  const std::vector<std::vector<std::size_t>> seqs{
      {0, 5, 6, 7, 1, 8, 9}, {0, 5, 6, 10, 1, 8, 9}, {0, 11, 12, 1, 13}, {0, 14, 12, 1, 13}};
  return TokenBatch::from_sequences(seqs, 16);
}

ModelOutput run(const DualModel& m, const TokenBatch& b) {
  Graph g;
  Rng r(0);
  return m.forward(g, b, false, r);
}

// Closed-form oracle written independently of the model code.
std::size_t oracle_params(const ModelConfig& c) {
  const std::size_t d = c.encoder.d_model, f = c.encoder.d_ff, L = c.encoder.n_layers, n = L + 1;
  const std::size_t enc = c.encoder.vocab_size * d + c.encoder.max_len * d + 2 * d +
                          L * (4 * d + 4 * (d * d + d) + d * f + f + f * d + d);
  const std::size_t p = c.projected_dim();
  const std::size_t in = uses_pf(c.variant) ? p : d, h = in / 2;
  const std::size_t head = in * h + h + 2 * h + h + 1;
  std::size_t total = enc + 2 * head;
  if (c.variant != Variant::kBaseline) total += enc;
  if (uses_pf(c.variant)) total += (c.shared_fusion ? 1 : 2) * (n * (d * p + (c.proj_bias ? p : 0)) + n);
  return total;
}

}  // namespace

TEST(Variant, ParsesAcceptedNames) {
  EXPECT_EQ(parse_variant("baseline"), Variant::kBaseline);
  EXPECT_EQ(parse_variant("pf"), Variant::kPfOnly);
  EXPECT_EQ(parse_variant("dfl"), Variant::kDflOnly);
  EXPECT_EQ(parse_variant("pf_dfl"), Variant::kPfDfl);
  EXPECT_THROW(parse_variant("dfl_pf"), ArgumentError);
  EXPECT_EQ(variant_name(Variant::kPfOnly), "pf_only");
}

TEST(DualModel, ParamCountsMatchEnumerationForEveryVariant) {
  for (Variant v : {Variant::kBaseline, Variant::kPfOnly, Variant::kDflOnly, Variant::kPfDfl}) {
    for (bool shared : {false, true}) {
      for (std::size_t proj : {0u, 8u}) {
        ModelConfig c = small(v);
        c.shared_fusion = shared;
        c.proj_dim = proj;
        DualModel m(c);
        EXPECT_EQ(count_parameters(m.parameters()), DualModel::param_count(c)) << variant_name(v);
        EXPECT_EQ(DualModel::param_count(c), oracle_params(c)) << variant_name(v);
      }
    }
  }
  EXPECT_LT(DualModel::param_count(small(Variant::kBaseline)), DualModel::param_count(small(Variant::kPfOnly)));
}

TEST(DualModel, ScoresAreProbabilitiesAndDecisionIsScoreGap) {
  DualModel m(small(Variant::kPfDfl));
  ModelOutput out = run(m, sample_batch());
  ASSERT_EQ(out.s_hall.size(), 4u);
  for (const PairScores& s : out.scores()) {
    EXPECT_GT(s.s_hall, 0.0);
    EXPECT_LT(s.s_hall, 1.0);
    EXPECT_EQ(s.decision, s.s_hall > s.s_correct);
  }
  ASSERT_EQ(out.masks.size(), 3u);
  for (const auto& layer : out.masks) {
    ASSERT_EQ(layer.size(), 4u);
    for (const FeatureMask& fm : layer) EXPECT_EQ(fm.k(), 1u);
  }
}

TEST(DualModel, FullRetentionMatchesPfOnlyBitForBit) {
  ModelConfig a = small(Variant::kPfDfl);
  a.alpha = 1.0;
  const ModelConfig b = small(Variant::kPfOnly);
  DualModel ma(a), mb(b);
  const TokenBatch batch = sample_batch();
  ModelOutput oa = run(ma, batch), ob = run(mb, batch);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(oa.s_hall[i], ob.s_hall[i]);
    EXPECT_EQ(oa.s_correct[i], ob.s_correct[i]);
  }
}

TEST(DualModel, BaselineIgnoresFusionParameters) {
  DualModel m(small(Variant::kBaseline));
  const TokenBatch batch = sample_batch();
  ModelOutput before = run(m, batch);
  for (const NamedTensor& p : m.all_parameters()) {
    if (p.name.rfind("pf.", 0) == 0) {
      Tensor t = p.tensor;
      for (double& v : t.data()) v += 0.37;
    }
  }
  ModelOutput after = run(m, batch);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(before.s_hall[i], after.s_hall[i]);
    EXPECT_EQ(before.s_correct[i], after.s_correct[i]);
  }
}

TEST(DualModel, LayerWeightsPerVariant) {
  const std::size_t n = 3;
  auto sum = [](const std::vector<double>& w) {
    double s = 0.0;
    for (double v : w) s += v;
    return s;
  };
  DualModel base(small(Variant::kBaseline));
  EXPECT_EQ(base.layer_weights(0), (std::vector<double>{0.0, 0.0, 1.0}));
  DualModel dfl(small(Variant::kDflOnly));
  for (double w : dfl.layer_weights(1)) EXPECT_DOUBLE_EQ(w, 1.0 / n);
  DualModel pf(small(Variant::kPfDfl));
  EXPECT_NEAR(sum(pf.layer_weights(0)), 1.0, 1e-12);
  EXPECT_NEAR(sum(pf.layer_weights(1)), 1.0, 1e-12);
}

TEST(DualModel, ParametersAreOrderedAndUniquelyNamed) {
  DualModel m(small(Variant::kPfDfl));
  const ParamList ps = m.parameters();
  std::set<std::string> names;
  for (const auto& p : ps) names.insert(p.name);
  EXPECT_EQ(names.size(), ps.size());
  EXPECT_EQ(ps.front().name.rfind("encoder.hall.", 0), 0u);
  EXPECT_EQ(ps.back().name.rfind("head.correct.", 0), 0u);
}

TEST(PairLoss, HalfScoresGiveClosedFormValue) {
  Graph g;
  ModelOutput out;
  out.s_hall = Tensor::vector({0.5, 0.5});
  out.s_correct = Tensor::vector({0.5, 0.5});
  const std::vector<int> labels{0, 1};
  const std::vector<std::size_t> keys{0, 0};
  Tensor l = pair_loss(g, out, labels, keys, LossWeights{});
  // BCE terms ln 2 each, MSE of 0 against +-1 is 1, hinge max(0, 0.5 - 0) = 0.5 weighted 0.1.
  EXPECT_NEAR(l.item(), 2.0 * std::log(2.0) + 1.0 + 0.05, 1e-12);
  EXPECT_NEAR(l.item(), 2.4363, 1e-4);
}

TEST(PairLoss, UnmatchedMembersAddNoContrastiveTerm) {
  Graph g;
  ModelOutput out;
  out.s_hall = Tensor::vector({0.5, 0.5});
  out.s_correct = Tensor::vector({0.5, 0.5});
  const std::vector<int> labels{0, 1};
  const std::vector<std::size_t> keys{0, 1};
  Tensor l = pair_loss(g, out, labels, keys, LossWeights{});
  EXPECT_NEAR(l.item(), 2.0 * std::log(2.0) + 1.0, 1e-12);
}

TEST(PairLoss, ContrastiveHingeVanishesBeyondMargin) {
  Graph g;
  ModelOutput out;
  out.s_hall = Tensor::vector({0.2, 0.9});
  out.s_correct = Tensor::vector({0.8, 0.1});
  const std::vector<int> labels{0, 1};
  const std::vector<std::size_t> keys{3, 3};
  LossWeights only_c{0.0, 0.0, 0.0, 1.0, 0.5};
  // d_pos - d_neg = 0.8 - (-0.6) = 1.4 > margin.
  EXPECT_NEAR(pair_loss(g, out, labels, keys, only_c).item(), 0.0, 1e-15);
  out.s_hall = Tensor::vector({0.5, 0.6});
  out.s_correct = Tensor::vector({0.5, 0.5});
  EXPECT_NEAR(pair_loss(g, out, labels, keys, only_c).item(), 0.4, 1e-12);
}

TEST(PairLoss, RejectsNonBinaryLabels) {
  Graph g;
  ModelOutput out;
  out.s_hall = Tensor::vector({0.5});
  out.s_correct = Tensor::vector({0.5});
  const std::vector<int> labels{2};
  const std::vector<std::size_t> keys{0};
  EXPECT_THROW(pair_loss(g, out, labels, keys, LossWeights{}), ValidationError);
}

TEST(DualModel, GradientCheckOnSmallModel) {
  // Covered exhaustively by the acceptance suite; a quick variant here.
  ModelConfig c = small(Variant::kDflOnly);
  c.encoder.n_layers = 1;
  c.encoder.max_len = 8;
  c.identical_init = false;
  DualModel m(c);
  const std::vector<std::vector<std::size_t>> seqs{{0, 5, 6, 7}, {0, 5, 9, 7}};
  TokenBatch b = TokenBatch::from_sequences(seqs, 8);
  const std::vector<int> labels{0, 1};
  const std::vector<std::size_t> keys{0, 0};
  const ParamList ps = m.parameters();
  zero_grads(ps);
  Graph g;
  Rng r(0);
  ModelOutput out = m.forward(g, b, false, r);
  g.backward(pair_loss(g, out, labels, keys, LossWeights{}));
  // Compare a handful of head and encoder coordinates.
  const double h = 1e-5;
  for (std::size_t pi : {std::size_t{4}, ps.size() - 1, ps.size() - 6}) {
    Tensor t = ps[pi].tensor;
    for (std::size_t j = 0; j < std::min<std::size_t>(t.size(), 5); ++j) {
      const double orig = t.data()[j];
      auto eval = [&] {
        Graph ge(false);
        Rng rr(0);
        ModelOutput o = m.forward(ge, b, false, rr);
        return pair_loss(ge, o, labels, keys, LossWeights{}).item();
      };
      t.data()[j] = orig + h;
      const double fp = eval();
      t.data()[j] = orig - h;
      const double fm = eval();
      t.data()[j] = orig;
      const double num = (fp - fm) / (2 * h);
      EXPECT_NEAR(t.grad()[j], num, 1e-6 + 1e-4 * std::abs(num)) << ps[pi].name << "[" << j << "]";
    }
  }
}
