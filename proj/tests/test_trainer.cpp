#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <numeric>

#include "pfdfl/checkpoint.hpp"
#include "pfdfl/errors.hpp"
#include "pfdfl/io.hpp"
#include "pfdfl/trainer.hpp"

using namespace pfdfl;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny(Variant v) {
  ModelConfig c;
  c.encoder.vocab_size = 40;
  c.encoder.d_model = 8;
  c.encoder.n_layers = 2;
  c.encoder.n_heads = 2;
  c.encoder.d_ff = 16;
  c.encoder.max_len = 12;
  c.encoder.dropout_p = 0.0;
  c.head_dropout = 0.0;
  c.variant = v;
  c.seed = 3;
  return c;
}

EncodedSet toy_set(std::size_t n_pairs, std::uint64_t seed) {
  Rng rng(seed);
  EncodedSet s;
  for (std::size_t p = 0; p < n_pairs; ++p) {
    std::vector<std::size_t> base{0};
    for (int i = 0; i < 8; ++i) base.push_back(4 + rng.below(36));
    for (int label = 0; label < 2; ++label) {
      std::vector<std::size_t> seq = base;
      if (label == 1) seq[3] = 4 + rng.below(36);
      s.tokens.push_back(seq);
      s.labels.push_back(label);
      s.pair_keys.push_back(p);
      s.pair_ids.push_back("p" + std::to_string(p));
    }
  }
  return s;
}

std::vector<std::vector<double>> snapshot(const ParamList& params) {
  std::vector<std::vector<double>> out;
  for (const auto& p : params) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("pfdfl_test_trainer_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(CosineLr, HitsEndpointsExactly) {
  TrainConfig cfg;
  EXPECT_EQ(cosine_lr(0, 100, cfg), 2e-5);
  EXPECT_EQ(cosine_lr(100, 100, cfg), 1e-6);
  EXPECT_EQ(cosine_lr(500, 100, cfg), 1e-6);
  EXPECT_NEAR(cosine_lr(50, 100, cfg), (2e-5 + 1e-6) / 2, 1e-18);
  for (std::size_t s = 1; s <= 100; ++s) EXPECT_LE(cosine_lr(s, 100, cfg), cosine_lr(s - 1, 100, cfg));
}

TEST(AdamW, MatchesScalarOracle) {
  TrainConfig cfg;
  cfg.weight_decay = 0.1;
  Tensor w = Tensor::vector({0.5, -1.5}, true);
  ParamList params{{"w", w}};
  AdamState st;
  double m[2] = {0, 0}, v[2] = {0, 0}, ref[2] = {0.5, -1.5};
  const double lr = 0.01;
  for (int t = 1; t <= 5; ++t) {
    const double g[2] = {0.3 * t, -0.2 + 0.1 * t};
    w.grad()[0] = g[0];
    w.grad()[1] = g[1];
    adamw_step(params, st, lr, cfg);
    for (int i = 0; i < 2; ++i) {
      ref[i] -= lr * cfg.weight_decay * ref[i];
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.95 * v[i] + 0.05 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.95, t));
      ref[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(w[i], ref[i], 1e-14);
    }
  }
  EXPECT_EQ(st.t, 5u);
}

TEST(TrainConfig, RejectsInvalidValues) {
  TrainConfig cfg;
  cfg.batch_size = 3;
  EXPECT_THROW(cfg.validate(), ArgumentError);
  cfg = TrainConfig{};
  cfg.accumulation_steps = 0;
  EXPECT_THROW(cfg.validate(), ArgumentError);
  cfg = TrainConfig{};
  cfg.lr_min = 1.0;
  EXPECT_THROW(cfg.validate(), ArgumentError);
}

TEST(Trainer, AccumulatedMicroBatchesMatchOneLargeBatch) {
  for (Variant v : {Variant::kBaseline, Variant::kPfDfl}) {
    const EncodedSet set = toy_set(8, 1);
    TrainConfig cfg;
    cfg.head_dropout = 0.0;
    std::vector<std::size_t> all(16);
    std::iota(all.begin(), all.end(), 0);

    DualModel a(tiny(v));
    Trainer ta(a, cfg);
    for (std::size_t mb = 0; mb < 8; ++mb) {
      const std::vector<std::size_t> members{2 * mb, 2 * mb + 1};
      ta.accumulate(set, members, 1.0 / 8);
    }
    DualModel b(tiny(v));
    Trainer tb(b, cfg);
    tb.accumulate(set, all, 1.0);

    // The pair loss is a per-pair mean, so 8 pairs of 2 and one batch of 16
    // have the same gradient.
    const ParamList pa = a.parameters(), pb = b.parameters();
    ASSERT_EQ(pa.size(), pb.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < pa.size(); ++i)
      for (std::size_t j = 0; j < pa[i].tensor.size(); ++j)
        worst = std::max(worst, std::abs(pa[i].tensor.grad()[j] - pb[i].tensor.grad()[j]));
    EXPECT_LT(worst, 1e-10) << variant_name(v);

    ta.step(1e-3);
    tb.step(1e-3);
    const auto sa = snapshot(pa), sb = snapshot(pb);
    for (std::size_t i = 0; i < sa.size(); ++i)
      for (std::size_t j = 0; j < sa[i].size(); ++j) EXPECT_NEAR(sa[i][j], sb[i][j], 1e-10);
    for (const auto& p : pa)
      for (double gval : p.tensor.grad()) EXPECT_EQ(gval, 0.0);
  }
}

TEST(Trainer, NonFiniteLossRaisesNumericError) {
  DualModel m(tiny(Variant::kPfDfl));
  TrainConfig cfg;
  Trainer t(m, cfg);
  ParamList params = m.parameters();
  Tensor first = params.front().tensor;
  for (double& v : first.data()) v = std::numeric_limits<double>::quiet_NaN();
  const EncodedSet set = toy_set(2, 2);
  const std::vector<std::size_t> members{0, 1};
  EXPECT_FALSE(std::isfinite(t.accumulate(set, members, 1.0)));

  SyntheticSpec spec;
  spec.n_pairs = 10;
  spec.vocab_words = 36;
  spec.knowledge_len = 4;
  spec.response_len = 3;
  spec.context_len = 1;
  const Dataset ds = generate_synthetic(spec);
  DualModel bad(tiny(Variant::kPfDfl));
  for (double& v : bad.parameters().front().tensor.data()) v = std::numeric_limits<double>::quiet_NaN();
  TrainConfig one;
  one.epochs = 1;
  EXPECT_THROW(Trainer(bad, one).train(ds, split_pairs(ds, 0)), NumericError);
}

TEST(Trainer, TotalStepsRoundsUpPartialWindows) {
  DualModel m(tiny(Variant::kBaseline));
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.accumulation_steps = 2;
  Trainer t(m, cfg);
  // 10 examples -> 3 micro-batches -> 2 steps per epoch.
  EXPECT_EQ(t.total_steps(10), 6u);
  EXPECT_EQ(t.total_steps(8), 3u);
}

namespace {

Dataset small_dataset() {
  SyntheticSpec spec;
  spec.n_pairs = 20;
  spec.vocab_words = 30;
  spec.knowledge_len = 4;
  spec.response_len = 3;
  spec.context_len = 2;
  spec.corrupt_count = 1;
  return generate_synthetic(spec);
}

ModelConfig dataset_model(const Dataset& ds, Variant v) {
  ModelConfig c = tiny(v);
  c.encoder.vocab_size = ds.tokenizer.size();
  c.encoder.max_len = 16;
  return c;
}

}  // namespace

TEST(Trainer, RunsAreDeterministicAndWriteCheckpoints) {
  const Dataset ds = small_dataset();
  const Split split = split_pairs(ds, 0);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.accumulation_steps = 2;
  cfg.lr_start = 1e-3;
  cfg.head_dropout = 0.1;

  const fs::path dir = temp_dir("ckpt");
  DualModel a(dataset_model(ds, Variant::kPfDfl));
  const RunRecord ra = Trainer(a, cfg).train(ds, split, dir);
  DualModel b(dataset_model(ds, Variant::kPfDfl));
  const RunRecord rb = Trainer(b, cfg).train(ds, split);

  ASSERT_EQ(ra.epochs.size(), 2u);
  // 16 training pairs -> 8 micro-batches of 2 pairs -> 4 steps per epoch.
  EXPECT_EQ(ra.total_steps, 8u);
  EXPECT_EQ(ra.epochs[0].step_losses.size(), 4u);
  for (std::size_t e = 0; e < 2; ++e) {
    EXPECT_EQ(ra.epochs[e].train_loss, rb.epochs[e].train_loss);
    EXPECT_EQ(ra.epochs[e].selected_features, rb.epochs[e].selected_features);
  }
  ASSERT_TRUE(ra.test.has_value());
  EXPECT_EQ(ra.test->accuracy, rb.test->accuracy);
  EXPECT_EQ(serialize_checkpoint(a), serialize_checkpoint(b));

  for (std::size_t e = 0; e <= 2; ++e) EXPECT_TRUE(fs::exists(checkpoint_path(dir, e))) << e;
  EXPECT_EQ(read_file(checkpoint_path(dir, 2)), serialize_checkpoint(a));
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  for (Variant v : {Variant::kBaseline, Variant::kPfOnly, Variant::kDflOnly, Variant::kPfDfl}) {
    ModelConfig c = tiny(v);
    c.shared_fusion = v == Variant::kPfDfl;
    const DualModel m(c);
    const std::string bytes = serialize_checkpoint(m);
    ASSERT_EQ(bytes.substr(0, 4), "PFDL");
    const DualModel back = deserialize_checkpoint(bytes);
    EXPECT_EQ(serialize_checkpoint(back), bytes);
    const fs::path dir = temp_dir("roundtrip");
    save_checkpoint(m, dir / "m.pfdl");
    const DualModel from_disk = load_checkpoint(dir / "m.pfdl");
    EXPECT_EQ(serialize_checkpoint(from_disk), bytes);
  }
}

TEST(Checkpoint, RejectsCorruptInput) {
  const DualModel m(tiny(Variant::kPfDfl));
  std::string bytes = serialize_checkpoint(m);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad_magic), FormatError);
  std::string bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(deserialize_checkpoint(bad_version), FormatError);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, 6)), FormatError);
}

TEST(Checkpoint, LoadIntoMismatchedModelNamesTensor) {
  const DualModel small(tiny(Variant::kPfDfl));
  ModelConfig wide_cfg = tiny(Variant::kPfDfl);
  wide_cfg.encoder.d_model = 12;
  wide_cfg.encoder.n_heads = 3;
  DualModel wide(wide_cfg);
  try {
    load_checkpoint_into(wide, serialize_checkpoint(small));
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("shape"), std::string::npos) << e.what();
  }
  DualModel pf(tiny(Variant::kPfDfl));
  EXPECT_THROW(load_checkpoint_into(pf, serialize_checkpoint(DualModel(tiny(Variant::kBaseline)))), LoadError);
}
