#include <gtest/gtest.h>

#include <filesystem>

#include "pfdfl/config.hpp"
#include "pfdfl/errors.hpp"
#include "pfdfl/io.hpp"

using namespace pfdfl;
namespace fs = std::filesystem;

TEST(RunConfig, JsonRoundTripPreservesEveryField) {
  RunConfig cfg;
  cfg.encoder.d_model = 32;
  cfg.train.variant = Variant::kDflOnly;
  cfg.train.alpha = 0.2;
  cfg.train.loss.contrastive = 0.3;
  cfg.data.kind = TemplateKind::kSummary;
  cfg.analysis.ratios = {0.5, 0.1};
  const Json doc = to_json(cfg);
  const RunConfig back = merge_run_config(RunConfig{}, doc);
  EXPECT_EQ(to_json(back), doc);
  EXPECT_EQ(back.encoder.d_model, 32u);
  EXPECT_EQ(back.train.variant, Variant::kDflOnly);
  EXPECT_EQ(back.train.loss.contrastive, 0.3);
  EXPECT_EQ(back.data.kind, TemplateKind::kSummary);
}

TEST(RunConfig, PartialDocumentsOverlayDefaults) {
  const Json doc = Json::parse(R"({"train": {"epochs": 3}})");
  const RunConfig cfg = merge_run_config(RunConfig{}, doc);
  EXPECT_EQ(cfg.train.epochs, 3u);
  EXPECT_EQ(cfg.train.batch_size, 16u);
  EXPECT_EQ(cfg.train.lr_start, 2e-5);
}

TEST(RunConfig, UnknownKeysAndBadTypesAreNamed) {
  try {
    merge_run_config(RunConfig{}, Json::parse(R"({"train": {"epoch": 3}})"));
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("train.epoch"), std::string::npos) << e.what();
  }
  EXPECT_THROW(merge_run_config(RunConfig{}, Json::parse(R"({"optim": {}})")), ParseError);
  EXPECT_THROW(merge_run_config(RunConfig{}, Json::parse(R"({"train": {"epochs": "ten"}})")), ParseError);
  EXPECT_THROW(merge_run_config(RunConfig{}, Json::parse(R"({"train": {"variant": "mystery"}})")), Error);
}

TEST(RunConfig, LoadsFromFile) {
  const fs::path dir = fs::temp_directory_path() / "pfdfl_test_config";
  fs::create_directories(dir);
  write_file_atomic(dir / "c.json", R"({"encoder": {"n_layers": 3}})");
  EXPECT_EQ(load_run_config(dir / "c.json").encoder.n_layers, 3u);
  write_file_atomic(dir / "bad.json", "{not json");
  EXPECT_THROW(load_run_config(dir / "bad.json"), ParseError);
  EXPECT_THROW(load_run_config(dir / "absent.json"), IoError);
}

TEST(RunRecord, JsonRoundTrip) {
  RunRecord r;
  r.variant = "pf_dfl";
  r.alpha = 0.01;
  r.k = 1;
  r.parameters = 123;
  r.total_steps = 4;
  EpochRecord e;
  e.epoch = 1;
  e.train_loss = 2.5;
  e.step_losses = {2.6, 2.4};
  e.validation.accuracy = 0.75;
  e.validation.pairs = 4;
  e.layer_weights = {{0.5, 0.5}, {0.25, 0.75}};
  e.selected_features = {{1, 3}, {2}};
  r.epochs = {e, e};
  r.epochs[1].epoch = 2;
  r.epochs[1].selected_features = {{1}, {4}};
  EvalReport t;
  t.f1 = 0.5;
  r.test = t;
  const Json doc = to_json(r);
  EXPECT_EQ(doc["cumulative_unique"], Json::array({2, 2}));
  const RunRecord back = run_record_from_json(doc);
  EXPECT_EQ(to_json(back), doc);
  r.test.reset();
  EXPECT_TRUE(to_json(r)["test"].is_null());
  EXPECT_FALSE(run_record_from_json(to_json(r)).test.has_value());
}

TEST(ModelConfigJson, RoundTrip) {
  ModelConfig c;
  c.variant = Variant::kPfOnly;
  c.proj_dim = 7;
  c.proj_bias = false;
  c.seed = 99;
  const ModelConfig back = model_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(DumpJson, EndsWithNewline) {
  const std::string s = dump_json(Json::parse(R"({"a": 1})"));
  EXPECT_EQ(s.back(), '\n');
}
