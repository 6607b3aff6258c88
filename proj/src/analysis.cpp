#include "pfdfl/analysis.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "pfdfl/errors.hpp"
#include "pfdfl/graph.hpp"

namespace pfdfl {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::uint64_t encoder_flops(const EncoderConfig& e, std::uint64_t B, std::uint64_t L) {
  const std::uint64_t D = e.d_model, F = e.d_ff, H = e.n_heads, dh = D / H;
  const std::uint64_t rows = B * L;
  std::uint64_t f = flop_cost::kElementwise * rows * D  // token + position
                    + flop_cost::kLayerNorm * rows * D;
  std::uint64_t block = 0;
  block += flop_cost::kLayerNorm * rows * D;                          // ln1
  block += 4 * (2 * rows * D * D + flop_cost::kElementwise * rows * D);  // q, k, v, o
  block += B * H * L * L * (4 * dh + flop_cost::kSoftmax);            // attention
  block += flop_cost::kElementwise * rows * D;                        // residual
  block += flop_cost::kLayerNorm * rows * D;                          // ln2
  block += 2 * rows * D * F + flop_cost::kElementwise * rows * F;     // w1
  block += flop_cost::kGelu * rows * F;
  block += 2 * rows * F * D + flop_cost::kElementwise * rows * D;     // w2
  block += flop_cost::kElementwise * rows * D;                        // residual
  return f + e.n_layers * block;
}

std::uint64_t head_flops(std::uint64_t in, std::uint64_t B) {
  const std::uint64_t h = ScoreHead::hidden_dim(in);
  return 2 * B * in * h + flop_cost::kElementwise * B * h + flop_cost::kLayerNorm * B * h + flop_cost::kGelu * B * h +
         2 * B * h + flop_cost::kElementwise * B + flop_cost::kSigmoid * B;
}

std::uint64_t pf_flops(const ModelConfig& cfg, std::uint64_t B, std::uint64_t n) {
  const std::uint64_t D = cfg.encoder.d_model, P = cfg.projected_dim();
  std::uint64_t per_state = 2 * B * D * P + flop_cost::kElementwise * B * P;  // matmul + relu
  if (cfg.proj_bias) per_state += flop_cost::kElementwise * B * P;
  return n * per_state + flop_cost::kSoftmax * n + flop_cost::kWeightedSum * B * P * n;
}

std::vector<std::string> row_strings(const EvalReport& r) {
  return {fmt(r.accuracy), fmt(r.precision), fmt(r.recall), fmt(r.f1), fmt(r.pairwise_accuracy)};
}

std::string join(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) s += ',';
    s += cells[i];
  }
  return s + "\n";
}

}  // namespace

TrainedRun train_run(const RunConfig& cfg, const Dataset& ds, const std::optional<std::filesystem::path>& checkpoint_dir) {
  cfg.validate();
  EncoderConfig enc = cfg.encoder;
  enc.vocab_size = ds.tokenizer.size();
  TrainedRun run;
  run.model = make_model_config(enc, cfg.train);
  DualModel model(run.model);
  const Split split = split_pairs(ds, cfg.train.seed);
  Trainer trainer(model, cfg.train);
  run.record = trainer.train(ds, split, checkpoint_dir);
  return run;
}

std::vector<LayerConsistency> consistency_report(const RunRecord& record) {
  if (record.epochs.size() < 2) {
    throw AnalysisError("consistency needs at least 2 epochs, record has " + std::to_string(record.epochs.size()));
  }
  const std::size_t n_layers = record.epochs.front().selected_features.size();
  if (n_layers == 0) throw AnalysisError("record holds no feature selections (variant without masking?)");
  std::vector<LayerConsistency> rows;
  for (std::size_t l = 0; l < n_layers; ++l) {
    std::set<std::size_t> uni, core;
    bool first = true;
    for (const EpochRecord& e : record.epochs) {
      if (e.selected_features.size() != n_layers) throw AnalysisError("epochs disagree on layer count");
      const std::set<std::size_t> s(e.selected_features[l].begin(), e.selected_features[l].end());
      uni.insert(s.begin(), s.end());
      if (first) {
        core = s;
        first = false;
      } else {
        std::set<std::size_t> keep;
        std::set_intersection(core.begin(), core.end(), s.begin(), s.end(), std::inserter(keep, keep.begin()));
        core = std::move(keep);
      }
    }
    LayerConsistency c;
    c.layer = l;
    c.unique = uni.size();
    c.core = core.size();
    c.ratio = c.unique == 0 ? 0.0 : static_cast<double>(c.core) / static_cast<double>(c.unique);
    rows.push_back(c);
  }
  return rows;
}

std::string consistency_csv(std::span<const LayerConsistency> rows) {
  std::string s = "layer,unique,core,ratio\n";
  for (const auto& r : rows) s += join({std::to_string(r.layer), std::to_string(r.unique), std::to_string(r.core), fmt(r.ratio)});
  return s;
}

DepthTrend depth_trend(std::span<const LayerConsistency> rows) {
  if (rows.empty()) throw AnalysisError("depth_trend: no layers");
  const std::size_t third = std::max<std::size_t>(1, rows.size() / 3);
  DepthTrend t;
  for (std::size_t i = 0; i < third; ++i) {
    t.shallow += rows[i].ratio;
    t.deep += rows[rows.size() - 1 - i].ratio;
  }
  t.shallow /= static_cast<double>(third);
  t.deep /= static_cast<double>(third);
  return t;
}

std::string layer_weights_csv(const RunRecord& record, std::size_t branch) {
  if (record.epochs.empty()) throw AnalysisError("record holds no epochs");
  if (branch > 1) throw ArgumentError("branch must be 0 (hallucination) or 1 (factual)");
  const EpochRecord& e = record.epochs.back();
  if (e.layer_weights.size() <= branch) throw AnalysisError("record holds no layer weights");
  std::string s = "layer,weight\n";
  for (std::size_t l = 0; l < e.layer_weights[branch].size(); ++l) {
    s += join({std::to_string(l), fmt(e.layer_weights[branch][l])});
  }
  return s;
}

std::string epoch_metrics_csv(const RunRecord& record) {
  std::string s = "epoch,train_loss,accuracy,precision,recall,f1,pairwise_accuracy\n";
  for (const EpochRecord& e : record.epochs) {
    std::vector<std::string> cells{std::to_string(e.epoch), fmt(e.train_loss)};
    for (auto& c : row_strings(e.validation)) cells.push_back(std::move(c));
    s += join(cells);
  }
  return s;
}

std::uint64_t flops_estimate(const ModelConfig& cfg, std::size_t batch, std::size_t seq_len) {
  cfg.validate();
  if (batch == 0 || seq_len == 0 || seq_len > cfg.encoder.max_len) {
    throw ArgumentError("flops_estimate: batch must be positive and seq_len within 1..max_len");
  }
  const std::uint64_t B = batch, D = cfg.encoder.d_model, n = cfg.encoder.n_layers + 1;
  const std::uint64_t enc = encoder_flops(cfg.encoder, B, seq_len);
  const std::uint64_t heads = 2 * head_flops(cfg.head_input_dim(), B);
  const Variant v = cfg.variant;
  if (v == Variant::kBaseline) return enc + heads;
  std::uint64_t f = 2 * enc + heads;
  if (uses_dfl(v)) f += n * 4 * flop_cost::kElementwise * B * D;  // difference, abs, two mask products
  const std::uint64_t fuse = uses_pf(v) ? pf_flops(cfg, B, n) : flop_cost::kWeightedSum * B * D * n;
  if (cfg.shared_fusion) {
    f += n * flop_cost::kElementwise * B * D + fuse;
  } else {
    f += 2 * fuse;
  }
  return f;
}

std::uint64_t flops_measured(const ModelConfig& cfg, std::size_t batch, std::size_t seq_len) {
  DualModel model(cfg);
  Rng rng = Rng::derive(cfg.seed, "flops.tokens");
  std::vector<std::vector<std::size_t>> seqs(batch);
  for (auto& s : seqs) {
    s.push_back(special::kCls);
    while (s.size() < seq_len) s.push_back(special::kCount + rng.below(cfg.encoder.vocab_size - special::kCount));
  }
  TokenBatch tb = TokenBatch::from_sequences(seqs, cfg.encoder.max_len);
  Graph g(false);
  model.forward(g, tb, false, rng);
  return g.flops();
}

ComplexityReport complexity_report(const ModelConfig& cfg, std::size_t batch, std::size_t seq_len) {
  ModelConfig base = cfg;
  base.variant = Variant::kBaseline;
  ComplexityReport r;
  r.variant = std::string(variant_name(cfg.variant));
  r.batch = batch;
  r.seq_len = seq_len;
  r.params = DualModel::param_count(cfg);
  r.baseline_params = DualModel::param_count(base);
  r.flops = flops_estimate(cfg, batch, seq_len);
  r.baseline_flops = flops_estimate(base, batch, seq_len);
  r.param_overhead_pct = 100.0 * (static_cast<double>(r.params) / static_cast<double>(r.baseline_params) - 1.0);
  r.flop_overhead_pct = 100.0 * (static_cast<double>(r.flops) / static_cast<double>(r.baseline_flops) - 1.0);
  return r;
}

std::string complexity_csv(std::span<const ComplexityReport> rows) {
  std::string s = "variant,batch,seq_len,params,baseline_params,param_overhead_pct,flops,baseline_flops,flop_overhead_pct\n";
  for (const auto& r : rows) {
    s += join({r.variant, std::to_string(r.batch), std::to_string(r.seq_len), std::to_string(r.params),
               std::to_string(r.baseline_params), fmt(r.param_overhead_pct), std::to_string(r.flops),
               std::to_string(r.baseline_flops), fmt(r.flop_overhead_pct)});
  }
  return s;
}

namespace {

RunConfig with_analysis_epochs(const RunConfig& cfg) {
  RunConfig c = cfg;
  if (c.analysis.epochs != 0) c.train.epochs = c.analysis.epochs;
  return c;
}

}  // namespace

std::vector<SweepRow> ratio_sweep(const RunConfig& cfg, const Dataset& ds, std::span<const double> ratios) {
  if (ratios.empty()) throw ArgumentError("ratio_sweep: no ratios given");
  std::vector<SweepRow> rows;
  for (double a : ratios) {
    RunConfig c = with_analysis_epochs(cfg);
    c.train.alpha = a;
    if (!uses_dfl(c.train.variant)) c.train.variant = Variant::kPfDfl;
    TrainedRun run = train_run(c, ds);
    SweepRow row;
    row.alpha = a;
    row.k = run.record.k;
    row.validation = run.record.epochs.back().validation;
    row.test = run.record.test.value_or(EvalReport{});
    row.unique = run.record.cumulative_unique();
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string s = "alpha,k,val_accuracy,accuracy,precision,recall,f1,pairwise_accuracy,mean_unique\n";
  for (const auto& r : rows) {
    double mean_unique = 0.0;
    for (std::size_t u : r.unique) mean_unique += static_cast<double>(u);
    if (!r.unique.empty()) mean_unique /= static_cast<double>(r.unique.size());
    std::vector<std::string> cells{fmt(r.alpha), std::to_string(r.k), fmt(r.validation.accuracy)};
    for (auto& c : row_strings(r.test)) cells.push_back(std::move(c));
    cells.push_back(fmt(mean_unique));
    s += join(cells);
  }
  return s;
}

std::vector<AblationRow> ablation_matrix(const RunConfig& cfg, const Dataset& ds) {
  std::vector<AblationRow> rows;
  for (Variant v : {Variant::kBaseline, Variant::kPfOnly, Variant::kDflOnly, Variant::kPfDfl}) {
    RunConfig c = with_analysis_epochs(cfg);
    c.train.variant = v;
    TrainedRun run = train_run(c, ds);
    AblationRow row;
    row.variant = std::string(variant_name(v));
    row.params = run.record.parameters;
    row.validation = run.record.epochs.back().validation;
    row.test = run.record.test.value_or(EvalReport{});
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::string s = "variant,params,val_accuracy,accuracy,precision,recall,f1,pairwise_accuracy\n";
  for (const auto& r : rows) {
    std::vector<std::string> cells{r.variant, std::to_string(r.params), fmt(r.validation.accuracy)};
    for (auto& c : row_strings(r.test)) cells.push_back(std::move(c));
    s += join(cells);
  }
  return s;
}

}  // namespace pfdfl
