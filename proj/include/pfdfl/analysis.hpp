#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pfdfl/config.hpp"
#include "pfdfl/data.hpp"
#include "pfdfl/dual_model.hpp"
#include "pfdfl/trainer.hpp"

namespace pfdfl {

/// Splits the dataset with train.seed, sizes the vocabulary from the
/// tokenizer and trains one model.
struct TrainedRun {
  RunRecord record;
  ModelConfig model;
};
TrainedRun train_run(const RunConfig& cfg, const Dataset& ds,
                     const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt);

struct LayerConsistency {
  std::size_t layer = 0;
  std::size_t unique = 0;  // size of the union over epochs
  std::size_t core = 0;    // size of the intersection over epochs
  double ratio = 0.0;      // core / unique, 0 when unique is 0
};

/// Per-layer agreement of the selected feature sets across epochs. Throws
/// AnalysisError with fewer than 2 epochs or without recorded selections.
std::vector<LayerConsistency> consistency_report(const RunRecord& record);
std::string consistency_csv(std::span<const LayerConsistency> rows);

/// Mean ratio over the first and last third of layers (at least one each).
struct DepthTrend {
  double shallow = 0.0;
  double deep = 0.0;
};
DepthTrend depth_trend(std::span<const LayerConsistency> rows);

/// layer,weight rows of one branch (0 = hallucination, 1 = factual) at the
/// final recorded epoch.
std::string layer_weights_csv(const RunRecord& record, std::size_t branch = 0);

/// epoch,train_loss,accuracy,precision,recall,f1,pairwise_accuracy rows
/// of the per-epoch validation metrics.
std::string epoch_metrics_csv(const RunRecord& record);

struct ComplexityReport {
  std::string variant;
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::size_t params = 0;
  std::size_t baseline_params = 0;
  std::uint64_t flops = 0;
  std::uint64_t baseline_flops = 0;
  double param_overhead_pct = 0.0;
  double flop_overhead_pct = 0.0;
};

/// Closed-form forward (eval mode) FLOPs using the same per-op charges as
/// the graph counter, for a batch of full-length sequences.
std::uint64_t flops_estimate(const ModelConfig& cfg, std::size_t batch, std::size_t seq_len);
/// FLOPs counted by running an eval-mode forward pass.
std::uint64_t flops_measured(const ModelConfig& cfg, std::size_t batch, std::size_t seq_len);

ComplexityReport complexity_report(const ModelConfig& cfg, std::size_t batch, std::size_t seq_len);
std::string complexity_csv(std::span<const ComplexityReport> rows);

struct SweepRow {
  double alpha = 0.0;
  std::size_t k = 0;
  EvalReport test;
  EvalReport validation;
  std::vector<std::size_t> unique;  // cumulative distinct features per layer
};

/// Retrains the configured variant once per retention ratio on the same
/// split.
std::vector<SweepRow> ratio_sweep(const RunConfig& cfg, const Dataset& ds, std::span<const double> ratios);
std::string sweep_csv(std::span<const SweepRow> rows);

struct AblationRow {
  std::string variant;
  std::size_t params = 0;
  EvalReport test;
  EvalReport validation;
};

/// Trains baseline, pf_only, dfl_only and pf_dfl on the same split.
std::vector<AblationRow> ablation_matrix(const RunConfig& cfg, const Dataset& ds);
std::string ablation_csv(std::span<const AblationRow> rows);

}  // namespace pfdfl
