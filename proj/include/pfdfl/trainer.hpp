#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "pfdfl/data.hpp"
#include "pfdfl/dual_model.hpp"
#include "pfdfl/metrics.hpp"

namespace pfdfl {

/// Optimization recipe. Defaults follow the reference training setup.
struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;  // examples per micro-batch; must be even
  std::size_t accumulation_steps = 8;
  double lr_start = 2e-5;
  double lr_min = 1e-6;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;

  Variant variant = Variant::kPfDfl;
  double alpha = 0.01;
  std::size_t proj_dim = 0;
  bool proj_bias = true;
  bool shared_fusion = false;
  double head_dropout = 0.1;
  LossWeights loss;

  void validate() const;
};

/// Model configuration implied by an encoder config and a recipe.
ModelConfig make_model_config(const EncoderConfig& enc, const TrainConfig& cfg);

/// lr_min + (lr_start - lr_min) * (1 + cos(pi * step / total)) / 2.
double cosine_lr(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t t = 0;
};

/// One AdamW update from the gradients stored on the parameters. Weight
/// decay is decoupled: p -= lr * wd * p precedes the moment update.
void adamw_step(const ParamList& params, AdamState& state, double lr, const TrainConfig& cfg);

/// Token sequences plus labels and pairing for a subset of a dataset.
struct EncodedSet {
  std::vector<std::vector<std::size_t>> tokens;
  std::vector<int> labels;
  std::vector<std::size_t> pair_keys;
  std::vector<std::string> pair_ids;

  std::size_t size() const { return tokens.size(); }
  /// Selects examples by index, keeping their order.
  static EncodedSet build(const Dataset& ds, std::span<const std::size_t> indices, std::size_t max_len);
};

struct EvalResult {
  EvalReport report;
  std::vector<int> predictions;
  std::vector<PairScores> scores;
  /// Union over samples of the selected indices, one set per layer.
  std::vector<std::set<std::size_t>> selected;
};

/// Eval-mode pass over a set (no dropout, no graph recording).
EvalResult evaluate(const DualModel& model, const EncodedSet& set, std::size_t batch_size = 64);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::vector<double> step_losses;  // mean micro-batch loss per optimizer step
  EvalReport validation;
  std::vector<std::vector<double>> layer_weights;        // per branch
  std::vector<std::vector<std::size_t>> selected_features;  // per layer, ascending
};

struct RunRecord {
  std::string variant;
  double alpha = 0.0;
  std::size_t k = 0;  // features kept per layer and sample
  std::size_t parameters = 0;
  std::size_t total_steps = 0;
  std::vector<EpochRecord> epochs;
  std::optional<EvalReport> test;

  /// Union over all recorded epochs, per layer.
  std::vector<std::size_t> cumulative_unique() const;
};

/// Runs the full optimization loop.
///
/// Pairs are shuffled per epoch and both members always share a
/// micro-batch. Every accumulation_steps micro-batches the averaged gradient
/// drives one AdamW step at the cosine-scheduled rate. After each epoch the
/// validation set is evaluated and, if checkpoint_dir is set, a checkpoint
/// is written (epoch 0 = initial weights). Throws NumericError on a
/// non-finite loss.
class Trainer {
 public:
  Trainer(DualModel& model, const TrainConfig& cfg);

  RunRecord train(const Dataset& ds, const Split& split,
                  const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt);

  /// Total optimizer steps for a training set of n_examples.
  std::size_t total_steps(std::size_t n_examples) const;

  /// Runs forward+backward on one micro-batch, accumulating gradients
  /// scaled by grad_scale. Returns the unscaled loss.
  double accumulate(const EncodedSet& set, std::span<const std::size_t> members, double grad_scale);

  /// Applies one optimizer step with the accumulated gradients and clears
  /// them.
  void step(double lr);

 private:
  DualModel& model_;
  TrainConfig cfg_;
  ParamList params_;
  AdamState adam_;
  Rng dropout_rng_;
};

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t epoch);

}  // namespace pfdfl
