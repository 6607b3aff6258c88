#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pfdfl/dfl.hpp"
#include "pfdfl/encoder.hpp"
#include "pfdfl/pf_block.hpp"

namespace pfdfl {

/// Ablation variants.
///   baseline - one encoder, final-layer CLS, both heads on it;
///   pf_only  - two encoders, learned projected fusion of unmasked layers;
///   dfl_only - two encoders, differential masking, fixed uniform mean of
///              the masked layers (no projection);
///   pf_dfl   - two encoders, masking followed by projected fusion.
enum class Variant { kBaseline, kPfOnly, kDflOnly, kPfDfl };

std::string_view variant_name(Variant v);
/// Accepts baseline, pf, pf_only, dfl, dfl_only, pf_dfl.
Variant parse_variant(std::string_view name);
inline bool uses_pf(Variant v) { return v == Variant::kPfOnly || v == Variant::kPfDfl; }
inline bool uses_dfl(Variant v) { return v == Variant::kDflOnly || v == Variant::kPfDfl; }
inline bool uses_second_encoder(Variant v) { return v != Variant::kBaseline; }

struct ModelConfig {
  EncoderConfig encoder;
  Variant variant = Variant::kPfDfl;
  double alpha = 0.01;
  std::size_t proj_dim = 0;  // 0 means d_model
  bool proj_bias = true;
  /// Both heads read one fused vector built from the masked branch
  /// difference instead of each branch feeding its own head.
  bool shared_fusion = false;
  double head_dropout = 0.1;
  /// Start both encoders from the same weights.
  bool identical_init = true;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t projected_dim() const { return proj_dim == 0 ? encoder.d_model : proj_dim; }
  /// Width of the vector fed to the score heads.
  std::size_t head_input_dim() const { return uses_pf(variant) ? projected_dim() : encoder.d_model; }
};

/// Weights of the combined training objective.
struct LossWeights {
  double hall = 1.0;
  double correct = 1.0;
  double diff = 1.0;
  double contrastive = 0.1;
  double margin = 0.5;
};

struct PairScores {
  double s_hall = 0.0;
  double s_correct = 0.0;
  /// Hallucination iff s_hall - s_correct > 0.
  bool decision = false;
};

/// in -> in/2 -> 1 perceptron: linear, layer norm, GELU, dropout, linear,
/// sigmoid.
class ScoreHead {
 public:
  ScoreHead(std::size_t in_dim, double dropout_p, Rng& init_rng);

  /// x: [batch x in_dim] -> [batch] scores in (0, 1).
  Tensor forward(Graph& g, const Tensor& x, bool train, Rng& dropout_rng) const;
  ParamList parameters(const std::string& prefix) const;
  static std::size_t param_count(std::size_t in_dim);
  static std::size_t hidden_dim(std::size_t in_dim) { return in_dim / 2 == 0 ? 1 : in_dim / 2; }

 private:
  double dropout_p_;
  Tensor w1_, b1_, ln_g_, ln_b_, w2_, b2_;
};

struct ModelOutput {
  Tensor s_hall;     // [batch]
  Tensor s_correct;  // [batch]
  /// masks[layer][sample]; empty for variants without masking.
  std::vector<std::vector<FeatureMask>> masks;

  std::vector<PairScores> scores() const;
};

/// Dual-encoder hallucination classifier.
///
/// All sub-modules are always constructed so that variants built from one
/// seed share parameter values; parameters() lists only those the variant
/// actually uses.
class DualModel {
 public:
  explicit DualModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  RetentionPolicy policy() const { return RetentionPolicy{cfg_.alpha}; }

  ModelOutput forward(Graph& g, const TokenBatch& batch, bool train, Rng& dropout_rng) const;

  /// Active parameters in a fixed order (checkpoint and optimizer order).
  ParamList parameters() const;
  /// Every constructed parameter, active or not.
  ParamList all_parameters() const;

  /// Effective per-layer fusion weights of a branch (0 = hallucination,
  /// 1 = factual): the softmax of the learned logits for PF variants, the
  /// fixed uniform weights for dfl_only and a one-hot on the final layer
  /// for baseline.
  std::vector<double> layer_weights(std::size_t branch) const;

  const Encoder& encoder(std::size_t branch) const { return branch == 0 ? enc_hall_ : enc_fact_; }
  const PFBlock& pf(std::size_t branch) const { return branch == 0 ? pf_hall_ : pf_fact_; }

  /// Closed-form count of the active parameters for a configuration.
  static std::size_t param_count(const ModelConfig& cfg);

 private:
  Tensor uniform_fuse(Graph& g, std::span<const Tensor> states) const;

  ModelConfig cfg_;
  Encoder enc_hall_;
  Encoder enc_fact_;
  PFBlock pf_hall_;
  PFBlock pf_fact_;
  ScoreHead head_hall_;
  ScoreHead head_correct_;
};

/// Combined objective over a batch.
///
/// L = hall * BCE(s_hall, y) + correct * BCE(s_correct, 1 - y)
///   + diff * MSE(s_hall - s_correct, 2y - 1) + contrastive * C,
/// where C is the mean over matched pairs in the batch of
/// max(0, margin - (d_pos - d_neg)), d = s_hall - s_correct. A pair key
/// seen with both labels forms pairs in order of appearance; unmatched
/// members contribute nothing. Throws ValidationError on labels outside
/// {0, 1}.
Tensor pair_loss(Graph& g, const ModelOutput& out, std::span<const int> labels, std::span<const std::size_t> pair_keys,
                 const LossWeights& weights);

}  // namespace pfdfl
