#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pfdfl/graph.hpp"
#include "pfdfl/params.hpp"

namespace pfdfl {

/// Sum_i softmax(layer_logits)_i * projected_i.
/// Throws ArgumentError on an empty list, DimensionError on a count mismatch.
Tensor fuse(Graph& g, std::span<const Tensor> projected, const Tensor& layer_logits);

/// Projected fusion over a stack of layer states.
///
/// Each of the n_states inputs gets its own projection relu(h W_i + b_i)
/// into a shared width; a softmax over one learnable logit per state then
/// weights the projections. Logits start at zero, so initial weights are
/// uniform.
class PFBlock {
 public:
  PFBlock(std::size_t n_states, std::size_t in_dim, std::size_t out_dim, bool bias, Rng& init_rng);

  std::size_t n_states() const { return w_.size(); }
  std::size_t in_dim() const { return in_dim_; }
  std::size_t out_dim() const { return out_dim_; }
  bool has_bias() const { return bias_; }

  /// h: [rows x in_dim] -> [rows x out_dim].
  Tensor project(Graph& g, const Tensor& h, std::size_t layer_index) const;
  /// Projects every state and fuses them.
  Tensor forward(Graph& g, std::span<const Tensor> states) const;

  const Tensor& layer_logits() const { return logits_; }
  /// Softmax-normalized layer weights in layer order.
  std::vector<double> layer_weights() const;

  ParamList parameters(const std::string& prefix) const;

  /// Closed-form parameter count (projections plus logits).
  static std::size_t param_count(std::size_t n_states, std::size_t in_dim, std::size_t out_dim, bool bias);

 private:
  std::size_t in_dim_, out_dim_;
  bool bias_;
  std::vector<Tensor> w_, b_;
  Tensor logits_;
};

}  // namespace pfdfl
