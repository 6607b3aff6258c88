#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pfdfl/graph.hpp"

namespace pfdfl {

/// Fraction of feature dimensions kept per layer.
struct RetentionPolicy {
  double alpha = 0.01;

  /// Throws ArgumentError unless alpha is in (0, 1].
  void validate() const;
  /// max(1, ceil(alpha * dim)).
  std::size_t k(std::size_t dim) const;
};

/// Selected dimensions for one sample at one layer.
struct FeatureMask {
  std::size_t layer_index = 0;
  std::size_t dim = 0;
  std::vector<std::size_t> indices;  // ascending, exactly k entries

  std::size_t k() const { return indices.size(); }
  /// Dense 0/1 vector of length dim.
  std::vector<double> dense() const;
};

/// |h_hall - h_fact|, recorded on the graph.
Tensor feature_diff(Graph& g, const Tensor& h_hall, const Tensor& h_fact);

/// Top-k selection on one difference vector.
FeatureMask select_features(std::span<const double> delta, const RetentionPolicy& policy,
                            std::size_t layer_index = 0);

/// h * mask for a single vector h[dim].
Tensor apply_mask(Graph& g, const Tensor& h, const FeatureMask& mask);

/// Result of masking one layer for a whole batch.
struct MaskedLayer {
  Tensor hall;
  Tensor fact;
  std::vector<FeatureMask> masks;  // one per sample
};

/// Per-sample differential masking of a layer.
///
/// h_hall and h_fact are [batch x dim]. The difference is evaluated on
/// values only: the selection never carries gradient. Both branches are
/// multiplied by the same per-sample mask.
MaskedLayer mask_layer(Graph& g, const Tensor& h_hall, const Tensor& h_fact, const RetentionPolicy& policy,
                       std::size_t layer_index);

}  // namespace pfdfl
