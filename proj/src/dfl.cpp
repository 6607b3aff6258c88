#include "pfdfl/dfl.hpp"

#include <cmath>

#include "pfdfl/errors.hpp"

namespace pfdfl {

void RetentionPolicy::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw ArgumentError("retention ratio alpha must lie in (0, 1], got " + std::to_string(alpha));
  }
}

std::size_t RetentionPolicy::k(std::size_t dim) const {
  validate();
  // The tiny slack keeps products such as 0.2 * 5 = 1.0000000000000002 from
  // rounding up to an extra feature.
  const double raw = alpha * static_cast<double>(dim);
  auto k = static_cast<std::size_t>(std::ceil(raw - 1e-9 * raw));
  if (k < 1) k = 1;
  if (k > dim) k = dim;
  return k;
}

std::vector<double> FeatureMask::dense() const {
  std::vector<double> m(dim, 0.0);
  for (std::size_t i : indices) m[i] = 1.0;
  return m;
}

Tensor feature_diff(Graph& g, const Tensor& h_hall, const Tensor& h_fact) {
  return g.abs(g.sub(h_hall, h_fact));
}

FeatureMask select_features(std::span<const double> delta, const RetentionPolicy& policy, std::size_t layer_index) {
  FeatureMask m;
  m.layer_index = layer_index;
  m.dim = delta.size();
  m.indices = topk_indices(delta, policy.k(delta.size()));
  return m;
}

Tensor apply_mask(Graph& g, const Tensor& h, const FeatureMask& mask) {
  if (h.size() != mask.dim) {
    throw DimensionError("apply_mask: mask over " + std::to_string(mask.dim) + " dims applied to " +
                         shape_string(h.shape()));
  }
  return g.mul(h, Tensor::from(h.shape(), mask.dense()));
}

MaskedLayer mask_layer(Graph& g, const Tensor& h_hall, const Tensor& h_fact, const RetentionPolicy& policy,
                       std::size_t layer_index) {
  if (h_hall.shape() != h_fact.shape() || h_hall.rank() != 2) {
    throw DimensionError("mask_layer: branch states " + shape_string(h_hall.shape()) + " and " +
                         shape_string(h_fact.shape()) + " differ or are not 2-D");
  }
  const std::size_t batch = h_hall.dim(0), dim = h_hall.dim(1);
  MaskedLayer out;
  std::vector<double> dense(batch * dim, 0.0);
  std::vector<double> delta(dim);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < dim; ++j) delta[j] = std::fabs(h_hall[b * dim + j] - h_fact[b * dim + j]);
    FeatureMask m = select_features(delta, policy, layer_index);
    g.note_selection(m.indices);
    for (std::size_t j : m.indices) dense[b * dim + j] = 1.0;
    out.masks.push_back(std::move(m));
  }
  g.add_flops(2 * flop_cost::kElementwise * batch * dim);  // |h_hall - h_fact|
  Tensor mask = Tensor::from(h_hall.shape(), std::move(dense));
  out.hall = g.mul(h_hall, mask);
  out.fact = g.mul(h_fact, mask);
  return out;
}

}  // namespace pfdfl
