#include "pfdfl/pf_block.hpp"

#include <cmath>

#include "pfdfl/errors.hpp"

namespace pfdfl {

Tensor fuse(Graph& g, std::span<const Tensor> projected, const Tensor& layer_logits) {
  if (projected.empty()) throw ArgumentError("fuse: no projected layers");
  if (layer_logits.size() != projected.size()) {
    throw DimensionError("fuse: " + std::to_string(projected.size()) + " layers but " +
                         std::to_string(layer_logits.size()) + " logits");
  }
  return g.weighted_sum(projected, g.softmax(layer_logits));
}

PFBlock::PFBlock(std::size_t n_states, std::size_t in_dim, std::size_t out_dim, bool bias, Rng& rng)
    : in_dim_(in_dim), out_dim_(out_dim), bias_(bias) {
  if (n_states == 0 || in_dim == 0 || out_dim == 0) throw ArgumentError("PF block: sizes must be positive");
  const double sd = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (std::size_t i = 0; i < n_states; ++i) {
    w_.push_back(normal_param({in_dim, out_dim}, sd, rng));
    if (bias_) b_.push_back(const_param({out_dim}, 0.0));
  }
  logits_ = const_param({n_states}, 0.0);
}

Tensor PFBlock::project(Graph& g, const Tensor& h, std::size_t layer_index) const {
  if (layer_index >= w_.size()) {
    throw ArgumentError("PF block: layer index " + std::to_string(layer_index) + " out of range " +
                        std::to_string(w_.size()));
  }
  Tensor z = g.matmul(h, w_[layer_index]);
  if (bias_) z = g.add_bias(z, b_[layer_index]);
  return g.relu(z);
}

Tensor PFBlock::forward(Graph& g, std::span<const Tensor> states) const {
  if (states.size() != w_.size()) {
    throw DimensionError("PF block: expected " + std::to_string(w_.size()) + " states, got " +
                         std::to_string(states.size()));
  }
  std::vector<Tensor> projected;
  projected.reserve(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) projected.push_back(project(g, states[i], i));
  return fuse(g, projected, logits_);
}

std::vector<double> PFBlock::layer_weights() const {
  Graph g(false);
  Tensor w = g.softmax(logits_);
  return {w.data().begin(), w.data().end()};
}

ParamList PFBlock::parameters(const std::string& prefix) const {
  ParamList ps;
  for (std::size_t i = 0; i < w_.size(); ++i) {
    ps.push_back({prefix + "proj" + std::to_string(i) + ".weight", w_[i]});
    if (bias_) ps.push_back({prefix + "proj" + std::to_string(i) + ".bias", b_[i]});
  }
  ps.push_back({prefix + "layer_logits", logits_});
  return ps;
}

std::size_t PFBlock::param_count(std::size_t n_states, std::size_t in_dim, std::size_t out_dim, bool bias) {
  return n_states * (in_dim * out_dim + (bias ? out_dim : 0)) + n_states;
}

}  // namespace pfdfl
