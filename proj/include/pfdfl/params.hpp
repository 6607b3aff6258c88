#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "pfdfl/rng.hpp"
#include "pfdfl/tensor.hpp"

namespace pfdfl {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Ordered parameter listing; order is the checkpoint and optimizer order.
using ParamList = std::vector<NamedTensor>;

inline std::size_t count_parameters(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.size();
  return n;
}

inline void zero_grads(const ParamList& params) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

/// Trainable tensor with N(0, stddev^2) entries.
inline Tensor normal_param(Shape shape, double stddev, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

inline Tensor const_param(Shape shape, double value) { return Tensor::filled(std::move(shape), value, true); }

/// Copies values (not gradients) from src into dst; shapes must match.
void copy_values(const ParamList& src, const ParamList& dst);

}  // namespace pfdfl
