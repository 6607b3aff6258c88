#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pfdfl/dual_model.hpp"

namespace pfdfl {

struct GradcheckOptions {
  std::size_t cases = 100;
  double h = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error, so that gradients near zero
  /// are compared absolutely.
  double floor = 1e-6;
  std::uint64_t seed = 0;
};

struct GradcheckResult {
  std::string name;
  std::size_t cases = 0;
  std::size_t coords = 0;   // coordinates compared
  std::size_t skipped = 0;  // coordinates whose +-h step crossed a kink
  double max_rel_error = 0.0;
  double tolerance = 0.0;

  bool passed() const { return coords > 0 && max_rel_error < tolerance; }
};

/// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor);

/// Names accepted by gradcheck_op.
std::vector<std::string> gradcheck_op_names();

/// Central-difference check of one graph op on random inputs drawn from
/// [-2, 2] (probabilities for the BCE input). Points where the +-h step
/// changes a discrete decision are skipped and counted.
GradcheckResult gradcheck_op(const std::string& op, const GradcheckOptions& opt);

/// Checks every parameter coordinate of a model against the full training
/// loss on a small random batch of pairs (eval mode, so no dropout).
GradcheckResult gradcheck_model(const ModelConfig& cfg, std::size_t n_pairs, std::size_t seq_len,
                                const GradcheckOptions& opt);

}  // namespace pfdfl
