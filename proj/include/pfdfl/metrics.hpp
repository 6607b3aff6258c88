#pragma once

#include <cstddef>
#include <span>
#include <string>

namespace pfdfl {

/// Binary classification report; the positive class is "hallucinated".
struct EvalReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double pairwise_accuracy = 0.0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t pairs = 0;
};

/// Builds the report. Zero denominators yield 0 rather than NaN. Pairwise
/// accuracy is the fraction of pair ids whose two members are both correct.
/// Throws ValidationError on length mismatch, non-binary values or a pair id
/// that does not hold exactly one member of each label.
EvalReport classify_report(std::span<const int> predictions, std::span<const int> labels,
                           std::span<const std::string> pair_ids);

}  // namespace pfdfl
