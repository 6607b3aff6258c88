#include "pfdfl/metrics.hpp"

#include <map>

#include "pfdfl/errors.hpp"

namespace pfdfl {

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

EvalReport classify_report(std::span<const int> predictions, std::span<const int> labels,
                           std::span<const std::string> pair_ids) {
  if (predictions.size() != labels.size() || labels.size() != pair_ids.size()) {
    throw ValidationError("classify_report: predictions, labels and pair ids differ in length");
  }
  struct Members {
    int seen_labels = 0;  // bit 0: factual, bit 1: hallucinated
    int count = 0;
    bool all_correct = true;
  };
  std::map<std::string, Members> pairs;
  EvalReport r;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int p = predictions[i], y = labels[i];
    if ((p != 0 && p != 1) || (y != 0 && y != 1)) {
      throw ValidationError("classify_report: non-binary value at position " + std::to_string(i));
    }
    if (p == 1 && y == 1) ++r.tp;
    if (p == 1 && y == 0) ++r.fp;
    if (p == 0 && y == 0) ++r.tn;
    if (p == 0 && y == 1) ++r.fn;
    Members& m = pairs[pair_ids[i]];
    m.seen_labels |= 1 << y;
    ++m.count;
    m.all_correct = m.all_correct && p == y;
  }
  std::size_t both = 0;
  for (const auto& [id, m] : pairs) {
    if (m.count != 2 || m.seen_labels != 3) {
      throw ValidationError("classify_report: pair '" + id + "' does not hold one factual and one hallucinated member");
    }
    if (m.all_correct) ++both;
  }
  r.pairs = pairs.size();
  r.accuracy = ratio(r.tp + r.tn, labels.size());
  r.precision = ratio(r.tp, r.tp + r.fp);
  r.recall = ratio(r.tp, r.tp + r.fn);
  r.f1 = r.precision + r.recall == 0.0 ? 0.0 : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  r.pairwise_accuracy = ratio(both, r.pairs);
  return r;
}

}  // namespace pfdfl
