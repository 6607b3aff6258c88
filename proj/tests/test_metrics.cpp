#include <gtest/gtest.h>

#include <map>

#include "pfdfl/errors.hpp"
#include "pfdfl/metrics.hpp"
#include "pfdfl/rng.hpp"

using namespace pfdfl;

namespace {

struct Oracle {
  double accuracy, precision, recall, f1, pairwise;
};

// Straightforward recomputation from the confusion counts.
Oracle oracle(const std::vector<int>& pred, const std::vector<int>& label, const std::vector<std::string>& ids) {
  double tp = 0, fp = 0, tn = 0, fn = 0;
  std::map<std::string, int> wrong, seen;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == 1 && label[i] == 1) ++tp;
    if (pred[i] == 1 && label[i] == 0) ++fp;
    if (pred[i] == 0 && label[i] == 0) ++tn;
    if (pred[i] == 0 && label[i] == 1) ++fn;
    ++seen[ids[i]];
    wrong[ids[i]] += pred[i] != label[i];
  }
  Oracle o{};
  o.accuracy = (tp + tn) / static_cast<double>(pred.size());
  o.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  o.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  o.f1 = o.precision + o.recall > 0 ? 2 * o.precision * o.recall / (o.precision + o.recall) : 0.0;
  double both = 0;
  for (const auto& [id, w] : wrong) both += w == 0;
  o.pairwise = both / static_cast<double>(seen.size());
  return o;
}

}  // namespace

TEST(Metrics, MatchesOracleOnRandomConfusions) {
  Rng rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t pairs = 1 + rng.below(30);
    std::vector<int> pred, label;
    std::vector<std::string> ids;
    const double bias = rng.uniform(0.0, 1.0);
    for (std::size_t p = 0; p < pairs; ++p)
      for (int l : {0, 1}) {
        label.push_back(l);
        pred.push_back(rng.uniform(0.0, 1.0) < bias ? l : static_cast<int>(rng.below(2)));
        ids.push_back("q" + std::to_string(p));
      }
    const EvalReport r = classify_report(pred, label, ids);
    const Oracle o = oracle(pred, label, ids);
    EXPECT_NEAR(r.accuracy, o.accuracy, 1e-12);
    EXPECT_NEAR(r.precision, o.precision, 1e-12);
    EXPECT_NEAR(r.recall, o.recall, 1e-12);
    EXPECT_NEAR(r.f1, o.f1, 1e-12);
    EXPECT_NEAR(r.pairwise_accuracy, o.pairwise, 1e-12);
    EXPECT_LE(r.pairwise_accuracy, r.accuracy + 1e-12);
    EXPECT_EQ(r.tp + r.fp + r.tn + r.fn, pred.size());
    EXPECT_EQ(r.pairs, pairs);
  }
}

TEST(Metrics, ZeroDenominatorsGiveZero) {
  const std::vector<int> pred{0, 0}, label{0, 1};
  const std::vector<std::string> ids{"a", "a"};
  const EvalReport r = classify_report(pred, label, ids);
  EXPECT_EQ(r.precision, 0.0);
  EXPECT_EQ(r.recall, 0.0);
  EXPECT_EQ(r.f1, 0.0);
  EXPECT_EQ(r.accuracy, 0.5);
  EXPECT_EQ(r.pairwise_accuracy, 0.0);
}

TEST(Metrics, PerfectPredictionsScoreOne) {
  const std::vector<int> v{1, 0, 0, 1};
  const std::vector<std::string> ids{"a", "a", "b", "b"};
  const EvalReport r = classify_report(v, v, ids);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.f1, 1.0);
  EXPECT_EQ(r.pairwise_accuracy, 1.0);
}

TEST(Metrics, RejectsMalformedInput) {
  const std::vector<std::string> ids{"a", "a"};
  EXPECT_THROW(classify_report(std::vector<int>{0}, std::vector<int>{0, 1}, ids), ValidationError);
  EXPECT_THROW(classify_report(std::vector<int>{2, 0}, std::vector<int>{0, 1}, ids), ValidationError);
  EXPECT_THROW(classify_report(std::vector<int>{0, 0}, std::vector<int>{1, 1}, ids), ValidationError);
  const std::vector<std::string> three{"a", "a", "a"};
  EXPECT_THROW(classify_report(std::vector<int>{0, 1, 0}, std::vector<int>{0, 1, 0}, three), ValidationError);
}
