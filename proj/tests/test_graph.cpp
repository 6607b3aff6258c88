#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pfdfl/errors.hpp"
#include "pfdfl/gradcheck.hpp"
#include "pfdfl/graph.hpp"

using namespace pfdfl;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool grad = false) {
  Tensor t = Tensor::zeros(std::move(shape), grad);
  for (double& v : t.data()) v = rng.uniform(-2.0, 2.0);
  return t;
}

}  // namespace

TEST(Graph, MatmulMatchesNaiveTripleLoop) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.below(5), k = 1 + rng.below(5), n = 1 + rng.below(5);
    Tensor a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
    Graph g;
    Tensor c = g.matmul(a, b);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
        EXPECT_NEAR(c[i * n + j], s, 1e-12);
      }
    EXPECT_EQ(g.flops(), 2 * m * k * n);
  }
  Graph g;
  EXPECT_THROW(g.matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST(Graph, BinaryOpsRequireIdenticalShapes) {
  Graph g;
  EXPECT_THROW(g.add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
  EXPECT_THROW(g.add_bias(Tensor::zeros({2, 3}), Tensor::zeros({2})), DimensionError);
}

TEST(Graph, SoftmaxSumsToOneAndSurvivesLargeInputs) {
  Graph g;
  Tensor s = g.softmax(Tensor::vector({1000.0, 1001.0, 999.0}));
  double total = 0.0;
  for (double v : s.data()) {
    EXPECT_TRUE(std::isfinite(v));
    total += v;
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
  const double z = std::exp(-1.0) + 1.0 + std::exp(-2.0);
  EXPECT_NEAR(s[1], 1.0 / z, 1e-12);
}

TEST(Graph, LayerNormNormalizesRows) {
  Rng rng(2);
  Tensor x = random_tensor({3, 8}, rng);
  Graph g;
  Tensor y = g.layernorm(x, Tensor::filled({8}, 1.0), Tensor::zeros({8}));
  for (std::size_t r = 0; r < 3; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < 8; ++j) mean += y[r * 8 + j];
    mean /= 8;
    for (std::size_t j = 0; j < 8; ++j) var += (y[r * 8 + j] - mean) * (y[r * 8 + j] - mean);
    var /= 8;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    // Variance is v / (v + eps) with eps = 1e-5.
    double xm = 0.0, xv = 0.0;
    for (std::size_t j = 0; j < 8; ++j) xm += x[r * 8 + j];
    xm /= 8;
    for (std::size_t j = 0; j < 8; ++j) xv += (x[r * 8 + j] - xm) * (x[r * 8 + j] - xm);
    xv /= 8;
    EXPECT_NEAR(var, xv / (xv + 1e-5), 1e-10);
  }
}

TEST(Graph, GeluUsesTanhApproximation) {
  Graph g;
  Tensor y = g.gelu(Tensor::vector({-1.5, 0.0, 0.7}));
  const double xs[] = {-1.5, 0.0, 0.7};
  for (int i = 0; i < 3; ++i) {
    const double x = xs[i];
    const double ref = 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / std::numbers::pi) * (x + 0.044715 * x * x * x)));
    EXPECT_NEAR(y[i], ref, 1e-14);
  }
}

TEST(Graph, SubgradientOfAbsAndReluAtZeroIsZero) {
  Tensor x = Tensor::vector({0.0, 0.0}, true);
  Graph g;
  Tensor loss = g.add(g.sum(g.abs(x)), g.sum(g.relu(x)));
  g.backward(loss);
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 0.0);
}

TEST(Graph, NanPropagatesThroughRelu) {
  Graph g;
  Tensor y = g.relu(Tensor::vector({std::nan(""), -1.0}));
  EXPECT_TRUE(std::isnan(y[0]));
  EXPECT_EQ(y[1], 0.0);
}

TEST(Graph, BceClampsProbabilities) {
  Graph g;
  Tensor l = g.bce_loss(Tensor::vector({0.0, 1.0}), Tensor::vector({1.0, 0.0}));
  EXPECT_NEAR(l.item(), -std::log(1e-7), 1e-9);
  Tensor half = g.bce_loss(Tensor::vector({0.5}), Tensor::vector({1.0}));
  EXPECT_NEAR(half.item(), std::log(2.0), 1e-15);
}

TEST(Graph, MseIsMeanOfSquaredDifferences) {
  Graph g;
  Tensor l = g.mse_loss(Tensor::vector({1, 2, 3}), Tensor::vector({0, 0, 0}));
  EXPECT_NEAR(l.item(), 14.0 / 3.0, 1e-15);
}

TEST(Graph, EmbeddingRejectsOutOfVocabularyIds) {
  Graph g;
  const std::vector<std::size_t> ids{0, 5};
  EXPECT_THROW(g.embedding(Tensor::zeros({4, 2}), ids), VocabularyError);
}

TEST(Graph, AttentionIgnoresMaskedKeys) {
  Rng rng(3);
  const std::size_t seq = 3, d = 4;
  Tensor q = random_tensor({seq, d}, rng), k = random_tensor({seq, d}, rng), v = random_tensor({seq, d}, rng);
  const std::vector<std::uint8_t> mask{1, 1, 0};
  Graph g;
  Tensor out = g.attention(q, k, v, mask, 1, seq, 2);
  // Changing the masked key and value leaves the output untouched.
  Tensor k2 = k.clone(), v2 = v.clone();
  for (std::size_t j = 0; j < d; ++j) {
    k2.data()[2 * d + j] = 100.0;
    v2.data()[2 * d + j] = -100.0;
  }
  Tensor out2 = g.attention(q, k2, v2, mask, 1, seq, 2);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], out2[i]);
}

TEST(Graph, BackwardRequiresScalarLoss) {
  Graph g;
  Tensor x = Tensor::vector({1, 2}, true);
  Tensor y = g.relu(x);
  EXPECT_THROW(g.backward(y), ArgumentError);
}

TEST(Graph, LeafGradientsAccumulateAcrossPasses) {
  Tensor x = Tensor::vector({1.0, -2.0}, true);
  for (int pass = 0; pass < 2; ++pass) {
    Graph g;
    g.backward(g.sum(g.mul(x, Tensor::vector({3.0, 4.0}))));
  }
  EXPECT_EQ(x.grad()[0], 6.0);
  EXPECT_EQ(x.grad()[1], 8.0);
}

TEST(Graph, DropoutIsIdentityInEvalAndScalesKeptUnitsInTrain) {
  Rng rng(4);
  Tensor x = Tensor::filled({1000}, 1.0);
  Graph g;
  Tensor e = g.dropout(x, 0.5, rng, false);
  EXPECT_EQ(e.id(), x.id());
  Tensor t = g.dropout(x, 0.5, rng, true);
  std::size_t kept = 0;
  for (double v : t.data()) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    kept += v != 0.0;
  }
  EXPECT_GT(kept, 400u);
  EXPECT_LT(kept, 600u);
  EXPECT_THROW(g.dropout(x, 1.0, rng, true), ArgumentError);
}

TEST(TopK, PicksLargestWithLowestIndexOnTies) {
  const std::vector<double> d{1.0, 3.0, 3.0, 2.0, 3.0};
  EXPECT_EQ(topk_indices(d, 2), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(topk_indices(d, 4), (std::vector<std::size_t>{1, 2, 3, 4}));
  const std::vector<double> flat(6, 0.0);
  EXPECT_EQ(topk_indices(flat, 3), (std::vector<std::size_t>{0, 1, 2}));
  auto mask = topk_mask(d, 3);
  EXPECT_EQ(std::count(mask.begin(), mask.end(), 1), 3);
  EXPECT_THROW(topk_indices(d, 0), ArgumentError);
  EXPECT_THROW(topk_indices(d, 6), ArgumentError);
}

TEST(TopK, PropertyMatchesSortOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(40), k = 1 + rng.below(n);
    std::vector<double> d(n);
    for (double& v : d) v = static_cast<double>(rng.below(6));  // many ties
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d[a] > d[b]; });
    order.resize(k);
    std::sort(order.begin(), order.end());
    EXPECT_EQ(topk_indices(d, k), order);
  }
}

class OpGradcheck : public ::testing::TestWithParam<std::string> {};

TEST_P(OpGradcheck, CentralDifferencesAgree) {
  GradcheckOptions opt;
  opt.cases = 100;
  const GradcheckResult r = gradcheck_op(GetParam(), opt);
  EXPECT_EQ(r.cases, 100u);
  EXPECT_TRUE(r.passed()) << GetParam() << " max relative error " << r.max_rel_error;
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradcheck, ::testing::ValuesIn(gradcheck_op_names()),
                         [](const auto& info) { return info.param; });

TEST(Gradcheck, RelativeErrorUsesFloor) {
  EXPECT_NEAR(relative_error(1.0, 1.1, 1e-6), 0.1 / 1.1, 1e-15);
  EXPECT_NEAR(relative_error(0.0, 1e-9, 1e-6), 1e-3, 1e-15);
}

TEST(Gradcheck, UnknownOpIsRejected) { EXPECT_THROW(gradcheck_op("conv", {}), ArgumentError); }
