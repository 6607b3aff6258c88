#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "pfdfl/rng.hpp"
#include "pfdfl/tensor.hpp"

namespace pfdfl {

/// Per-op FLOP charges used by Graph's counter and by the closed-form
/// estimator in analysis. Matrix products cost 2 per multiply-accumulate.
namespace flop_cost {
inline constexpr std::uint64_t kElementwise = 1;  // add, sub, mul, abs, relu, bias, scale_by, sum
inline constexpr std::uint64_t kAffine = 2;
inline constexpr std::uint64_t kGelu = 8;
inline constexpr std::uint64_t kSigmoid = 4;
inline constexpr std::uint64_t kDropout = 2;  // train mode only
inline constexpr std::uint64_t kSoftmax = 3;
inline constexpr std::uint64_t kLayerNorm = 8;
inline constexpr std::uint64_t kWeightedSum = 2;
inline constexpr std::uint64_t kBce = 4;
inline constexpr std::uint64_t kMse = 3;
}  // namespace flop_cost

/// Binary vector with exactly k ones at the k largest entries of delta.
/// Ties go to the lower index. Throws ArgumentError unless 1 <= k <= size.
std::vector<std::uint8_t> topk_mask(std::span<const double> delta, std::size_t k);

/// Indices of the k largest entries, ascending, same tie rule as topk_mask.
std::vector<std::size_t> topk_indices(std::span<const double> delta, std::size_t k);

/// Append-only tape of differentiable operations.
///
/// Every op computes its forward value immediately. When at least one input
/// requires a gradient (and recording is enabled) the op is appended together
/// with a closure that propagates the output gradient into its inputs.
/// backward() replays the tape once, newest first. Leaf gradients accumulate
/// across calls; clear them with Tensor::zero_grad().
///
/// The graph also keeps two bookkeeping side channels:
///   - a multiply-accumulate based FLOP counter over all executed ops;
///   - a fingerprint of every discrete decision (relu/abs sign pattern,
///     top-k selection, loss clamping), used by finite-difference checks to
///     detect perturbations that cross a kink.
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  // Linear algebra.
  Tensor matmul(const Tensor& a, const Tensor& b);
  /// x[m x n] + b[n] added to every row. The only row-broadcasting op.
  Tensor add_bias(const Tensor& x, const Tensor& bias);

  // Element-wise; binary ops require identical shapes.
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor abs(const Tensor& x);
  Tensor relu(const Tensor& x);
  Tensor gelu(const Tensor& x);
  Tensor sigmoid(const Tensor& x);
  /// scale * x + shift with constant scalars.
  Tensor affine(const Tensor& x, double scale, double shift);
  /// Inverted dropout; identity when !train or p == 0.
  Tensor dropout(const Tensor& x, double p, Rng& rng, bool train);

  Tensor softmax(const Tensor& x);
  /// Normalizes over the last dimension, epsilon 1e-5.
  Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias);

  /// Row lookup: table[V x D], ids -> [n x D].
  Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);
  /// Rows of x[m x n] at the given indices -> [len x n].
  Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
  Tensor reshape(const Tensor& x, Shape shape);

  /// Multi-head scaled dot-product attention over a batch.
  ///
  /// q, k, v are [batch*seq x d_model]; key_mask has batch*seq entries and a
  /// zero entry removes that key from every query of its sequence. When
  /// probs_out is given it receives the [batch x heads x seq x seq] weights.
  Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                   std::span<const std::uint8_t> key_mask, std::size_t batch,
                   std::size_t seq, std::size_t heads,
                   std::vector<double>* probs_out = nullptr);

  /// Sum_i w[i] * xs[i] for same-shaped xs and w of length xs.size().
  Tensor weighted_sum(std::span<const Tensor> xs, const Tensor& w);
  /// x * w[index] (a single weighting term).
  Tensor scale_by(const Tensor& x, const Tensor& w, std::size_t index);

  Tensor sum(const Tensor& x);
  Tensor mean(const Tensor& x);

  /// Mean binary cross-entropy; p is clamped to [1e-7, 1 - 1e-7].
  Tensor bce_loss(const Tensor& p, const Tensor& y);
  Tensor mse_loss(const Tensor& a, const Tensor& b);

  /// Runs the backward pass from a scalar. Throws ArgumentError otherwise.
  void backward(const Tensor& loss);

  /// Folds a discrete decision into the fingerprint.
  void note_selection(std::span<const std::size_t> indices);

  std::size_t node_count() const { return nodes_.size(); }
  std::uint64_t flops() const { return flops_; }
  /// Charges work done outside the tape (e.g. value-only comparisons).
  void add_flops(std::uint64_t n) { flops_ += n; }
  std::uint64_t fingerprint() const { return fingerprint_; }
  bool recording() const { return record_; }

 private:
  struct Node {
    std::function<void()> backward;
  };

  bool needs_grad(std::initializer_list<const Tensor*> inputs) const;
  Tensor make_output(Shape shape, bool requires_grad) const;
  void push(std::function<void()> fn);
  void fold(std::uint64_t value);

  bool record_;
  std::vector<Node> nodes_;
  std::uint64_t flops_ = 0;
  std::uint64_t fingerprint_ = 1469598103934665603ULL;
};

}  // namespace pfdfl
