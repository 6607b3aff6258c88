#include "pfdfl/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <numbers>

#include "pfdfl/errors.hpp"

namespace pfdfl {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kProbClamp = 1e-7;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

double gelu_value(double x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  const double t = std::tanh(c * (x + 0.044715 * x * x * x));
  return 0.5 * x * (1.0 + t);
}

double gelu_slope(double x) {
  constexpr double c = 0.7978845608028654;
  const double u = c * (x + 0.044715 * x * x * x);
  const double t = std::tanh(u);
  const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::vector<std::size_t> topk_indices(std::span<const double> delta, std::size_t k) {
  if (k < 1 || k > delta.size()) {
    throw ArgumentError("top-k: k=" + std::to_string(k) + " outside [1, " + std::to_string(delta.size()) + "]");
  }
  std::vector<std::size_t> order(delta.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto before = [&](std::size_t a, std::size_t b) {
    if (delta[a] != delta[b]) return delta[a] > delta[b];
    return a < b;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<std::uint8_t> topk_mask(std::span<const double> delta, std::size_t k) {
  std::vector<std::uint8_t> mask(delta.size(), 0);
  for (std::size_t i : topk_indices(delta, k)) mask[i] = 1;
  return mask;
}

bool Graph::needs_grad(std::initializer_list<const Tensor*> inputs) const {
  if (!record_) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

Tensor Graph::make_output(Shape shape, bool requires_grad) const {
  return Tensor::zeros(std::move(shape), requires_grad);
}

void Graph::push(std::function<void()> fn) { nodes_.push_back(Node{std::move(fn)}); }

void Graph::fold(std::uint64_t value) {
  fingerprint_ ^= value + 0x9e3779b97f4a7c15ULL + (fingerprint_ << 6) + (fingerprint_ >> 2);
}

void Graph::note_selection(std::span<const std::size_t> indices) {
  fold(indices.size());
  for (std::size_t i : indices) fold(i);
}

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), kk = a.dim(1), n = b.dim(1);
  Tensor out = make_output({m, n}, needs_grad({&a, &b}));
  {
    const double* A = a.data().data();
    const double* B = b.data().data();
    double* C = out.data().data();
    for (std::size_t i = 0; i < m; ++i) {
      double* __restrict crow = C + i * n;
      for (std::size_t p = 0; p < kk; ++p) {
        const double av = A[i * kk + p];
        if (av == 0.0) continue;
        const double* __restrict brow = B + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
  flops_ += 2ULL * m * kk * n;
  if (out.requires_grad()) {
    push([a = a.impl_, b = b.impl_, c = out.impl_, m, kk, n] {
      const double* dC = c->grad.data();
      if (a->requires_grad) {
        // dA = dC * B^T, accumulated row-wise against a transposed copy of B.
        std::vector<double> bt(n * kk);
        const double* B = b->data.data();
        for (std::size_t p = 0; p < kk; ++p)
          for (std::size_t j = 0; j < n; ++j) bt[j * kk + p] = B[p * n + j];
        double* dA = a->grad.data();
        for (std::size_t i = 0; i < m; ++i) {
          double* __restrict arow = dA + i * kk;
          const double* drow = dC + i * n;
          for (std::size_t j = 0; j < n; ++j) {
            const double dv = drow[j];
            if (dv == 0.0) continue;
            const double* __restrict btrow = bt.data() + j * kk;
            for (std::size_t p = 0; p < kk; ++p) arow[p] += dv * btrow[p];
          }
        }
      }
      if (b->requires_grad) {
        const double* A = a->data.data();
        double* dB = b->grad.data();
        for (std::size_t i = 0; i < m; ++i) {
          const double* drow = dC + i * n;
          for (std::size_t p = 0; p < kk; ++p) {
            const double av = A[i * kk + p];
            if (av == 0.0) continue;
            double* __restrict brow = dB + p * n;
            for (std::size_t j = 0; j < n; ++j) brow[j] += av * drow[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor Graph::add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t n = x.last_dim();
  if (bias.size() != n) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not match last dimension of " +
                         shape_string(x.shape()));
  }
  const std::size_t rows = x.size() / n;
  Tensor out = make_output(x.shape(), needs_grad({&x, &bias}));
  auto xd = x.data();
  auto bd = bias.data();
  auto od = out.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) od[r * n + j] = xd[r * n + j] + bd[j];
  flops_ += flop_cost::kElementwise * x.size();
  if (out.requires_grad()) {
    push([x = x.impl_, b = bias.impl_, o = out.impl_, rows, n] {
      if (x->requires_grad)
        for (std::size_t i = 0; i < rows * n; ++i) x->grad[i] += o->grad[i];
      if (b->requires_grad)
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) b->grad[j] += o->grad[r * n + j];
    });
  }
  return out;
}

Tensor Graph::add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = make_output(a.shape(), needs_grad({&a, &b}));
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a[i] + b[i];
  flops_ += flop_cost::kElementwise * a.size();
  if (out.requires_grad()) {
    push([a = a.impl_, b = b.impl_, o = out.impl_] {
      const std::size_t n = o->grad.size();
      if (a->requires_grad)
        for (std::size_t i = 0; i < n; ++i) a->grad[i] += o->grad[i];
      if (b->requires_grad)
        for (std::size_t i = 0; i < n; ++i) b->grad[i] += o->grad[i];
    });
  }
  return out;
}

Tensor Graph::sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = make_output(a.shape(), needs_grad({&a, &b}));
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a[i] - b[i];
  flops_ += flop_cost::kElementwise * a.size();
  if (out.requires_grad()) {
    push([a = a.impl_, b = b.impl_, o = out.impl_] {
      const std::size_t n = o->grad.size();
      if (a->requires_grad)
        for (std::size_t i = 0; i < n; ++i) a->grad[i] += o->grad[i];
      if (b->requires_grad)
        for (std::size_t i = 0; i < n; ++i) b->grad[i] -= o->grad[i];
    });
  }
  return out;
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = make_output(a.shape(), needs_grad({&a, &b}));
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a[i] * b[i];
  flops_ += flop_cost::kElementwise * a.size();
  if (out.requires_grad()) {
    push([a = a.impl_, b = b.impl_, o = out.impl_] {
      const std::size_t n = o->grad.size();
      if (a->requires_grad)
        for (std::size_t i = 0; i < n; ++i) a->grad[i] += o->grad[i] * b->data[i];
      if (b->requires_grad)
        for (std::size_t i = 0; i < n; ++i) b->grad[i] += o->grad[i] * a->data[i];
    });
  }
  return out;
}

Tensor Graph::abs(const Tensor& x) {
  Tensor out = make_output(x.shape(), needs_grad({&x}));
  std::uint64_t pattern = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.data()[i] = std::fabs(x[i]);
    pattern = (pattern ^ (x[i] > 0 ? 1U : (x[i] < 0 ? 2U : 3U))) * 1099511628211ULL;
  }
  fold(pattern);
  flops_ += flop_cost::kElementwise * x.size();
  if (out.requires_grad()) {
    push([x = x.impl_, o = out.impl_] {
      if (!x->requires_grad) return;
      for (std::size_t i = 0; i < o->grad.size(); ++i) {
        const double v = x->data[i];
        // Subgradient 0 at the kink.
        const double s = v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
        x->grad[i] += s * o->grad[i];
      }
    });
  }
  return out;
}

Tensor Graph::relu(const Tensor& x) {
  Tensor out = make_output(x.shape(), needs_grad({&x}));
  std::uint64_t pattern = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool on = x[i] > 0;
    out.data()[i] = x[i] <= 0 ? 0.0 : x[i];  // NaN passes through
    pattern = (pattern ^ (on ? 1U : 2U)) * 1099511628211ULL;
  }
  fold(pattern);
  flops_ += flop_cost::kElementwise * x.size();
  if (out.requires_grad()) {
    push([x = x.impl_, o = out.impl_] {
      if (!x->requires_grad) return;
      for (std::size_t i = 0; i < o->grad.size(); ++i)
        if (x->data[i] > 0) x->grad[i] += o->grad[i];
    });
  }
  return out;
}

Tensor Graph::gelu(const Tensor& x) {
  Tensor out = make_output(x.shape(), needs_grad({&x}));
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = gelu_value(x[i]);
  flops_ += flop_cost::kGelu * x.size();
  if (out.requires_grad()) {
    push([x = x.impl_, o = out.impl_] {
      if (!x->requires_grad) return;
      for (std::size_t i = 0; i < o->grad.size(); ++i) x->grad[i] += gelu_slope(x->data[i]) * o->grad[i];
    });
  }
  return out;
}

Tensor Graph::sigmoid(const Tensor& x) {
  Tensor out = make_output(x.shape(), needs_grad({&x}));
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = sigmoid_value(x[i]);
  flops_ += flop_cost::kSigmoid * x.size();
  if (out.requires_grad()) {
    push([x = x.impl_, o = out.impl_] {
      if (!x->requires_grad) return;
      for (std::size_t i = 0; i < o->grad.size(); ++i) {
        const double s = o->data[i];
        x->grad[i] += s * (1.0 - s) * o->grad[i];
      }
    });
  }
  return out;
}

Tensor Graph::affine(const Tensor& x, double scale, double shift) {
  Tensor out = make_output(x.shape(), needs_grad({&x}));
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = scale * x[i] + shift;
  flops_ += flop_cost::kAffine * x.size();
  if (out.requires_grad()) {
    push([x = x.impl_, o = out.impl_, scale] {
      if (!x->requires_grad) return;
      for (std::size_t i = 0; i < o->grad.size(); ++i) x->grad[i] += scale * o->grad[i];
    });
  }
  return out;
}

Tensor Graph::dropout(const Tensor& x, double p, Rng& rng, bool train) {
  if (p < 0.0 || p >= 1.0) throw ArgumentError("dropout: p must lie in [0, 1), got " + std::to_string(p));
  if (!train || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> factor(x.size());
  for (double& f : factor) f = rng.uniform() < p ? 0.0 : keep_scale;
  Tensor out = make_output(x.shape(), needs_grad({&x}));
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = x[i] * factor[i];
  flops_ += flop_cost::kDropout * x.size();
  if (out.requires_grad()) {
    push([x = x.impl_, o = out.impl_, factor = std::move(factor)] {
      if (!x->requires_grad) return;
      for (std::size_t i = 0; i < o->grad.size(); ++i) x->grad[i] += factor[i] * o->grad[i];
    });
  }
  return out;
}

Tensor Graph::softmax(const Tensor& x) {
  const std::size_t n = x.size();
  Tensor out = make_output(x.shape(), needs_grad({&x}));
  const double mx = *std::max_element(x.data().begin(), x.data().end());
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.data()[i] = std::exp(x[i] - mx);
    z += out.data()[i];
  }
  for (std::size_t i = 0; i < n; ++i) out.data()[i] /= z;
  flops_ += flop_cost::kSoftmax * n;
  if (out.requires_grad()) {
    push([x = x.impl_, o = out.impl_, n] {
      if (!x->requires_grad) return;
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += o->grad[i] * o->data[i];
      for (std::size_t i = 0; i < n; ++i) x->grad[i] += o->data[i] * (o->grad[i] - dot);
    });
  }
  return out;
}

Tensor Graph::layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const std::size_t d = x.last_dim();
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layernorm: gain/bias " + shape_string(gain.shape()) + "/" + shape_string(bias.shape()) +
                         " do not match last dimension of " + shape_string(x.shape()));
  }
  const std::size_t rows = x.size() / d;
  Tensor out = make_output(x.shape(), needs_grad({&x, &gain, &bias}));
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * is;
      xhat[r * d + j] = h;
      out.data()[r * d + j] = h * gain[j] + bias[j];
    }
  }
  flops_ += flop_cost::kLayerNorm * x.size();
  if (out.requires_grad()) {
    push([x = x.impl_, g = gain.impl_, b = bias.impl_, o = out.impl_, xhat = std::move(xhat),
          inv_std = std::move(inv_std), rows, d] {
      std::vector<double> dxhat(d);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* dy = o->grad.data() + r * d;
        const double* h = xhat.data() + r * d;
        if (g->requires_grad)
          for (std::size_t j = 0; j < d; ++j) g->grad[j] += dy[j] * h[j];
        if (b->requires_grad)
          for (std::size_t j = 0; j < d; ++j) b->grad[j] += dy[j];
        if (x->requires_grad) {
          double sum_d = 0.0, sum_dh = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            dxhat[j] = dy[j] * g->data[j];
            sum_d += dxhat[j];
            sum_dh += dxhat[j] * h[j];
          }
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j)
            x->grad[r * d + j] += inv_std[r] * (dxhat[j] - inv_d * sum_d - h[j] * inv_d * sum_dh);
        }
      }
    });
  }
  return out;
}

Tensor Graph::embedding(const Tensor& table, std::span<const std::size_t> ids) {
  if (table.rank() != 2) throw DimensionError("embedding: table must be 2-D, got " + shape_string(table.shape()));
  const std::size_t v = table.dim(0), d = table.dim(1);
  for (std::size_t id : ids) {
    if (id >= v) throw VocabularyError("embedding: id " + std::to_string(id) + " >= table rows " + std::to_string(v));
  }
  Tensor out = make_output({ids.size(), d}, needs_grad({&table}));
  for (std::size_t r = 0; r < ids.size(); ++r)
    std::copy_n(table.data().data() + ids[r] * d, d, out.data().data() + r * d);
  if (out.requires_grad()) {
    push([t = table.impl_, o = out.impl_, ids = std::vector<std::size_t>(ids.begin(), ids.end()), d] {
      for (std::size_t r = 0; r < ids.size(); ++r)
        for (std::size_t j = 0; j < d; ++j) t->grad[ids[r] * d + j] += o->grad[r * d + j];
    });
  }
  return out;
}

Tensor Graph::gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t m = x.dim(0);
  const std::size_t n = x.size() / m;
  for (std::size_t r : rows) {
    if (r >= m) throw ArgumentError("gather_rows: row " + std::to_string(r) + " out of range " + std::to_string(m));
  }
  Shape shape = x.shape();
  shape[0] = rows.size();
  Tensor out = make_output(shape, needs_grad({&x}));
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(x.data().data() + rows[i] * n, n, out.data().data() + i * n);
  if (out.requires_grad()) {
    push([x = x.impl_, o = out.impl_, rows = std::vector<std::size_t>(rows.begin(), rows.end()), n] {
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < n; ++j) x->grad[rows[i] * n + j] += o->grad[i * n + j];
    });
  }
  return out;
}

Tensor Graph::reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  Tensor out = make_output(std::move(shape), needs_grad({&x}));
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  if (out.requires_grad()) {
    push([x = x.impl_, o = out.impl_] {
      if (!x->requires_grad) return;
      for (std::size_t i = 0; i < o->grad.size(); ++i) x->grad[i] += o->grad[i];
    });
  }
  return out;
}

Tensor Graph::attention(const Tensor& q, const Tensor& k, const Tensor& v, std::span<const std::uint8_t> key_mask,
                        std::size_t batch, std::size_t seq, std::size_t heads, std::vector<double>* probs_out) {
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  if (q.rank() != 2 || q.dim(0) != batch * seq) {
    throw DimensionError("attention: expected [" + std::to_string(batch * seq) + " x d], got " +
                         shape_string(q.shape()));
  }
  if (key_mask.size() != batch * seq) throw DimensionError("attention: key mask length mismatch");
  const std::size_t d = q.dim(1);
  if (heads == 0 || d % heads != 0) throw DimensionError("attention: heads must divide d_model");
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor out = make_output(q.shape(), needs_grad({&q, &k, &v}));
  std::vector<double> probs(batch * heads * seq * seq, 0.0);
  const double* Q = q.data().data();
  const double* K = k.data().data();
  const double* V = v.data().data();
  double* O = out.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    const std::uint8_t* km = key_mask.data() + b * seq;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < seq; ++i) {
        double* p = probs.data() + ((b * heads + h) * seq + i) * seq;
        const double* qi = Q + (b * seq + i) * d + off;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < seq; ++j) {
          if (!km[j]) continue;
          const double* kj = K + (b * seq + j) * d + off;
          double s = 0.0;
          for (std::size_t t = 0; t < dh; ++t) s += qi[t] * kj[t];
          p[j] = s * scale;
          mx = std::max(mx, p[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < seq; ++j) {
          if (!km[j]) continue;
          p[j] = std::exp(p[j] - mx);
          z += p[j];
        }
        if (z == 0.0) continue;  // fully masked sequence: zero context
        double* oi = O + (b * seq + i) * d + off;
        for (std::size_t j = 0; j < seq; ++j) {
          if (!km[j]) continue;
          p[j] /= z;
          const double* vj = V + (b * seq + j) * d + off;
          for (std::size_t t = 0; t < dh; ++t) oi[t] += p[j] * vj[t];
        }
      }
    }
  }
  flops_ += batch * heads * seq * seq * (4 * dh + flop_cost::kSoftmax);
  if (probs_out) *probs_out = probs;
  if (out.requires_grad()) {
    push([q = q.impl_, k = k.impl_, v = v.impl_, o = out.impl_, probs = std::move(probs), batch, seq, heads, d, dh,
          scale] {
      std::vector<double> dp(seq);
      const double* Q = q->data.data();
      const double* K = k->data.data();
      const double* V = v->data.data();
      const double* dO = o->grad.data();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = h * dh;
          for (std::size_t i = 0; i < seq; ++i) {
            const double* p = probs.data() + ((b * heads + h) * seq + i) * seq;
            const double* doi = dO + (b * seq + i) * d + off;
            double dot = 0.0;
            for (std::size_t j = 0; j < seq; ++j) {
              if (p[j] == 0.0) {
                dp[j] = 0.0;
                continue;
              }
              const double* vj = V + (b * seq + j) * d + off;
              double s = 0.0;
              for (std::size_t t = 0; t < dh; ++t) s += doi[t] * vj[t];
              dp[j] = s;
              dot += p[j] * s;
              if (v->requires_grad) {
                double* dvj = v->grad.data() + (b * seq + j) * d + off;
                for (std::size_t t = 0; t < dh; ++t) dvj[t] += p[j] * doi[t];
              }
            }
            const double* qi = Q + (b * seq + i) * d + off;
            for (std::size_t j = 0; j < seq; ++j) {
              if (p[j] == 0.0) continue;
              const double ds = p[j] * (dp[j] - dot) * scale;
              const double* kj = K + (b * seq + j) * d + off;
              if (q->requires_grad) {
                double* dqi = q->grad.data() + (b * seq + i) * d + off;
                for (std::size_t t = 0; t < dh; ++t) dqi[t] += ds * kj[t];
              }
              if (k->requires_grad) {
                double* dkj = k->grad.data() + (b * seq + j) * d + off;
                for (std::size_t t = 0; t < dh; ++t) dkj[t] += ds * qi[t];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor Graph::weighted_sum(std::span<const Tensor> xs, const Tensor& w) {
  if (xs.empty()) throw ArgumentError("weighted_sum: empty input list");
  if (w.size() != xs.size()) {
    throw DimensionError("weighted_sum: " + std::to_string(xs.size()) + " inputs but " + std::to_string(w.size()) +
                         " weights");
  }
  for (const Tensor& x : xs) require_same_shape(xs[0], x, "weighted_sum");
  bool rg = needs_grad({&w});
  for (const Tensor& x : xs) rg = rg || needs_grad({&x});
  Tensor out = make_output(xs[0].shape(), rg);
  const std::size_t n = xs[0].size();
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = 0; j < n; ++j) out.data()[j] += w[i] * xs[i][j];
  flops_ += flop_cost::kWeightedSum * n * xs.size();
  if (out.requires_grad()) {
    std::vector<std::shared_ptr<detail::Storage>> ins;
    for (const Tensor& x : xs) ins.push_back(x.impl_);
    push([ins = std::move(ins), w = w.impl_, o = out.impl_, n] {
      for (std::size_t i = 0; i < ins.size(); ++i) {
        auto& x = *ins[i];
        if (x.requires_grad)
          for (std::size_t j = 0; j < n; ++j) x.grad[j] += w->data[i] * o->grad[j];
        if (w->requires_grad) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += x.data[j] * o->grad[j];
          w->grad[i] += s;
        }
      }
    });
  }
  return out;
}

Tensor Graph::scale_by(const Tensor& x, const Tensor& w, std::size_t index) {
  if (index >= w.size()) throw ArgumentError("scale_by: index out of range");
  Tensor out = make_output(x.shape(), needs_grad({&x, &w}));
  const double s = w[index];
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = s * x[i];
  flops_ += flop_cost::kElementwise * x.size();
  if (out.requires_grad()) {
    push([x = x.impl_, w = w.impl_, o = out.impl_, index] {
      const double s = w->data[index];
      double acc = 0.0;
      for (std::size_t i = 0; i < o->grad.size(); ++i) {
        if (x->requires_grad) x->grad[i] += s * o->grad[i];
        acc += x->data[i] * o->grad[i];
      }
      if (w->requires_grad) w->grad[index] += acc;
    });
  }
  return out;
}

Tensor Graph::sum(const Tensor& x) {
  Tensor out = make_output({1}, needs_grad({&x}));
  double s = 0.0;
  for (double v : x.data()) s += v;
  out.data()[0] = s;
  flops_ += flop_cost::kElementwise * x.size();
  if (out.requires_grad()) {
    push([x = x.impl_, o = out.impl_] {
      for (double& g : x->grad) g += o->grad[0];
    });
  }
  return out;
}

Tensor Graph::mean(const Tensor& x) { return affine(sum(x), 1.0 / static_cast<double>(x.size()), 0.0); }

Tensor Graph::bce_loss(const Tensor& p, const Tensor& y) {
  require_same_shape(p, y, "bce_loss");
  const std::size_t n = p.size();
  Tensor out = make_output({1}, needs_grad({&p}));
  std::vector<std::size_t> clamped;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double pi = p[i];
    if (pi < kProbClamp || pi > 1.0 - kProbClamp) {
      clamped.push_back(i);
      pi = std::clamp(pi, kProbClamp, 1.0 - kProbClamp);
    }
    total -= y[i] * std::log(pi) + (1.0 - y[i]) * std::log(1.0 - pi);
  }
  note_selection(clamped);
  out.data()[0] = total / static_cast<double>(n);
  flops_ += flop_cost::kBce * n;
  if (out.requires_grad()) {
    push([p = p.impl_, y = y.impl_, o = out.impl_, n] {
      if (!p->requires_grad) return;
      const double g = o->grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double pi = p->data[i];
        if (pi < kProbClamp || pi > 1.0 - kProbClamp) continue;  // clamped: flat
        const double yi = y->data[i];
        p->grad[i] += g * (-yi / pi + (1.0 - yi) / (1.0 - pi));
      }
    });
  }
  return out;
}

Tensor Graph::mse_loss(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse_loss");
  const std::size_t n = a.size();
  Tensor out = make_output({1}, needs_grad({&a, &b}));
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += (a[i] - b[i]) * (a[i] - b[i]);
  out.data()[0] = total / static_cast<double>(n);
  flops_ += flop_cost::kMse * n;
  if (out.requires_grad()) {
    push([a = a.impl_, b = b.impl_, o = out.impl_, n] {
      const double g = 2.0 * o->grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double diff = a->data[i] - b->data[i];
        if (a->requires_grad) a->grad[i] += g * diff;
        if (b->requires_grad) b->grad[i] -= g * diff;
      }
    });
  }
  return out;
}

void Graph::backward(const Tensor& loss) {
  if (loss.size() != 1) throw ArgumentError("backward: loss must be scalar, got " + shape_string(loss.shape()));
  if (!loss.requires_grad()) return;
  loss.impl_->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
  nodes_.clear();
}

}  // namespace pfdfl
