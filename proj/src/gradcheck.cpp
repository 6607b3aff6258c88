#include "pfdfl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "pfdfl/errors.hpp"
#include "pfdfl/graph.hpp"

namespace pfdfl {

namespace {

using LossFn = std::function<Tensor(Graph&, const std::vector<Tensor>&)>;

struct Case {
  std::vector<Tensor> inputs;  // checked leaves
  LossFn loss;
};

Tensor random_input(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Tensor random_const(const Shape& shape, Rng& rng) {
  Tensor t = Tensor::zeros(shape);
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

/// Reduces an op output to a scalar through fixed random weights so that
/// every output coordinate contributes a distinct gradient.
LossFn project(std::function<Tensor(Graph&, const std::vector<Tensor>&)> op, const Shape& out_shape, Rng& rng) {
  Tensor r = random_const(out_shape, rng);
  return [op = std::move(op), r](Graph& g, const std::vector<Tensor>& in) { return g.sum(g.mul(op(g, in), r)); };
}

std::size_t small(Rng& rng, std::size_t lo = 1, std::size_t hi = 4) { return lo + rng.below(hi - lo + 1); }

Case make_case(const std::string& op, Rng& rng) {
  const std::size_t m = small(rng), n = small(rng);
  Case c;
  auto unary = [&](auto fn) {
    c.inputs = {random_input({m, n}, rng)};
    c.loss = project([fn](Graph& g, const std::vector<Tensor>& in) { return fn(g, in[0]); }, {m, n}, rng);
  };
  auto binary = [&](auto fn) {
    c.inputs = {random_input({m, n}, rng), random_input({m, n}, rng)};
    c.loss = project([fn](Graph& g, const std::vector<Tensor>& in) { return fn(g, in[0], in[1]); }, {m, n}, rng);
  };
  if (op == "matmul") {
    const std::size_t k = small(rng);
    c.inputs = {random_input({m, k}, rng), random_input({k, n}, rng)};
    c.loss = project([](Graph& g, const std::vector<Tensor>& in) { return g.matmul(in[0], in[1]); }, {m, n}, rng);
  } else if (op == "add_bias") {
    c.inputs = {random_input({m, n}, rng), random_input({n}, rng)};
    c.loss = project([](Graph& g, const std::vector<Tensor>& in) { return g.add_bias(in[0], in[1]); }, {m, n}, rng);
  } else if (op == "add") {
    binary([](Graph& g, const Tensor& a, const Tensor& b) { return g.add(a, b); });
  } else if (op == "sub") {
    binary([](Graph& g, const Tensor& a, const Tensor& b) { return g.sub(a, b); });
  } else if (op == "mul") {
    binary([](Graph& g, const Tensor& a, const Tensor& b) { return g.mul(a, b); });
  } else if (op == "abs") {
    unary([](Graph& g, const Tensor& x) { return g.abs(x); });
  } else if (op == "relu") {
    unary([](Graph& g, const Tensor& x) { return g.relu(x); });
  } else if (op == "gelu") {
    unary([](Graph& g, const Tensor& x) { return g.gelu(x); });
  } else if (op == "sigmoid") {
    unary([](Graph& g, const Tensor& x) { return g.sigmoid(x); });
  } else if (op == "affine") {
    const double scale = rng.uniform(-2.0, 2.0), shift = rng.uniform(-2.0, 2.0);
    unary([scale, shift](Graph& g, const Tensor& x) { return g.affine(x, scale, shift); });
  } else if (op == "dropout") {
    const std::uint64_t seed = rng.next_u64();
    unary([seed](Graph& g, const Tensor& x) {
      Rng r(seed);
      return g.dropout(x, 0.3, r, true);
    });
  } else if (op == "softmax") {
    const std::size_t len = small(rng, 2, 6);
    c.inputs = {random_input({len}, rng)};
    c.loss = project([](Graph& g, const std::vector<Tensor>& in) { return g.softmax(in[0]); }, {len}, rng);
  } else if (op == "layernorm") {
    const std::size_t w = small(rng, 2, 6);
    c.inputs = {random_input({m, w}, rng), random_input({w}, rng), random_input({w}, rng)};
    c.loss = project([](Graph& g, const std::vector<Tensor>& in) { return g.layernorm(in[0], in[1], in[2]); }, {m, w},
                     rng);
  } else if (op == "embedding") {
    const std::size_t vocab = small(rng, 2, 6), rows = small(rng, 1, 6);
    std::vector<std::size_t> ids(rows);
    for (auto& id : ids) id = rng.below(vocab);
    c.inputs = {random_input({vocab, n}, rng)};
    c.loss = project([ids](Graph& g, const std::vector<Tensor>& in) { return g.embedding(in[0], ids); }, {rows, n}, rng);
  } else if (op == "gather_rows") {
    const std::size_t rows = small(rng, 1, 6);
    std::vector<std::size_t> idx(rows);
    for (auto& i : idx) i = rng.below(m);
    c.inputs = {random_input({m, n}, rng)};
    c.loss = project([idx](Graph& g, const std::vector<Tensor>& in) { return g.gather_rows(in[0], idx); }, {rows, n}, rng);
  } else if (op == "reshape") {
    c.inputs = {random_input({m, n}, rng)};
    c.loss = project([m, n](Graph& g, const std::vector<Tensor>& in) { return g.reshape(in[0], {n, m}); }, {n, m}, rng);
  } else if (op == "attention") {
    const std::size_t batch = small(rng, 1, 2), seq = small(rng, 2, 4), heads = small(rng, 1, 2), dh = small(rng, 1, 3);
    const std::size_t rows = batch * seq, d = heads * dh;
    std::vector<std::uint8_t> mask(rows, 1);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t s = 1; s < seq; ++s) mask[b * seq + s] = rng.uniform() < 0.25 ? 0 : 1;
    c.inputs = {random_input({rows, d}, rng), random_input({rows, d}, rng), random_input({rows, d}, rng)};
    c.loss = project(
        [mask, batch, seq, heads](Graph& g, const std::vector<Tensor>& in) {
          return g.attention(in[0], in[1], in[2], mask, batch, seq, heads);
        },
        {rows, d}, rng);
  } else if (op == "weighted_sum") {
    const std::size_t count = small(rng, 1, 4);
    for (std::size_t i = 0; i < count; ++i) c.inputs.push_back(random_input({m, n}, rng));
    c.inputs.push_back(random_input({count}, rng));
    c.loss = project(
        [count](Graph& g, const std::vector<Tensor>& in) {
          std::vector<Tensor> xs(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(count));
          return g.weighted_sum(xs, in[count]);
        },
        {m, n}, rng);
  } else if (op == "scale_by") {
    const std::size_t len = small(rng, 1, 4), index = rng.below(len);
    c.inputs = {random_input({m, n}, rng), random_input({len}, rng)};
    c.loss = project([index](Graph& g, const std::vector<Tensor>& in) { return g.scale_by(in[0], in[1], index); },
                     {m, n}, rng);
  } else if (op == "sum") {
    c.inputs = {random_input({m, n}, rng)};
    c.loss = [](Graph& g, const std::vector<Tensor>& in) { return g.sum(in[0]); };
  } else if (op == "mean") {
    c.inputs = {random_input({m, n}, rng)};
    c.loss = [](Graph& g, const std::vector<Tensor>& in) { return g.mean(in[0]); };
  } else if (op == "bce_loss") {
    const std::size_t len = small(rng, 1, 8);
    Tensor y = Tensor::zeros({len});
    for (double& v : y.data()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    c.inputs = {random_input({len}, rng, 0.02, 0.98)};
    c.loss = [y](Graph& g, const std::vector<Tensor>& in) { return g.bce_loss(in[0], y); };
  } else if (op == "mse_loss") {
    c.inputs = {random_input({m, n}, rng), random_input({m, n}, rng)};
    c.loss = [](Graph& g, const std::vector<Tensor>& in) { return g.mse_loss(in[0], in[1]); };
  } else {
    throw ArgumentError("gradcheck: unknown op '" + op + "'");
  }
  return c;
}

void check_case(const Case& c, const GradcheckOptions& opt, GradcheckResult& r) {
  for (Tensor t : c.inputs) t.zero_grad();
  std::uint64_t fp0 = 0;
  {
    Graph g;
    Tensor loss = c.loss(g, c.inputs);
    fp0 = g.fingerprint();
    g.backward(loss);
  }
  auto eval = [&](std::uint64_t& fp) {
    Graph g(false);
    const double v = c.loss(g, c.inputs).item();
    fp = g.fingerprint();
    return v;
  };
  for (Tensor t : c.inputs) {
    auto data = t.data();
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double orig = data[j];
      std::uint64_t fp_plus = 0, fp_minus = 0;
      data[j] = orig + opt.h;
      const double f_plus = eval(fp_plus);
      data[j] = orig - opt.h;
      const double f_minus = eval(fp_minus);
      data[j] = orig;
      if (fp_plus != fp0 || fp_minus != fp0) {
        ++r.skipped;
        continue;
      }
      const double numeric = (f_plus - f_minus) / (2.0 * opt.h);
      r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic[j], numeric, opt.floor));
      ++r.coords;
    }
  }
  ++r.cases;
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double den = std::max({std::fabs(analytic), std::fabs(numeric), floor});
  return std::fabs(analytic - numeric) / den;
}

std::vector<std::string> gradcheck_op_names() {
  return {"matmul",  "add_bias",    "add",       "sub",     "mul",          "abs",      "relu",
          "gelu",    "sigmoid",     "affine",    "dropout", "softmax",      "layernorm", "embedding",
          "gather_rows", "reshape", "attention", "weighted_sum", "scale_by", "sum",     "mean",
          "bce_loss", "mse_loss"};
}

GradcheckResult gradcheck_op(const std::string& op, const GradcheckOptions& opt) {
  GradcheckResult r;
  r.name = op;
  r.tolerance = opt.tolerance;
  Rng rng = Rng::derive(opt.seed, "gradcheck." + op);
  for (std::size_t i = 0; i < opt.cases; ++i) check_case(make_case(op, rng), opt, r);
  return r;
}

GradcheckResult gradcheck_model(const ModelConfig& cfg, std::size_t n_pairs, std::size_t seq_len,
                                const GradcheckOptions& opt) {
  if (n_pairs == 0 || seq_len < 2 || seq_len > cfg.encoder.max_len) {
    throw ArgumentError("gradcheck_model: need at least one pair and 2 <= seq_len <= max_len");
  }
  const DualModel model(cfg);
  Rng rng = Rng::derive(opt.seed, "gradcheck.model");
  std::vector<std::vector<std::size_t>> seqs;
  std::vector<int> labels;
  std::vector<std::size_t> keys;
  for (std::size_t p = 0; p < n_pairs; ++p) {
    for (int label = 0; label < 2; ++label) {
      std::vector<std::size_t> s{special::kCls};
      const std::size_t len = (p + label) % 2 == 0 ? seq_len : seq_len - 1 - rng.below(seq_len / 2);
      while (s.size() < len) s.push_back(special::kCount + rng.below(cfg.encoder.vocab_size - special::kCount));
      while (s.size() < seq_len) s.push_back(special::kPad);
      seqs.push_back(std::move(s));
      labels.push_back(label);
      keys.push_back(p);
    }
  }
  const TokenBatch batch = TokenBatch::from_sequences(seqs, cfg.encoder.max_len);
  Case c;
  for (const NamedTensor& nt : model.parameters()) c.inputs.push_back(nt.tensor);
  c.loss = [&model, batch, labels, keys](Graph& g, const std::vector<Tensor>&) {
    Rng unused(0);
    ModelOutput out = model.forward(g, batch, false, unused);
    return pair_loss(g, out, labels, keys, LossWeights{});
  };
  GradcheckResult r;
  r.name = "model." + std::string(variant_name(cfg.variant));
  r.tolerance = opt.tolerance;
  check_case(c, opt, r);
  return r;
}

}  // namespace pfdfl
