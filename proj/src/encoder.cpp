#include "pfdfl/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "pfdfl/errors.hpp"

namespace pfdfl {

void EncoderConfig::validate() const {
  if (vocab_size <= special::kCount) throw ArgumentError("encoder: vocab_size must exceed the special ids");
  if (d_model == 0 || n_heads == 0 || d_ff == 0) throw ArgumentError("encoder: sizes must be positive");
  if (d_model % n_heads != 0) {
    throw ArgumentError("encoder: n_heads=" + std::to_string(n_heads) + " does not divide d_model=" +
                        std::to_string(d_model));
  }
  if (max_len < 3) throw ArgumentError("encoder: max_len must be at least 3");
  if (dropout_p < 0.0 || dropout_p >= 1.0) throw ArgumentError("encoder: dropout_p must lie in [0, 1)");
}

TokenBatch TokenBatch::from_sequences(std::span<const std::vector<std::size_t>> seqs, std::size_t max_len) {
  TokenBatch tb;
  tb.batch = seqs.size();
  for (const auto& s : seqs) tb.seq = std::max(tb.seq, std::min(s.size(), max_len));
  if (tb.batch == 0 || tb.seq == 0) throw ArgumentError("token batch: empty input");
  tb.ids.assign(tb.batch * tb.seq, special::kPad);
  tb.key_mask.assign(tb.batch * tb.seq, 0);
  for (std::size_t b = 0; b < tb.batch; ++b) {
    const std::size_t n = std::min(seqs[b].size(), max_len);
    for (std::size_t i = 0; i < n; ++i) {
      tb.ids[b * tb.seq + i] = seqs[b][i];
      tb.key_mask[b * tb.seq + i] = seqs[b][i] == special::kPad ? 0 : 1;
    }
  }
  return tb;
}

std::size_t encoder_block_param_count(const EncoderConfig& c) {
  const std::size_t d = c.d_model, f = c.d_ff;
  return 2 * d                 // ln1
         + 4 * (d * d + d)     // q, k, v, o
         + 2 * d               // ln2
         + (d * f + f) + (f * d + d);
}

std::size_t encoder_param_count(const EncoderConfig& c) {
  const std::size_t d = c.d_model;
  return c.vocab_size * d + c.max_len * d + 2 * d + c.n_layers * encoder_block_param_count(c);
}

Encoder::Encoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.d_model, f = cfg_.d_ff;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  const double sf = 1.0 / std::sqrt(static_cast<double>(f));
  tok_emb_ = normal_param({cfg_.vocab_size, d}, 1.0, rng);
  // Small positional init keeps token identity dominant early in training.
  pos_emb_ = normal_param({cfg_.max_len, d}, 0.02, rng);
  emb_ln_g_ = const_param({d}, 1.0);
  emb_ln_b_ = const_param({d}, 0.0);
  blocks_.reserve(cfg_.n_layers);
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    Block b;
    b.ln1_g = const_param({d}, 1.0);
    b.ln1_b = const_param({d}, 0.0);
    b.wq = normal_param({d, d}, sd, rng);
    b.bq = const_param({d}, 0.0);
    b.wk = normal_param({d, d}, sd, rng);
    b.bk = const_param({d}, 0.0);
    b.wv = normal_param({d, d}, sd, rng);
    b.bv = const_param({d}, 0.0);
    b.wo = normal_param({d, d}, sd, rng);
    b.bo = const_param({d}, 0.0);
    b.ln2_g = const_param({d}, 1.0);
    b.ln2_b = const_param({d}, 0.0);
    b.w1 = normal_param({d, f}, sd, rng);
    b.b1 = const_param({f}, 0.0);
    b.w2 = normal_param({f, d}, sf, rng);
    b.b2 = const_param({d}, 0.0);
    blocks_.push_back(std::move(b));
  }
}

HiddenStack Encoder::forward(Graph& g, const TokenBatch& batch, bool train, Rng& dropout_rng,
                             std::vector<std::vector<double>>* attention_probs) const {
  const std::size_t B = batch.batch, L = batch.seq;
  if (L > cfg_.max_len) throw ArgumentError("encoder: batch sequence length exceeds max_len");
  for (std::size_t b = 0; b < B; ++b) {
    if (batch.ids[b * L] != special::kCls) throw ArgumentError("encoder: position 0 must hold the CLS id");
  }
  for (std::size_t id : batch.ids) {
    if (id >= cfg_.vocab_size) {
      throw VocabularyError("encoder: token id " + std::to_string(id) + " >= vocab_size " +
                            std::to_string(cfg_.vocab_size));
    }
  }
  std::vector<std::size_t> positions(B * L);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < L; ++i) positions[b * L + i] = i;
  std::vector<std::size_t> cls_rows(B);
  for (std::size_t b = 0; b < B; ++b) cls_rows[b] = b * L;

  const double p = cfg_.dropout_p;
  HiddenStack out;
  Tensor x = g.add(g.embedding(tok_emb_, batch.ids), g.embedding(pos_emb_, positions));
  x = g.dropout(g.layernorm(x, emb_ln_g_, emb_ln_b_), p, dropout_rng, train);
  out.states.push_back(g.gather_rows(x, cls_rows));

  if (attention_probs) attention_probs->clear();
  for (const Block& blk : blocks_) {
    Tensor a = g.layernorm(x, blk.ln1_g, blk.ln1_b);
    Tensor q = g.add_bias(g.matmul(a, blk.wq), blk.bq);
    Tensor k = g.add_bias(g.matmul(a, blk.wk), blk.bk);
    Tensor v = g.add_bias(g.matmul(a, blk.wv), blk.bv);
    std::vector<double>* probs = nullptr;
    if (attention_probs) probs = &attention_probs->emplace_back();
    Tensor ctx = g.attention(q, k, v, batch.key_mask, B, L, cfg_.n_heads, probs);
    Tensor o = g.add_bias(g.matmul(ctx, blk.wo), blk.bo);
    x = g.add(x, g.dropout(o, p, dropout_rng, train));

    Tensor f = g.layernorm(x, blk.ln2_g, blk.ln2_b);
    f = g.gelu(g.add_bias(g.matmul(f, blk.w1), blk.b1));
    f = g.add_bias(g.matmul(f, blk.w2), blk.b2);
    x = g.add(x, g.dropout(f, p, dropout_rng, train));
    out.states.push_back(g.gather_rows(x, cls_rows));
  }
  return out;
}

HiddenStack Encoder::forward(std::span<const std::size_t> tokens) const {
  std::vector<std::vector<std::size_t>> seqs{std::vector<std::size_t>(tokens.begin(), tokens.end())};
  TokenBatch tb = TokenBatch::from_sequences(seqs, cfg_.max_len);
  Graph g(false);
  Rng unused(0);
  return forward(g, tb, false, unused);
}

ParamList Encoder::parameters(const std::string& prefix) const {
  ParamList ps;
  ps.push_back({prefix + "tok_emb", tok_emb_});
  ps.push_back({prefix + "pos_emb", pos_emb_});
  ps.push_back({prefix + "emb_ln.gain", emb_ln_g_});
  ps.push_back({prefix + "emb_ln.bias", emb_ln_b_});
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const Block& b = blocks_[l];
    const std::string s = prefix + "block" + std::to_string(l) + ".";
    ps.push_back({s + "ln1.gain", b.ln1_g});
    ps.push_back({s + "ln1.bias", b.ln1_b});
    ps.push_back({s + "attn.wq", b.wq});
    ps.push_back({s + "attn.bq", b.bq});
    ps.push_back({s + "attn.wk", b.wk});
    ps.push_back({s + "attn.bk", b.bk});
    ps.push_back({s + "attn.wv", b.wv});
    ps.push_back({s + "attn.bv", b.bv});
    ps.push_back({s + "attn.wo", b.wo});
    ps.push_back({s + "attn.bo", b.bo});
    ps.push_back({s + "ln2.gain", b.ln2_g});
    ps.push_back({s + "ln2.bias", b.ln2_b});
    ps.push_back({s + "ffn.w1", b.w1});
    ps.push_back({s + "ffn.b1", b.b1});
    ps.push_back({s + "ffn.w2", b.w2});
    ps.push_back({s + "ffn.b2", b.b2});
  }
  return ps;
}

}  // namespace pfdfl
