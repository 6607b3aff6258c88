#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pfdfl/graph.hpp"
#include "pfdfl/params.hpp"

namespace pfdfl {

/// Reserved token ids shared by the tokenizer and the encoder.
namespace special {
inline constexpr std::size_t kCls = 0;
inline constexpr std::size_t kSep = 1;
inline constexpr std::size_t kPad = 2;
inline constexpr std::size_t kUnk = 3;
inline constexpr std::size_t kCount = 4;
}  // namespace special

struct EncoderConfig {
  std::size_t vocab_size = 4100;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t max_len = 32;
  double dropout_p = 0.1;

  /// Throws ArgumentError on an inconsistent configuration.
  void validate() const;
};

/// Padded token ids for a batch plus the key mask (1 = real token).
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::size_t> ids;
  std::vector<std::uint8_t> key_mask;

  /// Truncates every sequence to max_len, pads to the longest with PAD and
  /// masks PAD positions.
  static TokenBatch from_sequences(std::span<const std::vector<std::size_t>> seqs, std::size_t max_len);
};

/// Position-0 representations after the embedding layer and after each
/// transformer block: n_layers + 1 tensors of shape [batch x d_model].
struct HiddenStack {
  std::vector<Tensor> states;
};

/// Closed-form parameter count of one encoder.
std::size_t encoder_param_count(const EncoderConfig& cfg);
/// Parameters of a single transformer block.
std::size_t encoder_block_param_count(const EncoderConfig& cfg);

/// Pre-norm bidirectional transformer encoder with learned absolute
/// positions. Every block's CLS state is exposed.
class Encoder {
 public:
  Encoder(const EncoderConfig& cfg, Rng& init_rng);

  const EncoderConfig& config() const { return cfg_; }

  /// Runs the batch. Pass attention_probs to collect per-layer weights.
  HiddenStack forward(Graph& g, const TokenBatch& batch, bool train, Rng& dropout_rng,
                      std::vector<std::vector<double>>* attention_probs = nullptr) const;

  /// Single-sequence convenience wrapper (eval mode, own graph).
  HiddenStack forward(std::span<const std::size_t> tokens) const;

  ParamList parameters(const std::string& prefix) const;

 private:
  struct Block {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor w1, b1, w2, b2;
  };

  EncoderConfig cfg_;
  Tensor tok_emb_, pos_emb_, emb_ln_g_, emb_ln_b_;
  std::vector<Block> blocks_;
};

}  // namespace pfdfl
