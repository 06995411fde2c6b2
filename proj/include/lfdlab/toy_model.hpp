#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "lfdlab/model.hpp"

namespace lfdlab {

struct BlockWeights {
  std::vector<float> attn_norm;  // [d]
  std::vector<float> wq, wk, wv, wo;  // [d][d], row = output unit
  std::vector<float> ffn_norm;  // [d]
  std::vector<float> w_up;  // [d_ff][d]
  std::vector<float> w_down;  // [d][d_ff]
};

struct ToyWeights {
  std::vector<float> tok_embed;  // [vocab][d]
  std::vector<float> pos_embed;  // [max_seq_len][d]
  std::vector<BlockWeights> blocks;
  std::vector<float> final_norm;  // [d]
  std::vector<float> unembed;  // [vocab][d]
};

/// Seeded pre-norm decoder-only transformer.
///
/// Block: x += Wo·MHA(rmsnorm(x)); x += Wdown·gelu(Wup·rmsnorm(x)).
/// Output: logits = Wlm·rmsnorm(x). Learned absolute position embeddings,
/// no biases, all norm gains 1.
///
/// Weight generation: one std::mt19937_64 stream seeded with `cfg.seed`.
/// Each 64-bit draw x becomes u = (x >> 11)·2^-53 in [0,1) and the weight
/// (2u - 1)·a, rounded to float. Tensors are drawn row-major in this order:
///   tok_embed (a = 1), pos_embed (a = 0.5),
///   for each block: wq, wk, wv, wo (a = 1/sqrt(d)), w_up (a = 1/sqrt(d)),
///                   w_down (a = 1/sqrt(d_ff)),
///   unembed (a = 4/sqrt(d)).
/// Norm gains are not drawn. The checksum and the weight dump walk
///   tok_embed, pos_embed, per block [attn_norm, wq, wk, wv, wo, ffn_norm,
///   w_up, w_down], final_norm, unembed
/// as little-endian float32.
class ToyModel final : public InstrumentedModel {
 public:
  // Throws ConfigInvalid.
  explicit ToyModel(const ModelConfig& cfg);

  const ModelConfig& config() const override { return cfg_; }
  const ToyWeights& weights() const { return weights_; }
  std::uint64_t instance_id() const { return instance_id_; }

  using InstrumentedModel::forward_trace;
  ForwardTrace forward_trace(std::span<const Token> tokens, std::size_t position,
                             std::span<const std::size_t> masked_keys) const override;
  DecodeCache new_cache() const override;
  ForwardTrace forward_step(DecodeCache& cache, Token token) const override;
  ForwardTrace prefill(DecodeCache& cache, std::span<const Token> tokens) const override;
  LogVector logit_lens(std::span<const float> hidden) const override;
  std::uint64_t checksum() const override;

  void dump_weights(std::ostream& out) const;

  static constexpr float kNormEps = 1e-5f;

 private:
  ForwardTrace step(DecodeCache& cache, Token token, bool want_trace) const;

  ModelConfig cfg_;
  ToyWeights weights_;
  std::uint64_t instance_id_;
};

}  // namespace lfdlab
