#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "lfdlab/numerics.hpp"

namespace lfdlab {

using Token = std::int32_t;
using TokenSequence = std::vector<Token>;

struct ModelConfig {
  int n_layers = 8;
  int n_heads = 4;
  int d_model = 64;
  int vocab_size = 256;
  int max_seq_len = 512;
  std::uint64_t seed = 0;
  Token eos_token = '\n';

  int head_dim() const { return d_model / n_heads; }
  int d_ff() const { return 4 * d_model; }

  // Throws ConfigInvalid.
  void validate() const;
};

// Activations of one decoder block at the traced position.
//   ffn_in:  residual stream entering the FFN sublayer (after the attention add)
//   ffn_out: residual stream leaving the FFN sublayer
// `scores` are the pre-softmax attention logits (after masking, if any) and
// `attn` their softmax, one row per head over positions 0..position.
struct LayerTrace {
  std::vector<float> ffn_in;
  std::vector<float> ffn_out;
  std::vector<std::vector<double>> scores;
  std::vector<Distribution> attn;
};

struct ForwardTrace {
  std::size_t position = 0;
  std::vector<LayerTrace> layers;
  std::vector<float> final_hidden;
  LogVector logits;
};

// Incremental decoding state. Owned by one decoder at a time.
struct DecodeCache {
  std::uint64_t owner = 0;
  std::vector<Token> tokens;
  // Per layer, flattened [position][d_model].
  std::vector<std::vector<float>> keys;
  std::vector<std::vector<float>> values;

  std::size_t length() const { return tokens.size(); }
};

// Contract for a decoder-only model exposing layer-wise activations.
// Implementations are immutable after construction; forward passes are pure
// functions of (weights, tokens).
class InstrumentedModel {
 public:
  virtual ~InstrumentedModel() = default;

  virtual const ModelConfig& config() const = 0;

  // Trace at `position`. Keys listed in `masked_keys` are filled with -inf in
  // the attention scores of the traced position, at every layer; earlier
  // positions are unaffected.
  ForwardTrace forward_trace(std::span<const Token> tokens, std::size_t position) const {
    return forward_trace(tokens, position, {});
  }
  virtual ForwardTrace forward_trace(std::span<const Token> tokens, std::size_t position,
                                     std::span<const std::size_t> masked_keys) const = 0;

  virtual DecodeCache new_cache() const = 0;

  // Appends `token` to the cache and returns the trace at its position.
  virtual ForwardTrace forward_step(DecodeCache& cache, Token token) const = 0;

  // Feeds `tokens` into the cache, returning the trace of the last one.
  virtual ForwardTrace prefill(DecodeCache& cache, std::span<const Token> tokens) const;

  // Final normalization followed by the unembedding; raw logits.
  virtual LogVector logit_lens(std::span<const float> hidden) const = 0;

  // Stable digest of all parameters.
  virtual std::uint64_t checksum() const = 0;

 protected:
  void check_tokens(std::span<const Token> tokens) const;
  void check_cache(const DecodeCache& cache, std::uint64_t instance_id) const;
};

// Digest over every field of a trace; used for cross-process determinism checks.
std::uint64_t trace_checksum(const ForwardTrace& trace);

}  // namespace lfdlab
