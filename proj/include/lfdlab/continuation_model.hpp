#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "lfdlab/model.hpp"

namespace lfdlab {

// Hand-built deterministic backend: a fixed-order byte context table.
//
// Each script contributes transitions (previous `order` bytes -> next byte).
// At position t the model looks up the last `order` tokens ending at t and
// puts `margin` logit mass on the scripted next token (eos when the context
// is unknown, or shorter than `order`). Hidden states live in vocabulary
// space (d_model == vocab_size, identity unembedding, no final norm) and
// ramp linearly with depth: ffn_in of layer l is z·(l-1)/L and ffn_out is
// z·l/L, where z is the final logit vector. Attention is uniform.
class ContinuationModel final : public InstrumentedModel {
 public:
  // Throws ConfigInvalid if d_model != vocab_size or two scripts disagree on
  // the continuation of a shared context.
  ContinuationModel(const ModelConfig& cfg, std::size_t order, const std::vector<std::string>& scripts,
                    double margin = 12.0);

  const ModelConfig& config() const override { return cfg_; }
  std::size_t order() const { return order_; }
  std::size_t table_size() const { return table_.size(); }

  // Scripted next token for the context ending at `tokens.back()`.
  Token predict(std::span<const Token> tokens) const;

  using InstrumentedModel::forward_trace;
  ForwardTrace forward_trace(std::span<const Token> tokens, std::size_t position,
                             std::span<const std::size_t> masked_keys) const override;
  DecodeCache new_cache() const override;
  ForwardTrace forward_step(DecodeCache& cache, Token token) const override;
  LogVector logit_lens(std::span<const float> hidden) const override;
  std::uint64_t checksum() const override;

 private:
  ForwardTrace trace_at(std::span<const Token> prefix, std::span<const std::size_t> masked_keys) const;

  ModelConfig cfg_;
  std::size_t order_;
  double margin_;
  std::unordered_map<std::string, Token> table_;
  std::uint64_t instance_id_;
};

}  // namespace lfdlab
