#include "lfdlab/model.hpp"

#include <string>

#include "lfdlab/error.hpp"
#include "lfdlab/hash.hpp"

namespace lfdlab {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::ConfigInvalid, msg); };
  if (n_layers <= 0 || n_layers % 2 != 0) fail("n_layers must be a positive even integer, got " + std::to_string(n_layers));
  if (n_heads <= 0) fail("n_heads must be positive");
  if (d_model <= 0) fail("d_model must be positive");
  if (d_model % n_heads != 0) {
    fail("d_model " + std::to_string(d_model) + " is not divisible by n_heads " + std::to_string(n_heads));
  }
  if (vocab_size <= 0) fail("vocab_size must be positive");
  if (max_seq_len <= 0) fail("max_seq_len must be positive");
  if (eos_token < 0 || eos_token >= vocab_size) fail("eos_token must be < vocab_size");
}

void InstrumentedModel::check_tokens(std::span<const Token> tokens) const {
  const auto& cfg = config();
  if (tokens.empty()) throw Error(ErrorCode::Precondition, "empty token sequence");
  if (tokens.size() > static_cast<std::size_t>(cfg.max_seq_len)) {
    throw Error(ErrorCode::SequenceTooLong, std::to_string(tokens.size()) + " tokens exceed max_seq_len " +
                                                std::to_string(cfg.max_seq_len));
  }
  for (Token t : tokens) {
    if (t < 0 || t >= cfg.vocab_size) throw Error(ErrorCode::TokenOutOfRange, "token id " + std::to_string(t));
  }
}

void InstrumentedModel::check_cache(const DecodeCache& cache, std::uint64_t instance_id) const {
  if (cache.owner != instance_id) {
    throw Error(ErrorCode::CacheMismatch, "cache was built by a different model instance");
  }
  if (cache.length() >= static_cast<std::size_t>(config().max_seq_len)) {
    throw Error(ErrorCode::SequenceTooLong, "cache is full (max_seq_len " + std::to_string(config().max_seq_len) + ")");
  }
}

ForwardTrace InstrumentedModel::prefill(DecodeCache& cache, std::span<const Token> tokens) const {
  if (tokens.empty()) throw Error(ErrorCode::Precondition, "prefill with no tokens");
  ForwardTrace trace;
  for (Token t : tokens) trace = forward_step(cache, t);
  return trace;
}

std::uint64_t trace_checksum(const ForwardTrace& trace) {
  Fnv1a h;
  h.update_u64(trace.position);
  for (const auto& layer : trace.layers) {
    h.update_floats(layer.ffn_in);
    h.update_floats(layer.ffn_out);
    for (const auto& row : layer.scores) h.update_doubles(row);
    for (const auto& row : layer.attn) h.update_doubles(row.probs());
  }
  h.update_floats(trace.final_hidden);
  h.update_doubles(trace.logits.values());
  return h.digest();
}

}  // namespace lfdlab
