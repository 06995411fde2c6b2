#include "lfdlab/continuation_model.hpp"

#include <algorithm>
#include <atomic>
#include <map>
#include <string>

#include "lfdlab/error.hpp"
#include "lfdlab/hash.hpp"

namespace lfdlab {

namespace {

// Shares the id space with nothing else; ids only need to differ between
// live instances of this class.
std::atomic<std::uint64_t> g_next_instance{1ULL << 63};

std::string context_key(std::span<const Token> tokens, std::size_t end, std::size_t order) {
  std::string key(order, '\0');
  for (std::size_t i = 0; i < order; ++i) key[i] = static_cast<char>(tokens[end - order + i] & 0xff);
  return key;
}

}  // namespace

ContinuationModel::ContinuationModel(const ModelConfig& cfg, std::size_t order,
                                     const std::vector<std::string>& scripts, double margin)
    : cfg_(cfg), order_(order), margin_(margin), instance_id_(g_next_instance.fetch_add(1)) {
  cfg_.validate();
  if (cfg_.d_model != cfg_.vocab_size) throw Error(ErrorCode::ConfigInvalid, "continuation model needs d_model == vocab_size");
  if (cfg_.vocab_size > 256) throw Error(ErrorCode::ConfigInvalid, "continuation model is byte-level (vocab <= 256)");
  if (order_ == 0) throw Error(ErrorCode::ConfigInvalid, "context order must be positive");
  for (const auto& script : scripts) {
    for (std::size_t i = order_; i < script.size(); ++i) {
      const std::string key = script.substr(i - order_, order_);
      const auto next = static_cast<Token>(static_cast<unsigned char>(script[i]));
      if (next >= cfg_.vocab_size) throw Error(ErrorCode::ConfigInvalid, "script byte outside the vocabulary");
      auto [it, inserted] = table_.emplace(key, next);
      if (!inserted && it->second != next) {
        throw Error(ErrorCode::ConfigInvalid, "scripts disagree after context \"" + key + "\"");
      }
    }
  }
}

Token ContinuationModel::predict(std::span<const Token> tokens) const {
  if (tokens.size() < order_) return cfg_.eos_token;
  auto it = table_.find(context_key(tokens, tokens.size(), order_));
  return it == table_.end() ? cfg_.eos_token : it->second;
}

ForwardTrace ContinuationModel::trace_at(std::span<const Token> prefix,
                                         std::span<const std::size_t> masked_keys) const {
  const auto vocab = static_cast<std::size_t>(cfg_.vocab_size);
  const std::size_t n = prefix.size();
  std::vector<float> z(vocab, 0.0f);
  z[static_cast<std::size_t>(predict(prefix))] = static_cast<float>(margin_);

  std::vector<double> scores(n, 0.0);
  for (std::size_t j : masked_keys) scores[j] = kNegInf;
  const Distribution attn = softmax(scores);

  ForwardTrace trace;
  trace.position = n - 1;
  const auto L = static_cast<float>(cfg_.n_layers);
  for (int l = 1; l <= cfg_.n_layers; ++l) {
    LayerTrace layer;
    layer.ffn_in.resize(vocab);
    layer.ffn_out.resize(vocab);
    for (std::size_t i = 0; i < vocab; ++i) {
      layer.ffn_in[i] = z[i] * static_cast<float>(l - 1) / L;
      layer.ffn_out[i] = z[i] * static_cast<float>(l) / L;
    }
    layer.scores.assign(static_cast<std::size_t>(cfg_.n_heads), scores);
    layer.attn.assign(static_cast<std::size_t>(cfg_.n_heads), attn);
    trace.layers.push_back(std::move(layer));
  }
  trace.final_hidden = z;
  trace.logits = logit_lens(z);
  return trace;
}

ForwardTrace ContinuationModel::forward_trace(std::span<const Token> tokens, std::size_t position,
                                              std::span<const std::size_t> masked_keys) const {
  check_tokens(tokens);
  if (position >= tokens.size()) throw Error(ErrorCode::PositionOutOfRange, "position " + std::to_string(position));
  for (std::size_t j : masked_keys) {
    if (j > position) throw Error(ErrorCode::PositionOutOfRange, "masked key " + std::to_string(j) + " is not visible");
  }
  return trace_at(tokens.first(position + 1), masked_keys);
}

DecodeCache ContinuationModel::new_cache() const {
  DecodeCache cache;
  cache.owner = instance_id_;
  return cache;
}

ForwardTrace ContinuationModel::forward_step(DecodeCache& cache, Token token) const {
  check_cache(cache, instance_id_);
  if (token < 0 || token >= cfg_.vocab_size) throw Error(ErrorCode::TokenOutOfRange, "token id " + std::to_string(token));
  cache.tokens.push_back(token);
  return trace_at(cache.tokens, {});
}

LogVector ContinuationModel::logit_lens(std::span<const float> hidden) const {
  if (hidden.size() != static_cast<std::size_t>(cfg_.d_model)) {
    throw Error(ErrorCode::DimensionMismatch, "hidden state has dimension " + std::to_string(hidden.size()));
  }
  return LogVector(std::vector<double>(hidden.begin(), hidden.end()));
}

std::uint64_t ContinuationModel::checksum() const {
  // unordered_map iteration order is unspecified; hash a sorted view.
  std::map<std::string, Token> sorted(table_.begin(), table_.end());
  Fnv1a h;
  h.update_u64(order_);
  for (const auto& [key, next] : sorted) {
    h.update(key);
    h.update_u64(static_cast<std::uint64_t>(next));
  }
  return h.digest();
}

}  // namespace lfdlab
