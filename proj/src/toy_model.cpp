#include "lfdlab/toy_model.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <ostream>
#include <random>
#include <string>

#include "lfdlab/error.hpp"
#include "lfdlab/hash.hpp"

namespace lfdlab {

namespace {

std::atomic<std::uint64_t> g_next_instance{1};

class WeightStream {
 public:
  explicit WeightStream(std::uint64_t seed) : rng_(seed) {}

  std::vector<float> draw(std::size_t n, double scale) {
    std::vector<float> out(n);
    for (auto& w : out) {
      const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
      w = static_cast<float>((2.0 * u - 1.0) * scale);
    }
    return out;
  }

 private:
  std::mt19937_64 rng_;
};

void rmsnorm(std::span<const float> x, std::span<const float> gain, std::span<float> out) {
  float ss = 0.0f;
  for (float v : x) ss += v * v;
  const float inv = 1.0f / std::sqrt(ss / static_cast<float>(x.size()) + ToyModel::kNormEps);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * gain[i];
}

// tanh approximation
float gelu(float x) {
  constexpr float kC = 0.7978845608028654f;  // sqrt(2/pi)
  return 0.5f * x * (1.0f + std::tanh(kC * (x + 0.044715f * x * x * x)));
}

// Eight interleaved partial sums, combined pairwise. The order is fixed, so
// results are reproducible; the forward_trace and forward_step paths share it.
float dot(const float* a, const float* b, std::size_t n) {
  float acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t k = 0; k < 8; ++k) acc[k] += a[i + k] * b[i + k];
  }
  for (std::size_t k = 0; i < n; ++i, ++k) acc[k] += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

// out[r] = sum_c w[r][c] * x[c]
void matvec(const std::vector<float>& w, std::span<const float> x, std::span<float> out) {
  const std::size_t cols = x.size();
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = dot(w.data() + r * cols, x.data(), cols);
}

void add_matvec(const std::vector<float>& w, std::span<const float> x, std::span<float> inout) {
  std::vector<float> tmp(inout.size());
  matvec(w, x, tmp);
  for (std::size_t i = 0; i < inout.size(); ++i) inout[i] += tmp[i];
}

template <typename Fn>
void for_each_tensor(const ToyWeights& w, Fn&& fn) {
  fn(w.tok_embed);
  fn(w.pos_embed);
  for (const auto& b : w.blocks) {
    fn(b.attn_norm);
    fn(b.wq);
    fn(b.wk);
    fn(b.wv);
    fn(b.wo);
    fn(b.ffn_norm);
    fn(b.w_up);
    fn(b.w_down);
  }
  fn(w.final_norm);
  fn(w.unembed);
}

// Attention of one query position over keys [0, n_keys) for every head.
// Accumulates the head outputs into `out` and, if requested, the score and
// probability rows into `layer`.
void attend(const ModelConfig& cfg, std::span<const float> q, const float* keys, const float* values,
            std::size_t n_keys, std::span<const std::size_t> masked_keys, std::span<float> out,
            LayerTrace* layer) {
  const int d = cfg.d_model;
  const int dh = cfg.head_dim();
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  std::vector<double> scores(n_keys);
  for (int m = 0; m < cfg.n_heads; ++m) {
    const std::size_t off = static_cast<std::size_t>(m * dh);
    for (std::size_t j = 0; j < n_keys; ++j) {
      const float* k = keys + j * static_cast<std::size_t>(d) + off;
      scores[j] = static_cast<double>(dot(q.data() + off, k, static_cast<std::size_t>(dh)) * scale);
    }
    for (std::size_t j : masked_keys) scores[j] = kNegInf;
    Distribution probs = softmax(scores);
    for (std::size_t j = 0; j < n_keys; ++j) {
      const float pj = static_cast<float>(probs[j]);
      const float* v = values + j * static_cast<std::size_t>(d) + off;
      for (int i = 0; i < dh; ++i) out[off + static_cast<std::size_t>(i)] += pj * v[i];
    }
    if (layer != nullptr) {
      layer->scores.push_back(scores);
      layer->attn.push_back(std::move(probs));
    }
  }
}

void ffn(const BlockWeights& b, std::span<float> h, int d_ff) {
  std::vector<float> normed(h.size());
  std::vector<float> up(static_cast<std::size_t>(d_ff));
  rmsnorm(h, b.ffn_norm, normed);
  matvec(b.w_up, normed, up);
  for (float& u : up) u = gelu(u);
  add_matvec(b.w_down, up, h);
}

}  // namespace

ToyModel::ToyModel(const ModelConfig& cfg) : cfg_(cfg), instance_id_(g_next_instance.fetch_add(1)) {
  cfg_.validate();
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  const auto d_ff = static_cast<std::size_t>(cfg_.d_ff());
  const auto vocab = static_cast<std::size_t>(cfg_.vocab_size);
  const double a_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double a_ff = 1.0 / std::sqrt(static_cast<double>(d_ff));

  WeightStream stream(cfg_.seed);
  weights_.tok_embed = stream.draw(vocab * d, 1.0);
  weights_.pos_embed = stream.draw(static_cast<std::size_t>(cfg_.max_seq_len) * d, 0.5);
  weights_.blocks.resize(static_cast<std::size_t>(cfg_.n_layers));
  for (auto& b : weights_.blocks) {
    b.attn_norm.assign(d, 1.0f);
    b.ffn_norm.assign(d, 1.0f);
    b.wq = stream.draw(d * d, a_d);
    b.wk = stream.draw(d * d, a_d);
    b.wv = stream.draw(d * d, a_d);
    b.wo = stream.draw(d * d, a_d);
    b.w_up = stream.draw(d_ff * d, a_d);
    b.w_down = stream.draw(d * d_ff, a_ff);
  }
  weights_.final_norm.assign(d, 1.0f);
  weights_.unembed = stream.draw(vocab * d, 4.0 * a_d);
}

std::uint64_t ToyModel::checksum() const {
  Fnv1a h;
  for_each_tensor(weights_, [&](const std::vector<float>& t) { h.update_floats(t); });
  return h.digest();
}

void ToyModel::dump_weights(std::ostream& out) const {
  for_each_tensor(weights_, [&](const std::vector<float>& t) {
    for (float x : t) {
      std::uint32_t bits;
      std::memcpy(&bits, &x, sizeof bits);
      const char le[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                          static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
      out.write(le, 4);
    }
  });
}

LogVector ToyModel::logit_lens(std::span<const float> hidden) const {
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  if (hidden.size() != d) {
    throw Error(ErrorCode::DimensionMismatch,
                "hidden state has dimension " + std::to_string(hidden.size()) + ", model uses " + std::to_string(d));
  }
  std::vector<float> normed(d);
  rmsnorm(hidden, weights_.final_norm, normed);
  std::vector<float> logits(static_cast<std::size_t>(cfg_.vocab_size));
  matvec(weights_.unembed, normed, logits);
  return LogVector(std::vector<double>(logits.begin(), logits.end()));
}

DecodeCache ToyModel::new_cache() const {
  DecodeCache cache;
  cache.owner = instance_id_;
  cache.keys.resize(static_cast<std::size_t>(cfg_.n_layers));
  cache.values.resize(static_cast<std::size_t>(cfg_.n_layers));
  return cache;
}

ForwardTrace ToyModel::step(DecodeCache& cache, Token token, bool want_trace) const {
  check_cache(cache, instance_id_);
  if (cache.keys.size() != static_cast<std::size_t>(cfg_.n_layers) ||
      cache.values.size() != cache.keys.size()) {
    throw Error(ErrorCode::CacheMismatch, "cache layer count does not match the model");
  }
  if (token < 0 || token >= cfg_.vocab_size) throw Error(ErrorCode::TokenOutOfRange, "token id " + std::to_string(token));

  const auto d = static_cast<std::size_t>(cfg_.d_model);
  const std::size_t pos = cache.length();
  for (std::size_t l = 0; l < cache.keys.size(); ++l) {
    if (cache.keys[l].size() != pos * d || cache.values[l].size() != pos * d) {
      throw Error(ErrorCode::CacheMismatch, "cache length is inconsistent across layers");
    }
  }

  std::vector<float> h(d);
  const float* te = weights_.tok_embed.data() + static_cast<std::size_t>(token) * d;
  const float* pe = weights_.pos_embed.data() + pos * d;
  for (std::size_t i = 0; i < d; ++i) h[i] = te[i] + pe[i];

  ForwardTrace trace;
  trace.position = pos;
  std::vector<float> a(d), q(d), k(d), v(d), attn_out(d);
  for (std::size_t l = 0; l < weights_.blocks.size(); ++l) {
    const auto& b = weights_.blocks[l];
    rmsnorm(h, b.attn_norm, a);
    matvec(b.wq, a, q);
    matvec(b.wk, a, k);
    matvec(b.wv, a, v);
    cache.keys[l].insert(cache.keys[l].end(), k.begin(), k.end());
    cache.values[l].insert(cache.values[l].end(), v.begin(), v.end());

    LayerTrace layer;
    std::fill(attn_out.begin(), attn_out.end(), 0.0f);
    attend(cfg_, q, cache.keys[l].data(), cache.values[l].data(), pos + 1, {}, attn_out,
           want_trace ? &layer : nullptr);
    add_matvec(b.wo, attn_out, h);
    if (want_trace) layer.ffn_in = h;
    ffn(b, h, cfg_.d_ff());
    if (want_trace) {
      layer.ffn_out = h;
      trace.layers.push_back(std::move(layer));
    }
  }
  cache.tokens.push_back(token);
  if (want_trace) {
    trace.final_hidden = h;
    trace.logits = logit_lens(h);
  }
  return trace;
}

ForwardTrace ToyModel::forward_step(DecodeCache& cache, Token token) const { return step(cache, token, true); }

ForwardTrace ToyModel::prefill(DecodeCache& cache, std::span<const Token> tokens) const {
  if (tokens.empty()) throw Error(ErrorCode::Precondition, "prefill with no tokens");
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) step(cache, tokens[i], false);
  return step(cache, tokens.back(), true);
}

// Whole-prefix pass, layer by layer over all positions; independent of the
// cache path used by forward_step.
ForwardTrace ToyModel::forward_trace(std::span<const Token> tokens, std::size_t position,
                                     std::span<const std::size_t> masked_keys) const {
  check_tokens(tokens);
  if (position >= tokens.size()) {
    throw Error(ErrorCode::PositionOutOfRange,
                "position " + std::to_string(position) + " with " + std::to_string(tokens.size()) + " tokens");
  }
  for (std::size_t j : masked_keys) {
    if (j > position) throw Error(ErrorCode::PositionOutOfRange, "masked key " + std::to_string(j) + " is not visible");
  }

  const auto d = static_cast<std::size_t>(cfg_.d_model);
  const std::size_t n = position + 1;
  std::vector<float> hs(n * d);
  for (std::size_t t = 0; t < n; ++t) {
    const float* te = weights_.tok_embed.data() + static_cast<std::size_t>(tokens[t]) * d;
    const float* pe = weights_.pos_embed.data() + t * d;
    for (std::size_t i = 0; i < d; ++i) hs[t * d + i] = te[i] + pe[i];
  }

  ForwardTrace trace;
  trace.position = position;
  std::vector<float> qs(n * d), ks(n * d), vs(n * d), a(d), attn_out(d);
  for (const auto& b : weights_.blocks) {
    for (std::size_t t = 0; t < n; ++t) {
      std::span<float> h(hs.data() + t * d, d);
      rmsnorm(h, b.attn_norm, a);
      matvec(b.wq, a, std::span<float>(qs.data() + t * d, d));
      matvec(b.wk, a, std::span<float>(ks.data() + t * d, d));
      matvec(b.wv, a, std::span<float>(vs.data() + t * d, d));
    }
    LayerTrace layer;
    for (std::size_t t = 0; t < n; ++t) {
      const bool traced = t == position;
      std::fill(attn_out.begin(), attn_out.end(), 0.0f);
      attend(cfg_, std::span<const float>(qs.data() + t * d, d), ks.data(), vs.data(), t + 1,
             traced ? masked_keys : std::span<const std::size_t>{}, attn_out, traced ? &layer : nullptr);
      add_matvec(b.wo, attn_out, std::span<float>(hs.data() + t * d, d));
    }
    std::span<float> traced_h(hs.data() + position * d, d);
    layer.ffn_in.assign(traced_h.begin(), traced_h.end());
    for (std::size_t t = 0; t < n; ++t) ffn(b, std::span<float>(hs.data() + t * d, d), cfg_.d_ff());
    layer.ffn_out.assign(traced_h.begin(), traced_h.end());
    trace.layers.push_back(std::move(layer));
  }
  trace.final_hidden.assign(hs.begin() + static_cast<std::ptrdiff_t>(position * d),
                            hs.begin() + static_cast<std::ptrdiff_t>((position + 1) * d));
  trace.logits = logit_lens(trace.final_hidden);
  return trace;
}

}  // namespace lfdlab
