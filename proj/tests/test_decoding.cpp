#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lfdlab/decoding.hpp"
#include "lfdlab/error.hpp"
#include "lfdlab/toy_model.hpp"
#include "test_support.hpp"

using namespace lfdlab;
using namespace lfdlab::testing;

namespace {

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::Io;
}

// Hidden states are logits directly (identity lens).
class LensModel final : public InstrumentedModel {
 public:
  explicit LensModel(int layers, int vocab) {
    cfg_.n_layers = layers;
    cfg_.n_heads = 1;
    cfg_.d_model = vocab;
    cfg_.vocab_size = vocab;
    cfg_.eos_token = 0;
  }
  const ModelConfig& config() const override { return cfg_; }
  using InstrumentedModel::forward_trace;
  ForwardTrace forward_trace(std::span<const Token>, std::size_t, std::span<const std::size_t>) const override {
    throw Error(ErrorCode::Precondition, "unused");
  }
  DecodeCache new_cache() const override { return {}; }
  ForwardTrace forward_step(DecodeCache&, Token) const override { throw Error(ErrorCode::Precondition, "unused"); }
  LogVector logit_lens(std::span<const float> h) const override {
    return LogVector(std::vector<double>(h.begin(), h.end()));
  }
  std::uint64_t checksum() const override { return 0; }

 private:
  ModelConfig cfg_;
};

LogVector logs(std::initializer_list<double> ps) {
  std::vector<double> v;
  for (double p : ps) v.push_back(std::log(p));
  return log_softmax(v);
}

IksProfile scores(std::vector<double> s) { return IksProfile{std::move(s), 0}; }

// Index of the candidate with the smallest score, first on ties; written
// as a plain scan.
int brute_argmin(const std::vector<double>& s, const std::vector<int>& cands) {
  int best = -1;
  for (int l : cands) {
    if (best == -1 || s[static_cast<std::size_t>(l - 1)] < s[static_cast<std::size_t>(best - 1)]) best = l;
  }
  return best;
}

TokenSequence context(const TokenSequence& prompt, const std::vector<Token>& generated, std::size_t n) {
  TokenSequence t = prompt;
  t.insert(t.end(), generated.begin(), generated.begin() + static_cast<std::ptrdiff_t>(n));
  return t;
}

}  // namespace

TEST_CASE("layer selections") {
  CHECK(parse_layer_selection("latter-half-even", 8).candidates() == std::vector<int>{4, 6});
  CHECK(parse_layer_selection("latter-half", 8).candidates() == std::vector<int>{4, 5, 6, 7});
  CHECK(parse_layer_selection("all-even", 8).candidates() == std::vector<int>{2, 4, 6});
  CHECK(parse_layer_selection("all", 4).candidates() == std::vector<int>{1, 2, 3});
  CHECK(parse_layer_selection("2:9:even", 8).candidates() == std::vector<int>{2, 4, 6, 8});
  CHECK(parse_layer_selection("3:5", 8).candidates() == std::vector<int>{3, 4});
  CHECK(code_of([] { parse_layer_selection("0:4", 8); }) == ErrorCode::ConfigInvalid);
  CHECK(code_of([] { parse_layer_selection("bogus", 8); }) == ErrorCode::ConfigInvalid);
  CHECK(code_of([] { parse_layer_selection("2:x", 8); }) == ErrorCode::ConfigInvalid);
}

TEST_CASE("fusion defaults") {
  FusionConfig cfg;
  CHECK(cfg.tau == 0.1);
  CHECK(cfg.s == 10);
  CHECK(cfg.candidates(8) == std::vector<int>{4, 6});
  CHECK(cfg.candidates(32) == std::vector<int>{16, 18, 20, 22, 24, 26, 28, 30});
  DecoderSpec spec;
  CHECK(spec.tau == 0.1);
  CHECK(spec.layers == "latter-half-even");

  cfg.candidate_range = LayerRange{5, 6};
  CHECK(code_of([&] { cfg.candidates(8); }) == ErrorCode::EmptyCandidateSet);
  FusionConfig bad;
  bad.tau = 0.0;
  CHECK(code_of([&] { bad.validate(8); }) == ErrorCode::ConfigInvalid);
  FusionConfig fixed;
  fixed.mode = SelectionMode::Fixed;
  fixed.fixed_layer = 8;
  CHECK_NOTHROW(fixed.validate(8));
  fixed.fixed_layer = 9;
  CHECK(code_of([&] { fixed.validate(8); }) == ErrorCode::ConfigInvalid);
}

TEST_CASE("iks_profile on hand-built traces") {
  LensModel m(2, 2);
  ForwardTrace t;
  LayerTrace same;
  same.ffn_in = {0.3f, -1.0f};
  same.ffn_out = same.ffn_in;
  LayerTrace moved;
  moved.ffn_in = {0.0f, 0.0f};  // [0.5, 0.5]
  moved.ffn_out = {0.0f, static_cast<float>(std::log(3.0))};  // [0.25, 0.75]
  t.layers = {same, moved};

  const auto p = iks_profile(m, t);
  REQUIRE(p.scores.size() == 2);
  CHECK(p.scores[0] == 0.0);
  // Token probabilities of [0, x] with x the float-rounded ln 3.
  const double x = static_cast<double>(static_cast<float>(std::log(3.0)));
  const double q1 = 1.0 / (1.0 + std::exp(x));
  const double q = std::exp(x) / (1.0 + std::exp(x));
  const double m0 = 0.5 * (0.5 + q1), m1 = 0.5 * (0.5 + q);
  const double want = 0.5 * (0.5 * std::log(0.5 / m0) + 0.5 * std::log(0.5 / m1)) +
                      0.5 * (q1 * std::log(q1 / m0) + q * std::log(q / m1));
  CHECK(p.scores[1] == doctest::Approx(want).epsilon(1e-12));

  t.layers.pop_back();
  CHECK(code_of([&] { iks_profile(m, t); }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("iks bounds on the toy model") {
  ToyModel m(small_config(3));
  Rng rng(1);
  for (int it = 0; it < 20; ++it) {
    const auto t = random_tokens(rng, 1 + pick(rng, 20), 64);
    const auto p = iks_profile(m, m.forward_trace(t, t.size() - 1));
    for (double s : p.scores) {
      CHECK(s >= 0.0);
      CHECK(s <= std::numbers::ln2);
    }
  }
}

TEST_CASE("select_layer") {
  FusionConfig cfg;  // candidates {4, 6} for L = 8
  CHECK(select_layer(scores({0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8}), cfg) == 4);
  CHECK(select_layer(scores({0, 0, 0, 0.5, 0, 0.5, 0, 0}), cfg) == 4);
  CHECK(select_layer(scores({0, 0, 0, 0.5, 0, 0.4, 0, 0}), cfg) == 6);
  cfg.candidate_range = LayerRange{1, 9};
  CHECK(select_layer(scores({0.9, 0.3, 0.5, 0.3, 0.5, 0.6, 0.7, 0.1}), cfg) == 8);

  FusionConfig fixed;
  fixed.mode = SelectionMode::Fixed;
  fixed.fixed_layer = 3;
  CHECK(select_layer(scores(std::vector<double>(8, 0.0)), fixed) == 3);

  FusionConfig random;
  random.mode = SelectionMode::Random;
  random.seed = 5;
  int fours = 0;
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    const int l = select_layer(scores(std::vector<double>(8, 0.0)), random, rng);
    REQUIRE((l == 4 || l == 6));
    fours += l == 4;
  }
  CHECK(fours > 50);
  CHECK(fours < 150);
  CHECK(select_layer(scores(std::vector<double>(8, 0.0)), random) ==
        select_layer(scores(std::vector<double>(8, 0.0)), random));
}

TEST_CASE("property: select_layer equals an exhaustive scan") {
  Rng rng(2);
  for (int it = 0; it < 5000; ++it) {
    const int L = 2 * static_cast<int>(1 + pick(rng, 8));
    std::vector<double> s(static_cast<std::size_t>(L));
    for (auto& x : s) x = static_cast<double>(rng() % 5) * 0.1;  // coarse values force ties
    FusionConfig cfg;
    const int lo = 1 + static_cast<int>(pick(rng, static_cast<std::size_t>(L)));
    const int hi = lo + 1 + static_cast<int>(pick(rng, static_cast<std::size_t>(L - lo + 1)));
    cfg.candidate_range = LayerRange{lo, hi};
    cfg.even_only = rng() % 2 == 0;
    std::vector<int> cands;
    for (int l = lo; l < hi; ++l) {
      if (!cfg.even_only || l % 2 == 0) cands.push_back(l);
    }
    if (cands.empty()) {
      REQUIRE(code_of([&] { select_layer(scores(s), cfg); }) == ErrorCode::EmptyCandidateSet);
      continue;
    }
    REQUIRE(select_layer(scores(s), cfg) == brute_argmin(s, cands));
  }
}

TEST_CASE("fuse_gate hand case") {
  const auto pL = logs({0.7, 0.1, 0.1, 0.1});
  const auto pi = logs({0.25, 0.25, 0.25, 0.25});
  // tau*max = 0.1*ln 0.7 = -0.0357, 2nd max = ln 0.1 = -2.303, so theta = ln 0.1
  // and ln 0.25 = -1.386 passes everywhere.
  CHECK(gate_threshold(pL, 0.1, 2) == doctest::Approx(std::log(0.1)).epsilon(1e-14));
  const auto f = fuse_gate(pi, pL, 0.1, 2);
  REQUIRE(f.has_value());
  for (std::size_t t = 0; t < 4; ++t) CHECK((*f)[t] == doctest::Approx(pi[t] + pL[t]).epsilon(1e-14));
  const auto d = fused_distribution(*f);
  const double want[] = {0.7, 0.1, 0.1, 0.1};
  for (std::size_t t = 0; t < 4; ++t) CHECK(d[t] == doctest::Approx(want[t]).epsilon(1e-12));

  // s = 1 lifts theta to tau*max, above ln 0.25: nothing survives.
  CHECK_FALSE(fuse_gate(pi, pL, 0.1, 1).has_value());

  // A layer distribution that keeps only token 0 above theta.
  const auto sharp = logs({0.97, 0.01, 0.01, 0.01});
  const auto g = fuse_gate(sharp, pL, 0.1, 2);
  REQUIRE(g.has_value());
  CHECK(std::isfinite((*g)[0]));
  for (std::size_t t = 1; t < 4; ++t) CHECK((*g)[t] == kNegInf);
  CHECK(fused_distribution(*g)[0] == 1.0);
}

TEST_CASE("fuse_gate errors and self-fusion") {
  const auto a = logs({0.5, 0.5});
  const auto b = logs({0.2, 0.3, 0.5});
  CHECK(code_of([&] { fuse_gate(a, b, 0.1, 2); }) == ErrorCode::LengthMismatch);
  const LogVector raw(std::vector<double>{0.0, 1.0, 2.0});
  CHECK(code_of([&] { fuse_gate(raw, b, 0.1, 2); }) == ErrorCode::Precondition);

  const auto f = fuse_gate(b, b, 0.1, 10);
  REQUIRE(f.has_value());
  CHECK(argmax(fused_distribution(*f).probs()) == 2);
  // s larger than |V| is capped.
  CHECK(gate_threshold(b, 0.1, 10) == doctest::Approx(std::log(0.2)).epsilon(1e-14));
}

TEST_CASE("fused_distribution") {
  const auto eq = fused_distribution(LogVector(std::vector<double>{-1.0, kNegInf, -1.0, -1.0}));
  CHECK(eq[1] == 0.0);
  for (std::size_t t : {0u, 2u, 3u}) CHECK(eq[t] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(fused_distribution(LogVector(std::vector<double>{kNegInf, 0.0}))[1] == 1.0);
  CHECK(code_of([] { fused_distribution(LogVector(std::vector<double>{kNegInf, kNegInf})); }) == ErrorCode::AllNegInf);
}

TEST_CASE("property: gate soundness and monotone filtering in s") {
  Rng rng(3);
  for (int it = 0; it < 5000; ++it) {
    const std::size_t n = 2 + pick(rng, 30);
    const auto pi = log_softmax(random_logits(rng, n, 6.0, 0.05));
    const auto pL = log_softmax(random_logits(rng, n, 6.0, 0.05));
    const double tau = 0.01 + 0.99 * uniform01(rng);
    const int s = 1 + static_cast<int>(pick(rng, n + 3));
    const double theta = gate_threshold(pL, tau, s);
    const auto f = fuse_gate(pi, pL, tau, s);
    std::size_t survivors = 0;
    for (std::size_t t = 0; t < n; ++t) {
      const bool pass = pi[t] >= theta && pL[t] != kNegInf;
      survivors += pass;
      if (!f) {
        REQUIRE_FALSE(pass);
      } else if (pass) {
        REQUIRE((*f)[t] == pi[t] + pL[t]);
      } else {
        REQUIRE((*f)[t] == kNegInf);
      }
    }
    REQUIRE(f.has_value() == (survivors > 0));
    const auto g = fuse_gate(pi, pL, tau, s + 1);
    if (f) {
      REQUIRE(g.has_value());
      for (std::size_t t = 0; t < n; ++t) {
        if ((*f)[t] != kNegInf) REQUIRE((*g)[t] != kNegInf);
      }
    }
    if (f) {
      const auto d = fused_distribution(*f);
      double sum = 0.0;
      for (double p : d.probs()) sum += p;
      REQUIRE(std::abs(sum - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("greedy equals the no-cache argmax") {
  ToyModel m(small_config(4, 4, 2, 16, 64, 96));
  Rng rng(4);
  for (int it = 0; it < 5; ++it) {
    const auto prompt = random_tokens(rng, 8, 64);
    const auto r = decode_greedy(m, prompt, 12);
    CHECK(r.steps >= r.tokens.size());
    CHECK(r.selected_layers.empty());
    for (std::size_t i = 0; i < r.steps; ++i) {
      const auto ctx = context(prompt, r.tokens, i);
      const auto tr = m.forward_trace(ctx, ctx.size() - 1);
      const Token want = static_cast<Token>(argmax(tr.logits.values()));
      if (i < r.tokens.size()) {
        REQUIRE(r.tokens[i] == want);
      } else {
        REQUIRE(want == 0);
      }
    }
    CHECK(r.latency_ms > 0.0);
  }
}

TEST_CASE("fixed final layer reproduces greedy") {
  Rng rng(5);
  for (int it = 0; it < 10; ++it) {
    ToyModel m(small_config(rng(), 4, 2, 16, 64, 96));
    const auto prompt = random_tokens(rng, 1 + pick(rng, 10), 64);
    FusionConfig cfg;
    cfg.mode = SelectionMode::Fixed;
    cfg.fixed_layer = 4;
    cfg.max_new_tokens = 16;
    const auto g = decode_greedy(m, prompt, 16);
    const auto f = decode_lfd(m, prompt, cfg);
    REQUIRE(g.tokens == f.tokens);
    REQUIRE(f.fallback_count() == 0);
    REQUIRE(std::all_of(f.selected_layers.begin(), f.selected_layers.end(), [](int l) { return l == 4; }));
  }
}

TEST_CASE("decode_lfd is deterministic and matches a manual replay") {
  ToyModel m(small_config(6, 8, 2, 16, 64, 96));
  Rng rng(6);
  const auto prompt = random_tokens(rng, 10, 64);
  FusionConfig cfg;
  cfg.max_new_tokens = 3;
  cfg.tau = 0.5;
  cfg.s = 3;
  const auto a = decode_lfd(m, prompt, cfg);
  const auto b = decode_lfd(m, prompt, cfg);
  CHECK(a.tokens == b.tokens);
  CHECK(a.selected_layers == b.selected_layers);
  CHECK(a.fallback == b.fallback);

  // Replay every step from a fresh full forward pass.
  TokenSequence ctx = prompt;
  for (std::size_t step = 0; step < a.steps; ++step) {
    const auto tr = m.forward_trace(ctx, ctx.size() - 1);
    std::vector<double> iks;
    for (const auto& layer : tr.layers) {
      iks.push_back(jsd(softmax(m.logit_lens(layer.ffn_in)), softmax(m.logit_lens(layer.ffn_out))));
    }
    const int layer = brute_argmin(iks, {4, 6});
    REQUIRE(a.selected_layers[step] == layer);
    const auto pi = log_softmax(m.logit_lens(tr.layers[static_cast<std::size_t>(layer - 1)].ffn_out));
    const auto pL = log_softmax(tr.logits);
    std::vector<double> sorted(pL.values().begin(), pL.values().end());
    std::sort(sorted.rbegin(), sorted.rend());
    const double theta = std::min(0.5 * sorted[0], sorted[2]);
    std::size_t best = 0;
    double best_v = kNegInf;
    for (std::size_t t = 0; t < pL.size(); ++t) {
      if (pi[t] >= theta && pi[t] + pL[t] > best_v) {
        best_v = pi[t] + pL[t];
        best = t;
      }
    }
    const bool fell_back = best_v == kNegInf;
    if (fell_back) best = argmax(pL.values());
    REQUIRE(a.fallback[step] == fell_back);
    if (step < a.tokens.size()) {
      REQUIRE(a.tokens[step] == static_cast<Token>(best));
      ctx.push_back(a.tokens[step]);
    } else {
      REQUIRE(best == 0);
    }
  }
  CHECK(a.steps == 3);
}

TEST_CASE("per-prompt selection keeps one layer") {
  ToyModel m(small_config(7, 8, 2, 16, 64, 96));
  Rng rng(7);
  FusionConfig cfg;
  cfg.per_prompt = true;
  cfg.max_new_tokens = 10;
  const auto r = decode_lfd(m, random_tokens(rng, 6, 64), cfg);
  REQUIRE_FALSE(r.selected_layers.empty());
  CHECK(std::all_of(r.selected_layers.begin(), r.selected_layers.end(),
                    [&](int l) { return l == r.selected_layers.front(); }));
}

TEST_CASE("decode stops at a full context window") {
  ToyModel m(small_config(8, 2, 2, 8, 16, 6));
  TokenSequence prompt{1, 2, 3, 4};
  const auto r = decode_greedy(m, prompt, 10);
  CHECK(r.tokens.size() + prompt.size() <= 7);
  TokenSequence too_long(7, 1);
  CHECK(code_of([&] { decode_greedy(m, too_long, 1); }) == ErrorCode::SequenceTooLong);
}

TEST_CASE("dola") {
  ToyModel m(small_config(9, 8, 2, 16, 64, 96));
  Rng rng(8);
  const auto prompt = random_tokens(rng, 9, 64);

  DolaConfig one;
  one.candidate_range = LayerRange{4, 5};
  one.max_new_tokens = 6;
  const auto r = decode_dola(m, prompt, one);
  CHECK(std::all_of(r.selected_layers.begin(), r.selected_layers.end(), [](int l) { return l == 4; }));

  DolaConfig cfg;
  cfg.max_new_tokens = 6;
  CHECK(cfg.candidates(8) == std::vector<int>{2, 4, 6});
  const auto a = decode_dola(m, prompt, cfg);
  const auto b = decode_dola(m, prompt, cfg);
  CHECK(a.tokens == b.tokens);
  TokenSequence ctx = prompt;
  for (std::size_t step = 0; step < a.steps; ++step) {
    const auto tr = m.forward_trace(ctx, ctx.size() - 1);
    const auto fin = softmax(tr.logits);
    int best = 0;
    double best_d = -1.0;
    for (int l : {2, 4, 6}) {
      const double d = jsd(softmax(m.logit_lens(tr.layers[static_cast<std::size_t>(l - 1)].ffn_out)), fin);
      if (d > best_d) {
        best_d = d;
        best = l;
      }
    }
    REQUIRE(a.selected_layers[step] == best);
    REQUIRE(select_premature_layer(m, tr, std::vector<int>{2, 4, 6}) == best);
    if (step < a.tokens.size()) ctx.push_back(a.tokens[step]);
  }
}

TEST_CASE("decoder dispatch") {
  CHECK(parse_decoder_kind("lfd-random") == DecoderKind::LfdRandom);
  CHECK(to_string(DecoderKind::Dola) == "dola");
  CHECK(code_of([] { parse_decoder_kind("beam"); }) == ErrorCode::ConfigInvalid);
  ToyModel m(small_config(10, 8, 2, 16, 64, 96));
  const TokenSequence prompt{5, 6, 7};
  DecoderSpec spec;
  spec.max_new_tokens = 5;
  spec.kind = DecoderKind::LfdFixed;
  CHECK(decode(m, prompt, spec, 1).tokens == decode_greedy(m, prompt, 5).tokens);
  spec.kind = DecoderKind::LfdRandom;
  CHECK(decode(m, prompt, spec, 1).selected_layers == decode(m, prompt, spec, 1).selected_layers);
  CHECK(detokenize(std::vector<Token>{'h', 'i'}) == "hi");
}
