#include "lfdlab/decoding.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "lfdlab/error.hpp"

namespace lfdlab {

std::vector<int> LayerSelection::candidates() const {
  std::vector<int> out;
  for (int l = range.begin; l < range.end; ++l) {
    if (!even_only || l % 2 == 0) out.push_back(l);
  }
  return out;
}

LayerSelection parse_layer_selection(const std::string& spec, int n_layers) {
  const int half = n_layers / 2;
  if (spec == "latter-half-even") return {{half, n_layers}, true};
  if (spec == "latter-half") return {{half, n_layers}, false};
  if (spec == "all-even") return {{1, n_layers}, true};
  if (spec == "all") return {{1, n_layers}, false};

  // LO:HI[:even]
  const auto first = spec.find(':');
  if (first != std::string::npos) {
    const auto second = spec.find(':', first + 1);
    const std::string lo = spec.substr(0, first);
    const std::string hi = spec.substr(first + 1, second == std::string::npos ? std::string::npos : second - first - 1);
    const std::string flag = second == std::string::npos ? "" : spec.substr(second + 1);
    try {
      std::size_t used_lo = 0, used_hi = 0;
      LayerSelection sel{{std::stoi(lo, &used_lo), std::stoi(hi, &used_hi)}, flag == "even"};
      if (used_lo == lo.size() && used_hi == hi.size() && (flag.empty() || flag == "even")) {
        if (sel.range.begin < 1 || sel.range.end > n_layers + 1 || sel.range.begin >= sel.range.end) {
          throw Error(ErrorCode::ConfigInvalid, "layer range " + spec + " outside 1.." + std::to_string(n_layers));
        }
        return sel;
      }
    } catch (const std::logic_error&) {
      // fall through to the generic message
    }
  }
  throw Error(ErrorCode::ConfigInvalid,
              "unknown layer selection '" + spec + "' (latter-half-even|latter-half|all-even|all|LO:HI[:even])");
}

std::vector<int> FusionConfig::candidates(int n_layers) const {
  const LayerRange r = candidate_range.value_or(LayerRange{n_layers / 2, n_layers});
  auto out = LayerSelection{r, even_only}.candidates();
  out.erase(std::remove_if(out.begin(), out.end(), [&](int l) { return l < 1 || l > n_layers; }), out.end());
  if (out.empty()) {
    throw Error(ErrorCode::EmptyCandidateSet, "no candidate layers in [" + std::to_string(r.begin) + ", " +
                                                  std::to_string(r.end) + ")" + (even_only ? " (even only)" : ""));
  }
  return out;
}

void FusionConfig::validate(int n_layers) const {
  if (!(tau > 0.0 && tau <= 1.0)) throw Error(ErrorCode::ConfigInvalid, "tau must be in (0, 1]");
  if (s < 1) throw Error(ErrorCode::ConfigInvalid, "s must be >= 1");
  if (max_new_tokens < 0) throw Error(ErrorCode::ConfigInvalid, "max_new_tokens must be >= 0");
  if (mode == SelectionMode::Fixed) {
    if (fixed_layer < 1 || fixed_layer > n_layers) {
      throw Error(ErrorCode::ConfigInvalid, "fixed layer " + std::to_string(fixed_layer) + " outside 1.." +
                                                std::to_string(n_layers));
    }
    return;
  }
  candidates(n_layers);
}

std::vector<int> DolaConfig::candidates(int n_layers) const {
  const LayerRange r = candidate_range.value_or(LayerRange{1, n_layers});
  auto out = LayerSelection{r, even_only}.candidates();
  out.erase(std::remove_if(out.begin(), out.end(), [&](int l) { return l < 1 || l > n_layers; }), out.end());
  if (out.empty()) throw Error(ErrorCode::EmptyCandidateSet, "no DoLA candidate layers");
  return out;
}

IksProfile iks_profile(const InstrumentedModel& model, const ForwardTrace& trace) {
  if (trace.layers.size() != static_cast<std::size_t>(model.config().n_layers)) {
    throw Error(ErrorCode::DimensionMismatch, "trace has " + std::to_string(trace.layers.size()) + " layers");
  }
  IksProfile profile;
  profile.position = trace.position;
  profile.scores.reserve(trace.layers.size());
  for (const auto& layer : trace.layers) {
    const auto p_in = softmax(model.logit_lens(layer.ffn_in));
    const auto p_out = softmax(model.logit_lens(layer.ffn_out));
    profile.scores.push_back(jsd(p_in, p_out));
  }
  return profile;
}

int select_layer(const IksProfile& profile, const FusionConfig& cfg, std::mt19937_64& rng) {
  const int n_layers = static_cast<int>(profile.scores.size());
  switch (cfg.mode) {
    case SelectionMode::Fixed:
      cfg.validate(n_layers);
      return cfg.fixed_layer;
    case SelectionMode::Random: {
      const auto cands = cfg.candidates(n_layers);
      std::uniform_int_distribution<std::size_t> pick(0, cands.size() - 1);
      return cands[pick(rng)];
    }
    case SelectionMode::Dynamic: {
      const auto cands = cfg.candidates(n_layers);
      int best = cands.front();
      for (int l : cands) {
        if (profile.scores[static_cast<std::size_t>(l - 1)] < profile.scores[static_cast<std::size_t>(best - 1)]) {
          best = l;
        }
      }
      return best;
    }
  }
  return cfg.fixed_layer;
}

int select_layer(const IksProfile& profile, const FusionConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  return select_layer(profile, cfg, rng);
}

double gate_threshold(const LogVector& p_final, double tau, int s) {
  std::size_t finite = 0;
  for (double v : p_final.values()) finite += std::isfinite(v) ? 1 : 0;
  const std::size_t rank = std::min<std::size_t>(static_cast<std::size_t>(std::max(s, 1)), finite);
  return std::min(tau * kth_max(p_final, 1), kth_max(p_final, rank));
}

std::optional<LogVector> fuse_gate(const LogVector& p_layer, const LogVector& p_final, double tau, int s) {
  if (p_layer.size() != p_final.size()) {
    throw Error(ErrorCode::LengthMismatch, "fusion operands have lengths " + std::to_string(p_layer.size()) +
                                               " and " + std::to_string(p_final.size()));
  }
  if (!p_layer.normalized() || !p_final.normalized()) {
    throw Error(ErrorCode::Precondition, "fuse_gate expects log_softmax outputs");
  }
  const double theta = gate_threshold(p_final, tau, s);
  std::vector<double> fused(p_layer.size(), kNegInf);
  bool any = false;
  for (std::size_t t = 0; t < fused.size(); ++t) {
    if (p_layer[t] >= theta && p_final[t] != kNegInf) {
      fused[t] = p_layer[t] + p_final[t];
      any = true;
    }
  }
  if (!any) return std::nullopt;
  return LogVector(std::move(fused));
}

Distribution fused_distribution(const LogVector& fused) { return softmax(fused); }

std::size_t DecodeResult::fallback_count() const {
  return static_cast<std::size_t>(std::count(fallback.begin(), fallback.end(), true));
}

std::string detokenize(std::span<const Token> tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (Token t : tokens) out.push_back(t >= 0 && t < 256 ? static_cast<char>(static_cast<unsigned char>(t)) : '?');
  return out;
}

namespace {

struct StepChoice {
  Token token = 0;
  int layer = 0;  // 0: no layer involved
  bool fallback = false;
};

// Shared autoregressive loop. `choose` maps the trace at the current last
// token to the next token.
template <typename Choose>
DecodeResult run_decode(const InstrumentedModel& model, std::span<const Token> prompt, int max_new_tokens,
                        bool records_layers, Choose&& choose) {
  const auto start = std::chrono::steady_clock::now();
  if (prompt.empty()) throw Error(ErrorCode::Precondition, "empty prompt");
  const auto& cfg = model.config();
  if (prompt.size() > static_cast<std::size_t>(cfg.max_seq_len)) {
    throw Error(ErrorCode::SequenceTooLong, "prompt of " + std::to_string(prompt.size()) + " tokens exceeds max_seq_len " +
                                                std::to_string(cfg.max_seq_len));
  }

  DecodeResult result;
  DecodeCache cache = model.new_cache();
  ForwardTrace trace = model.prefill(cache, prompt);
  for (int step = 0; step < max_new_tokens; ++step) {
    const StepChoice c = choose(trace);
    ++result.steps;
    if (records_layers) {
      result.selected_layers.push_back(c.layer);
      result.fallback.push_back(c.fallback);
    }
    if (c.token == cfg.eos_token) {
      result.hit_eos = true;
      break;
    }
    result.tokens.push_back(c.token);
    // Stop at the budget or when the context window is full.
    if (step + 1 == max_new_tokens || cache.length() >= static_cast<std::size_t>(cfg.max_seq_len)) break;
    trace = model.forward_step(cache, c.token);
  }
  result.text = detokenize(result.tokens);

  const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  result.latency_ms = std::max(elapsed, 1e-9) * 1e3;
  result.tokens_per_s = static_cast<double>(result.tokens.size()) / std::max(elapsed, 1e-9);
  return result;
}

}  // namespace

DecodeResult decode_greedy(const InstrumentedModel& model, std::span<const Token> prompt, int max_new_tokens) {
  return run_decode(model, prompt, max_new_tokens, false, [](const ForwardTrace& trace) {
    return StepChoice{static_cast<Token>(argmax(trace.logits.values())), 0, false};
  });
}

DecodeResult decode_lfd(const InstrumentedModel& model, std::span<const Token> prompt, const FusionConfig& cfg) {
  const int n_layers = model.config().n_layers;
  cfg.validate(n_layers);
  std::mt19937_64 rng(cfg.seed);
  int prompt_layer = 0;

  return run_decode(model, prompt, cfg.max_new_tokens, true, [&](const ForwardTrace& trace) {
    int layer = prompt_layer;
    if (layer == 0) {
      if (cfg.mode == SelectionMode::Dynamic) {
        layer = select_layer(iks_profile(model, trace), cfg, rng);
      } else {
        // Fixed and random selection do not look at the scores.
        layer = select_layer(IksProfile{std::vector<double>(static_cast<std::size_t>(n_layers), 0.0), trace.position},
                             cfg, rng);
      }
      if (cfg.per_prompt) prompt_layer = layer;
    }

    const LogVector p_layer = log_softmax(model.logit_lens(trace.layers[static_cast<std::size_t>(layer - 1)].ffn_out));
    const LogVector p_final = log_softmax(trace.logits);
    const auto fused = fuse_gate(p_layer, p_final, cfg);
    if (!fused) return StepChoice{static_cast<Token>(argmax(p_final.values())), layer, true};
    return StepChoice{static_cast<Token>(argmax(fused_distribution(*fused).probs())), layer, false};
  });
}

int select_premature_layer(const InstrumentedModel& model, const ForwardTrace& trace, std::span<const int> candidates) {
  if (candidates.empty()) throw Error(ErrorCode::EmptyCandidateSet, "no premature-layer candidates");
  const auto final_dist = softmax(trace.logits);
  int best = candidates.front();
  double best_div = -1.0;
  for (int l : candidates) {
    const auto dist = softmax(model.logit_lens(trace.layers[static_cast<std::size_t>(l - 1)].ffn_out));
    const double div = jsd(dist, final_dist);
    if (div > best_div) {
      best_div = div;
      best = l;
    }
  }
  return best;
}

DecodeResult decode_dola(const InstrumentedModel& model, std::span<const Token> prompt, const DolaConfig& cfg) {
  const auto candidates = cfg.candidates(model.config().n_layers);
  return run_decode(model, prompt, cfg.max_new_tokens, true, [&](const ForwardTrace& trace) {
    const int layer = select_premature_layer(model, trace, candidates);
    const LogVector p_final = log_softmax(trace.logits);
    const LogVector p_early = log_softmax(model.logit_lens(trace.layers[static_cast<std::size_t>(layer - 1)].ffn_out));
    const double theta = gate_threshold(p_final, cfg.tau, cfg.s);
    std::size_t best = 0;
    double best_score = kNegInf;
    for (std::size_t t = 0; t < p_final.size(); ++t) {
      if (p_final[t] < theta) continue;
      const double score = p_final[t] - p_early[t];
      if (score > best_score) {
        best_score = score;
        best = t;
      }
    }
    return StepChoice{static_cast<Token>(best), layer, false};
  });
}

DecoderKind parse_decoder_kind(const std::string& name) {
  if (name == "greedy") return DecoderKind::Greedy;
  if (name == "lfd") return DecoderKind::Lfd;
  if (name == "lfd-random") return DecoderKind::LfdRandom;
  if (name == "lfd-fixed") return DecoderKind::LfdFixed;
  if (name == "dola") return DecoderKind::Dola;
  throw Error(ErrorCode::ConfigInvalid, "unknown decoder '" + name + "' (greedy|lfd|lfd-random|lfd-fixed|dola)");
}

std::string to_string(DecoderKind kind) {
  switch (kind) {
    case DecoderKind::Greedy: return "greedy";
    case DecoderKind::Lfd: return "lfd";
    case DecoderKind::LfdRandom: return "lfd-random";
    case DecoderKind::LfdFixed: return "lfd-fixed";
    case DecoderKind::Dola: return "dola";
  }
  return "lfd";
}

DecodeResult decode(const InstrumentedModel& model, std::span<const Token> prompt, const DecoderSpec& spec,
                    std::uint64_t seed) {
  const int n_layers = model.config().n_layers;
  if (spec.kind == DecoderKind::Greedy) return decode_greedy(model, prompt, spec.max_new_tokens);
  if (spec.kind == DecoderKind::Dola) {
    const auto sel = parse_layer_selection(spec.dola_layers, n_layers);
    DolaConfig cfg;
    cfg.candidate_range = sel.range;
    cfg.even_only = sel.even_only;
    cfg.tau = spec.tau;
    cfg.s = spec.s;
    cfg.max_new_tokens = spec.max_new_tokens;
    return decode_dola(model, prompt, cfg);
  }

  const auto sel = parse_layer_selection(spec.layers, n_layers);
  FusionConfig cfg;
  cfg.tau = spec.tau;
  cfg.s = spec.s;
  cfg.candidate_range = sel.range;
  cfg.even_only = sel.even_only;
  cfg.per_prompt = spec.per_prompt;
  cfg.max_new_tokens = spec.max_new_tokens;
  cfg.seed = seed;
  if (spec.kind == DecoderKind::LfdRandom) cfg.mode = SelectionMode::Random;
  if (spec.kind == DecoderKind::LfdFixed) {
    cfg.mode = SelectionMode::Fixed;
    cfg.fixed_layer = spec.fixed_layer == 0 ? n_layers : spec.fixed_layer;
  }
  return decode_lfd(model, prompt, cfg);
}

}  // namespace lfdlab
