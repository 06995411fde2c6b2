#pragma once

// Internal-knowledge scoring, layer selection and layer-fused decoding, plus
// the greedy and DoLA-style baselines.
//
// Layers are numbered 1..L; layer l's activations are trace.layers[l - 1].

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lfdlab/model.hpp"

namespace lfdlab {

// Half-open range of layer numbers [begin, end).
struct LayerRange {
  int begin = 0;
  int end = 0;

  bool operator==(const LayerRange&) const = default;
};

struct LayerSelection {
  LayerRange range;
  bool even_only = true;

  std::vector<int> candidates() const;
};

// "latter-half-even" ([L/2, L), even), "latter-half", "all-even" ([1, L), even),
// "all", or an explicit "LO:HI" / "LO:HI:even".
LayerSelection parse_layer_selection(const std::string& spec, int n_layers);

enum class SelectionMode { Dynamic, Fixed, Random };

struct FusionConfig {
  double tau = 0.1;
  int s = 10;
  // Defaults to [L/2, L).
  std::optional<LayerRange> candidate_range;
  bool even_only = true;
  SelectionMode mode = SelectionMode::Dynamic;
  // Used by SelectionMode::Fixed; any layer in 1..L.
  int fixed_layer = 0;
  // Select once at the first step instead of at every step.
  bool per_prompt = false;
  int max_new_tokens = 32;
  std::uint64_t seed = 0;

  // Throws EmptyCandidateSet.
  std::vector<int> candidates(int n_layers) const;
  // Throws ConfigInvalid / EmptyCandidateSet.
  void validate(int n_layers) const;
};

struct IksProfile {
  std::vector<double> scores;  // scores[l - 1] for layer l
  std::size_t position = 0;
};

// JSD between the logit-lens distributions of each layer's FFN input and output.
IksProfile iks_profile(const InstrumentedModel& model, const ForwardTrace& trace);

// Lowest-IKS candidate (ties to the smaller layer) in Dynamic mode; the fixed
// layer in Fixed mode; a uniform draw from the candidates in Random mode.
int select_layer(const IksProfile& profile, const FusionConfig& cfg, std::mt19937_64& rng);
int select_layer(const IksProfile& profile, const FusionConfig& cfg);

// min(tau * max(p_final), s-th max(p_final)). s is capped at the number of
// finite entries.
double gate_threshold(const LogVector& p_final, double tau, int s);

// Tokens with p_layer(t) >= threshold get p_layer(t) + p_final(t), the rest
// -inf. Returns nullopt when no token survives. Both inputs must come from
// log_softmax.
std::optional<LogVector> fuse_gate(const LogVector& p_layer, const LogVector& p_final, double tau, int s);
inline std::optional<LogVector> fuse_gate(const LogVector& p_layer, const LogVector& p_final,
                                          const FusionConfig& cfg) {
  return fuse_gate(p_layer, p_final, cfg.tau, cfg.s);
}

Distribution fused_distribution(const LogVector& fused);

struct DecodeResult {
  std::vector<Token> tokens;  // generated, eos excluded
  std::string text;
  // One entry per decoding step (argmax decision, including the one that
  // produced eos). Empty for greedy.
  std::vector<int> selected_layers;
  std::vector<bool> fallback;
  std::size_t steps = 0;
  bool hit_eos = false;
  double latency_ms = 0.0;
  double tokens_per_s = 0.0;

  std::size_t fallback_count() const;
};

DecodeResult decode_greedy(const InstrumentedModel& model, std::span<const Token> prompt, int max_new_tokens);
DecodeResult decode_lfd(const InstrumentedModel& model, std::span<const Token> prompt, const FusionConfig& cfg);

struct DolaConfig {
  // Defaults to [1, L).
  std::optional<LayerRange> candidate_range;
  bool even_only = true;
  double tau = 0.1;
  int s = 10;
  int max_new_tokens = 32;

  std::vector<int> candidates(int n_layers) const;
};

// Candidate whose logit-lens distribution is furthest (JSD) from the final one;
// ties to the smaller layer.
int select_premature_layer(const InstrumentedModel& model, const ForwardTrace& trace, std::span<const int> candidates);

DecodeResult decode_dola(const InstrumentedModel& model, std::span<const Token> prompt, const DolaConfig& cfg);

enum class DecoderKind { Greedy, Lfd, LfdRandom, LfdFixed, Dola };

DecoderKind parse_decoder_kind(const std::string& name);
std::string to_string(DecoderKind kind);

// Everything needed to run any decoder; serialized into run records.
struct DecoderSpec {
  DecoderKind kind = DecoderKind::Lfd;
  double tau = 0.1;
  int s = 10;
  std::string layers = "latter-half-even";
  // lfd-fixed layer; 0 means the final layer L.
  int fixed_layer = 0;
  bool per_prompt = false;
  std::string dola_layers = "all-even";
  int max_new_tokens = 32;
};

DecodeResult decode(const InstrumentedModel& model, std::span<const Token> prompt, const DecoderSpec& spec,
                    std::uint64_t seed);

std::string detokenize(std::span<const Token> tokens);

}  // namespace lfdlab
