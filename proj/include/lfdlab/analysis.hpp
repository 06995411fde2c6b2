#pragma once

// Answer-ablation and noise-injection study: prompt rendering with noise
// documents, answer-span ablation, and the SimHidden / DiffAttn layer
// profiles.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lfdlab/corpus.hpp"
#include "lfdlab/model.hpp"

namespace lfdlab {

enum class Placement { Before, After, Shuffled };

Placement parse_placement(const std::string& name);
std::string to_string(Placement p);

// Half-open token index range [begin, end).
struct TokenRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  bool operator==(const TokenRange&) const = default;
};

struct RenderOptions {
  std::string template_id = "qa";
  Placement placement = Placement::Shuffled;
  std::uint64_t placement_seed = 0;
  // 0 disables the length check.
  std::size_t max_tokens = 0;
};

// A rendered prompt together with everything needed to re-render it.
struct PromptBundle {
  std::string query;
  std::vector<Document> documents;
  std::vector<std::string> noise_docs;
  RenderOptions options;

  std::string text;
  TokenSequence rendered;
  std::vector<TokenRange> span_map;

  std::size_t final_position() const { return rendered.size() - 1; }
  // Every token index covered by span_map, ascending.
  std::vector<std::size_t> span_positions() const;
};

// Templates: "qa" and "bare". Throws TemplateUnknown, SpanOutOfBounds,
// SequenceTooLong.
PromptBundle render_prompt(const std::string& query, const std::vector<Document>& documents,
                           const std::vector<std::string>& noise_docs, const RenderOptions& options);

// Removes every answer span from the documents and re-renders with the same
// noise documents and placement. Throws NoAnswerSpans.
PromptBundle ablate(const PromptBundle& bundle);

// k documents drawn without replacement from `pool`. Throws Precondition if
// the pool is too small.
std::vector<std::string> draw_noise(const std::vector<std::string>& pool, std::size_t k, std::uint64_t seed);

// Renders a corpus sample with k noise documents. Noise draw and placement
// seeds derive from (seed, sample id), so the result does not depend on the
// sample's position in the corpus.
PromptBundle render_sample(const Sample& sample, std::size_t k, std::uint64_t seed,
                           const std::vector<std::string>& noise_pool, RenderOptions options);

// Per layer: cosine of ffn_out at each prompt's final position.
std::vector<double> sim_hidden(const InstrumentedModel& model, const PromptBundle& original,
                               const PromptBundle& ablated);

// JSD between two attention rows after both are restricted to the positions
// outside `span_positions` and renormalized.
double attention_shift(const Distribution& original, const Distribution& masked,
                       std::span<const std::size_t> span_positions);

// Per layer: mean over heads of attention_shift at the final position, where
// the masked row comes from a pass whose final-position attention scores at
// the answer positions are -inf at every layer. Throws NoAnswerSpans.
std::vector<double> diff_attn(const InstrumentedModel& model, const PromptBundle& bundle);

struct LayerProfile {
  std::vector<double> mean;
  std::vector<double> ci_half_width;
  std::size_t n_samples = 0;

  double ci_low(std::size_t layer) const { return mean[layer] - ci_half_width[layer]; }
  double ci_high(std::size_t layer) const { return mean[layer] + ci_half_width[layer]; }
};

// Mean and 95% normal-approximation CI per column. Rows are reduced in the
// given order.
LayerProfile aggregate_profile(const std::vector<std::vector<double>>& rows);

enum class Metric { SimHidden, DiffAttn };

struct ProfileOptions {
  Metric metric = Metric::SimHidden;
  std::size_t noise_level = 0;
  std::uint64_t seed = 0;
  RenderOptions render;
  std::vector<std::string> noise_pool;
  // Replaces ablate() for SimHidden when set.
  std::function<PromptBundle(const PromptBundle&)> ablation;
};

// Throws EmptyCorpus, NoAnswerSpans (naming the sample).
LayerProfile profile(const InstrumentedModel& model, std::span<const Sample> corpus, const ProfileOptions& options);

// Sorts (sample id, row) pairs so aggregation is independent of corpus order.
LayerProfile aggregate_by_id(std::vector<std::pair<std::string, std::vector<double>>> rows);

// CSV with header `layer,mean,ci_low,ci_high,n`; layers numbered from 1.
std::string profile_csv(const LayerProfile& profile);

}  // namespace lfdlab
