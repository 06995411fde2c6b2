#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lfdlab/analysis.hpp"
#include "lfdlab/continuation_model.hpp"
#include "lfdlab/corpus.hpp"

namespace lfdlab {

struct SyntheticCorpus {
  std::vector<Sample> samples;
  std::vector<std::string> noise_pool;
};

// Templated question/answer samples with planted answer strings, alternating
// "bridge" (who holds a key) and "compare" (which town is closer) tags, plus a
// pool of short distractor documents. Deterministic in `seed`.
SyntheticCorpus make_synthetic_corpus(std::size_t n_samples, std::size_t pool_size, std::uint64_t seed);

// Continuation model whose greedy output after each sample's rendered prompt
// is " <first gold answer>" followed by eos. The question sits at the end of
// every template, so this holds at any noise level.
ContinuationModel make_oracle_model(std::span<const Sample> corpus, const RenderOptions& render, int n_layers = 8,
                                    int n_heads = 4, std::size_t order = 32);

}  // namespace lfdlab
