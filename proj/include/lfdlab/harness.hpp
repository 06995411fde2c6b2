#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lfdlab/analysis.hpp"
#include "lfdlab/corpus.hpp"
#include "lfdlab/decoding.hpp"
#include "lfdlab/model.hpp"

namespace lfdlab {

inline constexpr int kSchemaVersion = 1;

// Serializes with invalid UTF-8 (raw model bytes) replaced by U+FFFD.
std::string dump_json(const nlohmann::json& value, int indent = -1);

// Lowercase (ASCII), collapse whitespace runs to one space, trim.
std::string normalize_answer_text(std::string_view text);

// True iff some normalized gold answer is a substring of the normalized response.
bool answer_included(std::string_view response, const std::vector<std::string>& gold);

struct EvalConfig {
  DecoderSpec decoder;
  std::size_t noise_level = 0;
  std::uint64_t seed = 0;
  RenderOptions render;
  // Worker threads; output does not depend on this.
  int threads = 1;
};

struct RunRecord {
  std::string sample_id;
  std::string decoder;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::size_t noise_level = 0;
  std::string tag;
  std::string response;
  bool correct = false;
  std::vector<int> selected_layers;
  std::size_t fallback_count = 0;
  std::size_t steps = 0;
  std::size_t generated_tokens = 0;
  std::size_t prompt_tokens = 0;
  double latency_ms = 0.0;
  double tokens_per_s = 0.0;
  std::optional<std::string> error;
};

struct TagStats {
  std::size_t n = 0;
  std::size_t correct = 0;
  double accuracy() const { return n == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(n); }
};

struct EvalReport {
  std::string decoder;
  std::size_t noise_level = 0;
  std::string config_hash;
  nlohmann::json config;
  std::size_t n = 0;
  std::size_t n_correct = 0;
  std::size_t n_errors = 0;
  double accuracy = 0.0;
  std::map<std::string, TagStats> per_tag;
  double mean_latency_ms = 0.0;
  double mean_tokens_per_s = 0.0;
  std::size_t decode_steps = 0;
  // Layer number (or "none" for decoders without layer selection) -> steps.
  std::map<std::string, std::size_t> layer_histogram;
};

struct EvalResult {
  EvalReport report;
  std::vector<RunRecord> records;
};

// Complete configuration of an evaluation run, including the model identity.
nlohmann::json eval_config_json(const EvalConfig& cfg, const InstrumentedModel& model);
nlohmann::json model_config_json(const ModelConfig& cfg);
std::string config_hash(const nlohmann::json& config);

// Renders every sample with `noise_level` documents from `noise_pool`,
// decodes, and checks answer inclusion. Per-sample failures are recorded in
// RunRecord::error. Throws Precondition if the pool is smaller than the noise
// level.
EvalResult run_eval(const InstrumentedModel& model, std::span<const Sample> corpus, const EvalConfig& cfg,
                    const std::vector<std::string>& noise_pool);

EvalReport summarize(const std::vector<RunRecord>& records);

// Timing fields vary between runs and are left out unless requested.
nlohmann::json record_to_json(const RunRecord& record, bool include_timing = false);
RunRecord record_from_json(const nlohmann::json& obj);
nlohmann::json report_to_json(const EvalReport& report);

std::string records_jsonl(const std::vector<RunRecord>& records, bool include_timing = false);
std::vector<RunRecord> load_records(const std::filesystem::path& path);

// Per-sample join of two record sets on sample id:
// sample_id,correct_a,correct_b,changed,response_a,response_b
std::string compare_records(const std::vector<RunRecord>& a, const std::vector<RunRecord>& b);

}  // namespace lfdlab
