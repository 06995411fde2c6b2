#include "lfdlab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <sstream>
#include <thread>

#include "lfdlab/error.hpp"
#include "lfdlab/hash.hpp"

namespace lfdlab {

using nlohmann::json;

std::string normalize_answer_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isspace(u)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(u)));
  }
  return out;
}

std::string dump_json(const json& value, int indent) {
  return value.dump(indent, ' ', false, json::error_handler_t::replace);
}

bool answer_included(std::string_view response, const std::vector<std::string>& gold) {
  const std::string r = normalize_answer_text(response);
  if (r.empty()) return false;
  return std::any_of(gold.begin(), gold.end(), [&](const std::string& a) {
    const std::string g = normalize_answer_text(a);
    return !g.empty() && r.find(g) != std::string::npos;
  });
}

json model_config_json(const ModelConfig& cfg) {
  return {{"n_layers", cfg.n_layers},   {"n_heads", cfg.n_heads},         {"d_model", cfg.d_model},
          {"vocab_size", cfg.vocab_size}, {"max_seq_len", cfg.max_seq_len}, {"seed", cfg.seed},
          {"eos_token", cfg.eos_token}};
}

json eval_config_json(const EvalConfig& cfg, const InstrumentedModel& model) {
  const auto& d = cfg.decoder;
  return {
      {"decoder",
       {{"kind", to_string(d.kind)},
        {"tau", d.tau},
        {"s", d.s},
        {"layers", d.layers},
        {"fixed_layer", d.fixed_layer},
        {"per_prompt", d.per_prompt},
        {"dola_layers", d.dola_layers},
        {"max_new_tokens", d.max_new_tokens}}},
      {"noise_level", cfg.noise_level},
      {"seed", cfg.seed},
      {"template", cfg.render.template_id},
      {"placement", to_string(cfg.render.placement)},
      {"model", model_config_json(model.config())},
      {"model_checksum", to_hex(model.checksum())},
  };
}

std::string config_hash(const json& config) { return to_hex(fnv1a64(dump_json(config))); }

namespace {

RunRecord evaluate_sample(const InstrumentedModel& model, const Sample& sample, const EvalConfig& cfg,
                          const std::vector<std::string>& noise_pool, const std::string& hash) {
  RunRecord rec;
  rec.sample_id = sample.id;
  rec.decoder = to_string(cfg.decoder.kind);
  rec.config_hash = hash;
  rec.seed = cfg.seed;
  rec.noise_level = cfg.noise_level;
  rec.tag = sample.primary_tag();
  try {
    RenderOptions render = cfg.render;
    render.max_tokens = static_cast<std::size_t>(model.config().max_seq_len);
    const auto bundle = render_sample(sample, cfg.noise_level, cfg.seed, noise_pool, render);
    const auto result = decode(model, bundle.rendered, cfg.decoder, derive_seed(cfg.seed, sample.id, 0x6465636fULL));
    rec.prompt_tokens = bundle.rendered.size();
    rec.response = result.text;
    rec.correct = answer_included(result.text, sample.gold_answers);
    rec.selected_layers = result.selected_layers;
    rec.fallback_count = result.fallback_count();
    rec.steps = result.steps;
    rec.generated_tokens = result.tokens.size();
    rec.latency_ms = result.latency_ms;
    rec.tokens_per_s = result.tokens_per_s;
  } catch (const Error& e) {
    rec.error = e.what();
    rec.correct = false;
  }
  return rec;
}

}  // namespace

EvalResult run_eval(const InstrumentedModel& model, std::span<const Sample> corpus, const EvalConfig& cfg,
                    const std::vector<std::string>& noise_pool) {
  if (cfg.noise_level > noise_pool.size()) {
    throw Error(ErrorCode::Precondition, "noise level " + std::to_string(cfg.noise_level) +
                                             " exceeds the noise pool size " + std::to_string(noise_pool.size()));
  }
  const json config = eval_config_json(cfg, model);
  const std::string hash = config_hash(config);

  std::vector<RunRecord> records(corpus.size());
  const auto n_workers = static_cast<std::size_t>(std::clamp(cfg.threads, 1, 256));
  if (n_workers == 1) {
    for (std::size_t i = 0; i < corpus.size(); ++i) records[i] = evaluate_sample(model, corpus[i], cfg, noise_pool, hash);
  } else {
    // Each worker claims indices; results land in corpus order.
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> workers;
    for (std::size_t w = 0; w < n_workers; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < corpus.size(); i = next.fetch_add(1)) {
          records[i] = evaluate_sample(model, corpus[i], cfg, noise_pool, hash);
        }
      });
    }
  }

  EvalResult out;
  out.report = summarize(records);
  out.report.decoder = to_string(cfg.decoder.kind);
  out.report.noise_level = cfg.noise_level;
  out.report.config = config;
  out.report.config_hash = hash;
  out.records = std::move(records);
  return out;
}

EvalReport summarize(const std::vector<RunRecord>& records) {
  EvalReport rep;
  rep.n = records.size();
  double latency_sum = 0.0, tps_sum = 0.0;
  std::size_t timed = 0;
  for (const auto& r : records) {
    auto& tag = rep.per_tag[r.tag];
    ++tag.n;
    if (r.correct) {
      ++rep.n_correct;
      ++tag.correct;
    }
    if (r.error) {
      ++rep.n_errors;
      continue;
    }
    latency_sum += r.latency_ms;
    tps_sum += r.tokens_per_s;
    ++timed;
    rep.decode_steps += r.steps;
    if (r.selected_layers.empty()) {
      if (r.steps > 0) rep.layer_histogram["none"] += r.steps;
    } else {
      for (int l : r.selected_layers) ++rep.layer_histogram[std::to_string(l)];
    }
  }
  if (!records.empty()) rep.accuracy = static_cast<double>(rep.n_correct) / static_cast<double>(rep.n);
  if (timed > 0) {
    rep.mean_latency_ms = latency_sum / static_cast<double>(timed);
    rep.mean_tokens_per_s = tps_sum / static_cast<double>(timed);
  }
  if (!records.empty()) {
    rep.decoder = records.front().decoder;
    rep.noise_level = records.front().noise_level;
    rep.config_hash = records.front().config_hash;
  }
  return rep;
}

json record_to_json(const RunRecord& r, bool include_timing) {
  json obj = {
      {"schema_version", kSchemaVersion},
      {"sample_id", r.sample_id},
      {"decoder", r.decoder},
      {"config_hash", r.config_hash},
      {"seed", r.seed},
      {"noise_level", r.noise_level},
      {"tag", r.tag},
      {"response", r.response},
      {"correct", r.correct},
      {"selected_layers", r.selected_layers},
      {"fallback_count", r.fallback_count},
      {"steps", r.steps},
      {"generated_tokens", r.generated_tokens},
      {"prompt_tokens", r.prompt_tokens},
  };
  if (r.error) obj["error"] = *r.error;
  if (include_timing) {
    obj["latency_ms"] = r.latency_ms;
    obj["tokens_per_s"] = r.tokens_per_s;
  }
  return obj;
}

RunRecord record_from_json(const json& obj) {
  if (!obj.is_object() || obj.value("schema_version", 0) != kSchemaVersion) {
    throw Error(ErrorCode::SchemaError, "run record with unsupported schema_version");
  }
  RunRecord r;
  try {
    r.sample_id = obj.at("sample_id").get<std::string>();
    r.decoder = obj.at("decoder").get<std::string>();
    r.config_hash = obj.at("config_hash").get<std::string>();
    r.seed = obj.at("seed").get<std::uint64_t>();
    r.noise_level = obj.at("noise_level").get<std::size_t>();
    r.tag = obj.value("tag", std::string("untagged"));
    r.response = obj.at("response").get<std::string>();
    r.correct = obj.at("correct").get<bool>();
    r.selected_layers = obj.at("selected_layers").get<std::vector<int>>();
    r.fallback_count = obj.at("fallback_count").get<std::size_t>();
    r.steps = obj.at("steps").get<std::size_t>();
    r.generated_tokens = obj.at("generated_tokens").get<std::size_t>();
    r.prompt_tokens = obj.value("prompt_tokens", std::size_t{0});
    r.latency_ms = obj.value("latency_ms", 0.0);
    r.tokens_per_s = obj.value("tokens_per_s", 0.0);
    if (obj.contains("error")) r.error = obj.at("error").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("run record: ") + e.what());
  }
  return r;
}

json report_to_json(const EvalReport& rep) {
  json tags = json::object();
  for (const auto& [tag, st] : rep.per_tag) {
    tags[tag] = {{"n", st.n}, {"correct", st.correct}, {"accuracy", st.accuracy()}};
  }
  return {
      {"schema_version", kSchemaVersion},
      {"decoder", rep.decoder},
      {"noise_level", rep.noise_level},
      {"config_hash", rep.config_hash},
      {"config", rep.config},
      {"n", rep.n},
      {"n_correct", rep.n_correct},
      {"n_errors", rep.n_errors},
      {"accuracy", rep.accuracy},
      {"per_tag", tags},
      {"mean_latency_ms", rep.mean_latency_ms},
      {"mean_tokens_per_s", rep.mean_tokens_per_s},
      {"decode_steps", rep.decode_steps},
      {"layer_histogram", rep.layer_histogram},
  };
}

std::string records_jsonl(const std::vector<RunRecord>& records, bool include_timing) {
  std::string out;
  for (const auto& r : records) {
    out += dump_json(record_to_json(r, include_timing));
    out += '\n';
  }
  return out;
}

std::vector<RunRecord> load_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open run records " + path.string());
  std::vector<RunRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::ParseError, path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
    out.push_back(record_from_json(obj));
  }
  return out;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

std::string compare_records(const std::vector<RunRecord>& a, const std::vector<RunRecord>& b) {
  std::map<std::string, const RunRecord*> by_id;
  for (const auto& r : b) by_id.emplace(r.sample_id, &r);
  std::ostringstream out;
  out << "sample_id,correct_a,correct_b,changed,response_a,response_b\n";
  auto flag = [](const RunRecord* r) -> std::string { return r == nullptr ? "" : (r->correct ? "1" : "0"); };
  for (const auto& ra : a) {
    auto it = by_id.find(ra.sample_id);
    const RunRecord* rb = it == by_id.end() ? nullptr : it->second;
    const bool changed = rb == nullptr || rb->correct != ra.correct || rb->response != ra.response;
    out << csv_field(ra.sample_id) << ',' << flag(&ra) << ',' << flag(rb) << ',' << (changed ? 1 : 0) << ','
        << csv_field(ra.response) << ',' << csv_field(rb == nullptr ? "" : rb->response) << '\n';
    if (rb != nullptr) by_id.erase(it);
  }
  // Samples only present in b, in b's order.
  for (const auto& rb : b) {
    if (by_id.count(rb.sample_id) == 0) continue;
    out << csv_field(rb.sample_id) << ",," << flag(&rb) << ",1,," << csv_field(rb.response) << '\n';
    by_id.erase(rb.sample_id);
  }
  return out.str();
}

}  // namespace lfdlab
