#include "lfdlab/cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "lfdlab/analysis.hpp"
#include "lfdlab/decoding.hpp"
#include "lfdlab/error.hpp"
#include "lfdlab/harness.hpp"
#include "lfdlab/hash.hpp"
#include "lfdlab/synthetic.hpp"
#include "lfdlab/toy_model.hpp"

namespace lfdlab::cli {

using nlohmann::json;

namespace {

struct ModelOptions {
  ModelConfig cfg;
};

struct InputOptions {
  std::string corpus;
  std::string noise_pool;
  std::string template_id = "qa";
  std::string placement = "shuffled";
};

void add_model_options(CLI::App* sub, ModelOptions& m, std::uint64_t& seed) {
  sub->add_option("--seed", seed, "Seed for model weights and every random draw");
  sub->add_option("--n-layers", m.cfg.n_layers, "Decoder blocks (even)");
  sub->add_option("--n-heads", m.cfg.n_heads, "Attention heads");
  sub->add_option("--d-model", m.cfg.d_model, "Hidden width");
  sub->add_option("--vocab-size", m.cfg.vocab_size, "Vocabulary size (byte-level: 256)");
  sub->add_option("--max-seq-len", m.cfg.max_seq_len, "Context window");
  sub->add_option("--eos", m.cfg.eos_token, "End-of-sequence token id");
}

void add_input_options(CLI::App* sub, InputOptions& in, bool corpus_required) {
  auto* opt = sub->add_option("--corpus", in.corpus, "Corpus JSONL");
  if (corpus_required) opt->required();
  sub->add_option("--noise-pool", in.noise_pool, "Noise documents, one per line");
  sub->add_option("--template", in.template_id, "Prompt template")->check(CLI::IsMember({"qa", "bare"}));
  sub->add_option("--placement", in.placement, "Noise placement")
      ->check(CLI::IsMember({"before", "after", "shuffled"}));
}

void add_decoder_options(CLI::App* sub, DecoderSpec& d, std::string& kind) {
  sub->add_option("--decoder", kind, "greedy|lfd|lfd-random|lfd-fixed|dola")
      ->check(CLI::IsMember({"greedy", "lfd", "lfd-random", "lfd-fixed", "dola"}));
  sub->add_option("--tau", d.tau, "Gate scale on the final-layer maximum");
  sub->add_option("--s", d.s, "Rank of the gate's s-th maximum");
  sub->add_option("--layers", d.layers, "LFD candidates: latter-half-even|latter-half|all-even|all|LO:HI[:even]");
  sub->add_option("--fixed-layer", d.fixed_layer, "Layer for lfd-fixed (default: final layer)");
  sub->add_flag("--per-prompt", d.per_prompt, "Select the fusion layer once per prompt");
  sub->add_option("--dola-layers", d.dola_layers, "DoLA premature-layer candidates");
  sub->add_option("--max-new-tokens", d.max_new_tokens, "Generation budget");
}

RenderOptions render_options(const InputOptions& in) {
  RenderOptions r;
  r.template_id = in.template_id;
  r.placement = parse_placement(in.placement);
  return r;
}

std::vector<std::string> maybe_pool(const InputOptions& in) {
  return in.noise_pool.empty() ? std::vector<std::string>{} : load_noise_pool(in.noise_pool);
}

std::vector<std::size_t> parse_levels(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    long v = -1;
    try {
      v = std::stol(item, &used);
    } catch (const std::logic_error&) {
    }
    if (v < 0 || used != item.size()) throw Error(ErrorCode::ConfigInvalid, "bad noise level '" + item + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw Error(ErrorCode::ConfigInvalid, "no noise levels given");
  return out;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot write " + path);
  f << content;
}

enum class ProfileKind { SimHidden, DiffAttn, Iks };

std::string profile_name(ProfileKind k) {
  switch (k) {
    case ProfileKind::SimHidden: return "simhidden";
    case ProfileKind::DiffAttn: return "diffattn";
    case ProfileKind::Iks: return "iks";
  }
  return "";
}

LayerProfile iks_corpus_profile(const InstrumentedModel& model, const std::vector<Sample>& corpus, std::size_t k,
                                std::uint64_t seed, const std::vector<std::string>& pool, const RenderOptions& render) {
  if (corpus.empty()) throw Error(ErrorCode::EmptyCorpus, "iks profile needs at least one sample");
  std::vector<std::pair<std::string, std::vector<double>>> rows;
  for (const auto& s : corpus) {
    const auto bundle = render_sample(s, k, seed, pool, render);
    const auto trace = model.forward_trace(bundle.rendered, bundle.final_position());
    rows.emplace_back(s.id, iks_profile(model, trace).scores);
  }
  return aggregate_by_id(std::move(rows));
}

int run_profile(ProfileKind kind, const ModelOptions& m, std::uint64_t seed, const InputOptions& in,
                const std::string& levels_text, const std::string& out_prefix, std::ostream& out) {
  ModelConfig cfg = m.cfg;
  cfg.seed = seed;
  const ToyModel model(cfg);
  const auto corpus = load_corpus(in.corpus);
  const auto pool = maybe_pool(in);
  RenderOptions render = render_options(in);
  render.max_tokens = static_cast<std::size_t>(cfg.max_seq_len);

  json records = json::array();
  for (std::size_t k : parse_levels(levels_text)) {
    LayerProfile p;
    if (kind == ProfileKind::Iks) {
      p = iks_corpus_profile(model, corpus, k, seed, pool, render);
    } else {
      ProfileOptions opts;
      opts.metric = kind == ProfileKind::SimHidden ? Metric::SimHidden : Metric::DiffAttn;
      opts.noise_level = k;
      opts.seed = seed;
      opts.render = render;
      opts.noise_pool = pool;
      p = profile(model, corpus, opts);
    }
    for (std::size_t l = 0; l < p.mean.size(); ++l) {
      records.push_back({{"metric", profile_name(kind)},
                         {"noise_level", k},
                         {"layer", l + 1},
                         {"mean", p.mean[l]},
                         {"ci_low", p.ci_low(l)},
                         {"ci_high", p.ci_high(l)},
                         {"n", p.n_samples}});
    }
    if (out_prefix.empty()) {
      out << "# " << profile_name(kind) << " noise_level=" << k << '\n' << profile_csv(p);
    } else {
      write_file(out_prefix + "_k" + std::to_string(k) + ".csv", profile_csv(p));
    }
  }
  if (!out_prefix.empty()) {
    write_file(out_prefix + ".json", dump_json(records, 2) + "\n");
    out << "wrote " << out_prefix << "_k*.csv and " << out_prefix << ".json\n";
  }
  return kExitOk;
}

json decode_result_json(const DecodeResult& r, bool include_timing) {
  json obj = {{"text", r.text},           {"tokens", r.tokens},     {"selected_layers", r.selected_layers},
              {"fallback", r.fallback},   {"steps", r.steps},       {"hit_eos", r.hit_eos},
              {"fallback_count", r.fallback_count()}};
  if (include_timing) {
    obj["latency_ms"] = r.latency_ms;
    obj["tokens_per_s"] = r.tokens_per_s;
  }
  return obj;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Layer-wise knowledge analysis and layer-fused decoding on a seeded toy transformer", "lfdlab"};
  app.require_subcommand(1);

  ModelOptions model_opts;
  std::uint64_t seed = 0;
  InputOptions inputs;
  DecoderSpec decoder;
  std::string decoder_kind = "lfd";

  // gen-model
  std::string dump_path;
  auto* gen_model = app.add_subcommand("gen-model", "Build the seeded model and print its checksum");
  add_model_options(gen_model, model_opts, seed);
  gen_model->add_option("--dump", dump_path, "Write weights as little-endian float32");

  // gen-corpus
  std::size_t n_samples = 200, pool_size = 400;
  std::string corpus_out, pool_out;
  auto* gen_corpus = app.add_subcommand("gen-corpus", "Write a synthetic corpus and noise pool");
  gen_corpus->add_option("--n", n_samples, "Number of samples");
  gen_corpus->add_option("--pool-size", pool_size, "Noise pool size");
  gen_corpus->add_option("--seed", seed, "Generator seed");
  gen_corpus->add_option("--out", corpus_out, "Corpus JSONL path")->required();
  gen_corpus->add_option("--noise-out", pool_out, "Noise pool path")->required();

  // trace
  std::string prompt_text;
  long position = -1;
  auto* trace_cmd = app.add_subcommand("trace", "Print a digest of one forward trace");
  add_model_options(trace_cmd, model_opts, seed);
  trace_cmd->add_option("--prompt", prompt_text, "Prompt text")->required();
  trace_cmd->add_option("--position", position, "Traced position (default: last)");

  // profiles
  std::string levels = "0,4,8,12";
  std::string diff_levels = "0";
  std::string out_prefix;
  auto* prof_sim = app.add_subcommand("profile-simhidden", "Per-layer SimHidden profile over a corpus");
  auto* prof_diff = app.add_subcommand("profile-diffattn", "Per-layer DiffAttn profile over a corpus");
  auto* prof_iks = app.add_subcommand("profile-iks", "Per-layer IKS profile over a corpus");
  for (auto* sub : {prof_sim, prof_diff, prof_iks}) {
    add_model_options(sub, model_opts, seed);
    add_input_options(sub, inputs, true);
    sub->add_option("--noise-levels", sub == prof_diff ? diff_levels : levels, "Comma-separated noise levels");
    sub->add_option("--out", out_prefix, "Write PREFIX_k<level>.csv and PREFIX.json");
  }

  // decode
  std::string sample_id;
  std::size_t noise_level = 0;
  auto* decode_cmd = app.add_subcommand("decode", "Decode one prompt");
  add_model_options(decode_cmd, model_opts, seed);
  add_decoder_options(decode_cmd, decoder, decoder_kind);
  add_input_options(decode_cmd, inputs, false);
  decode_cmd->add_option("--prompt", prompt_text, "Raw prompt text");
  decode_cmd->add_option("--sample-id", sample_id, "Render this corpus sample instead of --prompt");
  decode_cmd->add_option("--noise-level", noise_level, "Noise documents when rendering a sample");

  // eval
  std::string records_path, report_path, timing_path;
  int threads = 1;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a decoder over a corpus");
  add_model_options(eval_cmd, model_opts, seed);
  add_decoder_options(eval_cmd, decoder, decoder_kind);
  add_input_options(eval_cmd, inputs, true);
  eval_cmd->add_option("--noise-level", noise_level, "Noise documents per prompt");
  eval_cmd->add_option("--threads", threads, "Worker threads")->check(CLI::Range(1, 256));
  eval_cmd->add_option("--records", records_path, "RunRecords JSONL output");
  eval_cmd->add_option("--report", report_path, "EvalReport JSON output (default: stdout)");
  eval_cmd->add_option("--timing", timing_path, "Per-sample RunRecords with timing fields");

  // compare
  std::string file_a, file_b;
  auto* compare_cmd = app.add_subcommand("compare", "Per-sample diff of two RunRecords files");
  compare_cmd->add_option("a", file_a, "First RunRecords JSONL")->required();
  compare_cmd->add_option("b", file_b, "Second RunRecords JSONL")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    ModelConfig cfg = model_opts.cfg;
    cfg.seed = seed;
    decoder.kind = parse_decoder_kind(decoder_kind);

    if (gen_model->parsed()) {
      const ToyModel model(cfg);
      if (!dump_path.empty()) {
        std::ofstream f(dump_path, std::ios::binary);
        if (!f) throw Error(ErrorCode::Io, "cannot write " + dump_path);
        model.dump_weights(f);
      }
      out << dump_json({{"checksum", to_hex(model.checksum())}, {"config", model_config_json(cfg)}}) << '\n';
      return kExitOk;
    }
    if (gen_corpus->parsed()) {
      const auto corpus = make_synthetic_corpus(n_samples, pool_size, seed);
      save_corpus(corpus_out, corpus.samples);
      save_noise_pool(pool_out, corpus.noise_pool);
      out << "wrote " << corpus.samples.size() << " samples to " << corpus_out << " and " << corpus.noise_pool.size()
          << " noise documents to " << pool_out << '\n';
      return kExitOk;
    }
    if (trace_cmd->parsed()) {
      const ToyModel model(cfg);
      TokenSequence tokens;
      for (char c : prompt_text) tokens.push_back(static_cast<unsigned char>(c));
      const std::size_t pos = position < 0 ? tokens.size() - 1 : static_cast<std::size_t>(position);
      const auto trace = model.forward_trace(tokens, pos);
      out << dump_json({{"model_checksum", to_hex(model.checksum())},
                        {"trace_checksum", to_hex(trace_checksum(trace))},
                        {"position", pos},
                        {"argmax", argmax(trace.logits.values())}})
          << '\n';
      return kExitOk;
    }
    if (prof_sim->parsed()) return run_profile(ProfileKind::SimHidden, model_opts, seed, inputs, levels, out_prefix, out);
    if (prof_diff->parsed()) return run_profile(ProfileKind::DiffAttn, model_opts, seed, inputs, diff_levels, out_prefix, out);
    if (prof_iks->parsed()) return run_profile(ProfileKind::Iks, model_opts, seed, inputs, levels, out_prefix, out);

    if (decode_cmd->parsed()) {
      const ToyModel model(cfg);
      TokenSequence tokens;
      if (!sample_id.empty()) {
        if (inputs.corpus.empty()) {
          err << "decode: --sample-id needs --corpus\n";
          return kExitUsage;
        }
        const auto corpus = load_corpus(inputs.corpus);
        auto it = std::find_if(corpus.begin(), corpus.end(), [&](const Sample& s) { return s.id == sample_id; });
        if (it == corpus.end()) throw Error(ErrorCode::Precondition, "no sample with id '" + sample_id + "'");
        RenderOptions render = render_options(inputs);
        render.max_tokens = static_cast<std::size_t>(cfg.max_seq_len);
        tokens = render_sample(*it, noise_level, seed, maybe_pool(inputs), render).rendered;
      } else if (!prompt_text.empty()) {
        for (char c : prompt_text) tokens.push_back(static_cast<unsigned char>(c));
      } else {
        err << "decode: give --prompt or --sample-id\n";
        return kExitUsage;
      }
      const auto result = decode(model, tokens, decoder, seed);
      out << dump_json(decode_result_json(result, true)) << '\n';
      return kExitOk;
    }
    if (eval_cmd->parsed()) {
      const ToyModel model(cfg);
      const auto corpus = load_corpus(inputs.corpus);
      EvalConfig ec;
      ec.decoder = decoder;
      ec.noise_level = noise_level;
      ec.seed = seed;
      ec.render = render_options(inputs);
      ec.threads = threads;
      const auto result = run_eval(model, corpus, ec, maybe_pool(inputs));
      if (!records_path.empty()) write_file(records_path, records_jsonl(result.records));
      if (!timing_path.empty()) write_file(timing_path, records_jsonl(result.records, true));
      const std::string report = dump_json(report_to_json(result.report), 2) + "\n";
      if (report_path.empty()) {
        out << report;
      } else {
        write_file(report_path, report);
      }
      return kExitOk;
    }
    if (compare_cmd->parsed()) {
      out << compare_records(load_records(file_a), load_records(file_b));
      return kExitOk;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::ConfigInvalid ? kExitUsage : kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace lfdlab::cli
