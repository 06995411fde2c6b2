#include "lfdlab/analysis.hpp"

#include <algorithm>
#include <iomanip>
#include <random>
#include <sstream>

#include "lfdlab/error.hpp"
#include "lfdlab/hash.hpp"

namespace lfdlab {

Placement parse_placement(const std::string& name) {
  if (name == "before") return Placement::Before;
  if (name == "after") return Placement::After;
  if (name == "shuffled") return Placement::Shuffled;
  throw Error(ErrorCode::ConfigInvalid, "unknown placement '" + name + "' (before|after|shuffled)");
}

std::string to_string(Placement p) {
  switch (p) {
    case Placement::Before: return "before";
    case Placement::After: return "after";
    case Placement::Shuffled: return "shuffled";
  }
  return "shuffled";
}

std::vector<std::size_t> PromptBundle::span_positions() const {
  std::vector<std::size_t> out;
  for (const auto& r : span_map) {
    for (std::size_t i = r.begin; i < r.end; ++i) out.push_back(i);
  }
  return out;
}

namespace {

struct Template {
  std::string_view header;
  std::string_view doc_prefix;
  std::string_view doc_suffix;
  std::string_view question_prefix;
  std::string_view answer_cue;
};

const Template& lookup_template(const std::string& id) {
  static const Template kQa{"Use the documents to answer.\n", "Doc: ", "\n", "Question: ", "\nAnswer:"};
  static const Template kBare{"Context:\n", "", "\n", "Q: ", "\nA:"};
  if (id == "qa") return kQa;
  if (id == "bare") return kBare;
  throw Error(ErrorCode::TemplateUnknown, "template '" + id + "' (known: qa, bare)");
}

// Entry >= 0: gold document index; entry < 0: noise document -(entry + 1).
std::vector<long> document_order(std::size_t n_gold, std::size_t n_noise, Placement placement, std::uint64_t seed) {
  std::vector<long> order;
  auto push_gold = [&] {
    for (std::size_t i = 0; i < n_gold; ++i) order.push_back(static_cast<long>(i));
  };
  auto push_noise = [&] {
    for (std::size_t j = 0; j < n_noise; ++j) order.push_back(-static_cast<long>(j) - 1);
  };
  switch (placement) {
    case Placement::Before:
      push_noise();
      push_gold();
      break;
    case Placement::After:
      push_gold();
      push_noise();
      break;
    case Placement::Shuffled: {
      push_gold();
      std::mt19937_64 rng(seed);
      for (std::size_t j = 0; j < n_noise; ++j) {
        const std::size_t slot = static_cast<std::size_t>(rng() % (order.size() + 1));
        order.insert(order.begin() + static_cast<std::ptrdiff_t>(slot), -static_cast<long>(j) - 1);
      }
      break;
    }
  }
  return order;
}

}  // namespace

PromptBundle render_prompt(const std::string& query, const std::vector<Document>& documents,
                           const std::vector<std::string>& noise_docs, const RenderOptions& options) {
  const Template& tpl = lookup_template(options.template_id);
  for (const auto& d : documents) validate_spans(d);

  PromptBundle b;
  b.query = query;
  b.documents = documents;
  b.noise_docs = noise_docs;
  b.options = options;

  std::string& text = b.text;
  text += tpl.header;
  for (long entry : document_order(documents.size(), noise_docs.size(), options.placement, options.placement_seed)) {
    text += tpl.doc_prefix;
    if (entry >= 0) {
      const auto& doc = documents[static_cast<std::size_t>(entry)];
      const std::size_t base = text.size();
      text += doc.text;
      auto spans = doc.answer_spans;
      std::sort(spans.begin(), spans.end(), [](const Span& x, const Span& y) { return x.begin < y.begin; });
      for (const auto& s : spans) b.span_map.push_back({base + s.begin, base + s.end});
    } else {
      text += noise_docs[static_cast<std::size_t>(-(entry + 1))];
    }
    text += tpl.doc_suffix;
  }
  text += tpl.question_prefix;
  text += query;
  text += tpl.answer_cue;

  if (options.max_tokens != 0 && text.size() > options.max_tokens) {
    throw Error(ErrorCode::SequenceTooLong, "rendered prompt has " + std::to_string(text.size()) +
                                                " tokens, limit " + std::to_string(options.max_tokens));
  }
  b.rendered.reserve(text.size());
  for (char c : text) b.rendered.push_back(static_cast<Token>(static_cast<unsigned char>(c)));
  return b;
}

PromptBundle ablate(const PromptBundle& bundle) {
  if (bundle.span_map.empty()) throw Error(ErrorCode::NoAnswerSpans, "prompt has no answer spans to ablate");
  std::vector<Document> docs;
  docs.reserve(bundle.documents.size());
  for (const auto& d : bundle.documents) {
    std::vector<bool> drop(d.text.size(), false);
    for (const auto& s : d.answer_spans) std::fill(drop.begin() + static_cast<std::ptrdiff_t>(s.begin),
                                                   drop.begin() + static_cast<std::ptrdiff_t>(s.end), true);
    Document out;
    for (std::size_t i = 0; i < d.text.size(); ++i) {
      if (!drop[i]) out.text.push_back(d.text[i]);
    }
    docs.push_back(std::move(out));
  }
  return render_prompt(bundle.query, docs, bundle.noise_docs, bundle.options);
}

std::vector<std::string> draw_noise(const std::vector<std::string>& pool, std::size_t k, std::uint64_t seed) {
  if (k > pool.size()) {
    throw Error(ErrorCode::Precondition,
                "noise level " + std::to_string(k) + " exceeds the noise pool size " + std::to_string(pool.size()));
  }
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  std::vector<std::string> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (idx.size() - i));
    std::swap(idx[i], idx[j]);
    out.push_back(pool[idx[i]]);
  }
  return out;
}

PromptBundle render_sample(const Sample& sample, std::size_t k, std::uint64_t seed,
                           const std::vector<std::string>& noise_pool, RenderOptions options) {
  const auto noise = draw_noise(noise_pool, k, derive_seed(seed, sample.id, 0x6e6f697365ULL + k));
  options.placement_seed = derive_seed(seed, sample.id, 0x706c616365ULL + k);
  return render_prompt(sample.query, sample.documents, noise, options);
}

std::vector<double> sim_hidden(const InstrumentedModel& model, const PromptBundle& original,
                               const PromptBundle& ablated) {
  const auto a = model.forward_trace(original.rendered, original.final_position());
  const auto b = model.forward_trace(ablated.rendered, ablated.final_position());
  std::vector<double> out;
  out.reserve(a.layers.size());
  for (std::size_t l = 0; l < a.layers.size(); ++l) out.push_back(cosine(a.layers[l].ffn_out, b.layers[l].ffn_out));
  return out;
}

double attention_shift(const Distribution& original, const Distribution& masked,
                       std::span<const std::size_t> span_positions) {
  if (original.size() != masked.size()) throw Error(ErrorCode::LengthMismatch, "attention rows differ in length");
  return jsd(restrict_renormalize(original, span_positions), restrict_renormalize(masked, span_positions));
}

std::vector<double> diff_attn(const InstrumentedModel& model, const PromptBundle& bundle) {
  if (bundle.span_map.empty()) throw Error(ErrorCode::NoAnswerSpans, "diffattn requires answer spans in the prompt");
  const auto positions = bundle.span_positions();
  const std::size_t pos = bundle.final_position();
  const auto plain = model.forward_trace(bundle.rendered, pos);
  const auto masked = model.forward_trace(bundle.rendered, pos, positions);
  std::vector<double> out;
  out.reserve(plain.layers.size());
  for (std::size_t l = 0; l < plain.layers.size(); ++l) {
    const auto& heads = plain.layers[l].attn;
    double sum = 0.0;
    for (std::size_t m = 0; m < heads.size(); ++m) sum += attention_shift(heads[m], masked.layers[l].attn[m], positions);
    out.push_back(sum / static_cast<double>(heads.size()));
  }
  return out;
}

LayerProfile aggregate_profile(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw Error(ErrorCode::EmptyCorpus, "no samples to aggregate");
  const std::size_t width = rows.front().size();
  LayerProfile p;
  p.n_samples = rows.size();
  std::vector<double> column(rows.size());
  for (std::size_t l = 0; l < width; ++l) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != width) throw Error(ErrorCode::LengthMismatch, "profile rows differ in length");
      column[i] = rows[i][l];
    }
    const auto ci = mean_ci95(column);
    p.mean.push_back(ci.mean);
    p.ci_half_width.push_back(ci.half_width);
  }
  return p;
}

LayerProfile aggregate_by_id(std::vector<std::pair<std::string, std::vector<double>>> rows) {
  std::sort(rows.begin(), rows.end());
  std::vector<std::vector<double>> ordered;
  ordered.reserve(rows.size());
  for (auto& r : rows) ordered.push_back(std::move(r.second));
  return aggregate_profile(ordered);
}

LayerProfile profile(const InstrumentedModel& model, std::span<const Sample> corpus, const ProfileOptions& options) {
  if (corpus.empty()) throw Error(ErrorCode::EmptyCorpus, "profile needs at least one sample");
  const char* metric_name = options.metric == Metric::SimHidden ? "simhidden" : "diffattn";
  std::vector<std::pair<std::string, std::vector<double>>> rows;
  rows.reserve(corpus.size());
  for (const auto& sample : corpus) {
    if (!sample.has_answer_spans()) {
      throw Error(ErrorCode::NoAnswerSpans,
                  std::string(metric_name) + " requires answer spans; sample '" + sample.id + "' has none");
    }
    const auto bundle = render_sample(sample, options.noise_level, options.seed, options.noise_pool, options.render);
    if (options.metric == Metric::SimHidden) {
      const auto ablated = options.ablation ? options.ablation(bundle) : ablate(bundle);
      rows.emplace_back(sample.id, sim_hidden(model, bundle, ablated));
    } else {
      rows.emplace_back(sample.id, diff_attn(model, bundle));
    }
  }
  return aggregate_by_id(std::move(rows));
}

std::string profile_csv(const LayerProfile& profile) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "layer,mean,ci_low,ci_high,n\n";
  for (std::size_t l = 0; l < profile.mean.size(); ++l) {
    out << (l + 1) << ',' << profile.mean[l] << ',' << profile.ci_low(l) << ',' << profile.ci_high(l) << ','
        << profile.n_samples << '\n';
  }
  return out.str();
}

}  // namespace lfdlab
