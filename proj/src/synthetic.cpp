#include "lfdlab/synthetic.hpp"

#include <array>
#include <random>
#include <set>

#include "lfdlab/error.hpp"

namespace lfdlab {

namespace {

constexpr std::array<std::string_view, 20> kSyllables = {"ka", "lo", "mi", "ra", "ten", "vo", "zu", "bel", "dor", "fi",
                                                         "ga", "hu", "jin", "mar", "nel", "pa", "qui", "sor", "tal", "wen"};
constexpr std::array<std::string_view, 12> kAdjectives = {"Quiet", "Pale", "Swift", "Old",  "Grey", "Tall",
                                                          "Small", "Bold", "Damp", "Keen", "Late", "Warm"};
constexpr std::array<std::string_view, 12> kNouns = {"herons", "moths", "carts", "bells", "crows", "mills",
                                                     "ferns",  "kilns", "rafts", "goats", "lamps", "reeds"};
constexpr std::array<std::string_view, 10> kVerbs = {"wade", "rest", "drift", "hum",  "sway",
                                                     "glow", "turn", "wait",  "fade", "rise"};

class Words {
 public:
  explicit Words(std::uint64_t seed) : rng_(seed) {}

  std::string word(int syllables) {
    std::string w;
    for (int i = 0; i < syllables; ++i) w += kSyllables[rng_() % kSyllables.size()];
    w[0] = static_cast<char>(w[0] - 'a' + 'A');
    return w;
  }

  std::uint64_t next() { return rng_(); }

 private:
  std::mt19937_64 rng_;
};

Sample bridge_sample(std::size_t i, Words& words) {
  const std::string name = words.word(2 + static_cast<int>(words.next() % 2)) + " " + words.word(2);
  const std::string lead = "Depot " + std::to_string(i) + " stores grain. Its vault key is ";
  const std::string answer_clause = "held by " + name;
  Sample s;
  s.id = "s" + std::to_string(i);
  s.query = "Who holds the vault key of depot " + std::to_string(i) + "?";
  s.documents.push_back({lead + answer_clause + ", a clerk.", {{lead.size(), lead.size() + answer_clause.size()}}});
  s.gold_answers = {name};
  s.tags = {"bridge"};
  return s;
}

Sample compare_sample(std::size_t i, Words& words) {
  std::string near = words.word(2 + static_cast<int>(words.next() % 2));
  std::string far = words.word(2 + static_cast<int>(words.next() % 2));
  while (far == near) far = words.word(3);
  const auto d_near = 2 + words.next() % 40;
  const auto d_far = d_near + 1 + words.next() % 40;
  const std::string near_clause = near + " lies " + std::to_string(d_near) + " km away";
  const std::string far_clause = far + " lies " + std::to_string(d_far) + " km away";
  const std::string head = "From port " + std::to_string(i) + ", ";

  Sample s;
  s.id = "s" + std::to_string(i);
  s.query = "Which town is closer to port " + std::to_string(i) + "?";
  Document doc;
  if (words.next() % 2 == 0) {
    doc.text = head + near_clause + " and " + far_clause + ".";
    doc.answer_spans = {{head.size(), head.size() + near_clause.size()}};
  } else {
    doc.text = head + far_clause + " and " + near_clause + ".";
    const std::size_t at = head.size() + far_clause.size() + 5;
    doc.answer_spans = {{at, at + near_clause.size()}};
  }
  s.documents.push_back(std::move(doc));
  s.gold_answers = {near};
  s.tags = {"compare"};
  return s;
}

}  // namespace

SyntheticCorpus make_synthetic_corpus(std::size_t n_samples, std::size_t pool_size, std::uint64_t seed) {
  const std::size_t combos = kAdjectives.size() * kNouns.size() * kVerbs.size();
  if (pool_size > combos) {
    throw Error(ErrorCode::ConfigInvalid, "noise pool size is limited to " + std::to_string(combos));
  }
  Words words(seed);
  SyntheticCorpus out;
  for (std::size_t i = 0; i < n_samples; ++i) {
    out.samples.push_back(i % 2 == 0 ? bridge_sample(i, words) : compare_sample(i, words));
  }
  std::set<std::string> seen;
  while (out.noise_pool.size() < pool_size) {
    std::string doc = std::string(kAdjectives[words.next() % kAdjectives.size()]) + " " +
                      std::string(kNouns[words.next() % kNouns.size()]) + " " +
                      std::string(kVerbs[words.next() % kVerbs.size()]) + ".";
    if (seen.insert(doc).second) out.noise_pool.push_back(std::move(doc));
  }
  return out;
}

ContinuationModel make_oracle_model(std::span<const Sample> corpus, const RenderOptions& render, int n_layers,
                                    int n_heads, std::size_t order) {
  ModelConfig cfg;
  cfg.n_layers = n_layers;
  cfg.n_heads = n_heads;
  cfg.d_model = 256;
  cfg.vocab_size = 256;
  std::vector<std::string> scripts;
  scripts.reserve(corpus.size());
  for (const auto& s : corpus) {
    const auto bundle = render_prompt(s.query, s.documents, {}, render);
    const std::string& text = bundle.text;
    const std::size_t from = text.size() > order ? text.size() - order : 0;
    scripts.push_back(text.substr(from) + " " + s.gold_answers.front() + static_cast<char>(cfg.eos_token));
  }
  return ContinuationModel(cfg, order, scripts);
}

}  // namespace lfdlab
