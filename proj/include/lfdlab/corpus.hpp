#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace lfdlab {

// Half-open byte range [begin, end) into a document's text.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  bool operator==(const Span&) const = default;
};

struct Document {
  std::string text;
  std::vector<Span> answer_spans;

  bool operator==(const Document&) const = default;
};

struct Sample {
  std::string id;
  std::string query;
  std::vector<Document> documents;
  std::vector<std::string> gold_answers;
  std::vector<std::string> tags;

  bool has_answer_spans() const;
  // Tag the sample is counted under in per-tag reports.
  std::string primary_tag() const { return tags.empty() ? "untagged" : tags.front(); }

  bool operator==(const Sample&) const = default;
};

// Spans must be nonempty, in bounds and pairwise disjoint. Throws SpanOutOfBounds.
void validate_spans(const Document& doc);

// JSONL, one sample per line:
//   {"id", "query", "documents":[{"text","answer_spans":[[b,e],...]}],
//    "gold_answers":[...], "tags":[...]}
// Blank lines are skipped. Errors carry the 1-based line number.
std::vector<Sample> parse_corpus(std::istream& in);
std::vector<Sample> load_corpus(const std::filesystem::path& path);
void write_corpus(std::ostream& out, const std::vector<Sample>& samples);
void save_corpus(const std::filesystem::path& path, const std::vector<Sample>& samples);

// Noise pool: one document per non-empty line.
std::vector<std::string> load_noise_pool(const std::filesystem::path& path);
void save_noise_pool(const std::filesystem::path& path, const std::vector<std::string>& pool);

}  // namespace lfdlab
