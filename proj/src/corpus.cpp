#include "lfdlab/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <string>

#include "lfdlab/error.hpp"

namespace lfdlab {

using nlohmann::json;

bool Sample::has_answer_spans() const {
  return std::any_of(documents.begin(), documents.end(),
                     [](const Document& d) { return !d.answer_spans.empty(); });
}

void validate_spans(const Document& doc) {
  auto spans = doc.answer_spans;
  std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) { return a.begin < b.begin; });
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const auto& s = spans[i];
    if (s.begin >= s.end || s.end > doc.text.size()) {
      throw Error(ErrorCode::SpanOutOfBounds, "span [" + std::to_string(s.begin) + "," + std::to_string(s.end) +
                                                  ") in a document of " + std::to_string(doc.text.size()) + " bytes");
    }
    if (i > 0 && spans[i - 1].end > s.begin) {
      throw Error(ErrorCode::SpanOutOfBounds, "overlapping spans at byte " + std::to_string(s.begin));
    }
  }
}

namespace {

[[noreturn]] void schema_error(std::size_t line, const std::string& field, const std::string& what) {
  throw Error(ErrorCode::SchemaError, "line " + std::to_string(line) + ", field '" + field + "': " + what);
}

std::vector<std::string> string_list(const json& obj, const char* field, std::size_t line, bool required) {
  std::vector<std::string> out;
  if (!obj.contains(field)) {
    if (required) schema_error(line, field, "missing");
    return out;
  }
  const auto& arr = obj.at(field);
  if (!arr.is_array()) schema_error(line, field, "expected an array of strings");
  for (const auto& v : arr) {
    if (!v.is_string()) schema_error(line, field, "expected an array of strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

Sample sample_from_json(const json& obj, std::size_t line) {
  if (!obj.is_object()) schema_error(line, "<root>", "expected an object");
  Sample s;
  if (!obj.contains("id")) schema_error(line, "id", "missing");
  if (obj["id"].is_string()) {
    s.id = obj["id"].get<std::string>();
  } else if (obj["id"].is_number_integer()) {
    s.id = std::to_string(obj["id"].get<long long>());
  } else {
    schema_error(line, "id", "expected a string or integer");
  }
  if (!obj.contains("query") || !obj["query"].is_string()) schema_error(line, "query", "missing or not a string");
  s.query = obj["query"].get<std::string>();

  if (!obj.contains("documents") || !obj["documents"].is_array() || obj["documents"].empty()) {
    schema_error(line, "documents", "expected a nonempty array");
  }
  for (const auto& d : obj["documents"]) {
    if (!d.is_object() || !d.contains("text") || !d["text"].is_string()) {
      schema_error(line, "documents.text", "missing or not a string");
    }
    Document doc;
    doc.text = d["text"].get<std::string>();
    if (d.contains("answer_spans")) {
      const auto& spans = d["answer_spans"];
      if (!spans.is_array()) schema_error(line, "documents.answer_spans", "expected an array");
      for (const auto& sp : spans) {
        if (!sp.is_array() || sp.size() != 2 || !sp[0].is_number_unsigned() || !sp[1].is_number_unsigned()) {
          schema_error(line, "documents.answer_spans", "expected [begin, end) pairs of non-negative integers");
        }
        doc.answer_spans.push_back({sp[0].get<std::size_t>(), sp[1].get<std::size_t>()});
      }
    }
    try {
      validate_spans(doc);
    } catch (const Error& e) {
      schema_error(line, "documents.answer_spans", e.what());
    }
    s.documents.push_back(std::move(doc));
  }

  s.gold_answers = string_list(obj, "gold_answers", line, true);
  if (s.gold_answers.empty()) schema_error(line, "gold_answers", "needs at least one answer");
  for (const auto& a : s.gold_answers) {
    if (a.find_first_not_of(" \t\r\n") == std::string::npos) schema_error(line, "gold_answers", "blank answer");
  }
  s.tags = string_list(obj, "tags", line, false);
  return s;
}

json sample_to_json(const Sample& s) {
  json docs = json::array();
  for (const auto& d : s.documents) {
    json spans = json::array();
    for (const auto& sp : d.answer_spans) spans.push_back({sp.begin, sp.end});
    docs.push_back({{"text", d.text}, {"answer_spans", spans}});
  }
  return {{"id", s.id}, {"query", s.query}, {"documents", docs}, {"gold_answers", s.gold_answers}, {"tags", s.tags}};
}

}  // namespace

std::vector<Sample> parse_corpus(std::istream& in) {
  std::vector<Sample> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(text);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line) + ": " + e.what());
    }
    out.push_back(sample_from_json(obj, line));
  }
  return out;
}

std::vector<Sample> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open corpus " + path.string());
  auto samples = parse_corpus(in);
  if (samples.empty()) std::clog << "warning: corpus " << path.string() << " is empty\n";
  return samples;
}

void write_corpus(std::ostream& out, const std::vector<Sample>& samples) {
  for (const auto& s : samples) out << sample_to_json(s).dump() << '\n';
}

void save_corpus(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  write_corpus(out, samples);
}

std::vector<std::string> load_noise_pool(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open noise pool " + path.string());
  std::vector<std::string> pool;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) pool.push_back(line);
  }
  return pool;
}

void save_noise_pool(const std::filesystem::path& path, const std::vector<std::string>& pool) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  for (const auto& doc : pool) out << doc << '\n';
}

}  // namespace lfdlab
