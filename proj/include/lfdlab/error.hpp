#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lfdlab {

enum class ErrorCode {
  AllNegInf,
  LengthMismatch,
  ZeroVector,
  RankOutOfRange,
  InvalidDistribution,
  ConfigInvalid,
  PositionOutOfRange,
  SequenceTooLong,
  CacheMismatch,
  DimensionMismatch,
  TokenOutOfRange,
  TemplateUnknown,
  SpanOutOfBounds,
  NoAnswerSpans,
  EmptyCorpus,
  EmptyCandidateSet,
  ParseError,
  SchemaError,
  Precondition,
  Io,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; `code()` identifies the failed rule.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace lfdlab
