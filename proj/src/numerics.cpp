#include "lfdlab/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>

#include "lfdlab/error.hpp"
#include "lfdlab/hash.hpp"

namespace lfdlab {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::AllNegInf: return "AllNegInf";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::RankOutOfRange: return "RankOutOfRange";
    case ErrorCode::InvalidDistribution: return "InvalidDistribution";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::PositionOutOfRange: return "PositionOutOfRange";
    case ErrorCode::SequenceTooLong: return "SequenceTooLong";
    case ErrorCode::CacheMismatch: return "CacheMismatch";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::TokenOutOfRange: return "TokenOutOfRange";
    case ErrorCode::TemplateUnknown: return "TemplateUnknown";
    case ErrorCode::SpanOutOfBounds: return "SpanOutOfBounds";
    case ErrorCode::NoAnswerSpans: return "NoAnswerSpans";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::EmptyCandidateSet: return "EmptyCandidateSet";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::Precondition: return "Precondition";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

std::string to_hex(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
    v >>= 4;
  }
  return out;
}

Distribution::Distribution(std::vector<double> probs) : probs_(std::move(probs)) {
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw Error(ErrorCode::InvalidDistribution, "entry is negative or not finite");
    }
    sum += p;
  }
  if (probs_.empty() || std::abs(sum - 1.0) > 1e-9) {
    throw Error(ErrorCode::InvalidDistribution, "entries sum to " + std::to_string(sum));
  }
}

Distribution Distribution::uniform(std::size_t n) {
  return Distribution(std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

LogVector::LogVector(std::vector<double> values, bool normalized)
    : values_(std::move(values)), normalized_(normalized) {
  bool any_finite = false;
  for (double v : values_) {
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
      throw Error(ErrorCode::InvalidDistribution, "log vector entry is NaN or +inf");
    }
    any_finite = any_finite || std::isfinite(v);
  }
  if (!any_finite) throw Error(ErrorCode::AllNegInf, "log vector has no finite entry");
}

namespace {

double finite_max(std::span<const double> x) {
  double m = kNegInf;
  for (double v : x) m = std::max(m, v);
  if (m == kNegInf) throw Error(ErrorCode::AllNegInf, "every entry is -inf");
  return m;
}

}  // namespace

Distribution softmax(std::span<const double> x) {
  const double m = finite_max(x);
  std::vector<double> out(x.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] == kNegInf ? 0.0 : std::exp(x[i] - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return Distribution(std::move(out));
}

LogVector log_softmax(std::span<const double> x) {
  const double m = finite_max(x);
  double sum = 0.0;
  for (double v : x) {
    if (v != kNegInf) sum += std::exp(v - m);
  }
  const double lse = m + std::log(sum);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] == kNegInf ? kNegInf : x[i] - lse;
  return LogVector(std::move(out), true);
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw Error(ErrorCode::LengthMismatch, "kl_divergence operands differ in length");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) acc += p[i] * std::log(p[i] / q[i]);
  }
  return acc;
}

double jsd(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw Error(ErrorCode::LengthMismatch,
                "jsd operands have lengths " + std::to_string(p.size()) + " and " + std::to_string(q.size()));
  }
  // m_i is computed identically for (p,q) and (q,p), and the final sum
  // is a commutative pair, so the result is bit-symmetric.
  double kl_p = 0.0;
  double kl_q = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) kl_p += p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) kl_q += q[i] * std::log(q[i] / m);
  }
  const double d = 0.5 * kl_p + 0.5 * kl_q;
  return std::clamp(d, 0.0, std::numbers::ln2);
}

namespace {

template <typename T>
double cosine_impl(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::LengthMismatch, "cosine operands differ in length");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::ZeroVector, "cosine of a zero vector");
  // sqrt(na * nb) rather than sqrt(na) * sqrt(nb): for a == b this is exactly na.
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

template <typename T>
std::size_t argmax_impl(std::span<const T> x) {
  if (x.empty()) throw Error(ErrorCode::Precondition, "argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    if (x[i] > x[best]) best = i;
  }
  return best;
}

}  // namespace

double cosine(std::span<const float> a, std::span<const float> b) { return cosine_impl(a, b); }
double cosine(std::span<const double> a, std::span<const double> b) { return cosine_impl(a, b); }

std::size_t argmax(std::span<const double> x) { return argmax_impl(x); }
std::size_t argmax(std::span<const float> x) { return argmax_impl(x); }

double kth_max(std::span<const double> x, std::size_t s) {
  std::vector<double> finite;
  finite.reserve(x.size());
  for (double v : x) {
    if (std::isfinite(v)) finite.push_back(v);
  }
  if (s == 0 || s > finite.size()) {
    throw Error(ErrorCode::RankOutOfRange,
                "rank " + std::to_string(s) + " with " + std::to_string(finite.size()) + " finite entries");
  }
  auto nth = finite.begin() + static_cast<std::ptrdiff_t>(s - 1);
  std::nth_element(finite.begin(), nth, finite.end(), std::greater<>());
  return *nth;
}

namespace {

std::vector<bool> exclusion_mask(std::size_t n, std::span<const std::size_t> excluded) {
  std::vector<bool> mask(n, false);
  for (std::size_t i : excluded) {
    if (i >= n) throw Error(ErrorCode::PositionOutOfRange, "excluded index " + std::to_string(i));
    mask[i] = true;
  }
  return mask;
}

}  // namespace

Distribution restrict_renormalize(const Distribution& p, std::span<const std::size_t> excluded) {
  const auto mask = exclusion_mask(p.size(), excluded);
  std::vector<double> kept;
  double mass = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (mask[i]) continue;
    kept.push_back(p[i]);
    mass += p[i];
  }
  if (!(mass > 0.0)) throw Error(ErrorCode::AllNegInf, "no probability mass outside the excluded set");
  for (double& v : kept) v /= mass;
  return Distribution(std::move(kept));
}

Distribution masked_softmax(std::span<const double> x, std::span<const std::size_t> excluded) {
  const auto mask = exclusion_mask(x.size(), excluded);
  std::vector<double> y(x.begin(), x.end());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (mask[i]) y[i] = kNegInf;
  }
  return softmax(y);
}

MeanCi mean_ci95(std::span<const double> xs) {
  if (xs.empty()) throw Error(ErrorCode::EmptyCorpus, "mean of an empty sample");
  double sum = 0.0;
  for (double x : xs) sum += x;
  const double n = static_cast<double>(xs.size());
  const double mean = sum / n;
  if (xs.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  return {mean, 1.96 * sd / std::sqrt(n)};
}

}  // namespace lfdlab
