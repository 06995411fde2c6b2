#pragma once

// Numeric kernels shared by the analysis and decoding code. Everything here
// reduces in double precision and is pure (safe to call concurrently).

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace lfdlab {

// Probability vector: entries >= 0, summing to 1 within 1e-9.
class Distribution {
 public:
  Distribution() = default;
  // Throws InvalidDistribution if `probs` is not a probability vector.
  explicit Distribution(std::vector<double> probs);

  static Distribution uniform(std::size_t n);

  std::span<const double> probs() const { return probs_; }
  const std::vector<double>& values() const { return probs_; }
  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }

 private:
  std::vector<double> probs_;
};

// Logits or log-probabilities. Entries are finite or -inf, at least one
// finite. `normalized()` marks the output of log_softmax.
class LogVector {
 public:
  LogVector() = default;
  explicit LogVector(std::vector<double> values, bool normalized = false);

  std::span<const double> values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  bool normalized() const { return normalized_; }

 private:
  std::vector<double> values_;
  bool normalized_ = false;
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Max-subtracted softmax; -inf inputs map to exactly 0. Throws AllNegInf.
Distribution softmax(std::span<const double> x);
inline Distribution softmax(const LogVector& x) { return softmax(x.values()); }

LogVector log_softmax(std::span<const double> x);
inline LogVector log_softmax(const LogVector& x) { return log_softmax(x.values()); }

// Natural-log Jensen-Shannon divergence, in [0, ln 2]. Exactly symmetric.
double jsd(std::span<const double> p, std::span<const double> q);
inline double jsd(const Distribution& p, const Distribution& q) { return jsd(p.probs(), q.probs()); }

double kl_divergence(std::span<const double> p, std::span<const double> q);

double cosine(std::span<const float> a, std::span<const float> b);
double cosine(std::span<const double> a, std::span<const double> b);

// s-th largest finite entry (s = 1 is the maximum), ties counted with multiplicity.
double kth_max(std::span<const double> x, std::size_t s);
inline double kth_max(const LogVector& x, std::size_t s) { return kth_max(x.values(), s); }

// Index of the largest entry; ties go to the smallest index.
std::size_t argmax(std::span<const double> x);
std::size_t argmax(std::span<const float> x);

// Restricts `p` to the complement of `excluded` and renormalizes. The returned
// distribution has the length of the complement.
Distribution restrict_renormalize(const Distribution& p, std::span<const std::size_t> excluded);

// softmax(x) after setting x[excluded] = -inf.
Distribution masked_softmax(std::span<const double> x, std::span<const std::size_t> excluded);

// Mean and normal-approximation 95% half-width of a sample.
struct MeanCi {
  double mean = 0.0;
  double half_width = 0.0;
};
MeanCi mean_ci95(std::span<const double> xs);

}  // namespace lfdlab
