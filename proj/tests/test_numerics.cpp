#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lfdlab/error.hpp"
#include "lfdlab/hash.hpp"
#include "lfdlab/numerics.hpp"
#include "test_support.hpp"

using namespace lfdlab;
using namespace lfdlab::testing;

namespace {

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::Io;
}

std::vector<double> v(std::initializer_list<double> xs) { return xs; }

}  // namespace

TEST_CASE("softmax examples") {
  auto a = softmax(v({0.0, 0.0}));
  CHECK(a[0] == 0.5);
  CHECK(a[1] == 0.5);

  auto b = softmax(v({0.0, kNegInf}));
  CHECK(b[0] == 1.0);
  CHECK(b[1] == 0.0);

  // 40-digit evaluation of e^x / sum(e^x).
  const double want[] = {0.0900305731703804579980221, 0.2447284710547976524729596, 0.6652409557748218895290183};
  auto c = softmax(v({1.0, 2.0, 3.0}));
  for (int i = 0; i < 3; ++i) CHECK(c[i] == doctest::Approx(want[i]).epsilon(1e-15));

  CHECK(code_of([] { softmax(v({kNegInf, kNegInf})); }) == ErrorCode::AllNegInf);
}

TEST_CASE("log_softmax examples") {
  auto a = log_softmax(v({0.0, 0.0}));
  CHECK(a.normalized());
  CHECK(a[0] == doctest::Approx(std::log(0.5)).epsilon(1e-15));
  CHECK(a[1] == doctest::Approx(std::log(0.5)).epsilon(1e-15));

  auto b = log_softmax(v({5.0, kNegInf}));
  CHECK(b[0] == 0.0);
  CHECK(b[1] == kNegInf);

  const double want[] = {-2.40760596444438030448292, -1.40760596444438030448292, -0.4076059644443803044829199};
  auto c = log_softmax(v({1.0, 2.0, 3.0}));
  for (int i = 0; i < 3; ++i) CHECK(c[i] == doctest::Approx(want[i]).epsilon(1e-15));

  CHECK(code_of([] { log_softmax(v({kNegInf})); }) == ErrorCode::AllNegInf);
}

TEST_CASE("jsd examples") {
  CHECK(jsd(v({0.3, 0.7}), v({0.3, 0.7})) == 0.0);
  CHECK(jsd(v({1.0, 0.0}), v({0.0, 1.0})) == doctest::Approx(std::numbers::ln2).epsilon(1e-15));

  // Term by term: m = [0.7, 0.3].
  const double kl_p = 0.5 * std::log(0.5 / 0.7) + 0.5 * std::log(0.5 / 0.3);
  const double kl_q = 0.9 * std::log(0.9 / 0.7) + 0.1 * std::log(0.1 / 0.3);
  const double want = 0.5 * kl_p + 0.5 * kl_q;
  CHECK(jsd(v({0.5, 0.5}), v({0.9, 0.1})) == doctest::Approx(want).epsilon(1e-14));
  CHECK(want == doctest::Approx(0.1017492250791966885637799).epsilon(1e-14));

  CHECK(code_of([] { jsd(v({1.0}), v({0.5, 0.5})); }) == ErrorCode::LengthMismatch);
  CHECK(code_of([] { Distribution(v({0.5, 0.6})); }) == ErrorCode::InvalidDistribution);
  CHECK(code_of([] { Distribution(v({1.5, -0.5})); }) == ErrorCode::InvalidDistribution);
}

TEST_CASE("cosine examples") {
  CHECK(cosine(std::span<const double>(v({1.0, 2.0})), std::span<const double>(v({1.0, 2.0}))) == 1.0);
  CHECK(cosine(std::span<const double>(v({1.0, 0.0})), std::span<const double>(v({0.0, 1.0}))) == 0.0);
  CHECK(cosine(std::span<const double>(v({1.0, 1.0})), std::span<const double>(v({1.0, -1.0}))) == 0.0);
  std::vector<float> z{0.0f, 0.0f}, o{1.0f, 0.0f};
  CHECK(code_of([&] { cosine(std::span<const float>(z), std::span<const float>(o)); }) == ErrorCode::ZeroVector);
  std::vector<float> three{1.0f, 0.0f, 0.0f};
  CHECK(code_of([&] { cosine(std::span<const float>(three), std::span<const float>(o)); }) ==
        ErrorCode::LengthMismatch);
}

TEST_CASE("kth_max examples") {
  CHECK(kth_max(v({3.0, 1.0, 2.0}), 1) == 3.0);
  CHECK(kth_max(v({3.0, 1.0, 2.0}), 3) == 1.0);
  CHECK(kth_max(v({2.0, 2.0, 1.0}), 2) == 2.0);
  CHECK(kth_max(v({2.0, kNegInf, 1.0}), 2) == 1.0);
  CHECK(code_of([] { kth_max(v({2.0, kNegInf}), 2); }) == ErrorCode::RankOutOfRange);
  CHECK(code_of([] { kth_max(v({2.0}), 0); }) == ErrorCode::RankOutOfRange);
}

TEST_CASE("argmax ties go to the smaller index") {
  CHECK(argmax(std::span<const double>(v({1.0, 3.0, 3.0}))) == 1);
  std::vector<float> f{2.0f, 2.0f};
  CHECK(argmax(std::span<const float>(f)) == 0);
}

TEST_CASE("mean_ci95") {
  auto one = mean_ci95(v({0.25}));
  CHECK(one.mean == 0.25);
  CHECK(one.half_width == 0.0);
  auto two = mean_ci95(v({1.0, 3.0}));
  CHECK(two.mean == 2.0);
  CHECK(two.half_width == doctest::Approx(1.96 * std::sqrt(2.0) / std::sqrt(2.0)));
}

TEST_CASE("property: jsd symmetric, bounded, zero on identity") {
  Rng rng(11);
  for (int it = 0; it < 20000; ++it) {
    const std::size_t n = 1 + pick(rng, 12);
    const auto p = random_probs(rng, n);
    const auto q = random_probs(rng, n);
    const double a = jsd(p, q);
    const double b = jsd(q, p);
    REQUIRE(a == b);
    REQUIRE(a >= 0.0);
    REQUIRE(a <= std::numbers::ln2);
    REQUIRE(std::abs(jsd(p, p)) <= 1e-12);
  }
}

TEST_CASE("property: exp(log_softmax) matches softmax") {
  Rng rng(12);
  for (int it = 0; it < 5000; ++it) {
    const auto x = random_logits(rng, 1 + pick(rng, 40));
    const auto p = softmax(x);
    const auto lp = log_softmax(x);
    for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(std::abs(std::exp(lp[i]) - p[i]) <= 1e-12);
  }
}

TEST_CASE("property: masked softmax equals restricted renormalization") {
  Rng rng(13);
  for (int it = 0; it < 5000; ++it) {
    const std::size_t n = 2 + pick(rng, 30);
    const auto x = random_logits(rng, n, 10.0, 0.0);
    std::vector<std::size_t> excluded;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      if (rng() % 3 == 0) excluded.push_back(i);
    }
    const auto full = softmax(x);
    const auto masked = masked_softmax(x, excluded);
    const auto restricted = restrict_renormalize(full, excluded);
    std::size_t r = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (std::find(excluded.begin(), excluded.end(), i) != excluded.end()) {
        REQUIRE(masked[i] == 0.0);
      } else {
        REQUIRE(std::abs(masked[i] - restricted[r++]) <= 1e-9);
      }
    }
  }
}

TEST_CASE("property: kth_max agrees with sorting") {
  Rng rng(14);
  for (int it = 0; it < 5000; ++it) {
    auto x = random_logits(rng, 1 + pick(rng, 20));
    std::vector<double> finite;
    for (double e : x) {
      if (std::isfinite(e)) finite.push_back(e);
    }
    std::sort(finite.rbegin(), finite.rend());
    const std::size_t s = 1 + pick(rng, finite.size());
    REQUIRE(kth_max(x, s) == finite[s - 1]);
  }
}

TEST_CASE("hash helpers") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(to_hex(0xabcULL) == "0000000000000abc");
  CHECK(derive_seed(1, "x") != derive_seed(1, "y"));
  CHECK(derive_seed(1, "x", 0) != derive_seed(1, "x", 1));
}
