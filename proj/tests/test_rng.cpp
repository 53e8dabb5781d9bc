#include <cmath>
#include <set>

#include "doctest.h"
#include "robustaug/rng.hpp"

using namespace robustaug;

TEST_CASE("philox4x32-10 known answers") {
  // Reference vectors from the Random123 distribution (kat_vectors).
  using C = std::array<std::uint32_t, 4>;
  CHECK(philox4x32({0, 0, 0, 0}, {0, 0}) == C{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(philox4x32({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
        C{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
}

TEST_CASE("streams are keyed, not stateful") {
  RngStream a(42, "augment", 7), b(42, "augment", 7);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  RngStream c(42, "augment", 8), d(42, "attack", 7), e(43, "augment", 7), f(42, "augment", 7, 1);
  RngStream ref(42, "augment", 7);
  const auto r = ref.next_u64();
  CHECK(c.next_u64() != r);
  CHECK(d.next_u64() != r);
  CHECK(e.next_u64() != r);
  CHECK(f.next_u64() != r);
}

TEST_CASE("uniform draws") {
  RngStream s(1, "u");
  double sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = s.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.01));

  std::set<std::int64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto k = s.uniform_int(-2, 3);
    REQUIRE(k >= -2);
    REQUIRE(k <= 3);
    seen.insert(k);
  }
  CHECK(seen.size() == 6);
  CHECK(s.uniform_int(5, 5) == 5);
}

TEST_CASE("normal, gamma and beta moments") {
  RngStream s(9, "moments");
  const int n = 100000;
  double m = 0, m2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = s.normal();
    m += x;
    m2 += x * x;
  }
  CHECK(m / n == doctest::Approx(0.0).epsilon(0.02).scale(1.0));
  CHECK(m2 / n == doctest::Approx(1.0).epsilon(0.02));

  double gm = 0;
  for (int i = 0; i < n; ++i) gm += s.gamma(0.3);
  CHECK(gm / n == doctest::Approx(0.3).epsilon(0.03));

  double bm = 0, bv = 0;
  for (int i = 0; i < n; ++i) {
    const double x = s.beta(2.0, 5.0);
    REQUIRE(x >= 0.0);
    REQUIRE(x <= 1.0);
    bm += x;
    bv += x * x;
  }
  bm /= n;
  bv = bv / n - bm * bm;
  CHECK(bm == doctest::Approx(2.0 / 7.0).epsilon(0.01));
  CHECK(bv == doctest::Approx(10.0 / (49.0 * 8.0)).epsilon(0.03));
}
