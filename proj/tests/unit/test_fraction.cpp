#include <doctest.h>

#include <random>

#include "adaptlm/error.hpp"
#include "adaptlm/fraction.hpp"

using adaptlm::Fraction;

TEST_CASE("decimal and ratio text parse to the same exact value") {
  CHECK(Fraction::parse("0.1") == Fraction(1, 10));
  CHECK(Fraction::parse("1/10") == Fraction(1, 10));
  CHECK(Fraction::parse("0") == Fraction(0, 1));
  CHECK(Fraction::parse("1") == Fraction(1, 1));
  CHECK(Fraction::parse("0.25").numerator() == 1);
  CHECK(Fraction::parse("0.25").denominator() == 4);
}

TEST_CASE("floor_of is exact where binary doubles are not") {
  // 0.1 * 50 computed in double is exactly representable here, but 0.7 * 10 is 6.999...
  CHECK(Fraction::parse("0.7").floor_of(10) == 7);
  CHECK(Fraction::parse("0.1").floor_of(50) == 5);
  CHECK(Fraction::parse("0.1").floor_of(9) == 0);
  CHECK(Fraction(1, 3).floor_of(std::uint64_t{1} << 62) == (std::uint64_t{1} << 62) / 3);
}

TEST_CASE("floor_of agrees with integer arithmetic on random ratios") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    const std::uint64_t den = rng() % 1000 + 1;
    const std::uint64_t num = rng() % (den + 1);
    const std::uint64_t n = rng() % 100000;
    CHECK(Fraction(num, den).floor_of(n) == num * n / den);
  }
}

TEST_CASE("out of range and malformed fractions are rejected") {
  CHECK_THROWS_AS(Fraction::parse("1.5"), adaptlm::Error);
  CHECK_THROWS_AS(Fraction::parse("-0.1"), adaptlm::Error);
  CHECK_THROWS_AS(Fraction::parse("abc"), adaptlm::Error);
  CHECK_THROWS_AS(Fraction::parse("1/0"), adaptlm::Error);
  CHECK_THROWS_AS(Fraction::parse(""), adaptlm::Error);
  CHECK_THROWS_AS(Fraction(3, 2), adaptlm::Error);
}

TEST_CASE("to_string roundtrips") {
  for (const auto* s : {"0.1", "1/3", "0", "1"}) {
    const auto f = Fraction::parse(s);
    CHECK(Fraction::parse(f.to_string()) == f);
  }
}
