#include "adaptlm/fraction.hpp"

#include <charconv>
#include <numeric>

#include <fmt/format.h>

#include "adaptlm/error.hpp"

namespace adaptlm {

namespace {

std::uint64_t parse_digits(std::string_view digits, std::string_view whole) {
  std::uint64_t value = 0;
  if (digits.empty()) return 0;
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
  if (ec != std::errc{} || ptr != digits.data() + digits.size()) {
    throw Error(ErrorCode::invalid_argument, fmt::format("malformed fraction '{}'", whole));
  }
  return value;
}

}  // namespace

Fraction::Fraction(std::uint64_t numerator, std::uint64_t denominator) {
  if (denominator == 0) throw Error(ErrorCode::invalid_argument, "fraction denominator is zero");
  if (numerator > denominator) {
    throw Error(ErrorCode::invalid_argument,
                fmt::format("fraction {}/{} is outside [0, 1]", numerator, denominator));
  }
  const auto g = std::gcd(numerator, denominator);
  num_ = numerator / g;
  den_ = denominator / g;
}

Fraction Fraction::parse(std::string_view text) {
  if (text.empty()) throw Error(ErrorCode::invalid_argument, "empty fraction");
  if (text.front() == '-') {
    throw Error(ErrorCode::invalid_argument, fmt::format("fraction '{}' is outside [0, 1]", text));
  }
  if (const auto slash = text.find('/'); slash != std::string_view::npos) {
    return Fraction(parse_digits(text.substr(0, slash), text), parse_digits(text.substr(slash + 1), text));
  }
  const auto dot = text.find('.');
  if (dot == std::string_view::npos) return Fraction(parse_digits(text, text), 1);
  const auto int_part = text.substr(0, dot);
  const auto frac_part = text.substr(dot + 1);
  if (frac_part.size() > 18 || (int_part.empty() && frac_part.empty())) {
    throw Error(ErrorCode::invalid_argument, fmt::format("malformed fraction '{}'", text));
  }
  std::uint64_t den = 1;
  for (std::size_t i = 0; i < frac_part.size(); ++i) den *= 10;
  const auto whole = parse_digits(int_part, text);
  if (whole > 1) {
    throw Error(ErrorCode::invalid_argument, fmt::format("fraction '{}' is outside [0, 1]", text));
  }
  return Fraction(whole * den + parse_digits(frac_part, text), den);
}

std::uint64_t Fraction::floor_of(std::uint64_t n) const {
  return static_cast<std::uint64_t>(static_cast<unsigned __int128>(num_) * n / den_);
}

std::string Fraction::to_string() const { return fmt::format("{}/{}", num_, den_); }

}  // namespace adaptlm
