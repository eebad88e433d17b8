#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace adaptlm {

/// Exact rational in [0, 1]. Parsed from decimal ("0.1") or ratio ("1/10") text
/// so that floor(fraction * n) never suffers binary rounding.
class Fraction {
 public:
  constexpr Fraction() = default;
  Fraction(std::uint64_t numerator, std::uint64_t denominator);

  static Fraction parse(std::string_view text);

  std::uint64_t numerator() const noexcept { return num_; }
  std::uint64_t denominator() const noexcept { return den_; }
  double to_double() const noexcept { return static_cast<double>(num_) / static_cast<double>(den_); }
  bool is_zero() const noexcept { return num_ == 0; }

  /// floor(this * n), exact.
  std::uint64_t floor_of(std::uint64_t n) const;

  std::string to_string() const;

  friend bool operator==(const Fraction& a, const Fraction& b) {
    return static_cast<unsigned __int128>(a.num_) * b.den_ ==
           static_cast<unsigned __int128>(b.num_) * a.den_;
  }

 private:
  std::uint64_t num_ = 0;
  std::uint64_t den_ = 1;
};

}  // namespace adaptlm
