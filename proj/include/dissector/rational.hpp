#pragma once

#include <compare>
#include <cstdint>
#include <ostream>

namespace dissector {

// Non-negative ratio of two integer cardinalities. Comparison is exact
// (cross-multiplied in 128 bits), never through floating point.
struct Ratio {
  std::int64_t num = 0;
  std::int64_t den = 1;

  constexpr Ratio() = default;
  constexpr Ratio(std::int64_t n, std::int64_t d) : num(n), den(d) {}

  // n/d with the 0/0 -> 0 convention used throughout.
  static constexpr Ratio of(std::int64_t n, std::int64_t d) {
    return d == 0 ? Ratio{0, 1} : Ratio{n, d};
  }
  static constexpr Ratio zero() { return {0, 1}; }
  static constexpr Ratio one() { return {1, 1}; }

  constexpr double to_double() const {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  }

  friend constexpr std::strong_ordering operator<=>(const Ratio& a, const Ratio& b) {
    const __int128 lhs = static_cast<__int128>(a.num) * b.den;
    const __int128 rhs = static_cast<__int128>(b.num) * a.den;
    if (lhs < rhs) return std::strong_ordering::less;
    if (lhs > rhs) return std::strong_ordering::greater;
    return std::strong_ordering::equal;
  }
  // Value equality: 1/2 == 2/4.
  friend constexpr bool operator==(const Ratio& a, const Ratio& b) {
    return (a <=> b) == std::strong_ordering::equal;
  }

  // Same numerator and denominator.
  constexpr bool identical(const Ratio& o) const { return num == o.num && den == o.den; }
};

inline std::ostream& operator<<(std::ostream& os, const Ratio& r) {
  return os << r.num << '/' << r.den;
}

}  // namespace dissector
