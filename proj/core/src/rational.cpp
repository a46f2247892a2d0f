// SPDX-License-Identifier: Apache-2.0

#include "slam/rational.hpp"

#include <charconv>
#include <numeric>
#include <stdexcept>

namespace slam {

Rational::Rational(std::int64_t num, std::int64_t den) {
  if (den == 0) throw std::invalid_argument("Rational: zero denominator");
  if (den < 0) {
    num = -num;
    den = -den;
  }
  const std::int64_t g = std::gcd(num < 0 ? -num : num, den);
  num_ = g == 0 ? 0 : num / g;
  den_ = g == 0 ? 1 : den / g;
}

std::optional<Rational> Rational::parse(std::string_view s) {
  if (s.empty()) return std::nullopt;
  bool neg = false;
  if (s.front() == '-') {
    neg = true;
    s.remove_prefix(1);
  }
  auto parse_digits = [](std::string_view d, std::int64_t& out) {
    if (d.empty()) return false;
    for (char c : d) {
      if (c < '0' || c > '9') return false;
    }
    auto [p, ec] = std::from_chars(d.data(), d.data() + d.size(), out);
    return ec == std::errc() && p == d.data() + d.size();
  };
  std::int64_t num = 0;
  std::int64_t den = 1;
  if (const auto slash = s.find('/'); slash != std::string_view::npos) {
    if (!parse_digits(s.substr(0, slash), num) || !parse_digits(s.substr(slash + 1), den) ||
        den == 0) {
      return std::nullopt;
    }
  } else if (const auto dot = s.find('.'); dot != std::string_view::npos) {
    std::int64_t whole = 0;
    std::int64_t frac = 0;
    const std::string_view fs = s.substr(dot + 1);
    if (!parse_digits(s.substr(0, dot), whole) || !parse_digits(fs, frac) || fs.size() > 15) {
      return std::nullopt;
    }
    for (std::size_t i = 0; i < fs.size(); ++i) den *= 10;
    num = whole * den + frac;
  } else if (!parse_digits(s, num)) {
    return std::nullopt;
  }
  return Rational(neg ? -num : num, den);
}

std::string Rational::to_string() const {
  if (den_ == 1) return std::to_string(num_);
  return std::to_string(num_) + "/" + std::to_string(den_);
}

std::strong_ordering operator<=>(const Rational& a, const Rational& b) {
  const __int128 l = static_cast<__int128>(a.num_) * b.den_;
  const __int128 r = static_cast<__int128>(b.num_) * a.den_;
  if (l < r) return std::strong_ordering::less;
  if (l > r) return std::strong_ordering::greater;
  return std::strong_ordering::equal;
}

}  // namespace slam
