#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace fgs {

// IEEE 754 binary16 conversion, round-to-nearest-even, used only when a
// checkpoint is written at half precision.
inline std::uint16_t to_half_bits(double v) {
  const std::uint16_t sign = std::signbit(v) ? 0x8000 : 0;
  if (std::isnan(v)) return sign | 0x7e00;
  const double a = std::abs(v);
  if (a == 0.0) return sign;
  if (std::isinf(a)) return sign | 0x7c00;

  int e = std::max(std::ilogb(a), -14);
  // 11 significant bits at exponent e: mantissa in [1024, 2048) for normals.
  double m = std::nearbyint(std::ldexp(a, 10 - e));
  if (m >= 2048.0) {
    m /= 2.0;
    ++e;
  }
  if (e > 15) return sign | 0x7c00;
  if (m < 1024.0) return static_cast<std::uint16_t>(sign | static_cast<std::uint16_t>(m));  // subnormal
  const auto exp_bits = static_cast<std::uint16_t>((e + 15) << 10);
  return static_cast<std::uint16_t>(sign | exp_bits | (static_cast<std::uint16_t>(m) - 1024));
}

inline double from_half_bits(std::uint16_t h) {
  const double sign = (h & 0x8000) ? -1.0 : 1.0;
  const int exp = (h >> 10) & 0x1f;
  const int mant = h & 0x3ff;
  if (exp == 0) return sign * std::ldexp(mant, -24);
  if (exp == 31) return mant ? std::numeric_limits<double>::quiet_NaN() : sign * std::numeric_limits<double>::infinity();
  return sign * std::ldexp(mant + 1024, exp - 25);
}

}  // namespace fgs
