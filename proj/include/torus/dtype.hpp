// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <string>
#include <string_view>

#include "torus/error.hpp"

namespace torus {

/// Element type tag. The numeric values are the wire codes.
enum class DType : std::uint8_t { f32 = 0, f16 = 1, f64 = 2 };

inline constexpr std::size_t element_size(DType t) {
  switch (t) {
    case DType::f16: return 2;
    case DType::f32: return 4;
    case DType::f64: return 8;
  }
  return 0;
}

/// Significand bits including the implicit one; used to order precisions.
inline constexpr int precision_bits(DType t) {
  switch (t) {
    case DType::f16: return 11;
    case DType::f32: return 24;
    case DType::f64: return 53;
  }
  return 0;
}

inline std::string_view to_string(DType t) {
  switch (t) {
    case DType::f16: return "f16";
    case DType::f32: return "f32";
    case DType::f64: return "f64";
  }
  return "?";
}

inline DType parse_dtype(std::string_view s) {
  if (s == "f16") return DType::f16;
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  throw ConfigError("unknown dtype '" + std::string(s) + "'");
}

// IEEE 754 binary16 conversions. Encoding rounds to nearest, ties to even,
// directly from double so there is no intermediate float rounding.
inline std::uint16_t half_bits_from(double v) {
  std::uint64_t raw;
  std::memcpy(&raw, &v, sizeof raw);
  const auto sign = static_cast<std::uint16_t>((raw >> 63) << 15);
  if (std::isnan(v)) return static_cast<std::uint16_t>(sign | 0x7E00u);
  const double a = std::fabs(v);
  // 65520 is the midpoint between 65504 (max finite) and 65536; ties go to the
  // even neighbour, which is infinity.
  if (a >= 65520.0) return static_cast<std::uint16_t>(sign | 0x7C00u);
  if (a < 0x1p-14) {
    // subnormal: units of 2^-24; a result of 1024 is the smallest normal
    const auto m = static_cast<std::uint16_t>(std::nearbyint(a * 0x1p24));
    return static_cast<std::uint16_t>(sign | m);
  }
  int e = 0;
  std::frexp(a, &e);  // a in [2^(e-1), 2^e)
  int exp = e - 1;
  double q = std::nearbyint(std::ldexp(a, 10 - exp));  // [1024, 2048]
  if (q >= 2048.0) {
    q = 1024.0;
    ++exp;
  }
  const int biased = exp + 15;
  if (biased >= 31) return static_cast<std::uint16_t>(sign | 0x7C00u);
  return static_cast<std::uint16_t>(sign | (biased << 10) |
                                    (static_cast<int>(q) - 1024));
}

inline double half_bits_to_double(std::uint16_t h) {
  const bool neg = (h & 0x8000u) != 0;
  const int exp = (h >> 10) & 0x1F;
  const int mant = h & 0x3FF;
  double v;
  if (exp == 0) {
    v = std::ldexp(static_cast<double>(mant), -24);
  } else if (exp == 31) {
    v = mant ? std::numeric_limits<double>::quiet_NaN()
             : std::numeric_limits<double>::infinity();
  } else {
    v = std::ldexp(static_cast<double>(mant + 1024), exp - 25);
  }
  return neg ? -v : v;
}

/// Rounds a value to the nearest representable value of `t`.
inline double round_to(DType t, double v) {
  switch (t) {
    case DType::f16: return half_bits_to_double(half_bits_from(v));
    case DType::f32: return static_cast<double>(static_cast<float>(v));
    case DType::f64: return v;
  }
  return v;
}

/// a + b evaluated in the arithmetic of `t`; operands must already be
/// representable in `t`.
inline double add_in(DType t, double a, double b) {
  switch (t) {
    // the double sum of two binary16 values is exact, so one rounding suffices
    case DType::f16: return round_to(DType::f16, a + b);
    case DType::f32:
      return static_cast<double>(static_cast<float>(a) + static_cast<float>(b));
    case DType::f64: return a + b;
  }
  return a + b;
}

inline bool valid_dtype_code(std::uint8_t code) { return code <= 2; }

}  // namespace torus
