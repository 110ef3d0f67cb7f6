// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "torus/dtype.hpp"

namespace {

using torus::DType;

// Independent binary16 decoder: value = (-1)^s * 2^(e-15) * (1 + m/1024),
// subnormals 2^-14 * m/1024.
double decode_half_ref(unsigned bits) {
  const unsigned s = bits >> 15, e = (bits >> 10) & 31u, m = bits & 1023u;
  double mag = e == 0 ? std::pow(2.0, -14) * (m / 1024.0) : std::pow(2.0, int(e) - 15) * (1.0 + m / 1024.0);
  return s ? -mag : mag;
}

// All nonnegative finite halves in increasing order with their bit patterns.
struct HalfTable {
  std::vector<double> values;
  std::vector<unsigned> bits;
  HalfTable() {
    for (unsigned b = 0; b < 0x7C00u; ++b) {
      values.push_back(decode_half_ref(b));
      bits.push_back(b);
    }
  }
};

const HalfTable& table() {
  static const HalfTable t;
  return t;
}

// Brute-force round-to-nearest-even for a nonnegative value by scanning the
// bracketing table entries.
unsigned nearest_half_ref(double a) {
  const auto& t = table();
  const double max_finite = t.values.back();
  const double next_up = 65536.0;  // first value past the finite range
  if (a >= max_finite) {
    if (a - max_finite < next_up - a) return t.bits.back();
    if (a - max_finite > next_up - a) return 0x7C00u;
    return 0x7C00u;  // tie: 65536 has an even (zero) significand
  }
  auto it = std::upper_bound(t.values.begin(), t.values.end(), a);
  const std::size_t hi = static_cast<std::size_t>(it - t.values.begin());
  const std::size_t lo = hi - 1;
  const double dlo = a - t.values[lo], dhi = t.values[hi] - a;
  if (dlo < dhi) return t.bits[lo];
  if (dhi < dlo) return t.bits[hi];
  return (t.bits[lo] & 1u) == 0 ? t.bits[lo] : t.bits[hi];
}

TEST(HalfTest, DecodeMatchesReferenceForAllFinitePatterns) {
  for (unsigned b = 0; b < 0x10000u; ++b) {
    const unsigned e = (b >> 10) & 31u;
    if (e == 31) continue;
    ASSERT_EQ(torus::half_bits_to_double(static_cast<std::uint16_t>(b)), decode_half_ref(b)) << b;
  }
}

TEST(HalfTest, EncodeIsExactOnRepresentableValues) {
  for (unsigned b = 0; b < 0x7C00u; ++b) {
    const double v = decode_half_ref(b);
    ASSERT_EQ(torus::half_bits_from(v), b);
    ASSERT_EQ(torus::half_bits_from(-v), b | 0x8000u);
  }
}

TEST(HalfTest, MidpointsRoundToEven) {
  const auto& t = table();
  for (std::size_t i = 0; i + 1 < t.values.size(); ++i) {
    const double mid = 0.5 * (t.values[i] + t.values[i + 1]);
    ASSERT_EQ(torus::half_bits_from(mid), nearest_half_ref(mid)) << mid;
  }
}

TEST(HalfTest, RandomValuesMatchBruteForce) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> log_mag(-26.0, 16.5);
  for (int i = 0; i < 200000; ++i) {
    const double a = std::exp2(log_mag(rng));
    ASSERT_EQ(torus::half_bits_from(a), nearest_half_ref(a)) << a;
  }
}

TEST(HalfTest, OverflowBoundary) {
  EXPECT_EQ(torus::half_bits_from(65504.0), 0x7BFFu);
  EXPECT_EQ(torus::half_bits_from(65519.99), 0x7BFFu);
  EXPECT_EQ(torus::half_bits_from(65520.0), 0x7C00u);
  EXPECT_EQ(torus::half_bits_from(-1e9), 0xFC00u);
  EXPECT_TRUE(std::isinf(torus::half_bits_to_double(0x7C00u)));
  EXPECT_TRUE(std::isnan(torus::half_bits_to_double(torus::half_bits_from(NAN))));
}

TEST(DTypeTest, Fp16CannotHold1024Quarter) {
  EXPECT_EQ(torus::round_to(DType::f16, 1024.25), 1024.0);
  EXPECT_EQ(torus::round_to(DType::f32, 1024.25), 1024.25);
  EXPECT_EQ(torus::add_in(DType::f16, 1024.0, 0.25), 1024.0);
  EXPECT_EQ(torus::add_in(DType::f32, 1024.0, 0.25), 1024.25);
}

TEST(DTypeTest, Fp32AddMatchesFloatArithmetic) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(-1e6f, 1e6f);
  for (int i = 0; i < 10000; ++i) {
    const float a = u(rng), b = u(rng);
    ASSERT_EQ(torus::add_in(DType::f32, a, b), static_cast<double>(a + b));
  }
}

TEST(DTypeTest, ParseAndSizes) {
  EXPECT_EQ(torus::parse_dtype("f16"), DType::f16);
  EXPECT_EQ(torus::element_size(DType::f16), 2u);
  EXPECT_EQ(torus::element_size(DType::f32), 4u);
  EXPECT_EQ(torus::element_size(DType::f64), 8u);
  EXPECT_EQ(static_cast<int>(DType::f32), 0);
  EXPECT_EQ(static_cast<int>(DType::f16), 1);
  EXPECT_EQ(static_cast<int>(DType::f64), 2);
  EXPECT_THROW(torus::parse_dtype("bf16"), torus::ConfigError);
}

}  // namespace
