// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

#include "torus/dtype.hpp"
#include "torus/topology.hpp"

namespace torus {

/// Flat numeric buffer tagged with an element type. Values are held as double
/// but every element is representable in `dtype`.
struct TensorBuffer {
  DType dtype = DType::f32;
  std::vector<double> values;

  TensorBuffer() = default;
  TensorBuffer(DType t, std::vector<double> v) : dtype(t), values(std::move(v)) {
    for (auto& x : values) x = round_to(dtype, x);
  }
  TensorBuffer(DType t, std::size_t n) : dtype(t), values(n, 0.0) {}

  std::size_t size() const { return values.size(); }
  bool operator==(const TensorBuffer&) const = default;

  /// Same values rounded to another element type.
  TensorBuffer as(DType t) const { return TensorBuffer(t, values); }
};

/// Element types used on the wire and for accumulation. Payloads are rounded
/// to wire_dtype at every send; sums are formed in accum_dtype.
struct ReductionPolicy {
  DType wire_dtype = DType::f32;
  DType accum_dtype = DType::f32;

  void validate() const {
    if (precision_bits(accum_dtype) < precision_bits(wire_dtype))
      throw ConfigError("accumulation dtype " + std::string(to_string(accum_dtype)) +
                        " is narrower than wire dtype " +
                        std::string(to_string(wire_dtype)));
  }

  static ReductionPolicy uniform(DType t) { return {t, t}; }
  bool operator==(const ReductionPolicy&) const = default;
};

inline std::vector<std::uint8_t> encode_payload(std::span<const double> values, DType t) {
  std::vector<std::uint8_t> out(values.size() * element_size(t));
  std::uint8_t* p = out.data();
  for (double v : values) {
    switch (t) {
      case DType::f16: {
        const std::uint16_t h = half_bits_from(v);
        p[0] = static_cast<std::uint8_t>(h);
        p[1] = static_cast<std::uint8_t>(h >> 8);
        break;
      }
      case DType::f32: {
        const float f = static_cast<float>(v);
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>(u >> (8 * i));
        break;
      }
      case DType::f64: {
        std::uint64_t u;
        std::memcpy(&u, &v, 8);
        for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>(u >> (8 * i));
        break;
      }
    }
    p += element_size(t);
  }
  return out;
}

inline std::vector<double> decode_payload(std::span<const std::uint8_t> bytes, DType t) {
  const std::size_t es = element_size(t);
  if (bytes.size() % es != 0) throw ShapeMismatch("payload is not a whole number of elements");
  std::vector<double> out(bytes.size() / es);
  const std::uint8_t* p = bytes.data();
  for (auto& v : out) {
    switch (t) {
      case DType::f16:
        v = half_bits_to_double(static_cast<std::uint16_t>(p[0] | (p[1] << 8)));
        break;
      case DType::f32: {
        std::uint32_t u = 0;
        for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(p[i]) << (8 * i);
        float f;
        std::memcpy(&f, &u, 4);
        v = f;
        break;
      }
      case DType::f64: {
        std::uint64_t u = 0;
        for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        std::memcpy(&v, &u, 8);
        break;
      }
    }
    p += es;
  }
  return out;
}

/// acc[i] += incoming[i] in the accumulation type; incoming is a wire payload.
inline void reduce_into(std::span<double> acc, std::span<const std::uint8_t> incoming,
                        const ReductionPolicy& policy) {
  if (incoming.size() != acc.size() * element_size(policy.wire_dtype))
    throw ShapeMismatch("reduce: payload holds " + std::to_string(incoming.size()) +
                        " bytes, expected " +
                        std::to_string(acc.size() * element_size(policy.wire_dtype)));
  const auto in = decode_payload(incoming, policy.wire_dtype);
  for (std::size_t i = 0; i < acc.size(); ++i)
    acc[i] = add_in(policy.accum_dtype, acc[i], round_to(policy.accum_dtype, in[i]));
}

inline TensorBuffer elementwise_reduce(TensorBuffer acc, std::span<const std::uint8_t> incoming,
                                       const ReductionPolicy& policy) {
  policy.validate();
  if (acc.dtype != policy.accum_dtype)
    throw ShapeMismatch("reduce: accumulator is " + std::string(to_string(acc.dtype)) +
                        " but policy accumulates in " +
                        std::string(to_string(policy.accum_dtype)));
  reduce_into(acc.values, incoming, policy);
  return acc;
}

}  // namespace torus
