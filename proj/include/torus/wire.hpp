// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "torus/dtype.hpp"
#include "torus/error.hpp"

namespace torus {

// Frame layout, little-endian, no padding:
//   magic u32 | version u8 | collective_id u32 | phase u8 | step u32 |
//   src u32 | dtype u8 | payload_len u64 | payload bytes
inline constexpr std::uint32_t kFrameMagic = 0x32445452;
inline constexpr std::uint8_t kFrameVersion = 1;
inline constexpr std::size_t kFrameHeaderSize = 27;

struct MessageKey {
  std::uint32_t collective_id = 0;
  std::uint8_t phase = 0;
  std::uint32_t step = 0;
  bool operator==(const MessageKey&) const = default;
};

struct WireMessage {
  std::uint32_t collective_id = 0;
  std::uint8_t phase = 0;
  std::uint32_t step = 0;
  std::uint32_t src = 0;
  DType dtype = DType::f32;
  std::vector<std::uint8_t> payload;

  MessageKey key() const { return {collective_id, phase, step}; }
  std::uint64_t payload_len() const { return payload.size(); }
  bool operator==(const WireMessage&) const = default;
};

namespace detail {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i)
    out.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i)));
}

template <typename U>
U get_le(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    v |= static_cast<std::uint64_t>(in[at + i]) << (8 * i);
  return static_cast<U>(v);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_frame(const WireMessage& m) {
  if (m.payload.size() % element_size(m.dtype) != 0)
    throw FrameError("payload length is not a multiple of the element size");
  std::vector<std::uint8_t> out;
  out.reserve(kFrameHeaderSize + m.payload.size());
  detail::put_le<std::uint32_t>(out, kFrameMagic);
  detail::put_le<std::uint8_t>(out, kFrameVersion);
  detail::put_le<std::uint32_t>(out, m.collective_id);
  detail::put_le<std::uint8_t>(out, m.phase);
  detail::put_le<std::uint32_t>(out, m.step);
  detail::put_le<std::uint32_t>(out, m.src);
  detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(m.dtype));
  detail::put_le<std::uint64_t>(out, m.payload.size());
  out.insert(out.end(), m.payload.begin(), m.payload.end());
  return out;
}

/// Header fields of a frame without its payload. Validates magic, version,
/// and dtype code so a stream reader can reject garbage before allocating.
inline WireMessage decode_header(std::span<const std::uint8_t> bytes,
                                 std::uint64_t& payload_len) {
  if (bytes.size() < kFrameHeaderSize) throw FrameError("truncated frame header");
  if (detail::get_le<std::uint32_t>(bytes, 0) != kFrameMagic)
    throw FrameError("bad frame magic");
  if (bytes[4] != kFrameVersion)
    throw FrameError("unsupported frame version " + std::to_string(bytes[4]));
  WireMessage m;
  m.collective_id = detail::get_le<std::uint32_t>(bytes, 5);
  m.phase = bytes[9];
  m.step = detail::get_le<std::uint32_t>(bytes, 10);
  m.src = detail::get_le<std::uint32_t>(bytes, 14);
  const std::uint8_t code = bytes[18];
  if (!valid_dtype_code(code)) throw FrameError("bad dtype code " + std::to_string(code));
  m.dtype = static_cast<DType>(code);
  payload_len = detail::get_le<std::uint64_t>(bytes, 19);
  if (payload_len % element_size(m.dtype) != 0)
    throw FrameError("payload length is not a multiple of the element size");
  return m;
}

inline WireMessage decode_frame(std::span<const std::uint8_t> bytes) {
  std::uint64_t len = 0;
  WireMessage m = decode_header(bytes, len);
  if (bytes.size() - kFrameHeaderSize < len) throw FrameError("truncated payload");
  if (bytes.size() - kFrameHeaderSize > len) throw FrameError("trailing bytes after payload");
  m.payload.assign(bytes.begin() + kFrameHeaderSize, bytes.end());
  return m;
}

}  // namespace torus
