// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "torus/error.hpp"

namespace torus {

using Rank = std::uint32_t;

enum class Orientation { horizontal, vertical };

struct ChunkRange {
  std::size_t offset = 0;
  std::size_t length = 0;

  std::size_t end() const { return offset + length; }
  bool operator==(const ChunkRange&) const = default;
};

/// Splits [0, total_length) into `parts` adjacent ranges whose lengths differ
/// by at most one; the first total_length % parts ranges carry the extra
/// element.
inline std::vector<ChunkRange> partition_chunks(std::size_t total_length,
                                                std::size_t parts) {
  if (parts == 0) throw OutOfRange("partition_chunks: parts must be >= 1");
  std::vector<ChunkRange> out;
  out.reserve(parts);
  const std::size_t base = total_length / parts;
  const std::size_t extra = total_length % parts;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts; ++i) {
    const std::size_t len = base + (i < extra ? 1 : 0);
    out.push_back({offset, len});
    offset += len;
  }
  return out;
}

/// Chunk `index` of partition_chunks(range.length, parts), shifted into `range`.
inline ChunkRange sub_chunk(ChunkRange range, std::size_t parts,
                            std::size_t index) {
  const std::size_t base = range.length / parts;
  const std::size_t extra = range.length % parts;
  const std::size_t len = base + (index < extra ? 1 : 0);
  const std::size_t off = index * base + (index < extra ? index : extra);
  return {range.offset + off, len};
}

/// Largest chunk produced by partition_chunks(total_length, parts).
inline std::size_t max_chunk(std::size_t total_length, std::size_t parts) {
  return (total_length + parts - 1) / parts;
}

struct GridCoords {
  std::size_t row = 0;
  std::size_t col = 0;
  bool operator==(const GridCoords&) const = default;
};

struct RingNeighbors {
  Rank prev = 0;
  Rank next = 0;
  bool operator==(const RingNeighbors&) const = default;
};

/// Logical X-by-Y arrangement of ranks. Ranks are laid out row-major: a row
/// holds x consecutive ranks, and there are y rows.
class GridTopology {
 public:
  GridTopology(std::size_t n_ranks, std::size_t x, std::size_t y)
      : n_(n_ranks), x_(x), y_(y) {
    if (n_ranks == 0 || x == 0 || y == 0)
      throw DimensionMismatch("grid dimensions must be positive");
    if (x * y != n_ranks)
      throw DimensionMismatch("grid " + std::to_string(x) + "x" +
                              std::to_string(y) + " does not hold " +
                              std::to_string(n_ranks) + " ranks");
  }

  std::size_t size() const { return n_; }
  std::size_t x() const { return x_; }
  std::size_t y() const { return y_; }

  GridCoords coords_of(Rank rank) const {
    check(rank);
    return {rank / x_, rank % x_};
  }

  Rank rank_at(std::size_t row, std::size_t col) const {
    if (row >= y_ || col >= x_) throw OutOfRange("grid coordinate out of range");
    return static_cast<Rank>(row * x_ + col);
  }

  /// Members of the rank's row (horizontal) or column (vertical) in ring order.
  std::vector<Rank> ring_of(Rank rank, Orientation o) const {
    const auto c = coords_of(rank);
    std::vector<Rank> ring;
    if (o == Orientation::horizontal) {
      for (std::size_t col = 0; col < x_; ++col) ring.push_back(rank_at(c.row, col));
    } else {
      for (std::size_t row = 0; row < y_; ++row) ring.push_back(rank_at(row, c.col));
    }
    return ring;
  }

  RingNeighbors ring_neighbors(Rank rank, Orientation o) const {
    const auto c = coords_of(rank);
    if (o == Orientation::horizontal) {
      return {rank_at(c.row, (c.col + x_ - 1) % x_), rank_at(c.row, (c.col + 1) % x_)};
    }
    return {rank_at((c.row + y_ - 1) % y_, c.col), rank_at((c.row + 1) % y_, c.col)};
  }

  std::string to_string() const {
    return std::to_string(x_) + "x" + std::to_string(y_);
  }

  bool operator==(const GridTopology&) const = default;

 private:
  void check(Rank rank) const {
    if (rank >= n_)
      throw OutOfRange("rank " + std::to_string(rank) + " outside grid of " +
                       std::to_string(n_));
  }

  std::size_t n_;
  std::size_t x_;
  std::size_t y_;
};

inline GridTopology grid_from_counts(std::size_t n_ranks, std::size_t x,
                                     std::size_t y) {
  return GridTopology(n_ranks, x, y);
}

/// Parses "XxY" (lowercase separator, decimal digits only).
inline GridTopology parse_grid(std::string_view s) {
  const auto sep = s.find('x');
  auto digits = [](std::string_view part) {
    if (part.empty() || part.size() > 9) return false;
    for (char ch : part)
      if (ch < '0' || ch > '9') return false;
    return true;
  };
  if (sep == std::string_view::npos || !digits(s.substr(0, sep)) ||
      !digits(s.substr(sep + 1)))
    throw DimensionMismatch("malformed grid '" + std::string(s) + "', expected XxY");
  const std::size_t x = std::stoul(std::string(s.substr(0, sep)));
  const std::size_t y = std::stoul(std::string(s.substr(sep + 1)));
  return GridTopology(x * y, x, y);
}

/// The factorization n = x*y with x >= y and x - y minimal.
inline GridTopology squarest_grid(std::size_t n) {
  if (n == 0) throw DimensionMismatch("empty grid");
  std::size_t y = 1;
  for (std::size_t d = 1; d * d <= n; ++d)
    if (n % d == 0) y = d;
  return GridTopology(n, n / y, y);
}

/// Every grid x*y == n, ordered by increasing x.
inline std::vector<GridTopology> all_grids(std::size_t n) {
  std::vector<GridTopology> out;
  for (std::size_t x = 1; x <= n; ++x)
    if (n % x == 0) out.emplace_back(n, x, n / x);
  return out;
}

}  // namespace torus
