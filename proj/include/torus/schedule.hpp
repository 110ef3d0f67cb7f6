// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "torus/topology.hpp"

namespace torus {

enum class Algorithm { ring, hierarchical, torus };

inline std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::ring: return "ring";
    case Algorithm::hierarchical: return "hier";
    case Algorithm::torus: return "torus";
  }
  return "?";
}

inline Algorithm parse_algorithm(std::string_view s) {
  if (s == "ring") return Algorithm::ring;
  if (s == "hier" || s == "hierarchical") return Algorithm::hierarchical;
  if (s == "torus") return Algorithm::torus;
  throw ConfigError("unknown algorithm '" + std::string(s) + "'");
}

inline constexpr Algorithm kAllAlgorithms[] = {Algorithm::ring, Algorithm::hierarchical,
                                               Algorithm::torus};

enum class RecvAction { reduce, copy };

struct Transfer {
  Rank peer = 0;
  ChunkRange range;
};

/// One entry of a rank's schedule. Executed as: optional quantize, optional
/// send, optional receive followed by reduce or copy.
struct Step {
  std::uint8_t phase = 0;
  std::uint32_t step = 0;
  std::optional<ChunkRange> quantize;
  std::optional<Transfer> send;
  std::optional<Transfer> recv;
  RecvAction action = RecvAction::reduce;
};

struct Schedule {
  std::vector<Step> steps;
};

// Ring position p sends to ring[p+1] and receives from ring[p-1]. At
// reduce-scatter step s it sends chunk (p - s - 1) and reduces chunk
// (p - s - 2), so after R-1 steps position p holds the full sum of chunk p.
inline void append_ring_reduce_scatter(Schedule& sched, std::span<const Rank> ring,
                                       std::size_t pos, ChunkRange range,
                                       std::uint8_t phase, std::uint32_t step_base) {
  const std::size_t r = ring.size();
  if (r <= 1) return;
  const Rank next = ring[(pos + 1) % r];
  const Rank prev = ring[(pos + r - 1) % r];
  for (std::size_t s = 0; s + 1 < r; ++s) {
    Step st;
    st.phase = phase;
    st.step = step_base + static_cast<std::uint32_t>(s);
    st.send = Transfer{next, sub_chunk(range, r, (pos + 2 * r - s - 1) % r)};
    st.recv = Transfer{prev, sub_chunk(range, r, (pos + 2 * r - s - 2) % r)};
    st.action = RecvAction::reduce;
    sched.steps.push_back(st);
  }
}

// Position p owns chunk p. At all-gather step s it forwards chunk (p - s) and
// stores chunk (p - s - 1). The owned chunk is rounded to the wire type first
// so every rank ends with identical values.
inline void append_ring_all_gather(Schedule& sched, std::span<const Rank> ring,
                                   std::size_t pos, ChunkRange range, std::uint8_t phase,
                                   std::uint32_t step_base) {
  const std::size_t r = ring.size();
  if (r <= 1) return;
  const Rank next = ring[(pos + 1) % r];
  const Rank prev = ring[(pos + r - 1) % r];
  for (std::size_t s = 0; s + 1 < r; ++s) {
    Step st;
    st.phase = phase;
    st.step = step_base + static_cast<std::uint32_t>(s);
    if (s == 0) st.quantize = sub_chunk(range, r, pos);
    st.send = Transfer{next, sub_chunk(range, r, (pos + r - s) % r)};
    st.recv = Transfer{prev, sub_chunk(range, r, (pos + 2 * r - s - 1) % r)};
    st.action = RecvAction::copy;
    sched.steps.push_back(st);
  }
}

inline void append_ring_all_reduce(Schedule& sched, std::span<const Rank> ring,
                                   std::size_t pos, ChunkRange range, std::uint8_t phase) {
  const auto r = static_cast<std::uint32_t>(ring.size());
  append_ring_reduce_scatter(sched, ring, pos, range, phase, 0);
  append_ring_all_gather(sched, ring, pos, range, phase, r > 0 ? r - 1 : 0);
}

// Chain reduce along the ring ending at position 0: position s+1 sends its
// partial sum to position s+2 at step s; position 0 receives last.
inline void append_chain_reduce(Schedule& sched, std::span<const Rank> ring, std::size_t pos,
                                ChunkRange range, std::uint8_t phase) {
  const std::size_t r = ring.size();
  if (r <= 1) return;
  if (pos != 1) {
    const std::size_t from = (pos + r - 1) % r;
    Step st;
    st.phase = phase;
    st.step = static_cast<std::uint32_t>(pos == 0 ? r - 2 : pos - 2);
    st.recv = Transfer{ring[from], range};
    st.action = RecvAction::reduce;
    sched.steps.push_back(st);
  }
  if (pos != 0) {
    Step st;
    st.phase = phase;
    st.step = static_cast<std::uint32_t>(pos - 1);
    st.send = Transfer{ring[(pos + 1) % r], range};
    sched.steps.push_back(st);
  }
}

// Chain broadcast from position 0: at step s position s forwards to s+1.
inline void append_chain_broadcast(Schedule& sched, std::span<const Rank> ring,
                                   std::size_t pos, ChunkRange range, std::uint8_t phase) {
  const std::size_t r = ring.size();
  if (r <= 1) return;
  if (pos != 0) {
    Step st;
    st.phase = phase;
    st.step = static_cast<std::uint32_t>(pos - 1);
    st.recv = Transfer{ring[pos - 1], range};
    st.action = RecvAction::copy;
    sched.steps.push_back(st);
  }
  if (pos + 1 < r) {
    Step st;
    st.phase = phase;
    st.step = static_cast<std::uint32_t>(pos);
    if (pos == 0) st.quantize = range;
    st.send = Transfer{ring[pos + 1], range};
    sched.steps.push_back(st);
  }
}

namespace phase {
inline constexpr std::uint8_t ring = 0;
inline constexpr std::uint8_t torus_horizontal_rs = 0;
inline constexpr std::uint8_t torus_vertical_ar = 1;
inline constexpr std::uint8_t torus_horizontal_ag = 2;
inline constexpr std::uint8_t hier_reduce = 0;
inline constexpr std::uint8_t hier_leaders = 1;
inline constexpr std::uint8_t hier_broadcast = 2;
}  // namespace phase

/// Ring over all ranks in rank order.
inline Schedule ring_schedule(std::size_t n_ranks, Rank rank, std::size_t length) {
  std::vector<Rank> ring(n_ranks);
  for (std::size_t i = 0; i < n_ranks; ++i) ring[i] = static_cast<Rank>(i);
  Schedule s;
  append_ring_all_reduce(s, ring, rank, {0, length}, phase::ring);
  return s;
}

/// Horizontal reduce-scatter, vertical all-reduce of the owned chunk,
/// horizontal all-gather. Chunk ownership follows the grid column.
inline Schedule torus_schedule(const GridTopology& t, Rank rank, std::size_t length) {
  const auto c = t.coords_of(rank);
  const auto row = t.ring_of(rank, Orientation::horizontal);
  const auto col = t.ring_of(rank, Orientation::vertical);
  const ChunkRange full{0, length};
  const ChunkRange owned = sub_chunk(full, t.x(), c.col);
  Schedule s;
  append_ring_reduce_scatter(s, row, c.col, full, phase::torus_horizontal_rs, 0);
  append_ring_all_reduce(s, col, c.row, owned, phase::torus_vertical_ar);
  append_ring_all_gather(s, row, c.col, full, phase::torus_horizontal_ag, 0);
  return s;
}

/// Rows are groups with the column-0 rank as leader: chain reduce to the
/// leader, ring all-reduce among leaders over the full buffer, chain
/// broadcast back.
inline Schedule hierarchical_schedule(const GridTopology& t, Rank rank, std::size_t length) {
  const auto c = t.coords_of(rank);
  const auto row = t.ring_of(rank, Orientation::horizontal);
  const ChunkRange full{0, length};
  Schedule s;
  append_chain_reduce(s, row, c.col, full, phase::hier_reduce);
  if (c.col == 0) {
    const auto leaders = t.ring_of(rank, Orientation::vertical);
    append_ring_all_reduce(s, leaders, c.row, full, phase::hier_leaders);
  }
  append_chain_broadcast(s, row, c.col, full, phase::hier_broadcast);
  return s;
}

inline Schedule build_schedule(Algorithm a, const GridTopology& t, Rank rank,
                               std::size_t length) {
  switch (a) {
    case Algorithm::ring:
      t.coords_of(rank);
      return ring_schedule(t.size(), rank, length);
    case Algorithm::torus: return torus_schedule(t, rank, length);
    case Algorithm::hierarchical: return hierarchical_schedule(t, rank, length);
  }
  throw ConfigError("unknown algorithm");
}

}  // namespace torus
