// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <set>
#include <span>
#include <vector>

#include "torus/costmodel.hpp"
#include "torus/transport.hpp"

namespace torus {

/// Rebuilds a CostReport from recorded sends. A phase's step count is the
/// number of distinct step indices seen (the schedule depth); its per-step
/// payload is the largest message. Phase codes index `shape.phases`.
inline CostReport measured_report(const CostReport& shape, std::span<const SendRecord> sends) {
  CostReport r = shape;
  r.total_steps = 0;
  r.total_bytes = 0;
  std::vector<std::set<std::uint32_t>> steps(shape.phases.size());
  std::vector<std::uint64_t> bytes(shape.phases.size(), 0);
  for (const auto& s : sends) {
    if (s.phase >= steps.size()) throw OutOfRange("send with unknown phase code");
    steps[s.phase].insert(s.step);
    bytes[s.phase] = std::max(bytes[s.phase], s.bytes);
  }
  for (std::size_t i = 0; i < r.phases.size(); ++i) {
    r.phases[i].steps = steps[i].size();
    r.phases[i].per_step_bytes = r.phases[i].steps ? bytes[i] : 0;
    r.total_steps += r.phases[i].steps;
    r.total_bytes += r.phases[i].steps * r.phases[i].per_step_bytes;
  }
  return r;
}

struct RankTraffic {
  std::uint64_t sends = 0;
  std::uint64_t bytes = 0;
};

inline std::vector<RankTraffic> per_rank_traffic(std::size_t n_ranks,
                                                 std::span<const SendRecord> sends) {
  std::vector<RankTraffic> out(n_ranks);
  for (const auto& s : sends) {
    out.at(s.src).sends += 1;
    out.at(s.src).bytes += s.bytes;
  }
  return out;
}

}  // namespace torus
