// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "torus/schedule.hpp"
#include "torus/topology.hpp"

namespace torus {

enum class Direction { ring, horizontal, vertical };

struct PhaseCost {
  std::string name;
  Direction direction = Direction::ring;
  std::uint64_t steps = 0;           // sequential steps per rank
  std::uint64_t per_step_bytes = 0;  // largest payload of any step
};

/// Step and volume accounting for one collective. Totals are the sums over
/// phases of steps and steps * per_step_bytes.
struct CostReport {
  std::string algorithm;
  std::size_t n_ranks = 0;
  std::size_t x = 0;
  std::size_t y = 0;
  std::vector<PhaseCost> phases;
  std::uint64_t total_steps = 0;
  std::uint64_t total_bytes = 0;

  std::uint64_t steps_in(Direction d) const {
    std::uint64_t n = 0;
    for (const auto& p : phases)
      if (p.direction == d) n += p.steps;
    return n;
  }
  std::uint64_t horizontal_steps() const { return steps_in(Direction::horizontal); }
  std::uint64_t vertical_steps() const { return steps_in(Direction::vertical); }
};

namespace detail {

inline void add_phase(CostReport& r, std::string name, Direction d, std::uint64_t steps,
                      std::uint64_t bytes) {
  if (steps == 0) bytes = 0;
  r.phases.push_back({std::move(name), d, steps, bytes});
  r.total_steps += steps;
  r.total_bytes += steps * bytes;
}

}  // namespace detail

/// Closed-form step/volume trace. Per-step payloads use the largest chunk of
/// the balanced partition.
inline CostReport trace(Algorithm a, const GridTopology& t, std::size_t payload_elements,
                        std::size_t element_bytes) {
  const std::uint64_t n = t.size(), x = t.x(), y = t.y(), d = payload_elements;
  const std::uint64_t eb = element_bytes;
  CostReport r;
  r.algorithm = std::string(to_string(a));
  r.n_ranks = n;
  r.x = x;
  r.y = y;
  switch (a) {
    case Algorithm::ring:
      detail::add_phase(r, "ring-all-reduce", Direction::ring, 2 * (n - 1), max_chunk(d, n) * eb);
      break;
    case Algorithm::torus: {
      const std::uint64_t owned = max_chunk(d, x);
      detail::add_phase(r, "horizontal-reduce-scatter", Direction::horizontal, x - 1, owned * eb);
      detail::add_phase(r, "vertical-all-reduce", Direction::vertical, 2 * (y - 1),
                        max_chunk(owned, y) * eb);
      detail::add_phase(r, "horizontal-all-gather", Direction::horizontal, x - 1, owned * eb);
      break;
    }
    case Algorithm::hierarchical:
      detail::add_phase(r, "intra-group-reduce", Direction::horizontal, x - 1, d * eb);
      detail::add_phase(r, "leader-all-reduce", Direction::vertical, 2 * (y - 1),
                        max_chunk(d, y) * eb);
      detail::add_phase(r, "intra-group-broadcast", Direction::horizontal, x - 1, d * eb);
      break;
  }
  return r;
}

/// Latency-bandwidth link: a message of s bytes costs alpha + s / beta.
struct LinkModel {
  double alpha = 0.0;  // seconds per message
  double beta = 1.0;   // bytes per second; may be +infinity

  void validate() const {
    if (!(alpha >= 0.0) || !(beta > 0.0)) throw ConfigError("link model needs alpha >= 0 and beta > 0");
  }
};

inline double predict_phase_time(const PhaseCost& p, const LinkModel& link) {
  return static_cast<double>(p.steps) *
         (link.alpha + static_cast<double>(p.per_step_bytes) / link.beta);
}

/// Phases run one after another and the steps of a phase are sequential for
/// each rank; independent rows or columns run in parallel.
inline double predict_time(const CostReport& report, const LinkModel& link) {
  link.validate();
  double t = 0.0;
  for (const auto& p : report.phases) t += predict_phase_time(p, link);
  return t;
}

struct ClusterSpec {
  GridTopology topology{1, 1, 1};
  double gradient_bytes = 0.0;
  std::size_t element_bytes = 2;
  double per_gpu_images_per_sec = 0.0;
  double per_worker_batch = 0.0;

  void validate() const {
    if (!(gradient_bytes > 0) || element_bytes == 0 || !(per_gpu_images_per_sec > 0) ||
        !(per_worker_batch > 0))
      throw ConfigError("cluster spec fields must be positive");
  }
};

struct EfficiencyPrediction {
  double images_per_sec = 0.0;
  double efficiency = 0.0;
};

/// Compute time plus predicted communication per iteration, with no overlap
/// between the two, so communication cost is an upper bound.
inline double predict_iteration_time(const ClusterSpec& spec, const GridTopology& t,
                                     const LinkModel& link, Algorithm a) {
  const auto elements = static_cast<std::size_t>(
      std::ceil(spec.gradient_bytes / static_cast<double>(spec.element_bytes)));
  return spec.per_worker_batch / spec.per_gpu_images_per_sec +
         predict_time(trace(a, t, elements, spec.element_bytes), link);
}

/// Throughput at spec.topology and its efficiency relative to a
/// baseline_n-rank cluster (laid out as the squarest grid) scaled linearly.
inline EfficiencyPrediction predict_efficiency(const ClusterSpec& spec, const LinkModel& link,
                                               Algorithm a, std::size_t baseline_n) {
  spec.validate();
  link.validate();
  const std::size_t n = spec.topology.size();
  if (baseline_n == 0 || n % baseline_n != 0)
    throw ConfigError("baseline rank count must divide the cluster size");
  auto throughput = [&](const GridTopology& t) {
    return static_cast<double>(t.size()) * spec.per_worker_batch /
           predict_iteration_time(spec, t, link, a);
  };
  const double ips = throughput(spec.topology);
  const double base = throughput(squarest_grid(baseline_n));
  return {ips, ips / (static_cast<double>(n / baseline_n) * base)};
}

inline nlohmann::json to_json(const CostReport& r, const LinkModel* link = nullptr) {
  nlohmann::json j;
  j["algorithm"] = r.algorithm;
  j["n"] = r.n_ranks;
  j["x"] = r.x;
  j["y"] = r.y;
  j["total_steps"] = r.total_steps;
  j["total_bytes"] = r.total_bytes;
  j["phases"] = nlohmann::json::array();
  for (const auto& p : r.phases) {
    nlohmann::json pj{{"phase", p.name}, {"steps", p.steps}, {"per_step_bytes", p.per_step_bytes}};
    if (link) pj["predicted_seconds"] = predict_phase_time(p, *link);
    j["phases"].push_back(pj);
  }
  if (link) j["predicted_seconds"] = predict_time(r, *link);
  return j;
}

inline constexpr const char* kCostCsvHeader = "algorithm,phase,steps,per_step_bytes,predicted_seconds";

/// One CSV row per phase plus a "total" row, without the header.
inline std::string to_csv_rows(const CostReport& r, const LinkModel& link) {
  std::ostringstream os;
  os.precision(9);
  for (const auto& p : r.phases)
    os << r.algorithm << ',' << p.name << ',' << p.steps << ',' << p.per_step_bytes << ','
       << predict_phase_time(p, link) << '\n';
  os << r.algorithm << ",total," << r.total_steps << ',' << r.total_bytes << ','
     << predict_time(r, link) << '\n';
  return os.str();
}

inline std::string to_csv(const CostReport& r, const LinkModel& link) {
  return std::string(kCostCsvHeader) + "\n" + to_csv_rows(r, link);
}

}  // namespace torus
