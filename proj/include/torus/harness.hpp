// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <barrier>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "torus/collectives.hpp"
#include "torus/costmodel.hpp"
#include "torus/instrument.hpp"
#include "torus/largebatch.hpp"

namespace torus::harness {

// ---------------------------------------------------------------------------
// verify

inline double tolerance_for(DType t) {
  switch (t) {
    case DType::f64: return 1e-12;
    case DType::f32: return 1e-5;
    case DType::f16: return 1e-2;
  }
  return 0.0;
}

/// Sequential f64 sum over ranks, element by element.
inline std::vector<double> oracle_sum(const std::vector<TensorBuffer>& inputs) {
  std::vector<double> out(inputs.front().size(), 0.0);
  for (const auto& b : inputs)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.values[i];
  return out;
}

/// max_i |got_i - want_i| / scale_i, where scale_i is the sum of |x_i| over
/// ranks (equal to the oracle for nonnegative inputs).
inline double max_rel_error(std::span<const double> got, std::span<const double> want,
                            std::span<const double> scale) {
  double e = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double s = scale[i] > 0.0 ? scale[i] : 1.0;
    const double d = std::fabs(got[i] - want[i]) / s;
    e = std::max(e, std::isnan(d) ? INFINITY : d);
  }
  return e;
}

inline std::vector<TensorBuffer> random_inputs(std::size_t n, std::size_t len, DType t,
                                               std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<TensorBuffer> in;
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<double> v(len);
    for (auto& x : v) x = u(rng);
    in.emplace_back(t, std::move(v));
  }
  return in;
}

struct VerifyConfig {
  std::vector<std::size_t> ranks{1, 2, 4, 8, 16};
  std::vector<std::size_t> lengths{1, 7, 64, 1000};
  std::vector<DType> dtypes{DType::f32, DType::f64};
  std::vector<Algorithm> algorithms{std::begin(kAllAlgorithms), std::end(kAllAlgorithms)};
  /// Restrict to one grid instead of every factorization of each N.
  std::optional<GridTopology> grid;
  std::uint64_t seed = 1;
  bool inject_fault = false;
  ExecMode mode = ExecMode::threaded;
};

struct VerifyCase {
  std::string name;
  std::string algorithm;
  std::string grid;
  std::size_t length = 0;
  DType dtype = DType::f32;
  double max_error = 0.0;
  double cross_error = 0.0;
  bool ranks_identical = true;
  bool trace_matches = true;
  bool passed = false;
  std::string detail;
};

struct VerifyReport {
  std::vector<VerifyCase> cases;
  bool passed = true;
  std::size_t failures() const {
    return static_cast<std::size_t>(std::count_if(cases.begin(), cases.end(),
                                                  [](const VerifyCase& c) { return !c.passed; }));
  }
};

/// Checks an instrumented run against the closed-form trace: per phase,
/// step depth and largest payload; for ring and torus, every rank's send
/// count equals the total step count.
inline std::string trace_mismatch(Algorithm a, const GridTopology& t, std::size_t len,
                                  DType wire, std::span<const SendRecord> sends) {
  const CostReport want = trace(a, t, len, element_size(wire));
  const CostReport got = measured_report(want, sends);
  std::ostringstream err;
  for (std::size_t i = 0; i < want.phases.size(); ++i) {
    if (got.phases[i].steps != want.phases[i].steps ||
        got.phases[i].per_step_bytes != want.phases[i].per_step_bytes)
      err << want.phases[i].name << ": measured " << got.phases[i].steps << " steps x "
          << got.phases[i].per_step_bytes << " B, trace " << want.phases[i].steps << " x "
          << want.phases[i].per_step_bytes << " B; ";
  }
  if (got.total_steps != want.total_steps || got.total_bytes != want.total_bytes)
    err << "totals differ; ";
  if (a != Algorithm::hierarchical) {
    const auto traffic = per_rank_traffic(t.size(), sends);
    for (std::size_t r = 0; r < traffic.size(); ++r)
      if (traffic[r].sends != want.total_steps)
        err << "rank " << r << " sent " << traffic[r].sends << " messages, trace "
            << want.total_steps << "; ";
  }
  return err.str();
}

inline VerifyReport run_verify(const VerifyConfig& cfg) {
  VerifyReport rep;
  std::uint64_t case_seed = cfg.seed;
  InprocOptions opts;
  opts.inject_fault = cfg.inject_fault;

  auto run_group = [&](const GridTopology& g, std::size_t len, DType dt,
                       const std::vector<TensorBuffer>& inputs, const std::string& name,
                       const std::vector<double>* exact) {
    const auto want = oracle_sum(inputs);
    const double tol = tolerance_for(dt);
    const auto policy = ReductionPolicy::uniform(dt);
    std::optional<std::vector<double>> first;
    for (Algorithm a : cfg.algorithms) {
      VerifyCase c;
      c.name = name;
      c.algorithm = std::string(to_string(a));
      c.grid = g.to_string();
      c.length = len;
      c.dtype = dt;
      try {
        auto res = simulate_all_reduce(a, g, inputs, policy, cfg.mode, opts);
        for (const auto& out : res.outputs) {
          c.max_error = std::max(c.max_error, max_rel_error(out.values, want, want));
          if (out.values != res.outputs.front().values) c.ranks_identical = false;
        }
        if (exact && res.outputs.front().values != *exact) {
          c.detail += "result differs from the exact expected vector; ";
          c.max_error = std::numeric_limits<double>::infinity();
        }
        if (!first) first = res.outputs.front().values;
        c.cross_error = max_rel_error(res.outputs.front().values, *first, want);
        const std::string mismatch = trace_mismatch(a, g, len, dt, res.sends);
        c.trace_matches = mismatch.empty();
        c.detail += mismatch;
        c.passed = c.max_error <= tol && c.cross_error <= tol && c.ranks_identical &&
                   c.trace_matches && c.detail.empty();
      } catch (const std::exception& e) {
        c.passed = false;
        c.detail += e.what();
      }
      rep.passed = rep.passed && c.passed;
      rep.cases.push_back(std::move(c));
    }
  };

  for (std::size_t n : cfg.ranks) {
    std::vector<GridTopology> grids;
    if (cfg.grid) {
      if (cfg.grid->size() != n) continue;
      grids.push_back(*cfg.grid);
    } else {
      grids = all_grids(n);
    }
    for (const auto& g : grids)
      for (std::size_t len : cfg.lengths)
        for (DType dt : cfg.dtypes) {
          const auto inputs = random_inputs(n, len, dt, case_seed++);
          run_group(g, len, dt, inputs, "random", nullptr);
        }
    if (n == 4 && (!cfg.grid || cfg.grid->x() == 2)) {
      // four ranks on a 2x2 grid, rank r contributes r in every element
      const GridTopology g(4, 2, 2);
      std::vector<TensorBuffer> inputs;
      for (Rank r = 0; r < 4; ++r) inputs.emplace_back(DType::f32, std::vector<double>(4, r));
      const std::vector<double> exact(4, 6.0);
      run_group(g, 4, DType::f32, inputs, "2x2-example", &exact);
    }
  }
  return rep;
}

inline nlohmann::json to_json(const VerifyReport& r) {
  nlohmann::json j;
  j["passed"] = r.passed;
  j["cases"] = r.cases.size();
  j["failures"] = r.failures();
  j["results"] = nlohmann::json::array();
  for (const auto& c : r.cases)
    j["results"].push_back({{"name", c.name},
                            {"algorithm", c.algorithm},
                            {"grid", c.grid},
                            {"length", c.length},
                            {"dtype", std::string(to_string(c.dtype))},
                            {"max_error", c.max_error},
                            {"cross_error", c.cross_error},
                            {"ranks_identical", c.ranks_identical},
                            {"trace_matches", c.trace_matches},
                            {"passed", c.passed},
                            {"detail", c.detail}});
  return j;
}

inline std::string to_csv(const VerifyReport& r) {
  std::ostringstream os;
  os.precision(6);
  os << "name,algorithm,grid,length,dtype,max_error,cross_error,ranks_identical,trace_matches,passed\n";
  for (const auto& c : r.cases)
    os << c.name << ',' << c.algorithm << ',' << c.grid << ',' << c.length << ','
       << to_string(c.dtype) << ',' << c.max_error << ',' << c.cross_error << ','
       << c.ranks_identical << ',' << c.trace_matches << ',' << c.passed << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// bench

struct BenchConfig {
  Algorithm algorithm = Algorithm::torus;
  GridTopology grid{1, 1, 1};
  std::size_t elements = 1 << 16;
  ReductionPolicy policy{};
  std::size_t iters = 20;
  std::size_t warmup = 3;
  std::chrono::microseconds send_delay{0};
  std::uint64_t seed = 1;
};

struct BenchResult {
  std::string algorithm;
  std::size_t n = 0, x = 0, y = 0;
  std::uint64_t bytes = 0;
  double min_s = 0.0;
  double median_s = 0.0;
  double bus_gbps = 0.0;
  CostReport trace;
  CostReport measured;
  bool steps_match = false;
};

namespace detail {

inline BenchResult summarize(const BenchConfig& cfg, std::vector<double> times,
                             std::span<const SendRecord> sends) {
  BenchResult r;
  r.algorithm = std::string(to_string(cfg.algorithm));
  r.n = cfg.grid.size();
  r.x = cfg.grid.x();
  r.y = cfg.grid.y();
  r.bytes = cfg.elements * element_size(cfg.policy.wire_dtype);
  std::sort(times.begin(), times.end());
  if (!times.empty()) {
    r.min_s = times.front();
    const std::size_t m = times.size() / 2;
    r.median_s = times.size() % 2 ? times[m] : 0.5 * (times[m - 1] + times[m]);
  }
  if (r.n > 1 && r.median_s > 0)
    r.bus_gbps = static_cast<double>(r.bytes) * 2.0 * static_cast<double>(r.n - 1) /
                 static_cast<double>(r.n) / r.median_s / 1e9;
  r.trace = trace(cfg.algorithm, cfg.grid, cfg.elements, element_size(cfg.policy.wire_dtype));
  r.measured = measured_report(r.trace, sends);
  r.steps_match = r.measured.total_steps == r.trace.total_steps;
  for (std::size_t i = 0; i < r.trace.phases.size(); ++i)
    r.steps_match = r.steps_match && r.measured.phases[i].steps == r.trace.phases[i].steps;
  return r;
}

}  // namespace detail

/// Times all-reduce on the in-process fabric with one thread per rank.
/// Collective ids 0..warmup-1 are warmup; step counts come from the first
/// timed iteration.
inline BenchResult run_bench_inproc(const BenchConfig& cfg) {
  cfg.policy.validate();
  InprocOptions opts;
  opts.send_delay = cfg.send_delay;
  InprocFabric fabric(cfg.grid.size(), opts);
  std::barrier sync(static_cast<std::ptrdiff_t>(cfg.grid.size()));
  std::vector<double> times;
  const auto inputs = random_inputs(cfg.grid.size(), cfg.elements, cfg.policy.accum_dtype, cfg.seed);
  run_ranks(fabric, [&](Endpoint& ep) {
    Communicator comm(ep, cfg.policy);
    for (std::size_t it = 0; it < cfg.warmup + cfg.iters; ++it) {
      TensorBuffer buf = inputs[ep.rank()];
      sync.arrive_and_wait();
      const auto t0 = std::chrono::steady_clock::now();
      comm.all_reduce(cfg.algorithm, cfg.grid, buf);
      sync.arrive_and_wait();
      const auto t1 = std::chrono::steady_clock::now();
      if (ep.rank() == 0 && it >= cfg.warmup)
        times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
  });
  std::vector<SendRecord> sends;
  for (const auto& s : fabric.log().all())
    if (s.collective_id == cfg.warmup) sends.push_back(s);
  return detail::summarize(cfg, std::move(times), sends);
}

/// Times all-reduce on an already connected endpoint (one rank of a
/// multi-process job). The reported times are this rank's.
inline BenchResult run_bench_endpoint(Endpoint& ep, SendLog& log, const BenchConfig& cfg) {
  cfg.policy.validate();
  Communicator comm(ep, cfg.policy);
  auto inputs = random_inputs(cfg.grid.size(), cfg.elements, cfg.policy.accum_dtype, cfg.seed);
  std::vector<double> times;
  for (std::size_t it = 0; it < cfg.warmup + cfg.iters; ++it) {
    TensorBuffer buf = inputs[ep.rank()];
    const auto t0 = std::chrono::steady_clock::now();
    comm.all_reduce(cfg.algorithm, cfg.grid, buf);
    const auto t1 = std::chrono::steady_clock::now();
    if (it >= cfg.warmup) times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::vector<SendRecord> sends;
  for (const auto& s : log.of(ep.rank()))
    if (s.collective_id == cfg.warmup) sends.push_back(s);
  auto r = detail::summarize(cfg, std::move(times), sends);
  // only this rank's sends are visible: compare its count to the trace
  r.steps_match = cfg.algorithm == Algorithm::hierarchical ||
                  sends.size() == r.trace.total_steps;
  return r;
}

inline constexpr const char* kBenchCsvHeader = "algo,n,x,y,bytes,median_s,bus_GBps";

inline std::string to_csv_row(const BenchResult& r) {
  std::ostringstream os;
  os.precision(9);
  os << r.algorithm << ',' << r.n << ',' << r.x << ',' << r.y << ',' << r.bytes << ','
     << r.median_s << ',' << r.bus_gbps << '\n';
  return os.str();
}

inline nlohmann::json to_json(const BenchResult& r) {
  return {{"algo", r.algorithm},
          {"n", r.n},
          {"x", r.x},
          {"y", r.y},
          {"bytes", r.bytes},
          {"min_s", r.min_s},
          {"median_s", r.median_s},
          {"bus_GBps", r.bus_gbps},
          {"measured_steps", r.measured.total_steps},
          {"trace_steps", r.trace.total_steps},
          {"steps_match", r.steps_match},
          {"cost_report", torus::to_json(r.trace)}};
}

// ---------------------------------------------------------------------------
// cost

/// Grids of the published 1024..4096 GPU runs, as "XxY".
inline std::vector<GridTopology> published_grids() {
  std::vector<GridTopology> g;
  for (const char* s : {"32x32", "32x64", "34x64", "48x72", "64x64"}) g.push_back(parse_grid(s));
  return g;
}

struct CostSweepRow {
  std::string grid;
  CostReport report;
  double predicted_seconds = 0.0;
};

inline std::vector<CostSweepRow> cost_sweep(const std::vector<GridTopology>& grids,
                                            const std::vector<Algorithm>& algos,
                                            std::size_t elements, std::size_t element_bytes,
                                            const LinkModel& link) {
  std::vector<CostSweepRow> rows;
  for (const auto& g : grids)
    for (Algorithm a : algos) {
      auto rep = trace(a, g, elements, element_bytes);
      const double t = predict_time(rep, link);
      rows.push_back({g.to_string(), std::move(rep), t});
    }
  return rows;
}

inline std::string cost_sweep_csv(const std::vector<CostSweepRow>& rows, const LinkModel& link) {
  std::ostringstream os;
  os << "grid," << kCostCsvHeader << '\n';
  for (const auto& r : rows) {
    std::istringstream lines(to_csv_rows(r.report, link));
    std::string line;
    while (std::getline(lines, line)) os << r.grid << ',' << line << '\n';
  }
  return os.str();
}

inline nlohmann::json cost_sweep_json(const std::vector<CostSweepRow>& rows, const LinkModel& link) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    auto e = torus::to_json(r.report, &link);
    e["grid"] = r.grid;
    j.push_back(e);
  }
  return j;
}

// ---------------------------------------------------------------------------
// schedule

inline std::string schedule_csv(const std::vector<largebatch::ScheduleRow>& rows) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,lr,momentum,per_worker_batch,total_batch\n";
  for (const auto& r : rows)
    os << r.epoch << ',' << r.lr << ',' << r.momentum << ',' << r.per_worker_batch << ','
       << r.total_batch << '\n';
  return os.str();
}

inline nlohmann::json schedule_json(const largebatch::BatchSchedule& s,
                                    const std::vector<largebatch::ScheduleRow>& rows) {
  nlohmann::json j;
  j["schedule"] = s.name;
  j["lr_config"] = s.lr == largebatch::LrPolicy::a ? "A" : "B";
  j["dataset_size"] = s.dataset_size;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows)
    j["rows"].push_back({{"epoch", r.epoch},
                         {"lr", r.lr},
                         {"momentum", r.momentum},
                         {"per_worker_batch", r.per_worker_batch},
                         {"total_batch", r.total_batch}});
  return j;
}

}  // namespace torus::harness
