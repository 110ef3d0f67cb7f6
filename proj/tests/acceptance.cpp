// SPDX-License-Identifier: Apache-2.0
// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Tolerances are fixed here and printed with each result.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "torus/torus.hpp"

namespace {

using namespace torus;
using Clock = std::chrono::steady_clock;

constexpr double kF32Tol = 1e-5;
constexpr double kF64Tol = 1e-12;
constexpr double kFormulaTol = 1e-12;
constexpr double kFiniteDiffTol = 1e-4;
constexpr double kLarsTol = 1e-12;
constexpr double kTrainSimTol = 1e-8;
constexpr double kVerifySeconds = 60.0;
constexpr double kTrainSimSeconds = 30.0;
constexpr int kMixedTrials = 100;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& why) {
    if (!ok) {
      pass = false;
      detail << why << "; ";
    }
  }
};

std::vector<GridTopology> tested_grids() {
  auto grids = harness::published_grids();
  for (std::size_t n : {1, 2, 4, 6, 8, 9, 12, 16, 30, 64, 1024})
    for (const auto& g : all_grids(n)) grids.push_back(g);
  return grids;
}

void op_counts(Outcome& o) {
  for (const auto& g : harness::published_grids()) {
    const auto tor = trace(Algorithm::torus, g, 51'000'000, 2);
    const auto ring = trace(Algorithm::ring, g, 51'000'000, 2);
    const std::uint64_t want_h = 2 * (g.x() - 1), want_r = 2 * (g.size() - 1);
    o.require(tor.horizontal_steps() == want_h, g.to_string() + " torus horizontal steps");
    o.require(ring.total_steps == want_r, g.to_string() + " ring steps");
    o.detail << g.to_string() << ": " << tor.horizontal_steps() << " vs " << ring.total_steps << "  ";
  }
}

void volume_claim(Outcome& o) {
  std::size_t checked = 0;
  for (const auto& g : tested_grids()) {
    if (g.y() < 2) continue;
    for (std::size_t d : {1, 7, 64, 1000, 1 << 20, 51'000'000}) {
      const auto hier = trace(Algorithm::hierarchical, g, d, 1).phases[1].per_step_bytes;
      const auto tor = trace(Algorithm::torus, g, d, 1).phases[1].per_step_bytes;
      const auto x = static_cast<std::int64_t>(g.x());
      // one element of slack on the torus chunk scales to x elements here
      const auto gap = std::llabs(static_cast<std::int64_t>(hier) - x * static_cast<std::int64_t>(tor));
      o.require(gap <= x, g.to_string() + " d=" + std::to_string(d));
      ++checked;
    }
  }
  o.detail << checked << " (grid, D) pairs within one torus element";
}

harness::VerifyReport full_matrix;
double full_matrix_seconds = 0.0;

void oracle_equivalence(Outcome& o) {
  harness::VerifyConfig cfg;
  cfg.ranks = {1, 2, 3, 4, 6, 8, 9, 12, 16, 32, 64};
  const auto t0 = Clock::now();
  full_matrix = harness::run_verify(cfg);
  full_matrix_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  double worst32 = 0.0, worst64 = 0.0;
  for (const auto& c : full_matrix.cases) {
    const double tol = c.dtype == DType::f64 ? kF64Tol : kF32Tol;
    (c.dtype == DType::f64 ? worst64 : worst32) =
        std::max(c.dtype == DType::f64 ? worst64 : worst32, std::max(c.max_error, c.cross_error));
    o.require(c.max_error <= tol && c.cross_error <= tol && c.ranks_identical,
              c.algorithm + " " + c.grid + " len " + std::to_string(c.length));
  }
  o.require(full_matrix_seconds < kVerifySeconds, "too slow");
  o.detail << full_matrix.cases.size() << " cases, worst f32 " << worst32 << " (tol " << kF32Tol
           << "), worst f64 " << worst64 << " (tol " << kF64Tol << "), " << full_matrix_seconds << " s";
}

void trace_agreement(Outcome& o) {
  std::size_t n = 0;
  for (const auto& c : full_matrix.cases) {
    o.require(c.trace_matches, c.algorithm + " " + c.grid + ": " + c.detail);
    ++n;
  }
  o.require(n > 0, "empty matrix");
  o.detail << n << " instrumented runs match their traces";
}

void latency_dominance(Outcome& o) {
  std::size_t checked = 0;
  for (std::size_t n : {4, 6, 8, 12, 16, 64, 256, 1024, 4096})
    for (const auto& g : all_grids(n)) {
      if (g.x() < 2 || g.y() < 2) continue;
      for (std::size_t d : {1, 1000, 1 << 20, 51'000'000})
        for (double alpha : {1e-9, 1e-6, 1e-3})
          for (double beta : {1e6, 1e9, 1e12}) {
            const LinkModel link{alpha, beta};
            o.require(predict_time(trace(Algorithm::torus, g, d, 2), link) <
                          predict_time(trace(Algorithm::ring, g, d, 2), link),
                      g.to_string());
            ++checked;
          }
    }
  harness::BenchConfig cfg;
  cfg.grid = GridTopology(16, 4, 4);
  cfg.elements = 16;
  cfg.iters = 5;
  cfg.warmup = 1;
  cfg.send_delay = std::chrono::microseconds(2000);
  cfg.algorithm = Algorithm::torus;
  const auto tor = harness::run_bench_inproc(cfg);
  cfg.algorithm = Algorithm::ring;
  const auto ring = harness::run_bench_inproc(cfg);
  o.require(tor.median_s < ring.median_s, "measured torus not faster");
  o.detail << checked << " predicted pairs; measured 16 ranks with 2 ms/message: torus "
           << tor.median_s << " s, ring " << ring.median_s << " s";
}

void efficiency_ordering(Outcome& o) {
  const LinkModel link{50e-6, 25e9};
  double prev = 2.0;
  for (const char* g : {"32x32", "32x64", "48x72", "64x64"}) {
    ClusterSpec s;
    s.topology = parse_grid(g);
    s.gradient_bytes = 102e6;
    s.element_bytes = 2;
    s.per_gpu_images_per_sec = 2565.0 / 4.0;
    s.per_worker_batch = 32;
    const double e = predict_efficiency(s, link, Algorithm::torus, 4).efficiency;
    o.require(e < prev, std::string("not decreasing at ") + g);
    o.detail << s.topology.size() << ": " << e * 100.0 << "%  ";
    prev = e;
  }
  o.detail << "(alpha 50 us, beta 25 GB/s)";
}

void schedule_formulas(Outcome& o) {
  using namespace largebatch;
  o.require(lr_config_b(0) == 0.2, "lr_b(0)");
  o.require(lr_config_b(90) == 0.0, "lr_b(90)");
  const LrConfigB c;
  for (double base : {c.base_lr_early, c.base_lr_late}) {
    const double f = 1.0 - 90.0 / c.decay_end_epoch;
    o.require(base * f * f == 0.0, "decay branch at 90");
  }
  double worst = 0.0;
  for (double d : {32768.0, kImageNetTrainSize, 1e8})
    for (double e = 0.0; e <= 90.0; e += 0.5)
      worst = std::max(worst, std::fabs(momentum_b(e, 32768, d) - 0.9));
  o.require(worst <= kFormulaTol, "reference momentum");
  double spread = 0.0;
  for (double b : {16384.0, 55296.0, 65536.0, 121856.0}) {
    const double m0 = momentum_b(0, b, kImageNetTrainSize);
    for (double e : {10.0, 50.0, 89.0})
      spread = std::max(spread, std::fabs(momentum_b(e, b, kImageNetTrainSize) - m0));
  }
  o.require(spread <= kFormulaTol, "momentum depends on epoch");
  o.detail << "momentum error at 32768 " << worst << ", epoch spread " << spread << " (tol "
           << kFormulaTol << ")";
}

void label_smoothing(Outcome& o) {
  using namespace largebatch;
  std::mt19937_64 rng(8);
  double worst_sum = 0.0, worst_fd = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t k = 2 + rng() % 1000;
    const auto q = smooth_labels(rng() % k, std::uniform_real_distribution<double>(0, 1)(rng), k);
    double s = 0.0;
    for (double v : q) s += v;
    worst_sum = std::max(worst_sum, std::fabs(s - 1.0));
  }
  const auto hot = smooth_labels(3, 0.0, 7);
  for (std::size_t i = 0; i < 7; ++i) o.require(hot[i] == (i == 3 ? 1.0 : 0.0), "eps=0 not one-hot");
  std::normal_distribution<double> n(0.0, 2.0);
  auto loss = [](const std::vector<double>& z, const std::vector<double>& q) {
    double s = 0.0, l = 0.0;
    for (double v : z) s += std::exp(v);
    for (std::size_t i = 0; i < z.size(); ++i) l -= q[i] * (z[i] - std::log(s));
    return l;
  };
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 2 + rng() % 30;
    std::vector<double> z(k);
    for (auto& v : z) v = n(rng);
    const auto q = smooth_labels(rng() % k, 0.1, k);
    const auto g = smoothed_cross_entropy(z, q).grad;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      auto up = z, dn = z;
      up[i] += 1e-6;
      dn[i] -= 1e-6;
      const double fd = (loss(up, q) - loss(dn, q)) / 2e-6;
      num += (g[i] - fd) * (g[i] - fd);
      den += fd * fd;
    }
    worst_fd = std::max(worst_fd, std::sqrt(num / den));
  }
  o.require(worst_sum <= 1e-12, "sum not 1");
  o.require(worst_fd <= kFiniteDiffTol, "gradient vs finite differences");
  o.detail << "sum error " << worst_sum << ", finite-difference error " << worst_fd << " (tol "
           << kFiniteDiffTol << ")";
}

void lars_invariant(Outcome& o) {
  using namespace largebatch;
  std::mt19937_64 rng(21);
  std::normal_distribution<double> n;
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t len = 1 + rng() % 1000;
    std::vector<double> w(len), g(len), v(len, 0.0);
    for (auto& e : w) e = n(rng);
    for (auto& e : g) e = 10.0 * n(rng);
    const double lr = 0.1 + std::fabs(n(rng));
    const double want = lr * 0.01 * l2_norm<double>(w);
    lars_step<double>(w, g, v, lr, 0.0, {0.01, 0.0, 0.0});
    worst = std::max(worst, std::fabs(l2_norm<double>(v) - want) / want);
  }
  o.require(worst <= kLarsTol, "update norm");
  o.detail << "worst relative error " << worst << " (tol " << kLarsTol << ")";
}

trainsim::TrainSimSpec criterion_trainsim() {
  trainsim::TrainSimSpec s;
  s.workers = 4;
  s.steps = 50;
  s.algorithm = Algorithm::torus;
  s.dtype = DType::f64;
  s.optimizer = trainsim::Optimizer::lars;
  s.label_smoothing = 0.1;
  s.tolerance = kTrainSimTol;
  return s;
}

void end_to_end(Outcome& o) {
  const auto t0 = Clock::now();
  const auto r = trainsim::run_trainsim(criterion_trainsim());
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  o.require(r.replicas_identical, "replicas differ");
  o.require(r.max_relative_divergence < kTrainSimTol, "divergence");
  o.require(secs < kTrainSimSeconds, "too slow");
  o.detail << "max relative divergence " << r.max_relative_divergence << " (tol " << kTrainSimTol
           << "), " << secs << " s";
}

void determinism(Outcome& o) {
  harness::VerifyConfig vc;
  vc.ranks = {1, 4, 6, 16};
  o.require(harness::to_json(harness::run_verify(vc)).dump() ==
                harness::to_json(harness::run_verify(vc)).dump(),
            "verify report");
  const auto in = harness::random_inputs(12, 333, DType::f32, 5);
  for (Algorithm a : kAllAlgorithms)
    for (ExecMode m : {ExecMode::threaded, ExecMode::lockstep}) {
      const auto r1 = simulate_all_reduce(a, GridTopology(12, 4, 3), in, {DType::f16, DType::f32}, m);
      const auto r2 = simulate_all_reduce(a, GridTopology(12, 4, 3), in, {DType::f16, DType::f32}, m);
      for (std::size_t r = 0; r < 12; ++r)
        o.require(r1.outputs[r].values == r2.outputs[r].values, std::string(to_string(a)) + " outputs");
    }
  const LinkModel link{50e-6, 25e9};
  auto sweep = [&] {
    return harness::cost_sweep_csv(
        harness::cost_sweep(harness::published_grids(),
                            {std::begin(kAllAlgorithms), std::end(kAllAlgorithms)}, 51'000'000, 2, link),
        link);
  };
  o.require(sweep() == sweep(), "cost report");
  auto sched = [] {
    return harness::schedule_csv(largebatch::schedule_table(largebatch::preset_schedule("exp4"), 0.5));
  };
  o.require(sched() == sched(), "schedule");
  auto ts = criterion_trainsim();
  ts.steps = 10;
  const auto t1 = trainsim::run_trainsim(ts), t2 = trainsim::run_trainsim(ts);
  o.require(t1.final_params == t2.final_params && to_json(t1).dump() == to_json(t2).dump(), "trainsim");
  o.detail << "verify, all-reduce outputs, cost, schedule and trainsim repeat bit for bit";
}

void mixed_precision(Outcome& o) {
  std::mt19937_64 rng(99);
  for (Algorithm a : kAllAlgorithms) {
    double mixed = 0.0, half = 0.0;
    std::size_t count = 0;
    for (int t = 0; t < kMixedTrials; ++t) {
      const auto in = harness::random_inputs(16, 256, DType::f32, rng());
      const auto want = harness::oracle_sum(in);
      const auto m = simulate_all_reduce(a, GridTopology(16, 4, 4), in, {DType::f16, DType::f32},
                                         ExecMode::lockstep);
      const auto h = simulate_all_reduce(a, GridTopology(16, 4, 4), in, {DType::f16, DType::f16},
                                         ExecMode::lockstep);
      for (std::size_t i = 0; i < want.size(); ++i) {
        mixed += std::fabs(m.outputs[0].values[i] - want[i]);
        half += std::fabs(h.outputs[0].values[i] - want[i]);
        ++count;
      }
    }
    mixed /= static_cast<double>(count);
    half /= static_cast<double>(count);
    o.require(mixed <= half, std::string(to_string(a)));
    o.detail << to_string(a) << " " << mixed << " <= " << half << "  ";
  }
  o.detail << "(mean abs error, " << kMixedTrials << " trials, 16 ranks, 256 elements)";
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
      {"op-count reproduction", op_counts},
      {"leader payload X times the torus payload", volume_claim},
      {"oracle equivalence on the verify matrix", oracle_equivalence},
      {"trace/execution agreement", trace_agreement},
      {"latency dominance", latency_dominance},
      {"scaling-efficiency ordering", efficiency_ordering},
      {"schedule formulas", schedule_formulas},
      {"label smoothing", label_smoothing},
      {"LARS update norm", lars_invariant},
      {"distributed training equals global batch", end_to_end},
      {"determinism", determinism},
      {"mixed-precision accumulation", mixed_precision},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    failures += !o.pass;
    std::printf("%s [%zu] %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.str().c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
