// SPDX-License-Identifier: Apache-2.0
//
// torusctl: correctness checks, benchmarks, cost tables, schedule dumps and
// the data-parallel training simulation.
//
// Exit codes: 0 pass, 1 verification/tolerance failure, 2 usage/config
// error, 3 transport failure.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "torus/torus.hpp"

namespace {

using namespace torus;

enum ExitCode { kPass = 0, kFail = 1, kUsage = 2, kTransport = 3 };

struct RunConfig {
  std::optional<std::size_t> ranks;
  std::optional<std::string> grid;
  std::optional<std::string> algo;
  std::optional<std::size_t> size;
  std::optional<std::string> wire_dtype;
  std::optional<std::string> accum_dtype;
  std::string transport = "inproc";
  std::optional<Rank> rank;
  std::optional<std::string> peers;
  double alpha = 50e-6;
  double beta = 25e9;
  std::string schedule = "exp2";
  std::uint64_t seed = 1;
  std::size_t iters = 20;
  std::size_t warmup = 3;
  std::string format = "csv";
  std::optional<std::string> out;

  // subcommand extras
  bool fault = false;
  bool lockstep = false;
  double delay_us = 0.0;
  std::string preset;
  double resolution = 1.0;

  std::size_t workers = 4;
  std::size_t per_worker_batch = 8;
  std::size_t steps = 50;
  std::string optimizer = "lars";
  double label_smoothing = 0.1;
  double lr = 0.5;
  double momentum = 0.9;
  std::optional<double> tolerance;
};

std::optional<GridTopology> resolve_grid(const RunConfig& c) {
  if (c.grid) {
    auto g = parse_grid(*c.grid);
    if (c.ranks && *c.ranks != g.size())
      throw ConfigError("--grid " + *c.grid + " does not match --ranks " + std::to_string(*c.ranks));
    return g;
  }
  if (c.ranks) return squarest_grid(*c.ranks);
  return std::nullopt;
}

ReductionPolicy resolve_policy(const RunConfig& c, DType fallback) {
  ReductionPolicy p;
  p.accum_dtype = c.accum_dtype ? parse_dtype(*c.accum_dtype) : fallback;
  p.wire_dtype = c.wire_dtype ? parse_dtype(*c.wire_dtype) : p.accum_dtype;
  p.validate();
  return p;
}

void emit(const RunConfig& c, const std::string& text) {
  if (c.out) {
    std::ofstream f(*c.out, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + *c.out);
    f << text;
  } else {
    std::cout << text;
  }
}

int cmd_verify(const RunConfig& c) {
  harness::VerifyConfig v;
  if (c.ranks) v.ranks = {*c.ranks};
  if (c.grid) {
    v.grid = resolve_grid(c);
    v.ranks = {v.grid->size()};
  }
  if (c.size) v.lengths = {*c.size};
  if (c.algo && *c.algo != "all") v.algorithms = {parse_algorithm(*c.algo)};
  if (c.accum_dtype) v.dtypes = {parse_dtype(*c.accum_dtype)};
  v.seed = c.seed;
  v.inject_fault = c.fault;
  v.mode = c.lockstep ? ExecMode::lockstep : ExecMode::threaded;
  const auto rep = harness::run_verify(v);
  emit(c, c.format == "json" ? harness::to_json(rep).dump(2) + "\n" : harness::to_csv(rep));
  std::cerr << "verify: " << rep.cases.size() - rep.failures() << "/" << rep.cases.size()
            << " cases passed\n";
  return rep.passed ? kPass : kFail;
}

int cmd_bench(const RunConfig& c) {
  harness::BenchConfig b;
  b.algorithm = parse_algorithm(c.algo.value_or("torus"));
  b.elements = c.size.value_or(1 << 16);
  b.policy = resolve_policy(c, DType::f32);
  b.iters = c.iters;
  b.warmup = c.warmup;
  b.seed = c.seed;
  b.send_delay = std::chrono::microseconds(static_cast<long>(c.delay_us));

  harness::BenchResult r;
  if (c.transport == "inproc") {
    auto g = resolve_grid(c);
    b.grid = g.value_or(GridTopology(4, 2, 2));
    r = harness::run_bench_inproc(b);
  } else if (c.transport == "tcp") {
    if (!c.rank || !c.peers) throw ConfigError("tcp transport needs --rank and --peers");
    const auto peers = load_peer_table(*c.peers);
    RunConfig gc = c;
    if (!gc.ranks) gc.ranks = peers.size();
    auto g = resolve_grid(gc);
    if (g->size() != peers.size()) throw ConfigError("grid does not match the peer table");
    b.grid = *g;
    SendLog log(peers.size());
    TcpEndpoint ep(*c.rank, peers);
    ep.attach_log(&log);
    r = harness::run_bench_endpoint(ep, log, b);
    if (*c.rank != 0 && !c.out) return r.steps_match ? kPass : kFail;
  } else {
    throw ConfigError("unknown transport '" + c.transport + "'");
  }
  if (c.format == "json")
    emit(c, harness::to_json(r).dump(2) + "\n");
  else
    emit(c, std::string(harness::kBenchCsvHeader) + "\n" + harness::to_csv_row(r));
  return r.steps_match ? kPass : kFail;
}

int cmd_cost(const RunConfig& c) {
  const LinkModel link{c.alpha, c.beta};
  link.validate();
  std::vector<GridTopology> grids;
  if (auto g = resolve_grid(c); g && c.preset.empty()) {
    grids.push_back(*g);
  } else if (c.preset.empty() || c.preset == "published-grids") {
    grids = harness::published_grids();
  } else {
    throw ConfigError("unknown preset '" + c.preset + "'");
  }
  std::vector<Algorithm> algos;
  if (c.algo.value_or("all") == "all") algos.assign(std::begin(kAllAlgorithms), std::end(kAllAlgorithms));
  else algos = {parse_algorithm(*c.algo)};
  const DType wire = c.wire_dtype ? parse_dtype(*c.wire_dtype) : DType::f16;
  const std::size_t elements = c.size.value_or(51'000'000);
  const auto rows = harness::cost_sweep(grids, algos, elements, element_size(wire), link);
  if (c.format == "json") {
    nlohmann::json j;
    j["alpha"] = link.alpha;
    j["beta"] = link.beta;
    j["elements"] = elements;
    j["element_bytes"] = element_size(wire);
    j["reports"] = harness::cost_sweep_json(rows, link);
    emit(c, j.dump(2) + "\n");
  } else {
    emit(c, harness::cost_sweep_csv(rows, link));
  }
  return kPass;
}

int cmd_schedule(const RunConfig& c) {
  const auto s = largebatch::resolve_schedule(c.schedule);
  const auto rows = largebatch::schedule_table(s, c.resolution);
  emit(c, c.format == "json" ? harness::schedule_json(s, rows).dump(2) + "\n"
                             : harness::schedule_csv(rows));
  return kPass;
}

int cmd_trainsim(const RunConfig& c) {
  trainsim::TrainSimSpec s;
  s.workers = c.ranks.value_or(c.workers);
  s.per_worker_batch = c.per_worker_batch;
  s.steps = c.steps;
  s.seed = c.seed;
  s.algorithm = parse_algorithm(c.algo.value_or("torus"));
  if (c.grid) {
    RunConfig gc = c;
    gc.ranks = s.workers;
    s.grid = resolve_grid(gc);
  }
  if (c.optimizer == "lars") s.optimizer = trainsim::Optimizer::lars;
  else if (c.optimizer == "sgd") s.optimizer = trainsim::Optimizer::sgd_momentum;
  else throw ConfigError("unknown optimizer '" + c.optimizer + "'");
  s.label_smoothing = c.label_smoothing;
  s.lr = c.lr;
  s.momentum = c.momentum;
  s.dtype = c.accum_dtype ? parse_dtype(*c.accum_dtype) : DType::f64;
  s.tolerance = c.tolerance.value_or(s.dtype == DType::f64 ? 1e-8 : 1e-4);
  const auto rep = trainsim::run_trainsim(s);
  if (c.format == "json") {
    emit(c, trainsim::to_json(rep).dump(2) + "\n");
  } else {
    std::ostringstream os;
    os.precision(6);
    os << "workers,steps,algorithm,grid,max_relative_divergence,final_loss_difference,"
          "step0_gradient_error,replicas_identical,passed\n"
       << rep.workers << ',' << rep.steps << ',' << rep.algorithm << ',' << rep.grid << ','
       << rep.max_relative_divergence << ',' << rep.final_loss_difference << ','
       << rep.step0_gradient_error << ',' << rep.replicas_identical << ',' << rep.passed << '\n';
    emit(c, os.str());
  }
  return rep.passed ? kPass : kFail;
}

void add_common(CLI::App* sub, RunConfig& c) {
  sub->add_option("--ranks", c.ranks, "Number of ranks");
  sub->add_option("--grid", c.grid, "Grid as XxY, e.g. 32x32");
  sub->add_option("--algo", c.algo, "ring | hier | torus (verify and cost also take all)");
  sub->add_option("--size", c.size, "Payload element count");
  sub->add_option("--wire-dtype", c.wire_dtype, "f16 | f32 | f64");
  sub->add_option("--accum-dtype", c.accum_dtype, "f32 | f64");
  sub->add_option("--seed", c.seed, "RNG seed");
  sub->add_option("--format", c.format, "json | csv")->check(CLI::IsMember({"json", "csv"}));
  sub->add_option("--out", c.out, "Output path (default stdout)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"2D-torus all-reduce toolkit"};
  app.require_subcommand(1);
  RunConfig c;

  auto* verify = app.add_subcommand("verify", "Check all algorithms against the f64 oracle");
  add_common(verify, c);
  verify->add_flag("--fault", c.fault, "Corrupt one payload byte (negative control)");
  verify->add_flag("--lockstep", c.lockstep, "Single-threaded round-based execution");

  auto* bench = app.add_subcommand("bench", "Measure all-reduce latency");
  add_common(bench, c);
  bench->add_option("--transport", c.transport, "inproc | tcp");
  bench->add_option("--rank", c.rank, "This process's rank (tcp)");
  bench->add_option("--peers", c.peers, "Peer file: 'rank host:port' per line (tcp)");
  bench->add_option("--iters", c.iters, "Timed iterations");
  bench->add_option("--warmup", c.warmup, "Untimed warmup iterations");
  bench->add_option("--delay-us", c.delay_us, "Injected per-message delay (inproc)");

  auto* cost = app.add_subcommand("cost", "Step/volume traces and alpha-beta predictions");
  add_common(cost, c);
  cost->add_option("--alpha", c.alpha, "Per-message latency in seconds");
  cost->add_option("--beta", c.beta, "Bandwidth in bytes per second");
  cost->add_option("--preset", c.preset, "Grid sweep preset: published-grids");

  auto* schedule = app.add_subcommand("schedule", "Dump LR/momentum/batch schedules");
  schedule->add_option("--schedule", c.schedule, "reference | exp1..exp4 | path to JSON");
  schedule->add_option("--resolution", c.resolution, "Epoch step between rows");
  schedule->add_option("--format", c.format, "json | csv")->check(CLI::IsMember({"json", "csv"}));
  schedule->add_option("--out", c.out, "Output path (default stdout)");

  auto* train = app.add_subcommand("trainsim", "Distributed vs single-process SGD equivalence");
  add_common(train, c);
  train->add_option("--workers", c.workers, "Worker count (same as --ranks)");
  train->add_option("--per-worker-batch", c.per_worker_batch, "Samples per worker per step");
  train->add_option("--steps", c.steps, "Training steps");
  train->add_option("--optimizer", c.optimizer, "sgd | lars");
  train->add_option("--label-smoothing", c.label_smoothing, "Smoothing epsilon");
  train->add_option("--lr", c.lr, "Global learning rate");
  train->add_option("--momentum", c.momentum, "Momentum");
  train->add_option("--tolerance", c.tolerance, "Max relative parameter divergence");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kPass : kUsage;
  }

  try {
    if (*verify) return cmd_verify(c);
    if (*bench) return cmd_bench(c);
    if (*cost) return cmd_cost(c);
    if (*schedule) return cmd_schedule(c);
    if (*train) return cmd_trainsim(c);
  } catch (const TransportError& e) {
    std::cerr << "transport error: " << e.what() << '\n';
    return kTransport;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
