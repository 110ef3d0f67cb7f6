// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "torus/collectives.hpp"
#include "torus/largebatch.hpp"

namespace torus::trainsim {

enum class Optimizer { sgd_momentum, lars };

/// Desk-scale data-parallel training run: multinomial logistic regression on
/// seeded Gaussian clusters. Workers x per_worker_batch samples per step.
struct TrainSimSpec {
  std::size_t samples = 4096;
  std::size_t features = 16;
  std::size_t classes = 10;
  std::uint64_t seed = 1;

  std::size_t workers = 4;
  std::size_t per_worker_batch = 8;
  std::size_t steps = 50;

  Optimizer optimizer = Optimizer::sgd_momentum;
  double lr = 0.5;
  double momentum = 0.9;
  double label_smoothing = 0.0;
  largebatch::LarsConfig lars{};
  /// Bias layer excluded from the trust ratio when true.
  bool lars_skip_bias = false;

  Algorithm algorithm = Algorithm::torus;
  std::optional<GridTopology> grid;
  DType dtype = DType::f64;
  double tolerance = 1e-8;

  void validate() const {
    if (samples == 0 || features == 0 || classes < 2 || workers == 0 || per_worker_batch == 0)
      throw ConfigError("trainsim: sizes must be positive and classes >= 2");
    if (!(label_smoothing >= 0.0 && label_smoothing <= 1.0))
      throw ConfigError("trainsim: label smoothing must lie in [0, 1]");
    if (grid && grid->size() != workers) throw ConfigError("trainsim: grid does not match worker count");
    if (dtype == DType::f16) throw ConfigError("trainsim: f16 gradients are not supported");
  }
};

struct Dataset {
  std::size_t features = 0;
  std::vector<double> x;  // row-major, samples x features
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(x).subspan(i * features, features);
  }
};

inline Dataset make_dataset(const TrainSimSpec& s) {
  std::mt19937_64 rng(s.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> centers(s.classes * s.features);
  for (auto& c : centers) c = 2.0 * normal(rng);
  Dataset d;
  d.features = s.features;
  d.x.resize(s.samples * s.features);
  d.labels.resize(s.samples);
  for (std::size_t i = 0; i < s.samples; ++i) {
    const std::size_t label = rng() % s.classes;
    d.labels[i] = label;
    for (std::size_t f = 0; f < s.features; ++f)
      d.x[i * s.features + f] = centers[label * s.features + f] + normal(rng);
  }
  return d;
}

/// Parameters as one flat vector: weights (classes x features) then bias.
struct Model {
  std::size_t classes = 0;
  std::size_t features = 0;

  std::size_t weight_count() const { return classes * features; }
  std::size_t size() const { return classes * features + classes; }
};

inline std::vector<double> logits_of(const Model& m, std::span<const double> params,
                                     std::span<const double> x) {
  std::vector<double> z(m.classes);
  for (std::size_t c = 0; c < m.classes; ++c) {
    double acc = params[m.weight_count() + c];
    for (std::size_t f = 0; f < m.features; ++f) acc += params[c * m.features + f] * x[f];
    z[c] = acc;
  }
  return z;
}

struct BatchResult {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Mean loss and gradient over the given sample indices.
inline BatchResult batch_gradient(const Model& m, std::span<const double> params,
                                  const Dataset& data, std::span<const std::size_t> idx,
                                  double epsilon) {
  BatchResult out;
  out.grad.assign(m.size(), 0.0);
  for (std::size_t i : idx) {
    const auto x = data.row(i);
    const auto q = largebatch::smooth_labels(data.labels[i], epsilon, m.classes);
    const auto z = logits_of(m, params, x);
    const auto lg = largebatch::smoothed_cross_entropy(z, q);
    out.loss += lg.loss;
    for (std::size_t c = 0; c < m.classes; ++c) {
      for (std::size_t f = 0; f < m.features; ++f) out.grad[c * m.features + f] += lg.grad[c] * x[f];
      out.grad[m.weight_count() + c] += lg.grad[c];
    }
  }
  const auto n = static_cast<double>(idx.size());
  out.loss /= n;
  for (double& g : out.grad) g /= n;
  return out;
}

/// Sample indices of worker `w` at `step`; the global batch walks the dataset
/// cyclically.
inline std::vector<std::size_t> shard_indices(const TrainSimSpec& s, std::size_t step,
                                              std::size_t first_worker, std::size_t n_workers) {
  const std::size_t global = s.workers * s.per_worker_batch;
  std::vector<std::size_t> idx;
  idx.reserve(n_workers * s.per_worker_batch);
  const std::size_t begin = first_worker * s.per_worker_batch;
  for (std::size_t j = begin; j < begin + n_workers * s.per_worker_batch; ++j)
    idx.push_back((step * global + j) % s.samples);
  return idx;
}

struct OptimizerState {
  std::vector<double> velocity;
};

inline void apply_update(const TrainSimSpec& s, const Model& m, std::span<double> params,
                         std::span<const double> grad, OptimizerState& st) {
  const bool lars = s.optimizer == Optimizer::lars;
  largebatch::LarsConfig cfg = s.lars;
  auto layer = [&](std::size_t off, std::size_t len, bool trust) {
    largebatch::lars_step<double>(params.subspan(off, len), grad.subspan(off, len),
                                  std::span<double>(st.velocity).subspan(off, len), s.lr,
                                  s.momentum, cfg, trust);
  };
  layer(0, m.weight_count(), lars);
  layer(m.weight_count(), m.classes, lars && !s.lars_skip_bias);
}

inline double rel_diff(std::span<const double> a, std::span<const double> b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

struct TrainSimReport {
  std::size_t workers = 0;
  std::size_t steps = 0;
  std::string algorithm;
  std::string grid;
  double max_relative_divergence = 0.0;
  double final_loss_distributed = 0.0;
  double final_loss_single = 0.0;
  double final_loss_difference = 0.0;
  double step0_gradient_error = 0.0;
  bool replicas_identical = true;
  bool bitwise_identical = true;
  double tolerance = 0.0;
  bool passed = false;
  /// Averaged gradient seen by rank 0 at step 0.
  std::vector<double> step0_gradient;
  std::vector<double> final_params;
};

inline nlohmann::json to_json(const TrainSimReport& r) {
  return {{"workers", r.workers},
          {"steps", r.steps},
          {"algorithm", r.algorithm},
          {"grid", r.grid},
          {"max_relative_divergence", r.max_relative_divergence},
          {"final_loss_distributed", r.final_loss_distributed},
          {"final_loss_single", r.final_loss_single},
          {"final_loss_difference", r.final_loss_difference},
          {"step0_gradient_error", r.step0_gradient_error},
          {"replicas_identical", r.replicas_identical},
          {"bitwise_identical", r.bitwise_identical},
          {"tolerance", r.tolerance},
          {"passed", r.passed}};
}

/// Runs (a) `workers` replicas that average shard gradients through the
/// selected all-reduce and (b) one process on the whole global batch, from
/// the same zero initialisation, and compares the parameter trajectories.
inline TrainSimReport run_trainsim(const TrainSimSpec& s) {
  s.validate();
  const Dataset data = make_dataset(s);
  const Model model{s.classes, s.features};
  const GridTopology grid = s.grid.value_or(squarest_grid(s.workers));
  const ReductionPolicy policy = ReductionPolicy::uniform(s.dtype);

  // single process, global batch
  std::vector<std::vector<double>> single_traj;
  std::vector<double> single(model.size(), 0.0);
  {
    OptimizerState st{std::vector<double>(model.size(), 0.0)};
    for (std::size_t t = 0; t < s.steps; ++t) {
      const auto idx = shard_indices(s, t, 0, s.workers);
      const auto br = batch_gradient(model, single, data, idx, s.label_smoothing);
      apply_update(s, model, single, br.grad, st);
      single_traj.push_back(single);
    }
  }

  // distributed replicas
  std::vector<std::vector<std::vector<double>>> traj(s.workers);
  std::vector<double> step0_avg;
  InprocFabric fabric(s.workers);
  run_ranks(fabric, [&](Endpoint& ep) {
    Communicator comm(ep, policy);
    const Rank r = ep.rank();
    std::vector<double> params(model.size(), 0.0);
    OptimizerState st{std::vector<double>(model.size(), 0.0)};
    for (std::size_t t = 0; t < s.steps; ++t) {
      const auto idx = shard_indices(s, t, r, 1);
      const auto br = batch_gradient(model, params, data, idx, s.label_smoothing);
      TensorBuffer buf(s.dtype, br.grad);
      comm.all_reduce(s.algorithm, grid, buf);
      // collectives sum; average exactly once, in the accumulation type
      for (double& g : buf.values)
        g = round_to(s.dtype, g / static_cast<double>(s.workers));
      if (t == 0 && r == 0) step0_avg = buf.values;
      apply_update(s, model, params, buf.values, st);
      traj[r].push_back(params);
    }
  });

  TrainSimReport rep;
  rep.workers = s.workers;
  rep.steps = s.steps;
  rep.algorithm = std::string(to_string(s.algorithm));
  rep.grid = grid.to_string();
  rep.tolerance = s.tolerance;
  for (std::size_t t = 0; t < s.steps; ++t) {
    rep.max_relative_divergence =
        std::max(rep.max_relative_divergence, rel_diff(traj[0][t], single_traj[t]));
    if (traj[0][t] != single_traj[t]) rep.bitwise_identical = false;
    for (std::size_t w = 1; w < s.workers; ++w)
      if (traj[w][t] != traj[0][t]) rep.replicas_identical = false;
  }

  if (s.steps > 0) {
    // analytic average of the per-shard gradients at the initial point
    const std::vector<double> zero(model.size(), 0.0);
    std::vector<double> avg(model.size(), 0.0);
    for (std::size_t w = 0; w < s.workers; ++w) {
      const auto g = batch_gradient(model, zero, data, shard_indices(s, 0, w, 1), s.label_smoothing).grad;
      for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += g[i];
    }
    for (double& v : avg) v /= static_cast<double>(s.workers);
    rep.step0_gradient_error = rel_diff(step0_avg, avg);
    rep.step0_gradient = step0_avg;
    rep.final_params = traj[0].back();

    std::vector<std::size_t> all(s.samples);
    for (std::size_t i = 0; i < s.samples; ++i) all[i] = i;
    rep.final_loss_distributed = batch_gradient(model, traj[0].back(), data, all, s.label_smoothing).loss;
    rep.final_loss_single = batch_gradient(model, single, data, all, s.label_smoothing).loss;
    rep.final_loss_difference = std::fabs(rep.final_loss_distributed - rep.final_loss_single);
  }
  rep.passed = rep.replicas_identical && rep.max_relative_divergence < s.tolerance;
  return rep;
}

}  // namespace torus::trainsim
