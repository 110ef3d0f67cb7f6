// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "torus/trainsim.hpp"

namespace {

using namespace torus;
using namespace torus::trainsim;

TEST(TrainSimTest, SingleWorkerIsBitwiseIdentical) {
  TrainSimSpec s;
  s.workers = 1;
  s.steps = 20;
  const auto r = run_trainsim(s);
  EXPECT_TRUE(r.bitwise_identical);
  EXPECT_EQ(r.max_relative_divergence, 0.0);
  EXPECT_TRUE(r.passed);
}

TEST(TrainSimTest, FourWorkersSgdTracksGlobalBatch) {
  TrainSimSpec s;
  s.workers = 4;
  const auto r = run_trainsim(s);
  EXPECT_TRUE(r.replicas_identical);
  EXPECT_LT(r.max_relative_divergence, 1e-10);
  EXPECT_LT(r.step0_gradient_error, 1e-12);
}

TEST(TrainSimTest, LarsWithLabelSmoothing) {
  TrainSimSpec s;
  s.optimizer = Optimizer::lars;
  s.label_smoothing = 0.1;
  s.lr = 2.0;
  for (Algorithm a : kAllAlgorithms) {
    s.algorithm = a;
    const auto r = run_trainsim(s);
    EXPECT_TRUE(r.passed) << to_string(a) << " divergence " << r.max_relative_divergence;
    EXPECT_LT(r.max_relative_divergence, 1e-8);
    EXPECT_LT(r.final_loss_difference, 1e-8);
  }
}

TEST(TrainSimTest, TrainingReducesLoss) {
  TrainSimSpec s;
  s.steps = 100;
  const auto r = run_trainsim(s);
  // log K is the loss of the zero initialisation
  EXPECT_LT(r.final_loss_single, 0.5 * std::log(static_cast<double>(s.classes)));
}

TEST(TrainSimTest, RepeatRunsAreIdentical) {
  TrainSimSpec s;
  s.optimizer = Optimizer::lars;
  s.workers = 6;
  s.steps = 10;
  const auto a = run_trainsim(s);
  const auto b = run_trainsim(s);
  EXPECT_EQ(a.final_params, b.final_params);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
}

TEST(TrainSimTest, ShardsTileTheGlobalBatch) {
  TrainSimSpec s;
  s.workers = 3;
  s.per_worker_batch = 5;
  s.samples = 40;
  for (std::size_t step = 0; step < 6; ++step) {
    std::vector<std::size_t> joined;
    for (std::size_t w = 0; w < 3; ++w) {
      const auto part = shard_indices(s, step, w, 1);
      joined.insert(joined.end(), part.begin(), part.end());
    }
    EXPECT_EQ(joined, shard_indices(s, step, 0, 3));
    for (auto i : joined) EXPECT_LT(i, s.samples);
  }
}

TEST(TrainSimTest, InvalidSpecs) {
  TrainSimSpec s;
  s.classes = 1;
  EXPECT_THROW(run_trainsim(s), ConfigError);
  s = {};
  s.grid = GridTopology(6, 3, 2);
  EXPECT_THROW(run_trainsim(s), ConfigError);
  s = {};
  s.dtype = DType::f16;
  EXPECT_THROW(run_trainsim(s), ConfigError);
}

}  // namespace
