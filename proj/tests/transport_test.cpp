// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <chrono>
#include <thread>

#include "torus/collectives.hpp"
#include "torus/inproc_fabric.hpp"

namespace {

using namespace torus;
using namespace std::chrono_literals;

WireMessage msg(std::uint32_t cid, std::uint8_t phase, std::uint32_t step, std::uint8_t tag = 0) {
  WireMessage m;
  m.collective_id = cid;
  m.phase = phase;
  m.step = step;
  m.dtype = DType::f32;
  m.payload = {tag, 0, 0, 0};
  return m;
}

TEST(InprocFabricTest, SingleRank) {
  auto f = create_inproc_fabric(1);
  EXPECT_EQ(f->size(), 1u);
  EXPECT_THROW(f->endpoint(0).send(0, msg(0, 0, 0)), InvalidDestination);
  TensorBuffer b(DType::f32, {1.0, 2.0});
  all_reduce(Algorithm::torus, f->endpoint(0), GridTopology(1, 1, 1), b, {}, 0);
  EXPECT_EQ(b.values, (std::vector<double>{1.0, 2.0}));
  EXPECT_TRUE(f->log().all().empty());
}

TEST(InprocFabricTest, LoopbackDelivery) {
  auto f = create_inproc_fabric(4);
  f->endpoint(0).send(1, msg(3, 1, 2, 42));
  const auto m = f->endpoint(1).recv(0, {3, 1, 2});
  EXPECT_EQ(m.src, 0u);
  EXPECT_EQ(m.payload[0], 42);
}

TEST(InprocFabricTest, FifoPerKey) {
  auto f = create_inproc_fabric(4);
  f->endpoint(0).send(1, msg(0, 0, 0, 1));
  f->endpoint(0).send(1, msg(0, 0, 0, 2));
  EXPECT_EQ(f->endpoint(1).recv(0, {0, 0, 0}).payload[0], 1);
  EXPECT_EQ(f->endpoint(1).recv(0, {0, 0, 0}).payload[0], 2);
}

TEST(InprocFabricTest, OutOfOrderKeysAreRetained) {
  auto f = create_inproc_fabric(2);
  f->endpoint(0).send(1, msg(0, 0, 1, 11));
  f->endpoint(0).send(1, msg(0, 0, 0, 10));
  EXPECT_EQ(f->endpoint(1).recv(0, {0, 0, 0}).payload[0], 10);
  EXPECT_EQ(f->endpoint(1).recv(0, {0, 0, 1}).payload[0], 11);
  EXPECT_EQ(f->pending(), 0u);
}

TEST(InprocFabricTest, DistinctCollectivesNeverCrossDeliver) {
  auto f = create_inproc_fabric(2);
  f->endpoint(0).send(1, msg(7, 0, 0, 70));
  f->endpoint(0).send(1, msg(8, 0, 0, 80));
  EXPECT_FALSE(f->endpoint(1).try_recv(0, {9, 0, 0}).has_value());
  EXPECT_EQ(f->endpoint(1).recv(0, {8, 0, 0}).payload[0], 80);
  EXPECT_EQ(f->endpoint(1).recv(0, {7, 0, 0}).payload[0], 70);
}

TEST(InprocFabricTest, InvalidDestinations) {
  auto f = create_inproc_fabric(3);
  EXPECT_THROW(f->endpoint(1).send(1, msg(0, 0, 0)), InvalidDestination);
  EXPECT_THROW(f->endpoint(1).send(3, msg(0, 0, 0)), InvalidDestination);
  EXPECT_THROW(f->endpoint(1).recv(5, {0, 0, 0}), InvalidDestination);
}

TEST(InprocFabricTest, CloseWakesBlockedReceiver) {
  auto f = create_inproc_fabric(2);
  std::thread t([&] {
    std::this_thread::sleep_for(20ms);
    f->close();
  });
  EXPECT_THROW(f->endpoint(0).recv(1, {0, 0, 0}), FabricClosed);
  t.join();
  EXPECT_THROW(f->endpoint(1).send(0, msg(0, 0, 0)), FabricClosed);
}

TEST(InprocFabricTest, RecvTimeout) {
  InprocOptions o;
  o.recv_timeout = 30ms;
  auto f = create_inproc_fabric(2, o);
  EXPECT_THROW(f->endpoint(0).recv(1, {0, 0, 0}), TransportTimeout);
}

TEST(InprocFabricTest, SendLogRecordsEveryMessage) {
  auto f = create_inproc_fabric(3);
  f->endpoint(2).send(0, msg(4, 1, 6));
  ASSERT_EQ(f->log().of(2).size(), 1u);
  const auto r = f->log().of(2)[0];
  EXPECT_EQ(r.dst, 0u);
  EXPECT_EQ(r.collective_id, 4u);
  EXPECT_EQ(r.phase, 1);
  EXPECT_EQ(r.step, 6u);
  EXPECT_EQ(r.bytes, 4u);
}

TEST(InprocFabricTest, FaultInjectionFlipsOneByte) {
  InprocOptions o;
  o.inject_fault = true;
  auto f = create_inproc_fabric(2, o);
  f->endpoint(0).send(1, msg(0, 0, 0, 0));
  f->endpoint(0).send(1, msg(0, 0, 1, 0));
  EXPECT_EQ(f->endpoint(1).recv(0, {0, 0, 0}).payload[3], 0x40);
  EXPECT_EQ(f->endpoint(1).recv(0, {0, 0, 1}).payload[3], 0x00);
}

TEST(InprocFabricTest, ConcurrentSendersKeepPairFifo) {
  auto f = create_inproc_fabric(4);
  run_ranks(*f, [&](Endpoint& ep) {
    if (ep.rank() == 0) {
      for (Rank src = 1; src < 4; ++src)
        for (int i = 0; i < 200; ++i)
          ASSERT_EQ(ep.recv(src, {0, 0, 0}).payload[0], static_cast<std::uint8_t>(i));
    } else {
      for (int i = 0; i < 200; ++i) ep.send(0, msg(0, 0, 0, static_cast<std::uint8_t>(i)));
    }
  });
}

}  // namespace
