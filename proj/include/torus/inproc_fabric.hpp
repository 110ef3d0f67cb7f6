// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#include "torus/transport.hpp"

namespace torus {

struct InprocOptions {
  /// Sleep applied inside every send; models per-message latency.
  std::chrono::microseconds send_delay{0};
  /// Zero means recv waits forever.
  std::chrono::milliseconds recv_timeout{0};
  /// Negative control: corrupt the first non-empty payload sent by rank 0.
  bool inject_fault = false;
};

class InprocFabric;

class InprocEndpoint final : public Endpoint {
 public:
  InprocEndpoint(InprocFabric& fabric, Rank rank) : fabric_(&fabric), rank_(rank) {}

  Rank rank() const override { return rank_; }
  std::size_t world_size() const override;
  void send(Rank dst, WireMessage msg) override;
  WireMessage recv(Rank src, MessageKey key) override;
  std::optional<WireMessage> try_recv(Rank src, MessageKey key) override;

 private:
  InprocFabric* fabric_;
  Rank rank_;
};

/// Reliable in-process fabric. Delivery is FIFO per (src, dst, key) and
/// involves no randomness, so a fixed send schedule yields a fixed result.
class InprocFabric {
 public:
  explicit InprocFabric(std::size_t n_ranks, InprocOptions opts = {})
      : opts_(opts), boxes_(n_ranks), log_(n_ranks) {
    if (n_ranks == 0) throw ConfigError("fabric needs at least one rank");
    for (std::size_t r = 0; r < n_ranks; ++r)
      endpoints_.push_back(std::make_unique<InprocEndpoint>(*this, static_cast<Rank>(r)));
  }

  InprocFabric(const InprocFabric&) = delete;
  InprocFabric& operator=(const InprocFabric&) = delete;

  std::size_t size() const { return boxes_.size(); }
  InprocEndpoint& endpoint(Rank r) { return *endpoints_.at(r); }
  SendLog& log() { return log_; }
  const SendLog& log() const { return log_; }

  /// Fails all current and future blocking receives.
  void close() {
    closed_ = true;
    for (auto& b : boxes_) {
      std::lock_guard lk(b.mu);
      b.cv.notify_all();
    }
  }
  bool closed() const { return closed_; }

  std::size_t pending() {
    std::size_t n = 0;
    for (auto& b : boxes_) {
      std::lock_guard lk(b.mu);
      n += b.box.pending();
    }
    return n;
  }

 private:
  friend class InprocEndpoint;

  struct Box {
    std::mutex mu;
    std::condition_variable cv;
    Mailbox box;
  };

  void deliver(Rank src, Rank dst, WireMessage msg) {
    if (closed_) throw FabricClosed("fabric closed");
    if (dst >= size() || dst == src)
      throw InvalidDestination("invalid destination " + std::to_string(dst) +
                               " from rank " + std::to_string(src));
    if (opts_.send_delay.count() > 0) std::this_thread::sleep_for(opts_.send_delay);
    msg.src = src;
    if (opts_.inject_fault && src == 0 && !msg.payload.empty() && !fault_fired_.exchange(true)) {
      // top byte of the first element: sign/exponent for every dtype
      msg.payload[element_size(msg.dtype) - 1] ^= 0x40;
    }
    log_.record({src, dst, msg.collective_id, msg.phase, msg.step, msg.payload.size()});
    Box& b = boxes_[dst];
    {
      std::lock_guard lk(b.mu);
      b.box.push(std::move(msg));
    }
    b.cv.notify_all();
  }

  WireMessage take(Rank self, Rank src, MessageKey key) {
    if (src >= size()) throw InvalidDestination("invalid source " + std::to_string(src));
    Box& b = boxes_[self];
    std::unique_lock lk(b.mu);
    std::optional<WireMessage> m;
    auto ready = [&] { return closed_ || (m = b.box.pop(src, key)).has_value(); };
    if (opts_.recv_timeout.count() > 0) {
      if (!b.cv.wait_for(lk, opts_.recv_timeout, ready))
        throw TransportTimeout("recv timed out waiting for rank " + std::to_string(src));
    } else {
      b.cv.wait(lk, ready);
    }
    if (!m) throw FabricClosed("fabric closed");
    return std::move(*m);
  }

  std::optional<WireMessage> poll(Rank self, Rank src, MessageKey key) {
    if (closed_) throw FabricClosed("fabric closed");
    Box& b = boxes_[self];
    std::lock_guard lk(b.mu);
    return b.box.pop(src, key);
  }

  InprocOptions opts_;
  std::vector<Box> boxes_;
  std::vector<std::unique_ptr<InprocEndpoint>> endpoints_;
  SendLog log_;
  std::atomic<bool> closed_{false};
  std::atomic<bool> fault_fired_{false};
};

inline std::size_t InprocEndpoint::world_size() const { return fabric_->size(); }

inline void InprocEndpoint::send(Rank dst, WireMessage msg) {
  fabric_->deliver(rank_, dst, std::move(msg));
}

inline WireMessage InprocEndpoint::recv(Rank src, MessageKey key) {
  return fabric_->take(rank_, src, key);
}

inline std::optional<WireMessage> InprocEndpoint::try_recv(Rank src, MessageKey key) {
  return fabric_->poll(rank_, src, key);
}

inline std::unique_ptr<InprocFabric> create_inproc_fabric(std::size_t n_ranks,
                                                          InprocOptions opts = {}) {
  return std::make_unique<InprocFabric>(n_ranks, opts);
}

}  // namespace torus
