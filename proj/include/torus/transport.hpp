// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <tuple>
#include <vector>

#include "torus/topology.hpp"
#include "torus/wire.hpp"

namespace torus {

/// One rank's handle on a message fabric. An endpoint is used by a single
/// worker at a time; implementations make the underlying fabric safe for
/// concurrent use by all endpoints.
class Endpoint {
 public:
  virtual ~Endpoint() = default;

  virtual Rank rank() const = 0;
  virtual std::size_t world_size() const = 0;

  /// Buffered send: returns once the message is queued for `dst`.
  virtual void send(Rank dst, WireMessage msg) = 0;

  /// Blocks until the message from `src` with exactly `key` arrives. Messages
  /// for other keys stay queued.
  virtual WireMessage recv(Rank src, MessageKey key) = 0;

  /// Non-blocking variant of recv.
  virtual std::optional<WireMessage> try_recv(Rank src, MessageKey key) = 0;
};

struct SendRecord {
  Rank src = 0;
  Rank dst = 0;
  std::uint32_t collective_id = 0;
  std::uint8_t phase = 0;
  std::uint32_t step = 0;
  std::uint64_t bytes = 0;
};

/// Per-rank send history. Each rank appends only to its own slot, so
/// concurrent workers never touch the same vector.
class SendLog {
 public:
  explicit SendLog(std::size_t n_ranks) : per_rank_(n_ranks) {}

  void record(const SendRecord& r) { per_rank_.at(r.src).push_back(r); }
  std::span<const SendRecord> of(Rank r) const { return per_rank_.at(r); }
  std::size_t world_size() const { return per_rank_.size(); }

  std::vector<SendRecord> all() const {
    std::vector<SendRecord> out;
    for (const auto& v : per_rank_) out.insert(out.end(), v.begin(), v.end());
    return out;
  }

  void clear() {
    for (auto& v : per_rank_) v.clear();
  }

 private:
  std::vector<std::vector<SendRecord>> per_rank_;
};

/// Keyed receive queue shared by both transports. Not synchronized; callers
/// hold their own lock.
class Mailbox {
 public:
  void push(WireMessage m) {
    auto& q = slots_[slot(m.src, m.key())];
    q.push_back(std::move(m));
  }

  std::optional<WireMessage> pop(Rank src, MessageKey key) {
    auto it = slots_.find(slot(src, key));
    if (it == slots_.end() || it->second.empty()) return std::nullopt;
    WireMessage m = std::move(it->second.front());
    it->second.pop_front();
    if (it->second.empty()) slots_.erase(it);
    return m;
  }

  std::size_t pending() const {
    std::size_t n = 0;
    for (const auto& [k, q] : slots_) n += q.size();
    return n;
  }

 private:
  using Slot = std::tuple<Rank, std::uint32_t, std::uint8_t, std::uint32_t>;
  static Slot slot(Rank src, MessageKey k) { return {src, k.collective_id, k.phase, k.step}; }

  std::map<Slot, std::deque<WireMessage>> slots_;
};

}  // namespace torus
