// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <exception>
#include <span>
#include <thread>
#include <vector>

#include "torus/inproc_fabric.hpp"
#include "torus/schedule.hpp"
#include "torus/tensor.hpp"
#include "torus/transport.hpp"

namespace torus {

/// Executes one rank's schedule against a working buffer held in the
/// accumulation type. Can run to completion (blocking receives) or be
/// advanced one step at a time with non-blocking receives.
class ScheduleRunner {
 public:
  ScheduleRunner(const Schedule& sched, std::vector<double>& work, ReductionPolicy policy,
                 std::uint32_t collective_id)
      : sched_(&sched), work_(&work), policy_(policy), cid_(collective_id) {}

  bool done() const { return next_ == sched_->steps.size(); }

  void run(Endpoint& ep) {
    while (!done()) {
      const Step& st = start(ep);
      if (st.recv) finish(st, ep.recv(st.recv->peer, key(st)));
      else advance();
    }
  }

  /// Executes at most one step; false when the step's message has not arrived.
  bool try_advance(Endpoint& ep) {
    if (done()) return false;
    const Step& st = start(ep);
    if (!st.recv) {
      advance();
      return true;
    }
    auto m = ep.try_recv(st.recv->peer, key(st));
    if (!m) return false;
    finish(st, std::move(*m));
    return true;
  }

 private:
  MessageKey key(const Step& st) const { return {cid_, st.phase, st.step}; }

  std::span<double> view(ChunkRange r) { return std::span<double>(*work_).subspan(r.offset, r.length); }

  const Step& start(Endpoint& ep) {
    const Step& st = sched_->steps[next_];
    if (started_) return st;
    started_ = true;
    if (st.quantize)
      for (double& v : view(*st.quantize)) v = round_to(policy_.wire_dtype, v);
    if (st.send) {
      WireMessage m;
      m.collective_id = cid_;
      m.phase = st.phase;
      m.step = st.step;
      m.src = ep.rank();
      m.dtype = policy_.wire_dtype;
      m.payload = encode_payload(view(st.send->range), policy_.wire_dtype);
      ep.send(st.send->peer, std::move(m));
    }
    return st;
  }

  void finish(const Step& st, WireMessage m) {
    if (m.dtype != policy_.wire_dtype)
      throw ShapeMismatch("received " + std::string(to_string(m.dtype)) + " payload, expected " +
                          std::string(to_string(policy_.wire_dtype)));
    auto dst = view(st.recv->range);
    if (st.action == RecvAction::reduce) {
      reduce_into(dst, m.payload, policy_);
    } else {
      const auto in = decode_payload(m.payload, policy_.wire_dtype);
      if (in.size() != dst.size()) throw ShapeMismatch("copy: payload length mismatch");
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = round_to(policy_.accum_dtype, in[i]);
    }
    advance();
  }

  void advance() {
    ++next_;
    started_ = false;
  }

  const Schedule* sched_;
  std::vector<double>* work_;
  ReductionPolicy policy_;
  std::uint32_t cid_;
  std::size_t next_ = 0;
  bool started_ = false;
};

namespace detail {

inline std::vector<double> working_copy(const TensorBuffer& buf, DType accum) {
  std::vector<double> w(buf.values);
  if (buf.dtype != accum)
    for (double& v : w) v = round_to(accum, v);
  return w;
}

inline void store_back(TensorBuffer& buf, std::vector<double>&& work) {
  for (double& v : work) v = round_to(buf.dtype, v);
  buf.values = std::move(work);
}

inline std::size_t position_in(std::span<const Rank> ring, Rank r) {
  for (std::size_t i = 0; i < ring.size(); ++i)
    if (ring[i] == r) return i;
  throw OutOfRange("rank " + std::to_string(r) + " is not a member of the ring");
}

}  // namespace detail

/// Runs `sched` on `buf` in place. Every participant must pass a buffer of
/// the same length and the same collective id.
inline void execute(Endpoint& ep, const Schedule& sched, TensorBuffer& buf,
                    const ReductionPolicy& policy, std::uint32_t collective_id) {
  policy.validate();
  auto work = detail::working_copy(buf, policy.accum_dtype);
  ScheduleRunner(sched, work, policy, collective_id).run(ep);
  detail::store_back(buf, std::move(work));
}

/// Ring reduce-scatter; returns the chunk whose full sum this rank now owns.
/// Other chunks hold partial sums.
inline ChunkRange ring_reduce_scatter(Endpoint& ep, std::span<const Rank> ring, TensorBuffer& buf,
                                      const ReductionPolicy& policy,
                                      std::uint32_t collective_id) {
  const std::size_t pos = detail::position_in(ring, ep.rank());
  const ChunkRange full{0, buf.size()};
  Schedule s;
  append_ring_reduce_scatter(s, ring, pos, full, phase::ring, 0);
  execute(ep, s, buf, policy, collective_id);
  return sub_chunk(full, ring.size(), pos);
}

/// Ring all-gather. `owned` must be this rank's chunk of the balanced
/// partition over the ring.
inline void ring_all_gather(Endpoint& ep, std::span<const Rank> ring, TensorBuffer& buf,
                            ChunkRange owned, const ReductionPolicy& policy,
                            std::uint32_t collective_id) {
  const std::size_t pos = detail::position_in(ring, ep.rank());
  const ChunkRange full{0, buf.size()};
  if (!(owned == sub_chunk(full, ring.size(), pos)))
    throw ShapeMismatch("owned chunk does not match the ring partition");
  Schedule s;
  append_ring_all_gather(s, ring, pos, full, phase::ring, 0);
  execute(ep, s, buf, policy, collective_id);
}

inline void ring_all_reduce(Endpoint& ep, std::span<const Rank> ring, TensorBuffer& buf,
                            const ReductionPolicy& policy, std::uint32_t collective_id) {
  const std::size_t pos = detail::position_in(ring, ep.rank());
  Schedule s;
  append_ring_all_reduce(s, ring, pos, {0, buf.size()}, phase::ring);
  execute(ep, s, buf, policy, collective_id);
}

inline void torus_all_reduce(Endpoint& ep, const GridTopology& t, TensorBuffer& buf,
                             const ReductionPolicy& policy, std::uint32_t collective_id) {
  execute(ep, torus_schedule(t, ep.rank(), buf.size()), buf, policy, collective_id);
}

inline void hierarchical_all_reduce(Endpoint& ep, const GridTopology& t, TensorBuffer& buf,
                                    const ReductionPolicy& policy,
                                    std::uint32_t collective_id) {
  execute(ep, hierarchical_schedule(t, ep.rank(), buf.size()), buf, policy, collective_id);
}

inline void all_reduce(Algorithm a, Endpoint& ep, const GridTopology& t, TensorBuffer& buf,
                       const ReductionPolicy& policy, std::uint32_t collective_id) {
  if (t.size() != ep.world_size())
    throw DimensionMismatch("grid " + t.to_string() + " does not match world size " +
                            std::to_string(ep.world_size()));
  execute(ep, build_schedule(a, t, ep.rank(), buf.size()), buf, policy, collective_id);
}

/// Per-rank view of a sequence of collectives; assigns collective ids.
class Communicator {
 public:
  explicit Communicator(Endpoint& ep, ReductionPolicy policy = {}, std::uint32_t first_id = 0)
      : ep_(&ep), policy_(policy), next_id_(first_id) {
    policy_.validate();
  }

  Rank rank() const { return ep_->rank(); }
  std::size_t size() const { return ep_->world_size(); }
  const ReductionPolicy& policy() const { return policy_; }

  void all_reduce(Algorithm a, const GridTopology& t, TensorBuffer& buf) {
    torus::all_reduce(a, *ep_, t, buf, policy_, next_id_++);
  }

 private:
  Endpoint* ep_;
  ReductionPolicy policy_;
  std::uint32_t next_id_;
};

/// Calls fn(endpoint) on one thread per rank. If any rank throws, the fabric
/// is closed so blocked peers unwind, and the first real error is rethrown.
template <typename Fn>
void run_ranks(InprocFabric& fabric, Fn&& fn) {
  const std::size_t n = fabric.size();
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> threads;
    threads.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
      threads.emplace_back([&, r] {
        try {
          fn(fabric.endpoint(static_cast<Rank>(r)));
        } catch (...) {
          errors[r] = std::current_exception();
          fabric.close();
        }
      });
    }
  }
  std::exception_ptr fallback;
  for (auto& e : errors) {
    if (!e) continue;
    try {
      std::rethrow_exception(e);
    } catch (const FabricClosed&) {
      if (!fallback) fallback = e;
    } catch (...) {
      throw;
    }
  }
  if (fallback) std::rethrow_exception(fallback);
}

/// Single-threaded execution: every round, each rank in rank order executes
/// at most one step. Fully deterministic; throws if no rank can progress.
inline void run_lockstep(InprocFabric& fabric, std::span<const Schedule> schedules,
                         std::span<TensorBuffer> bufs, const ReductionPolicy& policy,
                         std::uint32_t collective_id) {
  policy.validate();
  const std::size_t n = fabric.size();
  if (schedules.size() != n || bufs.size() != n)
    throw ShapeMismatch("lockstep: need one schedule and buffer per rank");
  std::vector<std::vector<double>> work;
  work.reserve(n);
  for (auto& b : bufs) work.push_back(detail::working_copy(b, policy.accum_dtype));
  std::vector<ScheduleRunner> runners;
  runners.reserve(n);
  for (std::size_t r = 0; r < n; ++r) runners.emplace_back(schedules[r], work[r], policy, collective_id);
  for (;;) {
    bool all_done = true;
    bool progressed = false;
    for (std::size_t r = 0; r < n; ++r) {
      if (runners[r].done()) continue;
      all_done = false;
      progressed |= runners[r].try_advance(fabric.endpoint(static_cast<Rank>(r)));
    }
    if (all_done) break;
    if (!progressed) throw TransportError("lockstep schedule deadlocked");
  }
  for (std::size_t r = 0; r < n; ++r) detail::store_back(bufs[r], std::move(work[r]));
}

enum class ExecMode { threaded, lockstep };

struct SimulationResult {
  std::vector<TensorBuffer> outputs;
  std::vector<SendRecord> sends;
};

/// One all-reduce over a fresh in-process fabric, with the send log.
inline SimulationResult simulate_all_reduce(Algorithm a, const GridTopology& t,
                                            std::vector<TensorBuffer> inputs,
                                            const ReductionPolicy& policy,
                                            ExecMode mode = ExecMode::threaded,
                                            InprocOptions opts = {},
                                            std::uint32_t collective_id = 0) {
  if (inputs.size() != t.size()) throw ShapeMismatch("need one input buffer per rank");
  for (const auto& b : inputs)
    if (b.size() != inputs.front().size() || b.dtype != inputs.front().dtype)
      throw ShapeMismatch("all ranks must pass buffers of identical length and dtype");
  InprocFabric fabric(t.size(), opts);
  if (mode == ExecMode::lockstep) {
    std::vector<Schedule> scheds;
    for (std::size_t r = 0; r < t.size(); ++r)
      scheds.push_back(build_schedule(a, t, static_cast<Rank>(r), inputs.front().size()));
    run_lockstep(fabric, scheds, inputs, policy, collective_id);
  } else {
    run_ranks(fabric, [&](Endpoint& ep) {
      all_reduce(a, ep, t, inputs[ep.rank()], policy, collective_id);
    });
  }
  return {std::move(inputs), fabric.log().all()};
}

}  // namespace torus
