// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "torus/transport.hpp"

namespace torus {

struct PeerAddress {
  std::string host;
  std::uint16_t port = 0;
  bool operator==(const PeerAddress&) const = default;
};

/// rank -> host:port for every rank of the job.
using PeerTable = std::map<Rank, PeerAddress>;

inline PeerAddress parse_host_port(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == s.size())
    throw ConfigError("expected host:port, got '" + s + "'");
  unsigned long port = 0;
  try {
    std::size_t used = 0;
    port = std::stoul(s.substr(colon + 1), &used);
    if (used != s.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ConfigError("bad port in '" + s + "'");
  }
  if (port > 65535) throw ConfigError("port out of range in '" + s + "'");
  return {s.substr(0, colon), static_cast<std::uint16_t>(port)};
}

/// One "rank host:port" entry per line; '#' starts a comment. Ranks must be
/// exactly 0..n-1.
inline PeerTable parse_peer_table(std::istream& in) {
  PeerTable t;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string rank_s, addr, extra;
    if (!(ls >> rank_s)) continue;
    if (!(ls >> addr) || (ls >> extra))
      throw ConfigError("peer file line " + std::to_string(lineno) + ": expected 'rank host:port'");
    Rank r = 0;
    try {
      r = static_cast<Rank>(std::stoul(rank_s));
    } catch (const std::exception&) {
      throw ConfigError("peer file line " + std::to_string(lineno) + ": bad rank");
    }
    if (!t.emplace(r, parse_host_port(addr)).second)
      throw ConfigError("peer file: duplicate rank " + std::to_string(r));
  }
  for (std::size_t i = 0; i < t.size(); ++i)
    if (!t.count(static_cast<Rank>(i)))
      throw ConfigError("peer file: ranks must be 0..n-1, missing " + std::to_string(i));
  if (t.empty()) throw ConfigError("peer file is empty");
  return t;
}

inline PeerTable load_peer_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open peer file " + path);
  return parse_peer_table(in);
}

struct TcpOptions {
  std::chrono::milliseconds recv_timeout{30000};
  std::chrono::milliseconds connect_timeout{30000};
};

namespace detail {

inline void write_all(int fd, const std::uint8_t* p, std::size_t n) {
  while (n > 0) {
    const ssize_t k = ::send(fd, p, n, MSG_NOSIGNAL);
    if (k < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("send failed: ") + std::strerror(errno));
    }
    p += k;
    n -= static_cast<std::size_t>(k);
  }
}

// false on clean EOF before the first byte
inline bool read_all(int fd, std::uint8_t* p, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t k = ::recv(fd, p + got, n - got, 0);
    if (k == 0) {
      if (got == 0) return false;
      throw TransportError("connection closed mid-frame");
    }
    if (k < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("recv failed: ") + std::strerror(errno));
    }
    got += static_cast<std::size_t>(k);
  }
  return true;
}

inline sockaddr_in resolve(const PeerAddress& a) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(a.host.c_str(), nullptr, &hints, &res) != 0 || !res)
    throw ConfigError("cannot resolve host " + a.host);
  sockaddr_in out{};
  std::memcpy(&out, res->ai_addr, sizeof out);
  ::freeaddrinfo(res);
  out.sin_port = htons(a.port);
  return out;
}

}  // namespace detail

/// Endpoint over TCP. Listens on its own address from the peer table and
/// connects lazily to a peer on the first send to it, so a ring schedule only
/// opens connections to its ring neighbours. Each (src, dst) pair uses one
/// stream, which gives FIFO order per pair.
class TcpEndpoint final : public Endpoint {
 public:
  /// Binds the listener. Use port 0 in `listen` to pick a free port, then
  /// call start() with the full table.
  TcpEndpoint(Rank rank, PeerAddress listen, TcpOptions opts = {})
      : rank_(rank), opts_(opts) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw TransportError("socket() failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr = detail::resolve(listen);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
      const std::string err = std::strerror(errno);
      ::close(listen_fd_);
      throw TransportError("bind " + listen.host + ":" + std::to_string(listen.port) + ": " + err);
    }
    if (::listen(listen_fd_, 64) < 0) {
      ::close(listen_fd_);
      throw TransportError("listen() failed");
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    bound_port_ = ntohs(addr.sin_port);
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  /// Binds to peers.at(rank) and starts immediately.
  TcpEndpoint(Rank rank, const PeerTable& peers, TcpOptions opts = {})
      : TcpEndpoint(rank, peers.at(rank), opts) {
    start(peers);
  }

  TcpEndpoint(const TcpEndpoint&) = delete;
  TcpEndpoint& operator=(const TcpEndpoint&) = delete;

  ~TcpEndpoint() override { shutdown(); }

  void start(const PeerTable& peers) {
    if (!peers.count(rank_)) throw ConfigError("peer table has no entry for this rank");
    peers_ = peers;
  }

  std::uint16_t bound_port() const { return bound_port_; }
  void attach_log(SendLog* log) { log_ = log; }

  Rank rank() const override { return rank_; }
  std::size_t world_size() const override { return peers_.size(); }

  void send(Rank dst, WireMessage msg) override {
    if (dst == rank_ || !peers_.count(dst))
      throw InvalidDestination("invalid destination " + std::to_string(dst));
    if (shut_) throw FabricClosed("endpoint closed");
    msg.src = rank_;
    const auto frame = encode_frame(msg);
    Outgoing& out = outgoing(dst);
    std::lock_guard lk(out.mu);
    detail::write_all(out.fd, frame.data(), frame.size());
    if (log_) log_->record({rank_, dst, msg.collective_id, msg.phase, msg.step, msg.payload.size()});
  }

  WireMessage recv(Rank src, MessageKey key) override {
    if (!peers_.count(src)) throw InvalidDestination("invalid source " + std::to_string(src));
    std::unique_lock lk(mu_);
    std::optional<WireMessage> m;
    const bool ok = cv_.wait_for(lk, opts_.recv_timeout, [&] {
      return closed_ || !reader_error_.empty() || (m = box_.pop(src, key)).has_value();
    });
    if (m) return std::move(*m);
    if (!reader_error_.empty()) throw TransportError(reader_error_);
    if (closed_) throw FabricClosed("endpoint closed");
    (void)ok;
    throw TransportTimeout("timed out waiting for rank " + std::to_string(src));
  }

  std::optional<WireMessage> try_recv(Rank src, MessageKey key) override {
    std::lock_guard lk(mu_);
    if (!reader_error_.empty()) throw TransportError(reader_error_);
    return box_.pop(src, key);
  }

  void shutdown() {
    if (shut_.exchange(true)) return;
    {
      std::lock_guard lk(mu_);
      closed_ = true;
    }
    cv_.notify_all();
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (acceptor_.joinable()) acceptor_.join();
    std::vector<std::thread> readers;
    {
      std::lock_guard lk(conn_mu_);
      for (int fd : incoming_fds_) ::shutdown(fd, SHUT_RDWR);
      readers.swap(readers_);
    }
    for (auto& t : readers) t.join();
    {
      std::lock_guard lk(conn_mu_);
      for (int fd : incoming_fds_) ::close(fd);
    }
    std::lock_guard lk(out_mu_);
    for (auto& [r, o] : outgoing_) ::close(o->fd);
  }

 private:
  struct Outgoing {
    int fd = -1;
    std::mutex mu;
  };

  Outgoing& outgoing(Rank dst) {
    std::lock_guard lk(out_mu_);
    auto it = outgoing_.find(dst);
    if (it != outgoing_.end()) return *it->second;
    auto o = std::make_unique<Outgoing>();
    o->fd = connect_to(peers_.at(dst));
    return *outgoing_.emplace(dst, std::move(o)).first->second;
  }

  int connect_to(const PeerAddress& a) {
    const sockaddr_in addr = detail::resolve(a);
    const auto deadline = std::chrono::steady_clock::now() + opts_.connect_timeout;
    for (;;) {
      int fd = ::socket(AF_INET, SOCK_STREAM, 0);
      if (fd < 0) throw TransportError("socket() failed");
      if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) == 0) {
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        return fd;
      }
      ::close(fd);
      if (std::chrono::steady_clock::now() > deadline)
        throw TransportTimeout("cannot connect to " + a.host + ":" + std::to_string(a.port));
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
  }

  void accept_loop() {
    for (;;) {
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR) continue;
        return;  // listener closed
      }
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      std::lock_guard lk(conn_mu_);
      if (shut_) {
        ::close(fd);
        return;
      }
      incoming_fds_.push_back(fd);
      readers_.emplace_back([this, fd] { read_loop(fd); });
    }
  }

  void read_loop(int fd) {
    try {
      std::vector<std::uint8_t> header(kFrameHeaderSize);
      for (;;) {
        if (!detail::read_all(fd, header.data(), header.size())) return;
        std::uint64_t len = 0;
        WireMessage m = decode_header(header, len);
        m.payload.resize(len);
        if (len > 0 && !detail::read_all(fd, m.payload.data(), len))
          throw FrameError("truncated payload");
        {
          std::lock_guard lk(mu_);
          box_.push(std::move(m));
        }
        cv_.notify_all();
      }
    } catch (const std::exception& e) {
      if (shut_) return;
      {
        std::lock_guard lk(mu_);
        reader_error_ = e.what();
      }
      cv_.notify_all();
    }
  }

  Rank rank_;
  TcpOptions opts_;
  PeerTable peers_;
  int listen_fd_ = -1;
  std::uint16_t bound_port_ = 0;
  SendLog* log_ = nullptr;

  std::mutex mu_;
  std::condition_variable cv_;
  Mailbox box_;
  bool closed_ = false;
  std::string reader_error_;

  std::mutex out_mu_;
  std::map<Rank, std::unique_ptr<Outgoing>> outgoing_;
  std::mutex conn_mu_;
  std::vector<int> incoming_fds_;
  std::vector<std::thread> readers_;
  std::thread acceptor_;
  std::atomic<bool> shut_{false};
};

}  // namespace torus
