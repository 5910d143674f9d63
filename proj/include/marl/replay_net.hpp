#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#include "marl/netio.hpp"
#include "marl/replay.hpp"
#include "marl/wire.hpp"

namespace marl::replay {

using net::ConnectionRefused;
using net::Timeout;

// Serves a ReplayQueue over TCP on 127.0.0.1 with the framed protocol. Each
// client connection gets its own handler thread; frames on one connection
// are processed in arrival order. A malformed frame earns the client an
// error reply and costs it only its own connection.
class ReplayServer {
 public:
  explicit ReplayServer(std::shared_ptr<ReplayQueue> queue, uint16_t port = 0);
  ~ReplayServer();
  ReplayServer(const ReplayServer&) = delete;
  ReplayServer& operator=(const ReplayServer&) = delete;

  uint16_t port() const { return listener_.port(); }
  // Stops accepting, wakes blocked handlers and joins them. Leaves the queue
  // itself to its owner.
  void stop();

 private:
  void accept_loop();
  void serve_connection(net::TcpSocket sock);
  void handle_frame(net::TcpSocket& sock, const net::Frame& frame);

  std::shared_ptr<ReplayQueue> queue_;
  net::TcpListener listener_;
  std::atomic<bool> stop_{false};
  std::thread acceptor_;
  std::mutex conn_mu_;
  std::vector<std::thread> handlers_;
  std::vector<int> live_fds_;
};

// Client-side handle speaking the framed protocol to a ReplayServer. Meets
// the same write/sample/stats contracts as the in-process queue. One
// synchronous request at a time; calls are serialized internally.
class RemoteReplay : public ReplayBuffer {
 public:
  explicit RemoteReplay(
      uint16_t port,
      std::chrono::milliseconds connect_timeout = std::chrono::seconds(5));
  ~RemoteReplay() = default;

  void write(vtrace::TrajectoryBatch item) override;
  std::vector<vtrace::TrajectoryBatch> sample(size_t n) override;
  BufferStats stats() override;
  // Closes this client's connection; the server-side queue is unaffected.
  void close() override;

 private:
  net::Frame request(wire::MsgType type, const std::vector<uint8_t>& payload);
  [[noreturn]] static void rethrow_remote(const net::Frame& frame);

  std::mutex mu_;
  net::TcpSocket sock_;
};

}  // namespace marl::replay
