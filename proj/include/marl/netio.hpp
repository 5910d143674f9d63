#pragma once

#include <chrono>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "marl/wire.hpp"

namespace marl::net {

struct ConnectionRefused : std::runtime_error {
  explicit ConnectionRefused(const std::string& what)
      : std::runtime_error(what) {}
};

struct ConnectionClosed : std::runtime_error {
  ConnectionClosed() : std::runtime_error("connection closed by peer") {}
};

struct Timeout : std::runtime_error {
  explicit Timeout(const std::string& what) : std::runtime_error(what) {}
};

struct SocketError : std::runtime_error {
  explicit SocketError(const std::string& what) : std::runtime_error(what) {}
};

struct Frame {
  wire::MsgType type;
  std::vector<uint8_t> payload;
};

// RAII TCP stream socket over the framed protocol.
class TcpSocket {
 public:
  TcpSocket() = default;
  explicit TcpSocket(int fd) : fd_(fd) {}
  TcpSocket(TcpSocket&& other) noexcept;
  TcpSocket& operator=(TcpSocket&& other) noexcept;
  TcpSocket(const TcpSocket&) = delete;
  TcpSocket& operator=(const TcpSocket&) = delete;
  ~TcpSocket();

  static TcpSocket connect_loopback(uint16_t port,
                                    std::chrono::milliseconds timeout);

  bool valid() const { return fd_ >= 0; }
  int fd() const { return fd_; }
  void close();
  // Wakes any thread blocked in recv on this socket; the socket stays open
  // until close().
  void shutdown_both();

  // Bounds every subsequent blocking recv; zero disables the bound.
  void set_recv_timeout(std::chrono::milliseconds timeout);

  void send_frame(wire::MsgType type, const std::vector<uint8_t>& payload);
  // Blocks for a full frame. Throws ConnectionClosed on clean EOF, Timeout
  // when a recv timeout is set and expires, wire::ProtocolError on a bad
  // header.
  Frame recv_frame();

 private:
  void read_exact(uint8_t* out, size_t len);
  void write_all(const uint8_t* data, size_t len);
  int fd_ = -1;
};

// Listening socket bound to 127.0.0.1.
class TcpListener {
 public:
  TcpListener() = default;
  TcpListener(TcpListener&& other) noexcept;
  TcpListener& operator=(TcpListener&& other) noexcept;
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;
  ~TcpListener();

  // port 0 picks a free ephemeral port.
  static TcpListener bind_loopback(uint16_t port);

  bool valid() const { return fd_ >= 0; }
  uint16_t port() const { return port_; }
  void close();

  // Waits up to the timeout for one connection; an invalid socket means the
  // wait timed out or the listener is closed.
  TcpSocket accept_for(std::chrono::milliseconds timeout);

 private:
  int fd_ = -1;
  uint16_t port_ = 0;
};

}  // namespace marl::net
