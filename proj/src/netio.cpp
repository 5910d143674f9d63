#include "marl/netio.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <utility>

namespace marl::net {

namespace {

std::string errno_text(const char* op) {
  return std::string(op) + ": " + std::strerror(errno);
}

sockaddr_in loopback_addr(uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  return addr;
}

}  // namespace

TcpSocket::TcpSocket(TcpSocket&& other) noexcept
    : fd_(std::exchange(other.fd_, -1)) {}

TcpSocket& TcpSocket::operator=(TcpSocket&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = std::exchange(other.fd_, -1);
  }
  return *this;
}

TcpSocket::~TcpSocket() { close(); }

void TcpSocket::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void TcpSocket::shutdown_both() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

TcpSocket TcpSocket::connect_loopback(uint16_t port,
                                      std::chrono::milliseconds timeout) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw SocketError(errno_text("socket"));
  TcpSocket sock(fd);

  const timeval tv{static_cast<time_t>(timeout.count() / 1000),
                   static_cast<suseconds_t>((timeout.count() % 1000) * 1000)};
  if (timeout.count() > 0) {
    ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
    ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  }

  const sockaddr_in addr = loopback_addr(port);
  if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) !=
      0) {
    if (errno == ECONNREFUSED)
      throw ConnectionRefused("connection refused on port " +
                              std::to_string(port));
    if (errno == EINPROGRESS || errno == EWOULDBLOCK || errno == EAGAIN ||
        errno == ETIMEDOUT)
      throw Timeout("connect timed out on port " + std::to_string(port));
    throw SocketError(errno_text("connect"));
  }

  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  // Leave recv unbounded by default; callers opt in to timeouts.
  const timeval zero{0, 0};
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &zero, sizeof zero);
  return sock;
}

void TcpSocket::set_recv_timeout(std::chrono::milliseconds timeout) {
  const timeval tv{static_cast<time_t>(timeout.count() / 1000),
                   static_cast<suseconds_t>((timeout.count() % 1000) * 1000)};
  ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
}

void TcpSocket::write_all(const uint8_t* data, size_t len) {
  size_t sent = 0;
  while (sent < len) {
    const ssize_t n = ::send(fd_, data + sent, len - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == EPIPE || errno == ECONNRESET) throw ConnectionClosed();
      if (errno == EAGAIN || errno == EWOULDBLOCK)
        throw Timeout("send timed out");
      throw SocketError(errno_text("send"));
    }
    sent += static_cast<size_t>(n);
  }
}

void TcpSocket::read_exact(uint8_t* out, size_t len) {
  size_t got = 0;
  while (got < len) {
    const ssize_t n = ::recv(fd_, out + got, len - got, 0);
    if (n == 0) throw ConnectionClosed();
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK)
        throw Timeout("recv timed out");
      if (errno == ECONNRESET) throw ConnectionClosed();
      throw SocketError(errno_text("recv"));
    }
    got += static_cast<size_t>(n);
  }
}

void TcpSocket::send_frame(wire::MsgType type,
                           const std::vector<uint8_t>& payload) {
  const std::vector<uint8_t> frame = wire::pack_frame(type, payload);
  write_all(frame.data(), frame.size());
}

Frame TcpSocket::recv_frame() {
  uint8_t header[wire::kHeaderSize];
  read_exact(header, wire::kHeaderSize);
  const wire::FrameHeader h = wire::parse_header(header);
  Frame frame;
  frame.type = h.type;
  frame.payload.resize(h.payload_len);
  if (h.payload_len > 0) read_exact(frame.payload.data(), h.payload_len);
  return frame;
}

TcpListener::TcpListener(TcpListener&& other) noexcept
    : fd_(std::exchange(other.fd_, -1)), port_(std::exchange(other.port_, 0)) {}

TcpListener& TcpListener::operator=(TcpListener&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = std::exchange(other.fd_, -1);
    port_ = std::exchange(other.port_, 0);
  }
  return *this;
}

TcpListener::~TcpListener() { close(); }

void TcpListener::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

TcpListener TcpListener::bind_loopback(uint16_t port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw SocketError(errno_text("socket"));
  TcpListener listener;
  listener.fd_ = fd;

  const int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr = loopback_addr(port);
  if (::bind(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0)
    throw SocketError(errno_text("bind"));
  if (::listen(fd, 64) != 0) throw SocketError(errno_text("listen"));

  socklen_t len = sizeof addr;
  if (::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) != 0)
    throw SocketError(errno_text("getsockname"));
  listener.port_ = ntohs(addr.sin_port);
  return listener;
}

TcpSocket TcpListener::accept_for(std::chrono::milliseconds timeout) {
  if (fd_ < 0) return TcpSocket();
  pollfd pfd{fd_, POLLIN, 0};
  const int ready = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
  if (ready <= 0) return TcpSocket();
  const int conn = ::accept(fd_, nullptr, nullptr);
  if (conn < 0) return TcpSocket();
  const int one = 1;
  ::setsockopt(conn, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return TcpSocket(conn);
}

}  // namespace marl::net
