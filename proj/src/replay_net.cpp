#include "marl/replay_net.hpp"

#include <sys/socket.h>

#include <algorithm>
#include <utility>

namespace marl::replay {

namespace {

constexpr std::chrono::milliseconds kAcceptPoll{100};
constexpr std::chrono::milliseconds kSamplePoll{50};

}  // namespace

ReplayServer::ReplayServer(std::shared_ptr<ReplayQueue> queue, uint16_t port)
    : queue_(std::move(queue)),
      listener_(net::TcpListener::bind_loopback(port)) {
  acceptor_ = std::thread(&ReplayServer::accept_loop, this);
}

ReplayServer::~ReplayServer() { stop(); }

void ReplayServer::stop() {
  if (stop_.exchange(true)) {
    if (acceptor_.joinable()) acceptor_.join();
    return;
  }
  if (acceptor_.joinable()) acceptor_.join();
  std::vector<std::thread> handlers;
  {
    std::lock_guard<std::mutex> lock(conn_mu_);
    for (int fd : live_fds_) ::shutdown(fd, SHUT_RDWR);
    handlers = std::move(handlers_);
  }
  for (auto& t : handlers)
    if (t.joinable()) t.join();
  listener_.close();
}

void ReplayServer::accept_loop() {
  while (!stop_.load()) {
    net::TcpSocket sock = listener_.accept_for(kAcceptPoll);
    if (!sock.valid()) continue;
    std::lock_guard<std::mutex> lock(conn_mu_);
    if (stop_.load()) break;  // refuse late arrivals during shutdown
    live_fds_.push_back(sock.fd());
    handlers_.emplace_back(&ReplayServer::serve_connection, this,
                           std::move(sock));
  }
}

void ReplayServer::serve_connection(net::TcpSocket sock) {
  for (;;) {
    net::Frame frame;
    try {
      frame = sock.recv_frame();
    } catch (const wire::ProtocolError& e) {
      try {
        sock.send_frame(wire::MsgType::kError,
                        wire::encode_error(wire::ErrorCode::kProtocol,
                                           e.what()));
      } catch (...) {
      }
      break;
    } catch (...) {
      break;  // peer went away or the server is stopping
    }

    try {
      handle_frame(sock, frame);
    } catch (...) {
      break;  // reply failed or the connection is unusable; drop it
    }
  }
  std::lock_guard<std::mutex> lock(conn_mu_);
  live_fds_.erase(std::remove(live_fds_.begin(), live_fds_.end(), sock.fd()),
                  live_fds_.end());
  sock.close();
}

void ReplayServer::handle_frame(net::TcpSocket& sock,
                                const net::Frame& frame) {
  auto reply_error = [&](wire::ErrorCode code, const std::string& message) {
    sock.send_frame(wire::MsgType::kError, wire::encode_error(code, message));
    throw net::ConnectionClosed();  // unwind; caller drops the connection
  };

  switch (frame.type) {
    case wire::MsgType::kWrite: {
      vtrace::TrajectoryBatch item;
      try {
        wire::Reader r(frame.payload);
        item = wire::decode_item(r);
        r.expect_end();
      } catch (const wire::ProtocolError& e) {
        reply_error(wire::ErrorCode::kProtocol, e.what());
      }
      try {
        queue_->write(std::move(item));
      } catch (const BadItem& e) {
        reply_error(wire::ErrorCode::kBadItem, e.what());
      } catch (const Closed&) {
        reply_error(wire::ErrorCode::kClosed, "replay buffer is closed");
      }
      return;  // successful writes are not acknowledged
    }
    case wire::MsgType::kSampleReq: {
      uint32_t n = 0;
      try {
        wire::Reader r(frame.payload);
        n = r.get_u32();
        r.expect_end();
      } catch (const wire::ProtocolError& e) {
        reply_error(wire::ErrorCode::kProtocol, e.what());
      }
      if (n == 0) {
        sock.send_frame(wire::MsgType::kSampleResp, {});
        return;
      }
      for (;;) {
        if (stop_.load())
          reply_error(wire::ErrorCode::kClosed, "replay service stopping");
        std::vector<vtrace::TrajectoryBatch> items;
        try {
          items = queue_->sample_for(n, kSamplePoll);
        } catch (const Closed&) {
          reply_error(wire::ErrorCode::kClosed, "replay buffer is closed");
        } catch (const std::invalid_argument& e) {
          reply_error(wire::ErrorCode::kBadRequest, e.what());
        }
        if (!items.empty()) {
          sock.send_frame(wire::MsgType::kSampleResp,
                          wire::encode_items(items));
          return;
        }
      }
    }
    case wire::MsgType::kStatsReq: {
      sock.send_frame(wire::MsgType::kStatsResp,
                      wire::encode_stats(queue_->stats()));
      return;
    }
    default:
      reply_error(wire::ErrorCode::kBadRequest,
                  "message type not supported by the replay service");
  }
}

RemoteReplay::RemoteReplay(uint16_t port,
                           std::chrono::milliseconds connect_timeout)
    : sock_(net::TcpSocket::connect_loopback(port, connect_timeout)) {}

void RemoteReplay::close() {
  std::lock_guard<std::mutex> lock(mu_);
  sock_.close();
}

void RemoteReplay::rethrow_remote(const net::Frame& frame) {
  const auto [code, message] = wire::decode_error(frame.payload);
  switch (code) {
    case wire::ErrorCode::kBadItem:
      throw BadItem(message);
    case wire::ErrorCode::kClosed:
      throw Closed();
    case wire::ErrorCode::kProtocol:
      throw wire::ProtocolError(message);
    case wire::ErrorCode::kBadRequest:
      throw std::invalid_argument(message);
  }
  throw wire::RemoteError(code, message);
}

net::Frame RemoteReplay::request(wire::MsgType type,
                                 const std::vector<uint8_t>& payload) {
  sock_.send_frame(type, payload);
  net::Frame frame = sock_.recv_frame();
  if (frame.type == wire::MsgType::kError) rethrow_remote(frame);
  return frame;
}

void RemoteReplay::write(vtrace::TrajectoryBatch item) {
  try {
    vtrace::validate_item(item);
  } catch (const std::exception& e) {
    throw BadItem(e.what());
  }
  wire::Writer w;
  wire::encode_item(w, item);
  std::lock_guard<std::mutex> lock(mu_);
  sock_.send_frame(wire::MsgType::kWrite, w.take());
}

std::vector<vtrace::TrajectoryBatch> RemoteReplay::sample(size_t n) {
  wire::Writer w;
  w.put_u32(static_cast<uint32_t>(n));
  std::lock_guard<std::mutex> lock(mu_);
  const net::Frame frame = request(wire::MsgType::kSampleReq, w.take());
  if (frame.type != wire::MsgType::kSampleResp)
    throw wire::ProtocolError("unexpected reply to a sample request");
  std::vector<vtrace::TrajectoryBatch> items =
      wire::decode_items(frame.payload);
  if (items.size() != n)
    throw wire::ProtocolError("sample reply item count mismatch");
  return items;
}

BufferStats RemoteReplay::stats() {
  std::lock_guard<std::mutex> lock(mu_);
  const net::Frame frame = request(wire::MsgType::kStatsReq, {});
  if (frame.type != wire::MsgType::kStatsResp)
    throw wire::ProtocolError("unexpected reply to a stats request");
  return wire::decode_stats(frame.payload);
}

}  // namespace marl::replay
