#include "marl/inference.hpp"

#include <sys/socket.h>

#include <algorithm>
#include <utility>

namespace marl::runners {

namespace {

constexpr std::chrono::milliseconds kAcceptPoll{100};

}  // namespace

InferenceServer::InferenceServer(std::shared_ptr<ParamStore> store,
                                 int batch_max,
                                 std::chrono::milliseconds flush_timeout,
                                 uint64_t seed)
    : store_(std::move(store)),
      batch_max_(batch_max < 1 ? 1 : static_cast<size_t>(batch_max)),
      flush_timeout_(flush_timeout),
      rng_(static_cast<uint32_t>(seed)) {
  dispatcher_ = std::thread(&InferenceServer::dispatch_loop, this);
}

InferenceServer::~InferenceServer() { stop(); }

InferenceResult InferenceServer::infer(uint32_t agent_id,
                                       const std::vector<float>& observation) {
  std::future<InferenceResult> future;
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (stop_) throw InferenceTimeout("inference server is stopped");
    Pending pending{agent_id, &observation, {}};
    future = pending.promise.get_future();
    queue_.push_back(std::move(pending));
  }
  pending_cv_.notify_all();
  return future.get();
}

void InferenceServer::stop() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (stop_) {
      if (dispatcher_.joinable()) dispatcher_.join();
      return;
    }
    stop_ = true;
  }
  pending_cv_.notify_all();
  if (dispatcher_.joinable()) dispatcher_.join();
}

std::vector<size_t> InferenceServer::batch_sizes() const {
  std::lock_guard<std::mutex> lock(mu_);
  return batch_sizes_;
}

void InferenceServer::dispatch_loop() {
  for (;;) {
    std::vector<Pending> batch;
    {
      std::unique_lock<std::mutex> lock(mu_);
      pending_cv_.wait(lock, [&] { return stop_ || !queue_.empty(); });
      if (stop_) break;
      // The flush window opens with the first pending request.
      const auto deadline = std::chrono::steady_clock::now() + flush_timeout_;
      pending_cv_.wait_until(lock, deadline, [&] {
        return stop_ || queue_.size() >= batch_max_;
      });
      if (stop_) break;
      const size_t n = std::min(queue_.size(), batch_max_);
      batch.reserve(n);
      for (size_t i = 0; i < n; ++i) {
        batch.push_back(std::move(queue_.front()));
        queue_.pop_front();
      }
      batch_sizes_.push_back(n);
    }
    for (auto& pending : batch) {
      try {
        const auto params = store_->get(pending.agent_id);
        const nn::ForwardOut out = nn::forward(*params, *pending.observation);
        const nn::ActionSample sample = nn::sample_action(out.logits, rng_);
        pending.promise.set_value(
            {sample.action, sample.log_prob, out.value, params->version});
      } catch (...) {
        pending.promise.set_exception(std::current_exception());
      }
    }
  }
  std::deque<Pending> leftover;
  {
    std::lock_guard<std::mutex> lock(mu_);
    leftover.swap(queue_);
  }
  for (auto& pending : leftover)
    pending.promise.set_exception(std::make_exception_ptr(
        InferenceTimeout("inference server stopped before answering")));
}

InferenceNetServer::InferenceNetServer(InferenceServer& core,
                                       std::shared_ptr<ParamStore> store,
                                       uint16_t port)
    : core_(core),
      store_(std::move(store)),
      listener_(net::TcpListener::bind_loopback(port)) {
  acceptor_ = std::thread(&InferenceNetServer::accept_loop, this);
}

InferenceNetServer::~InferenceNetServer() { stop(); }

void InferenceNetServer::stop() {
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

void InferenceNetServer::accept_loop() {
  while (!stop_.load()) {
    net::TcpSocket sock = listener_.accept_for(kAcceptPoll);
    if (!sock.valid()) continue;
    std::lock_guard<std::mutex> lock(conn_mu_);
    if (stop_.load()) break;
    live_fds_.push_back(sock.fd());
    handlers_.emplace_back(&InferenceNetServer::serve_connection, this,
                           std::move(sock));
  }
}

void InferenceNetServer::serve_connection(net::TcpSocket sock) {
  auto reply_error = [&](wire::ErrorCode code, const std::string& message) {
    sock.send_frame(wire::MsgType::kError, wire::encode_error(code, message));
    throw net::ConnectionClosed();
  };

  for (;;) {
    net::Frame frame;
    try {
      frame = sock.recv_frame();
    } catch (const wire::ProtocolError& e) {
      try {
        sock.send_frame(
            wire::MsgType::kError,
            wire::encode_error(wire::ErrorCode::kProtocol, e.what()));
      } catch (...) {
      }
      break;
    } catch (...) {
      break;
    }

    try {
      switch (frame.type) {
        case wire::MsgType::kInferReq: {
          wire::InferRequest req;
          try {
            req = wire::decode_infer_request(frame.payload);
          } catch (const wire::ProtocolError& e) {
            reply_error(wire::ErrorCode::kProtocol, e.what());
          }
          InferenceResult result;
          try {
            result = core_.infer(req.agent_id, req.observation);
          } catch (const std::exception& e) {
            reply_error(wire::ErrorCode::kBadRequest, e.what());
          }
          wire::InferResponse resp;
          resp.request_id = req.request_id;
          resp.action = static_cast<uint32_t>(result.action);
          resp.log_prob = result.log_prob;
          resp.value = result.value;
          resp.param_version = result.param_version;
          sock.send_frame(wire::MsgType::kInferResp,
                          wire::encode_infer_response(resp));
          break;
        }
        case wire::MsgType::kGetParamsReq: {
          uint32_t agent_id = 0;
          try {
            agent_id = wire::decode_get_params_request(frame.payload);
          } catch (const wire::ProtocolError& e) {
            reply_error(wire::ErrorCode::kProtocol, e.what());
          }
          std::shared_ptr<const nn::Params> params;
          try {
            params = store_->get(agent_id);
          } catch (const std::exception& e) {
            reply_error(wire::ErrorCode::kBadRequest, e.what());
          }
          sock.send_frame(wire::MsgType::kParamsResp,
                          wire::encode_params_response(*params));
          break;
        }
        default:
          reply_error(wire::ErrorCode::kBadRequest,
                      "message type not supported by the inference service");
      }
    } catch (...) {
      break;
    }
  }
  std::lock_guard<std::mutex> lock(conn_mu_);
  live_fds_.erase(std::remove(live_fds_.begin(), live_fds_.end(), sock.fd()),
                  live_fds_.end());
  sock.close();
}

RemoteInference::RemoteInference(uint16_t port,
                                 std::chrono::milliseconds connect_timeout)
    : sock_(net::TcpSocket::connect_loopback(port, connect_timeout)) {}

void RemoteInference::close() {
  std::lock_guard<std::mutex> lock(mu_);
  sock_.close();
}

InferenceResult RemoteInference::infer(uint32_t agent_id,
                                       const std::vector<float>& observation) {
  std::lock_guard<std::mutex> lock(mu_);
  wire::InferRequest req;
  req.request_id = next_request_id_++;
  req.agent_id = agent_id;
  req.observation = observation;
  sock_.send_frame(wire::MsgType::kInferReq, wire::encode_infer_request(req));
  const net::Frame frame = sock_.recv_frame();
  if (frame.type == wire::MsgType::kError) {
    const auto [code, message] = wire::decode_error(frame.payload);
    throw wire::RemoteError(code, message);
  }
  if (frame.type != wire::MsgType::kInferResp)
    throw wire::ProtocolError("unexpected reply to an inference request");
  const wire::InferResponse resp = wire::decode_infer_response(frame.payload);
  if (resp.request_id != req.request_id)
    throw wire::ProtocolError("inference reply routed to the wrong request");
  return {static_cast<int>(resp.action), resp.log_prob, resp.value,
          resp.param_version};
}

nn::Params RemoteInference::fetch_params(uint32_t agent_id,
                                         const nn::NetSpec& spec) {
  std::lock_guard<std::mutex> lock(mu_);
  sock_.send_frame(wire::MsgType::kGetParamsReq,
                   wire::encode_get_params_request(agent_id));
  const net::Frame frame = sock_.recv_frame();
  if (frame.type == wire::MsgType::kError) {
    const auto [code, message] = wire::decode_error(frame.payload);
    throw wire::RemoteError(code, message);
  }
  if (frame.type != wire::MsgType::kParamsResp)
    throw wire::ProtocolError("unexpected reply to a parameter fetch");
  return wire::decode_params_response(frame.payload, spec);
}

}  // namespace marl::runners
