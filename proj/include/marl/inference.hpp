#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <future>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <vector>

#include "marl/netio.hpp"
#include "marl/nn.hpp"
#include "marl/runners.hpp"
#include "marl/wire.hpp"

namespace marl::runners {

struct InferenceTimeout : std::runtime_error {
  explicit InferenceTimeout(const std::string& what)
      : std::runtime_error(what) {}
};

struct InferenceResult {
  int action = 0;
  float log_prob = 0.0f;
  float value = 0.0f;
  uint64_t param_version = 0;
};

// Batched action selection for parameter-less actors. Requests queue up
// until the batch is full or the flush timeout expires since the first
// pending request, whichever comes first; each request is answered with the
// freshest parameters in the store at processing time.
class InferenceServer {
 public:
  InferenceServer(std::shared_ptr<ParamStore> store, int batch_max,
                  std::chrono::milliseconds flush_timeout, uint64_t seed);
  ~InferenceServer();
  InferenceServer(const InferenceServer&) = delete;
  InferenceServer& operator=(const InferenceServer&) = delete;

  // Blocks until the dispatcher answers. Exceptions raised while serving
  // (unknown agent, shape mismatch) surface here.
  InferenceResult infer(uint32_t agent_id,
                        const std::vector<float>& observation);

  // Fails pending requests and joins the dispatcher.
  void stop();

  // Sizes of every batch processed so far, in order.
  std::vector<size_t> batch_sizes() const;

 private:
  struct Pending {
    uint32_t agent_id;
    const std::vector<float>* observation;
    std::promise<InferenceResult> promise;
  };

  void dispatch_loop();

  std::shared_ptr<ParamStore> store_;
  const size_t batch_max_;
  const std::chrono::milliseconds flush_timeout_;
  std::mt19937 rng_;

  mutable std::mutex mu_;
  std::condition_variable pending_cv_;
  std::deque<Pending> queue_;
  std::vector<size_t> batch_sizes_;
  bool stop_ = false;
  std::thread dispatcher_;
};

// TCP front-end exposing an InferenceServer plus parameter fetches over the
// framed protocol. One handler thread per connection; requests on a
// connection are answered in order with matching request ids.
class InferenceNetServer {
 public:
  InferenceNetServer(InferenceServer& core, std::shared_ptr<ParamStore> store,
                     uint16_t port = 0);
  ~InferenceNetServer();
  InferenceNetServer(const InferenceNetServer&) = delete;
  InferenceNetServer& operator=(const InferenceNetServer&) = delete;

  uint16_t port() const { return listener_.port(); }
  void stop();

 private:
  void accept_loop();
  void serve_connection(net::TcpSocket sock);

  InferenceServer& core_;
  std::shared_ptr<ParamStore> store_;
  net::TcpListener listener_;
  std::atomic<bool> stop_{false};
  std::thread acceptor_;
  std::mutex conn_mu_;
  std::vector<std::thread> handlers_;
  std::vector<int> live_fds_;
};

// Client for the TCP front-end. Synchronous; calls are serialized.
class RemoteInference {
 public:
  explicit RemoteInference(
      uint16_t port,
      std::chrono::milliseconds connect_timeout = std::chrono::seconds(5));

  InferenceResult infer(uint32_t agent_id,
                        const std::vector<float>& observation);
  nn::Params fetch_params(uint32_t agent_id, const nn::NetSpec& spec);
  void close();

 private:
  std::mutex mu_;
  net::TcpSocket sock_;
  uint32_t next_request_id_ = 1;
};

}  // namespace marl::runners
