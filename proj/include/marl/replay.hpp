#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "marl/vtrace.hpp"

namespace marl::replay {

struct BadItem : std::runtime_error {
  explicit BadItem(const std::string& what) : std::runtime_error(what) {}
};

struct Closed : std::runtime_error {
  Closed() : std::runtime_error("replay buffer is closed") {}
};

enum class ItemKind { kEpisode, kFixedLength };

struct BufferConfig {
  size_t capacity = 1024;
  size_t sample_batch_size = 1;
  ItemKind item_kind = ItemKind::kEpisode;
};

struct BufferStats {
  uint64_t items_written = 0;
  uint64_t items_sampled = 0;
  uint64_t items_dropped = 0;
  uint64_t current_size = 0;
};

// The write/sample/stats contract shared by the in-process queue and the
// socket-backed remote handle.
class ReplayBuffer {
 public:
  virtual ~ReplayBuffer() = default;
  virtual void write(vtrace::TrajectoryBatch item) = 0;
  virtual std::vector<vtrace::TrajectoryBatch> sample(size_t n) = 0;
  virtual BufferStats stats() = 0;
  virtual void close() = 0;
};

// Bounded FIFO queue of trajectories. Each stored item is handed out at most
// once; when full, the oldest unsampled item is dropped to make room. Safe
// for many concurrent writers and one logical sampler.
class ReplayQueue : public ReplayBuffer {
 public:
  explicit ReplayQueue(BufferConfig config);

  const BufferConfig& config() const { return config_; }

  void write(vtrace::TrajectoryBatch item) override;

  // Blocks until n items are available, then returns them in FIFO order.
  // Throws Closed if the queue shuts down before enough items arrive.
  std::vector<vtrace::TrajectoryBatch> sample(size_t n) override;

  // Returns whatever is available right now, up to n items, never blocking.
  std::vector<vtrace::TrajectoryBatch> sample_up_to(size_t n);

  // Like sample but gives up after the timeout, returning an empty vector.
  // Lets serving threads re-check a stop flag instead of parking forever.
  std::vector<vtrace::TrajectoryBatch> sample_for(
      size_t n, std::chrono::milliseconds timeout);

  BufferStats stats() override;
  void close() override;
  bool is_closed() const;

 private:
  std::vector<vtrace::TrajectoryBatch> pop_n(size_t n);

  const BufferConfig config_;
  mutable std::mutex mu_;
  std::condition_variable available_;
  std::deque<vtrace::TrajectoryBatch> items_;
  BufferStats stats_;
  bool closed_ = false;
};

}  // namespace marl::replay
