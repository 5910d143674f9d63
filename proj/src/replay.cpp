#include "marl/replay.hpp"

#include <algorithm>
#include <utility>

namespace marl::replay {

ReplayQueue::ReplayQueue(BufferConfig config) : config_(config) {
  if (config_.sample_batch_size < 1)
    throw std::invalid_argument("replay sample_batch_size must be >= 1");
  if (config_.capacity < config_.sample_batch_size)
    throw std::invalid_argument("replay capacity must be >= sample_batch_size");
}

void ReplayQueue::write(vtrace::TrajectoryBatch item) {
  try {
    vtrace::validate_item(item);
  } catch (const std::exception& e) {
    throw BadItem(e.what());
  }
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (closed_) throw Closed();
    items_.push_back(std::move(item));
    ++stats_.items_written;
    if (items_.size() > config_.capacity) {
      items_.pop_front();
      ++stats_.items_dropped;
    }
    stats_.current_size = items_.size();
  }
  available_.notify_all();
}

std::vector<vtrace::TrajectoryBatch> ReplayQueue::pop_n(size_t n) {
  std::vector<vtrace::TrajectoryBatch> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    out.push_back(std::move(items_.front()));
    items_.pop_front();
  }
  stats_.items_sampled += n;
  stats_.current_size = items_.size();
  return out;
}

std::vector<vtrace::TrajectoryBatch> ReplayQueue::sample(size_t n) {
  if (n > config_.capacity)
    throw std::invalid_argument("sample size exceeds buffer capacity");
  std::unique_lock<std::mutex> lock(mu_);
  available_.wait(lock, [&] { return items_.size() >= n || closed_; });
  if (items_.size() < n) throw Closed();
  return pop_n(n);
}

std::vector<vtrace::TrajectoryBatch> ReplayQueue::sample_up_to(size_t n) {
  std::lock_guard<std::mutex> lock(mu_);
  return pop_n(std::min(n, items_.size()));
}

std::vector<vtrace::TrajectoryBatch> ReplayQueue::sample_for(
    size_t n, std::chrono::milliseconds timeout) {
  if (n > config_.capacity)
    throw std::invalid_argument("sample size exceeds buffer capacity");
  std::unique_lock<std::mutex> lock(mu_);
  const bool got = available_.wait_for(
      lock, timeout, [&] { return items_.size() >= n || closed_; });
  if (closed_ && items_.size() < n) throw Closed();
  if (!got) return {};
  return pop_n(n);
}

BufferStats ReplayQueue::stats() {
  std::lock_guard<std::mutex> lock(mu_);
  return stats_;
}

void ReplayQueue::close() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    closed_ = true;
  }
  available_.notify_all();
}

bool ReplayQueue::is_closed() const {
  std::lock_guard<std::mutex> lock(mu_);
  return closed_;
}

}  // namespace marl::replay
