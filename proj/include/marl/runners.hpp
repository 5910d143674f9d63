#pragma once

#include <cstdint>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "marl/nn.hpp"
#include "marl/replay.hpp"
#include "marl/vtrace.hpp"

namespace marl::runners {

struct UnknownAgent : std::runtime_error {
  explicit UnknownAgent(uint32_t agent_id)
      : std::runtime_error("unknown agent id " + std::to_string(agent_id)) {}
};

enum class Architecture { kSingle, kSync, kAsync, kSebulba };

std::string architecture_name(Architecture arch);
// Throws std::invalid_argument for anything else.
Architecture parse_architecture(const std::string& name);

struct RunConfig {
  Architecture architecture = Architecture::kSingle;
  std::string env_name;  // substrate or scenario name
  int population_size = 1;
  int num_workers = 1;
  uint64_t max_steps = 0;
  int unroll_length = 20;
  uint64_t seed = 1;
  float learning_rate = 1e-3f;
  vtrace::VTraceConfig vtrace;
  int hidden_dim = 64;
  // Actors refresh their parameter snapshots at every episode boundary; a
  // positive value additionally refreshes every this many env steps.
  int param_sync_interval = 0;
  int inference_batch_max = 8;
  int inference_flush_timeout_ms = 2;
  size_t replay_capacity = 1024;
  std::string out_dir;  // empty: keep results in memory only
};

// Throws std::invalid_argument naming the violated rule.
void validate_config(const RunConfig& config);

struct RunReport {
  uint64_t env_steps = 0;
  uint64_t episodes = 0;
  uint64_t learner_steps = 0;
  // Chronological mean focal return of each completed episode.
  std::vector<double> episode_returns;
  std::vector<nn::Params> final_params;  // one per agent
  replay::BufferStats replay_stats;      // async and sebulba only
  std::vector<size_t> inference_batch_sizes;  // sebulba only
  double wall_seconds = 0.0;
  std::string metrics_path;
  std::string checkpoint_path;
};

// Latest published parameters per agent. Readers always get a complete
// immutable snapshot; versions never go backwards. The learner is the only
// writer.
class ParamStore {
 public:
  explicit ParamStore(std::vector<nn::Params> initial);

  size_t population() const { return latest_.size(); }
  void put(uint32_t agent_id, const nn::Params& params);
  std::shared_ptr<const nn::Params> get(uint32_t agent_id) const;

 private:
  mutable std::mutex mu_;
  std::vector<std::shared_ptr<const nn::Params>> latest_;
};

// Serialized CSV writer for training metrics. Columns are fixed; fields that
// do not apply to a row stay empty.
class MetricsWriter {
 public:
  static constexpr const char* kHeader =
      "step,wall_ms,agent_id,episode_return,policy_loss,value_loss,entropy,"
      "mean_rho,buffer_size";

  // An empty path disables output entirely.
  explicit MetricsWriter(const std::string& path);

  void learner_row(uint64_t step, std::optional<int64_t> wall_ms,
                   uint32_t agent_id, const vtrace::LossMetrics& metrics,
                   std::optional<uint64_t> buffer_size);
  void episode_row(uint64_t step, std::optional<int64_t> wall_ms,
                   uint32_t agent_id, double episode_return);
  void flush();

 private:
  std::mutex mu_;
  std::ofstream out_;
  bool enabled_ = false;
};

RunReport run_single(const RunConfig& config);
RunReport run_sync(const RunConfig& config);
RunReport run_async(const RunConfig& config);
RunReport run_sebulba(const RunConfig& config);

// Dispatches on config.architecture.
RunReport run(const RunConfig& config);

}  // namespace marl::runners
