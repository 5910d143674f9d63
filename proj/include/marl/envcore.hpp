#pragma once

#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "marl/common.hpp"

namespace marl {

enum class StepType { kFirst, kMid, kLast };

// One environment tick for all players at once. `rewards[i]` and
// `observations[i]` belong to player i; `discount` is shared across players
// and is 0 only on a LAST step that ended by termination (a truncated
// episode keeps discount 1 so the value function may bootstrap).
struct TimeStep {
  StepType step_type = StepType::kFirst;
  std::vector<float> rewards;
  float discount = 1.0f;
  std::vector<std::vector<float>> observations;

  bool first() const { return step_type == StepType::kFirst; }
  bool mid() const { return step_type == StepType::kMid; }
  bool last() const { return step_type == StepType::kLast; }
};

// Static description of an environment. Players are homogeneous: one
// obs_dim and one action count for everyone.
struct EnvSpec {
  int num_players = 0;
  int obs_dim = 0;
  int num_actions = 0;
  int max_episode_len = 0;
};

struct EnvError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StepAfterEnd : EnvError {
  StepAfterEnd() : EnvError("step() called after LAST without reset()") {}
};
struct BadActionCount : EnvError {
  BadActionCount(size_t got, size_t want)
      : EnvError("expected " + std::to_string(want) + " actions, got " +
                 std::to_string(got)) {}
};
struct ActionOutOfRange : EnvError {
  ActionOutOfRange(int action, int num_actions)
      : EnvError("action " + std::to_string(action) + " outside [0, " +
                 std::to_string(num_actions) + ")") {}
};

class Environment {
 public:
  virtual ~Environment() = default;
  virtual const EnvSpec& spec() const = 0;
  virtual TimeStep reset() = 0;
  virtual TimeStep step(const std::vector<int>& actions) = 0;
};

// Base class that owns the episode lifecycle contract: FIRST MID* LAST,
// input validation, the step counter and the truncation rule. Substrates
// implement on_reset/on_step only.
class EnvBase : public Environment {
 public:
  EnvBase(EnvSpec spec, uint64_t seed) : spec_(spec), rng_(static_cast<uint32_t>(seed)) {}

  const EnvSpec& spec() const final { return spec_; }

  TimeStep reset() final;
  TimeStep step(const std::vector<int>& actions) final;

 protected:
  struct StepResult {
    std::vector<float> rewards;
    std::vector<std::vector<float>> observations;
    bool terminated = false;
  };

  virtual std::vector<std::vector<float>> on_reset() = 0;
  virtual StepResult on_step(const std::vector<int>& actions) = 0;

  std::mt19937& rng() { return rng_; }

 private:
  EnvSpec spec_;
  std::mt19937 rng_;
  int steps_ = 0;
  bool episode_open_ = false;
};

}  // namespace marl
