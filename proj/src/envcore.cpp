#include "marl/envcore.hpp"

#include <cstdio>

namespace marl {

std::string fmt_float(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

TimeStep EnvBase::reset() {
  steps_ = 0;
  episode_open_ = true;
  TimeStep ts;
  ts.step_type = StepType::kFirst;
  ts.rewards.assign(static_cast<size_t>(spec_.num_players), 0.0f);
  ts.discount = 1.0f;
  ts.observations = on_reset();
  return ts;
}

TimeStep EnvBase::step(const std::vector<int>& actions) {
  if (!episode_open_) throw StepAfterEnd();
  if (actions.size() != static_cast<size_t>(spec_.num_players))
    throw BadActionCount(actions.size(), static_cast<size_t>(spec_.num_players));
  for (int a : actions)
    if (a < 0 || a >= spec_.num_actions) throw ActionOutOfRange(a, spec_.num_actions);

  StepResult r = on_step(actions);
  ++steps_;

  TimeStep ts;
  ts.rewards = std::move(r.rewards);
  ts.observations = std::move(r.observations);
  if (r.terminated) {
    ts.step_type = StepType::kLast;
    ts.discount = 0.0f;
    episode_open_ = false;
  } else if (steps_ >= spec_.max_episode_len) {
    // Time limit reached: truncation, not termination, so keep discount 1.
    ts.step_type = StepType::kLast;
    ts.discount = 1.0f;
    episode_open_ = false;
  } else {
    ts.step_type = StepType::kMid;
    ts.discount = 1.0f;
  }
  return ts;
}

}  // namespace marl
