#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "marl/nn.hpp"

namespace marl::vtrace {

struct NonFiniteInput : std::runtime_error {
  explicit NonFiniteInput(const std::string& what) : std::runtime_error(what) {}
};

struct VTraceConfig {
  float gamma = 0.99f;
  float rho_bar = 1.0f;   // clip for the TD / advantage weight
  float c_bar = 1.0f;     // clip for the trace-propagation weight, <= rho_bar
  float value_coef = 0.5f;
  float entropy_coef = 0.01f;
};

// One stored learning item: a fixed-length unroll or a full episode for one
// agent, plus the observation after the last transition for bootstrapping.
// behavior_log_probs are recorded at action-sampling time so importance
// ratios stay correct under parameter staleness.
struct TrajectoryBatch {
  uint32_t agent_id = 0;
  int obs_dim = 0;
  int num_actions = 0;
  std::vector<std::vector<float>> observations;  // T x obs_dim
  std::vector<int> actions;                      // T
  std::vector<float> rewards;                    // T
  std::vector<float> discounts;                  // T, each 0 or 1
  std::vector<float> behavior_log_probs;         // T
  std::vector<float> bootstrap_obs;              // obs_dim

  // Where the behavior policy came from; carried for diagnostics and
  // offline recomputation, not serialized on the wire.
  uint64_t behavior_param_version = 0;

  size_t length() const { return actions.size(); }
};

void validate_item(const TrajectoryBatch& item);

struct VTraceOut {
  std::vector<double> vs;      // corrected value targets, length T
  std::vector<double> pg_adv;  // policy-gradient advantages, length T
};

// Clipped importance-weighted targets. rhos[t] is the raw ratio pi/mu at
// step t; values has length T+1 (the last entry is the bootstrap value).
// With rho_t = min(rho_bar, rhos[t]), c_t = min(c_bar, rhos[t]) and
//   delta_t = rho_t * (r_t + gamma * d_t * V_{t+1} - V_t),
// the targets follow the backward recursion
//   v_T = V_T;  v_t = V_t + delta_t + gamma * d_t * c_t * (v_{t+1} - V_{t+1})
// and the advantages are pg_adv_t = rho_t * (r_t + gamma * d_t * v_{t+1} - V_t).
VTraceOut vtrace_targets(const std::vector<double>& rhos,
                         const std::vector<float>& rewards,
                         const std::vector<float>& discounts,
                         const std::vector<double>& values,
                         const VTraceConfig& cfg);

struct LossMetrics {
  double total = 0.0;
  double policy = 0.0;        // -mean log pi(a) * adv
  double value = 0.0;         // value_coef * mean (target - V)^2
  double mean_entropy = 0.0;  // mean policy entropy (unweighted)
  double mean_rho = 0.0;      // mean clipped importance weight
  size_t steps = 0;
};

struct LossOut {
  LossMetrics metrics;
  nn::Tensors grads;
};

// Total loss over every step of every item, mean-reduced:
//   -mean[log pi(a_t) * stop(adv_t)] + value_coef * mean[(stop(v_t) - V_t)^2]
//   - entropy_coef * mean[H(pi_t)]
// stop() marks targets held constant; gradients flow only through the log
// probability, the value prediction, and the entropy.
LossOut actor_critic_grad(const nn::Params& params,
                          const std::vector<TrajectoryBatch>& items,
                          const VTraceConfig& cfg);

// Learner-side state for one population.
struct AgentLearner {
  nn::Params params;
  nn::OptState opt;
};

struct AgentLogs {
  bool updated = false;
  LossMetrics metrics;
};

// Groups items by agent_id and applies one Adam update per agent that has
// data in the batch. Agent updates are mutually independent.
std::vector<AgentLogs> sgd_step(std::vector<AgentLearner>& population,
                                const std::vector<TrajectoryBatch>& batch,
                                const VTraceConfig& cfg, float lr);

}  // namespace marl::vtrace
