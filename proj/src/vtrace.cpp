#include "marl/vtrace.hpp"

#include <algorithm>
#include <cmath>

#include "marl/common.hpp"

namespace marl::vtrace {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw NonFiniteInput(what);
}

template <typename T>
bool all_finite(const std::vector<T>& v) {
  for (T x : v)
    if (!std::isfinite(static_cast<double>(x))) return false;
  return true;
}

}  // namespace

void validate_item(const TrajectoryBatch& item) {
  const size_t t = item.length();
  require(t > 0, "empty trajectory");
  require(item.observations.size() == t && item.rewards.size() == t &&
              item.discounts.size() == t && item.behavior_log_probs.size() == t,
          "trajectory arrays disagree on length");
  require(all_finite(item.rewards) && all_finite(item.behavior_log_probs),
          "non-finite trajectory data");
  for (float d : item.discounts)
    require(d == 0.0f || d == 1.0f, "discount outside {0,1}");
  for (const auto& obs : item.observations)
    require(static_cast<int>(obs.size()) == item.obs_dim && all_finite(obs),
            "bad observation in trajectory");
  require(static_cast<int>(item.bootstrap_obs.size()) == item.obs_dim &&
              all_finite(item.bootstrap_obs),
          "bad bootstrap observation");
  for (int a : item.actions)
    require(a >= 0 && a < item.num_actions, "action out of range in trajectory");
}

VTraceOut vtrace_targets(const std::vector<double>& rhos,
                         const std::vector<float>& rewards,
                         const std::vector<float>& discounts,
                         const std::vector<double>& values,
                         const VTraceConfig& cfg) {
  const size_t t_len = rhos.size();
  require(rewards.size() == t_len && discounts.size() == t_len,
          "vtrace inputs disagree on length");
  require(values.size() == t_len + 1, "values must include the bootstrap entry");
  require(all_finite(rhos) && all_finite(rewards) && all_finite(values),
          "non-finite vtrace input");

  const double gamma = cfg.gamma;
  VTraceOut out;
  out.vs.assign(t_len, 0.0);
  out.pg_adv.assign(t_len, 0.0);

  // Backward pass: carry v_{t+1} - V_{t+1}, starting from v_T = V_T.
  double next_diff = 0.0;
  for (size_t i = t_len; i-- > 0;) {
    const double rho = std::min(static_cast<double>(cfg.rho_bar), rhos[i]);
    const double c = std::min(static_cast<double>(cfg.c_bar), rhos[i]);
    const double gd = gamma * discounts[i];
    const double delta = rho * (rewards[i] + gd * values[i + 1] - values[i]);
    const double diff = delta + gd * c * next_diff;
    out.vs[i] = values[i] + diff;
    next_diff = diff;
  }
  for (size_t i = 0; i < t_len; ++i) {
    const double rho = std::min(static_cast<double>(cfg.rho_bar), rhos[i]);
    const double gd = gamma * discounts[i];
    const double v_next = (i + 1 < t_len) ? out.vs[i + 1] : values[t_len];
    out.pg_adv[i] = rho * (rewards[i] + gd * v_next - values[i]);
  }
  return out;
}

LossOut actor_critic_grad(const nn::Params& params,
                          const std::vector<TrajectoryBatch>& items,
                          const VTraceConfig& cfg) {
  require(!items.empty(), "empty batch");
  const int num_actions = params.spec.num_actions;

  // First pass: forward every step (plus bootstrap) to build the targets,
  // which the loss then treats as constants.
  struct StepTarget {
    const std::vector<float>* obs;
    int action;
    double pg_adv;
    double v_target;
    double rho;
  };
  std::vector<StepTarget> steps;
  for (const TrajectoryBatch& item : items) {
    validate_item(item);
    require(item.num_actions == num_actions &&
                item.obs_dim == params.spec.obs_dim,
            "trajectory shape does not match the network");
    const size_t t_len = item.length();

    std::vector<double> rhos(t_len);
    std::vector<double> values(t_len + 1);
    for (size_t t = 0; t < t_len; ++t) {
      nn::ForwardOut f = nn::forward(params, item.observations[t]);
      values[t] = f.value;
      const double target_lp =
          nn::log_softmax(f.logits)[static_cast<size_t>(item.actions[t])];
      rhos[t] = std::exp(target_lp -
                         static_cast<double>(item.behavior_log_probs[t]));
    }
    values[t_len] = nn::forward(params, item.bootstrap_obs).value;

    VTraceOut vt = vtrace_targets(rhos, item.rewards, item.discounts, values, cfg);
    for (size_t t = 0; t < t_len; ++t) {
      steps.push_back(StepTarget{&item.observations[t], item.actions[t],
                                 vt.pg_adv[t], vt.vs[t],
                                 std::min(static_cast<double>(cfg.rho_bar),
                                          rhos[t])});
    }
  }

  // Second pass: one mean-reduced backprop over the concatenated steps.
  std::vector<std::vector<float>> obs_batch;
  obs_batch.reserve(steps.size());
  for (const StepTarget& s : steps) obs_batch.push_back(*s.obs);

  LossMetrics metrics;
  metrics.steps = steps.size();
  double policy_sum = 0.0, value_sum = 0.0, entropy_sum = 0.0, rho_sum = 0.0;

  nn::GradOut g = nn::grad(
      params, obs_batch,
      [&](size_t t, const std::vector<float>& logits, float value) {
        const StepTarget& st = steps[t];
        const std::vector<double> probs = nn::softmax(logits);
        const std::vector<double> logp = nn::log_softmax(logits);
        const double h = nn::entropy(probs);
        const size_t a = static_cast<size_t>(st.action);

        const double policy_loss = -logp[a] * st.pg_adv;
        const double verr = st.v_target - static_cast<double>(value);
        const double value_loss =
            static_cast<double>(cfg.value_coef) * verr * verr;
        const double entropy_loss = -static_cast<double>(cfg.entropy_coef) * h;

        policy_sum += policy_loss;
        value_sum += value_loss;
        entropy_sum += h;
        rho_sum += st.rho;

        nn::StepGrad sg;
        sg.loss = policy_loss + value_loss + entropy_loss;
        sg.dlogits.assign(probs.size(), 0.0);
        for (size_t i = 0; i < probs.size(); ++i) {
          // policy term: adv * (p_i - [i == a]); entropy term (of -coef*H):
          // coef * p_i * (log p_i + H).
          sg.dlogits[i] =
              st.pg_adv * (probs[i] - (i == a ? 1.0 : 0.0)) +
              static_cast<double>(cfg.entropy_coef) * probs[i] * (logp[i] + h);
        }
        sg.dvalue = -2.0 * static_cast<double>(cfg.value_coef) * verr;
        return sg;
      });

  const double n = static_cast<double>(steps.size());
  metrics.total = g.loss;
  metrics.policy = policy_sum / n;
  metrics.value = value_sum / n;
  metrics.mean_entropy = entropy_sum / n;
  metrics.mean_rho = rho_sum / n;

  LossOut out;
  out.metrics = metrics;
  out.grads = std::move(g.grads);
  return out;
}

std::vector<AgentLogs> sgd_step(std::vector<AgentLearner>& population,
                                const std::vector<TrajectoryBatch>& batch,
                                const VTraceConfig& cfg, float lr) {
  std::vector<std::vector<TrajectoryBatch>> per_agent(population.size());
  for (const TrajectoryBatch& item : batch) {
    require(item.agent_id < population.size(),
            "item agent_id " + std::to_string(item.agent_id) +
                " outside population of " + std::to_string(population.size()));
    per_agent[item.agent_id].push_back(item);
  }

  std::vector<AgentLogs> logs(population.size());
  for (size_t a = 0; a < population.size(); ++a) {
    if (per_agent[a].empty()) continue;
    LossOut out = actor_critic_grad(population[a].params, per_agent[a], cfg);
    nn::adam_step(population[a].params, population[a].opt, out.grads, lr);
    logs[a].updated = true;
    logs[a].metrics = out.metrics;
  }
  return logs;
}

}  // namespace marl::vtrace
