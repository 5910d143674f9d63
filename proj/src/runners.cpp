#include "marl/runners.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <thread>
#include <utility>

#include "marl/common.hpp"
#include "marl/envcore.hpp"
#include "marl/inference.hpp"
#include "marl/scenarios.hpp"

namespace marl::runners {

namespace {

// Independent seed streams derived from the run seed.
constexpr uint64_t kEnvSeedStream = 1000;
constexpr uint64_t kActSeedStream = 2000;
constexpr uint64_t kInitSeedStream = 3000;
constexpr uint64_t kInferSeedStream = 4000;

constexpr std::chrono::milliseconds kLearnerPoll{100};
constexpr std::chrono::seconds kDrainBudget{5};

struct ActDecision {
  int action = 0;
  float log_prob = 0.0f;
  uint64_t param_version = 0;
};

// How a worker turns an observation into an action: a local forward pass for
// single/sync/async, a server call for sebulba.
using Policy =
    std::function<ActDecision(uint32_t agent_id, const std::vector<float>&)>;

struct CompletedEpisode {
  uint64_t offset = 0;  // env steps into the segment when the episode ended
  std::vector<std::pair<uint32_t, double>> slot_returns;  // agent, return
};

struct Segment {
  std::vector<vtrace::TrajectoryBatch> items;  // one per focal slot
  std::optional<CompletedEpisode> episode;
  uint64_t steps = 0;
};

// One environment instance plus the episode-slot bookkeeping around it.
class EnvWorker {
 public:
  EnvWorker(const RunConfig& config, int index)
      : index_(index),
        population_(config.population_size),
        env_(make_scenario_by_name(
            config.env_name,
            derive_seed(config.seed, kEnvSeedStream +
                                         static_cast<uint64_t>(index)))),
        act_rng_(static_cast<uint32_t>(derive_seed(
            config.seed, kActSeedStream + static_cast<uint64_t>(index)))) {}

  const EnvSpec& spec() const { return env_->spec(); }
  std::mt19937& act_rng() { return act_rng_; }

  // Advances until the episode ends or `limit` steps were taken, whichever
  // comes first. Returns one trajectory item per focal slot covering exactly
  // the steps taken.
  Segment collect(const Policy& policy, uint64_t limit) {
    if (!episode_open_) begin_episode();
    const int slots = spec().num_players;
    Segment seg;
    seg.items.resize(static_cast<size_t>(slots));
    for (int s = 0; s < slots; ++s) {
      auto& item = seg.items[static_cast<size_t>(s)];
      item.agent_id = slot_agent_[static_cast<size_t>(s)];
      item.obs_dim = spec().obs_dim;
      item.num_actions = spec().num_actions;
    }
    std::vector<int> actions(static_cast<size_t>(slots));
    while (seg.steps < limit) {
      for (int s = 0; s < slots; ++s) {
        auto& item = seg.items[static_cast<size_t>(s)];
        const auto& obs = ts_.observations[static_cast<size_t>(s)];
        const ActDecision act =
            policy(slot_agent_[static_cast<size_t>(s)], obs);
        if (seg.steps == 0) item.behavior_param_version = act.param_version;
        item.observations.push_back(obs);
        item.actions.push_back(act.action);
        item.behavior_log_probs.push_back(act.log_prob);
        actions[static_cast<size_t>(s)] = act.action;
      }
      ts_ = env_->step(actions);
      ++seg.steps;
      for (int s = 0; s < slots; ++s) {
        auto& item = seg.items[static_cast<size_t>(s)];
        item.rewards.push_back(ts_.rewards[static_cast<size_t>(s)]);
        item.discounts.push_back(ts_.discount);
        slot_return_[static_cast<size_t>(s)] +=
            ts_.rewards[static_cast<size_t>(s)];
      }
      if (ts_.last()) {
        episode_open_ = false;
        ++episodes_done_;
        CompletedEpisode done;
        done.offset = seg.steps;
        for (int s = 0; s < slots; ++s)
          done.slot_returns.emplace_back(slot_agent_[static_cast<size_t>(s)],
                                         slot_return_[static_cast<size_t>(s)]);
        seg.episode = std::move(done);
        break;
      }
    }
    for (int s = 0; s < slots; ++s)
      seg.items[static_cast<size_t>(s)].bootstrap_obs =
          ts_.observations[static_cast<size_t>(s)];
    return seg;
  }

 private:
  void begin_episode() {
    ts_ = env_->reset();
    const int slots = spec().num_players;
    slot_agent_.resize(static_cast<size_t>(slots));
    slot_return_.assign(static_cast<size_t>(slots), 0.0);
    for (int s = 0; s < slots; ++s)
      slot_agent_[static_cast<size_t>(s)] = static_cast<uint32_t>(
          (episodes_done_ * static_cast<uint64_t>(slots) +
           static_cast<uint64_t>(s) + static_cast<uint64_t>(index_)) %
          static_cast<uint64_t>(population_));
    episode_open_ = true;
  }

  int index_;
  int population_;
  std::unique_ptr<ScenarioEnv> env_;
  std::mt19937 act_rng_;
  TimeStep ts_;
  bool episode_open_ = false;
  uint64_t episodes_done_ = 0;
  std::vector<uint32_t> slot_agent_;
  std::vector<double> slot_return_;
};

// Appends a freshly collected chunk onto the rest of its episode.
void merge_segment(std::vector<vtrace::TrajectoryBatch>& episode,
                   Segment&& seg) {
  if (episode.empty()) {
    episode = std::move(seg.items);
    return;
  }
  for (size_t s = 0; s < episode.size(); ++s) {
    auto& into = episode[s];
    auto& from = seg.items[s];
    into.observations.insert(into.observations.end(),
                             std::make_move_iterator(from.observations.begin()),
                             std::make_move_iterator(from.observations.end()));
    into.actions.insert(into.actions.end(), from.actions.begin(),
                        from.actions.end());
    into.rewards.insert(into.rewards.end(), from.rewards.begin(),
                        from.rewards.end());
    into.discounts.insert(into.discounts.end(), from.discounts.begin(),
                          from.discounts.end());
    into.behavior_log_probs.insert(into.behavior_log_probs.end(),
                                   from.behavior_log_probs.begin(),
                                   from.behavior_log_probs.end());
    into.bootstrap_obs = std::move(from.bootstrap_obs);
  }
}

struct OutPaths {
  std::string metrics;
  std::string checkpoint;
};

OutPaths prepare_out(const RunConfig& config) {
  OutPaths paths;
  if (config.out_dir.empty()) return paths;
  std::filesystem::create_directories(config.out_dir);
  paths.metrics = config.out_dir + "/metrics.csv";
  paths.checkpoint = config.out_dir + "/checkpoint.majx";
  return paths;
}

nn::NetSpec net_spec_for(const EnvSpec& env_spec, const RunConfig& config) {
  return nn::NetSpec{env_spec.obs_dim, config.hidden_dim,
                     env_spec.num_actions};
}

std::vector<vtrace::AgentLearner> init_learners(const nn::NetSpec& spec,
                                                const RunConfig& config) {
  std::vector<vtrace::AgentLearner> learners;
  learners.reserve(static_cast<size_t>(config.population_size));
  for (int a = 0; a < config.population_size; ++a)
    learners.push_back(
        {nn::init_params(spec, derive_seed(config.seed,
                                           kInitSeedStream +
                                               static_cast<uint64_t>(a))),
         nn::init_opt_state(spec)});
  return learners;
}

void finish_report(RunReport& report, const OutPaths& paths,
                   const std::vector<vtrace::AgentLearner>& learners,
                   std::chrono::steady_clock::time_point t0) {
  report.final_params.reserve(learners.size());
  for (const auto& learner : learners)
    report.final_params.push_back(learner.params);
  if (!paths.checkpoint.empty()) {
    nn::save_checkpoint(paths.checkpoint, report.final_params);
    report.checkpoint_path = paths.checkpoint;
  }
  report.metrics_path = paths.metrics;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
}

// Shared engine for the single and sync architectures: all environments
// advance in lockstep phases under frozen parameters, then one update
// consumes the stacked batch. With one worker this is exactly the
// single-threaded loop.
RunReport run_lockstep(const RunConfig& config) {
  validate_config(config);
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<std::unique_ptr<EnvWorker>> workers;
  workers.reserve(static_cast<size_t>(config.num_workers));
  for (int w = 0; w < config.num_workers; ++w)
    workers.push_back(std::make_unique<EnvWorker>(config, w));

  const nn::NetSpec net_spec = net_spec_for(workers[0]->spec(), config);
  std::vector<vtrace::AgentLearner> learners = init_learners(net_spec, config);

  const OutPaths paths = prepare_out(config);
  RunReport report;
  {
    MetricsWriter metrics(paths.metrics);
    uint64_t env_steps = 0;

    while (env_steps < config.max_steps) {
      std::vector<Segment> segments(workers.size());
      auto collect_one = [&](size_t w) {
        const Policy policy = [&learners, &rng = workers[w]->act_rng()](
                                  uint32_t agent_id,
                                  const std::vector<float>& obs) {
          const nn::Params& params = learners[agent_id].params;
          const nn::ForwardOut out = nn::forward(params, obs);
          const nn::ActionSample sample = nn::sample_action(out.logits, rng);
          return ActDecision{sample.action, sample.log_prob, params.version};
        };
        segments[w] = workers[w]->collect(
            policy, static_cast<uint64_t>(config.unroll_length));
      };
      if (workers.size() == 1) {
        collect_one(0);
      } else {
        std::vector<std::thread> threads;
        threads.reserve(workers.size());
        for (size_t w = 0; w < workers.size(); ++w)
          threads.emplace_back(collect_one, w);
        for (auto& t : threads) t.join();
      }

      std::vector<vtrace::TrajectoryBatch> batch;
      for (auto& seg : segments) {
        if (seg.episode) {
          const uint64_t at = env_steps + seg.episode->offset;
          double total = 0.0;
          for (const auto& [agent_id, ret] : seg.episode->slot_returns) {
            metrics.episode_row(at, std::nullopt, agent_id, ret);
            total += ret;
          }
          report.episode_returns.push_back(
              total / static_cast<double>(seg.episode->slot_returns.size()));
          ++report.episodes;
        }
        env_steps += seg.steps;
        for (auto& item : seg.items) batch.push_back(std::move(item));
      }

      const auto logs = vtrace::sgd_step(learners, batch, config.vtrace,
                                         config.learning_rate);
      ++report.learner_steps;
      for (size_t a = 0; a < logs.size(); ++a)
        if (logs[a].updated)
          metrics.learner_row(env_steps, std::nullopt,
                              static_cast<uint32_t>(a), logs[a].metrics,
                              std::nullopt);
    }
    report.env_steps = env_steps;
  }

  finish_report(report, paths, learners, t0);
  return report;
}

// Shared engine for the async and sebulba architectures: worker threads run
// whole episodes into the replay buffer while a learner thread samples and
// updates, publishing parameters through the store.
RunReport run_actor_learner(const RunConfig& config, bool sebulba) {
  validate_config(config);
  const auto t0 = std::chrono::steady_clock::now();
  auto wall_now = [t0] {
    return static_cast<int64_t>(
        std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now() - t0)
            .count());
  };

  const EnvSpec env_spec = make_scenario_by_name(config.env_name, 0)->spec();
  const nn::NetSpec net_spec = net_spec_for(env_spec, config);
  std::vector<vtrace::AgentLearner> learners = init_learners(net_spec, config);

  std::vector<nn::Params> initial;
  initial.reserve(learners.size());
  for (const auto& learner : learners) initial.push_back(learner.params);
  auto store = std::make_shared<ParamStore>(std::move(initial));

  auto buffer = std::make_shared<replay::ReplayQueue>(replay::BufferConfig{
      config.replay_capacity, static_cast<size_t>(config.num_workers),
      replay::ItemKind::kEpisode});

  std::unique_ptr<InferenceServer> inference;
  if (sebulba)
    inference = std::make_unique<InferenceServer>(
        store, config.inference_batch_max,
        std::chrono::milliseconds(config.inference_flush_timeout_ms),
        derive_seed(config.seed, kInferSeedStream));

  const OutPaths paths = prepare_out(config);
  RunReport report;
  {
    MetricsWriter metrics(paths.metrics);

    std::atomic<uint64_t> env_steps{0};
    std::atomic<uint64_t> episodes{0};
    std::atomic<bool> stop{false};
    std::atomic<bool> drain{false};
    std::mutex report_mu;
    std::vector<double> episode_returns;
    std::mutex error_mu;
    std::exception_ptr first_error;
    auto fail = [&](std::exception_ptr e) {
      {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::move(e);
      }
      stop.store(true);
    };

    uint64_t learner_steps = 0;
    std::thread learner([&] {
      try {
        auto drain_deadline = std::chrono::steady_clock::time_point::max();
        const size_t batch_size = static_cast<size_t>(config.num_workers);
        for (;;) {
          std::vector<vtrace::TrajectoryBatch> items;
          if (drain.load()) {
            if (drain_deadline == std::chrono::steady_clock::time_point::max())
              drain_deadline = std::chrono::steady_clock::now() + kDrainBudget;
            if (std::chrono::steady_clock::now() >= drain_deadline) break;
            items = buffer->sample_up_to(batch_size);
            if (items.empty()) break;
          } else {
            try {
              items = buffer->sample_for(batch_size, kLearnerPoll);
            } catch (const replay::Closed&) {
              break;
            }
            if (items.empty()) continue;
          }
          const auto logs = vtrace::sgd_step(learners, items, config.vtrace,
                                             config.learning_rate);
          ++learner_steps;
          for (size_t a = 0; a < logs.size(); ++a)
            if (logs[a].updated)
              store->put(static_cast<uint32_t>(a), learners[a].params);
          const uint64_t backlog = buffer->stats().current_size;
          const uint64_t at = env_steps.load();
          const int64_t wall = wall_now();
          for (size_t a = 0; a < logs.size(); ++a)
            if (logs[a].updated)
              metrics.learner_row(at, wall, static_cast<uint32_t>(a),
                                  logs[a].metrics, backlog);
        }
      } catch (...) {
        fail(std::current_exception());
      }
    });

    std::vector<std::thread> workers;
    workers.reserve(static_cast<size_t>(config.num_workers));
    for (int w = 0; w < config.num_workers; ++w) {
      workers.emplace_back([&, w] {
        try {
          EnvWorker worker(config, w);
          std::vector<std::shared_ptr<const nn::Params>> snapshots(
              static_cast<size_t>(config.population_size));
          Policy policy;
          if (sebulba) {
            policy = [&](uint32_t agent_id, const std::vector<float>& obs) {
              const InferenceResult r = inference->infer(agent_id, obs);
              return ActDecision{r.action, r.log_prob, r.param_version};
            };
          } else {
            policy = [&snapshots, &rng = worker.act_rng()](
                         uint32_t agent_id, const std::vector<float>& obs) {
              const nn::Params& params = *snapshots[agent_id];
              const nn::ForwardOut out = nn::forward(params, obs);
              const nn::ActionSample sample =
                  nn::sample_action(out.logits, rng);
              return ActDecision{sample.action, sample.log_prob,
                                 params.version};
            };
          }
          const uint64_t chunk =
              config.param_sync_interval > 0
                  ? static_cast<uint64_t>(config.param_sync_interval)
                  : std::numeric_limits<uint64_t>::max();

          while (!stop.load() && env_steps.load() < config.max_steps) {
            std::vector<vtrace::TrajectoryBatch> episode;
            for (;;) {
              if (!sebulba)
                for (size_t a = 0; a < snapshots.size(); ++a)
                  snapshots[a] = store->get(static_cast<uint32_t>(a));
              Segment seg = worker.collect(policy, chunk);
              env_steps.fetch_add(seg.steps);
              const bool finished = seg.episode.has_value();
              CompletedEpisode done;
              if (finished) done = *seg.episode;
              merge_segment(episode, std::move(seg));
              if (finished) {
                const uint64_t at = env_steps.load();
                const int64_t wall = wall_now();
                double total = 0.0;
                for (const auto& [agent_id, ret] : done.slot_returns) {
                  metrics.episode_row(at, wall, agent_id, ret);
                  total += ret;
                }
                episodes.fetch_add(1);
                std::lock_guard<std::mutex> lock(report_mu);
                episode_returns.push_back(
                    total / static_cast<double>(done.slot_returns.size()));
                break;
              }
            }
            try {
              for (auto& item : episode) buffer->write(std::move(item));
            } catch (const replay::Closed&) {
              break;
            }
            if (env_steps.load() >= config.max_steps) stop.store(true);
          }
        } catch (...) {
          fail(std::current_exception());
        }
      });
    }

    for (auto& t : workers) t.join();
    drain.store(true);
    learner.join();
    buffer->close();
    if (inference) inference->stop();

    {
      std::lock_guard<std::mutex> lock(error_mu);
      if (first_error) std::rethrow_exception(first_error);
    }

    report.env_steps = env_steps.load();
    report.episodes = episodes.load();
    report.learner_steps = learner_steps;
    report.episode_returns = std::move(episode_returns);
    report.replay_stats = buffer->stats();
    if (inference) report.inference_batch_sizes = inference->batch_sizes();
  }

  finish_report(report, paths, learners, t0);
  return report;
}

}  // namespace

std::string architecture_name(Architecture arch) {
  switch (arch) {
    case Architecture::kSingle:
      return "single";
    case Architecture::kSync:
      return "sync";
    case Architecture::kAsync:
      return "async";
    case Architecture::kSebulba:
      return "sebulba";
  }
  return "unknown";
}

Architecture parse_architecture(const std::string& name) {
  if (name == "single") return Architecture::kSingle;
  if (name == "sync") return Architecture::kSync;
  if (name == "async") return Architecture::kAsync;
  if (name == "sebulba") return Architecture::kSebulba;
  throw std::invalid_argument("unknown architecture: " + name);
}

void validate_config(const RunConfig& config) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
  };
  require(!config.env_name.empty(), "env name must not be empty");
  require(config.population_size >= 1, "population size must be >= 1");
  require(config.num_workers >= 1, "num workers must be >= 1");
  require(config.architecture != Architecture::kSingle ||
              config.num_workers == 1,
          "single architecture runs exactly one worker");
  require(config.unroll_length >= 2, "unroll length must be >= 2");
  require(std::isfinite(config.learning_rate) && config.learning_rate > 0.0f,
          "learning rate must be positive");
  require(config.vtrace.gamma >= 0.0f && config.vtrace.gamma <= 1.0f,
          "gamma must be in [0, 1]");
  require(config.vtrace.rho_bar > 0.0f, "rho-bar must be positive");
  require(config.vtrace.c_bar > 0.0f, "c-bar must be positive");
  require(config.vtrace.entropy_coef >= 0.0f,
          "entropy coefficient must be >= 0");
  require(config.vtrace.value_coef >= 0.0f, "value coefficient must be >= 0");
  require(config.hidden_dim >= 1, "hidden dim must be >= 1");
  require(config.param_sync_interval >= 0, "sync interval must be >= 0");
  require(config.inference_batch_max >= 1, "inference batch must be >= 1");
  require(config.inference_flush_timeout_ms >= 0,
          "inference flush timeout must be >= 0");
  if (config.architecture == Architecture::kAsync ||
      config.architecture == Architecture::kSebulba)
    require(config.replay_capacity >= static_cast<size_t>(config.num_workers),
            "replay capacity must cover one item per worker");
}

ParamStore::ParamStore(std::vector<nn::Params> initial) {
  latest_.reserve(initial.size());
  for (auto& params : initial)
    latest_.push_back(std::make_shared<const nn::Params>(std::move(params)));
}

void ParamStore::put(uint32_t agent_id, const nn::Params& params) {
  auto next = std::make_shared<const nn::Params>(params);
  std::lock_guard<std::mutex> lock(mu_);
  if (agent_id >= latest_.size()) throw UnknownAgent(agent_id);
  if (params.version < latest_[agent_id]->version)
    throw std::logic_error("parameter version went backwards");
  latest_[agent_id] = std::move(next);
}

std::shared_ptr<const nn::Params> ParamStore::get(uint32_t agent_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  if (agent_id >= latest_.size()) throw UnknownAgent(agent_id);
  return latest_[agent_id];
}

MetricsWriter::MetricsWriter(const std::string& path) {
  if (path.empty()) return;
  out_.open(path, std::ios::trunc);
  if (!out_) throw std::runtime_error("cannot open metrics file: " + path);
  enabled_ = true;
  out_ << kHeader << '\n';
}

void MetricsWriter::learner_row(uint64_t step, std::optional<int64_t> wall_ms,
                                uint32_t agent_id,
                                const vtrace::LossMetrics& metrics,
                                std::optional<uint64_t> buffer_size) {
  if (!enabled_) return;
  std::lock_guard<std::mutex> lock(mu_);
  out_ << step << ',';
  if (wall_ms) out_ << *wall_ms;
  out_ << ',' << agent_id << ",,"  // no episode_return on learner rows
       << fmt_float(metrics.policy) << ',' << fmt_float(metrics.value) << ','
       << fmt_float(metrics.mean_entropy) << ',' << fmt_float(metrics.mean_rho)
       << ',';
  if (buffer_size) out_ << *buffer_size;
  out_ << '\n';
}

void MetricsWriter::episode_row(uint64_t step, std::optional<int64_t> wall_ms,
                                uint32_t agent_id, double episode_return) {
  if (!enabled_) return;
  std::lock_guard<std::mutex> lock(mu_);
  out_ << step << ',';
  if (wall_ms) out_ << *wall_ms;
  out_ << ',' << agent_id << ',' << fmt_float(episode_return) << ",,,,,\n";
}

void MetricsWriter::flush() {
  if (!enabled_) return;
  std::lock_guard<std::mutex> lock(mu_);
  out_.flush();
}

RunReport run_single(const RunConfig& config) {
  if (config.architecture != Architecture::kSingle)
    throw std::invalid_argument("run_single requires the single architecture");
  return run_lockstep(config);
}

RunReport run_sync(const RunConfig& config) {
  if (config.architecture != Architecture::kSync)
    throw std::invalid_argument("run_sync requires the sync architecture");
  return run_lockstep(config);
}

RunReport run_async(const RunConfig& config) {
  if (config.architecture != Architecture::kAsync)
    throw std::invalid_argument("run_async requires the async architecture");
  return run_actor_learner(config, false);
}

RunReport run_sebulba(const RunConfig& config) {
  if (config.architecture != Architecture::kSebulba)
    throw std::invalid_argument(
        "run_sebulba requires the sebulba architecture");
  return run_actor_learner(config, true);
}

RunReport run(const RunConfig& config) {
  switch (config.architecture) {
    case Architecture::kSingle:
      return run_single(config);
    case Architecture::kSync:
      return run_sync(config);
    case Architecture::kAsync:
      return run_async(config);
    case Architecture::kSebulba:
      return run_sebulba(config);
  }
  throw std::invalid_argument("unknown architecture");
}

}  // namespace marl::runners
