#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "marl/common.hpp"
#include "marl/inference.hpp"
#include "marl/nn.hpp"
#include "marl/runners.hpp"
#include "marl/scenarios.hpp"

using namespace marl;
using namespace marl::runners;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

std::string fresh_dir(const std::string& tag) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("marl_runner_" + tag);
  std::filesystem::remove_all(dir);
  return dir.string();
}

bool params_equal(const nn::Params& a, const nn::Params& b) {
  if (a.version != b.version || !(a.spec == b.spec)) return false;
  const auto fa = a.fields();
  const auto fb = b.fields();
  for (size_t i = 0; i < fa.size(); ++i)
    if (*fa[i] != *fb[i]) return false;
  return true;
}

RunConfig small_config(Architecture arch, const std::string& env,
                       uint64_t steps) {
  RunConfig config;
  config.architecture = arch;
  config.env_name = env;
  config.max_steps = steps;
  config.seed = 7;
  return config;
}

}  // namespace

TEST_CASE("architecture names round trip and unknowns are rejected") {
  for (auto arch : {Architecture::kSingle, Architecture::kSync,
                    Architecture::kAsync, Architecture::kSebulba})
    CHECK(parse_architecture(architecture_name(arch)) == arch);
  CHECK_THROWS_AS(parse_architecture("impala"), std::invalid_argument);
  CHECK_THROWS_AS(parse_architecture(""), std::invalid_argument);
}

TEST_CASE("config validation rejects inconsistent settings") {
  RunConfig config = small_config(Architecture::kSingle, "pd_matrix", 10);
  CHECK_NOTHROW(validate_config(config));

  RunConfig bad = config;
  bad.num_workers = 2;
  CHECK_THROWS_AS(validate_config(bad), std::invalid_argument);

  bad = config;
  bad.unroll_length = 1;
  CHECK_THROWS_AS(validate_config(bad), std::invalid_argument);

  bad = config;
  bad.env_name.clear();
  CHECK_THROWS_AS(validate_config(bad), std::invalid_argument);

  bad = config;
  bad.population_size = 0;
  CHECK_THROWS_AS(validate_config(bad), std::invalid_argument);

  bad = config;
  bad.learning_rate = 0.0f;
  CHECK_THROWS_AS(validate_config(bad), std::invalid_argument);

  bad = config;
  bad.vtrace.gamma = 1.5f;
  CHECK_THROWS_AS(validate_config(bad), std::invalid_argument);

  bad = config;
  bad.architecture = Architecture::kAsync;
  bad.num_workers = 4;
  bad.replay_capacity = 3;
  CHECK_THROWS_AS(validate_config(bad), std::invalid_argument);
}

TEST_CASE("param store hands out complete snapshots under concurrent puts") {
  const nn::NetSpec spec{3, 4, 2};
  std::vector<nn::Params> initial;
  initial.push_back(nn::init_params(spec, 1));
  static_cast<nn::Tensors&>(initial[0]) = nn::zeros_like(spec);
  ParamStore store(std::move(initial));
  REQUIRE(store.population() == 1);

  constexpr int kPuts = 400;
  std::atomic<bool> done{false};
  std::atomic<bool> torn{false};
  std::atomic<bool> went_backwards{false};

  std::thread writer([&] {
    for (int i = 1; i <= kPuts; ++i) {
      nn::Params params;
      static_cast<nn::Tensors&>(params) = nn::zeros_like(spec);
      params.spec = spec;
      params.version = static_cast<uint64_t>(i);
      const float fill = (i % 2 == 0) ? 1.0f : -1.0f;
      for (auto* field : params.fields())
        for (auto& v : *field) v = fill;
      store.put(0, params);
    }
    done.store(true);
  });

  std::vector<std::thread> readers;
  for (int r = 0; r < 2; ++r) {
    readers.emplace_back([&] {
      uint64_t last_version = 0;
      while (!done.load()) {
        const auto snap = store.get(0);
        if (snap->version < last_version) went_backwards.store(true);
        last_version = snap->version;
        if (snap->version == 0) continue;
        const float expect = (snap->version % 2 == 0) ? 1.0f : -1.0f;
        for (const auto* field : snap->fields())
          for (float v : *field)
            if (v != expect) torn.store(true);
      }
    });
  }
  writer.join();
  for (auto& t : readers) t.join();

  CHECK_FALSE(torn.load());
  CHECK_FALSE(went_backwards.load());
  CHECK(store.get(0)->version == kPuts);

  CHECK_THROWS_AS(store.get(1), UnknownAgent);
  nn::Params stray;
  static_cast<nn::Tensors&>(stray) = nn::zeros_like(spec);
  stray.spec = spec;
  CHECK_THROWS_AS(store.put(5, stray), UnknownAgent);
  stray.version = 3;  // behind the stored 400
  CHECK_THROWS_AS(store.put(0, stray), std::logic_error);
}

TEST_CASE("metrics writer emits the fixed schema") {
  const std::string dir = fresh_dir("metrics");
  std::filesystem::create_directories(dir);
  const std::string path = dir + "/metrics.csv";
  {
    MetricsWriter writer(path);
    vtrace::LossMetrics m;
    m.policy = 0.5;
    m.value = -1.25;
    m.mean_entropy = 1.0986;
    m.mean_rho = 1.0;
    writer.learner_row(40, std::nullopt, 0, m, std::nullopt);
    writer.episode_row(10, std::nullopt, 1, 3.5);
    writer.learner_row(80, 1234, 1, m, 17);
    writer.episode_row(90, 56, 0, -2.0);
    writer.flush();
  }
  const auto lines = lines_of(slurp(path));
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] ==
        "step,wall_ms,agent_id,episode_return,policy_loss,value_loss,entropy,"
        "mean_rho,buffer_size");
  CHECK(lines[1] == "40,,0,,0.5,-1.25,1.0986,1,");
  CHECK(lines[2] == "10,,1,3.5,,,,,");
  CHECK(lines[3] == "80,1234,1,,0.5,-1.25,1.0986,1,17");
  CHECK(lines[4] == "90,56,0,-2,,,,,");
  for (const auto& line : lines) CHECK(split_csv(line).size() == 9);

  MetricsWriter disabled("");
  disabled.episode_row(1, std::nullopt, 0, 1.0);  // must not crash
  disabled.flush();
}

TEST_CASE("zero max steps is a no-op run that still writes artifacts") {
  const std::string dir = fresh_dir("noop");
  RunConfig config = small_config(Architecture::kSingle,
                                  "pd_matrix.scenario_0", 0);
  config.out_dir = dir;
  const RunReport report = run(config);

  CHECK(report.env_steps == 0);
  CHECK(report.episodes == 0);
  CHECK(report.learner_steps == 0);
  CHECK(report.episode_returns.empty());
  CHECK(report.metrics_path == dir + "/metrics.csv");
  CHECK(report.checkpoint_path == dir + "/checkpoint.majx");

  const auto lines = lines_of(slurp(report.metrics_path));
  REQUIRE(lines.size() == 1);
  CHECK(lines[0] == std::string(MetricsWriter::kHeader));

  const auto loaded = nn::load_checkpoint(report.checkpoint_path);
  REQUIRE(loaded.size() == 1);
  const auto env = make_scenario_by_name(config.env_name, 0);
  const nn::NetSpec spec{env->spec().obs_dim, config.hidden_dim,
                         env->spec().num_actions};
  const nn::Params fresh =
      nn::init_params(spec, derive_seed(config.seed, 3000));
  CHECK(params_equal(loaded[0], fresh));
  CHECK(loaded[0].version == 0);
}

TEST_CASE("single runs are deterministic and artifacts match the report") {
  const std::string dir_a = fresh_dir("det_a");
  const std::string dir_b = fresh_dir("det_b");
  RunConfig config = small_config(Architecture::kSingle,
                                  "pd_matrix.scenario_0", 600);
  config.out_dir = dir_a;
  const RunReport a = run(config);
  config.out_dir = dir_b;
  const RunReport b = run(config);

  CHECK(slurp(a.metrics_path) == slurp(b.metrics_path));
  CHECK(slurp(a.checkpoint_path) == slurp(b.checkpoint_path));
  CHECK(a.env_steps == b.env_steps);
  CHECK(a.env_steps >= 600);
  CHECK(a.episodes == a.episode_returns.size());
  CHECK(a.episodes > 0);
  REQUIRE(a.final_params.size() == 1);
  CHECK(params_equal(a.final_params[0], b.final_params[0]));
  CHECK(a.final_params[0].version == a.learner_steps);

  const auto loaded = nn::load_checkpoint(a.checkpoint_path);
  REQUIRE(loaded.size() == 1);
  CHECK(params_equal(loaded[0], a.final_params[0]));

  // Episode rows carry returns, learner rows carry losses; wall_ms stays
  // empty everywhere so reruns are byte-identical.
  const auto lines = lines_of(slurp(a.metrics_path));
  size_t episode_rows = 0;
  size_t learner_rows = 0;
  for (size_t i = 1; i < lines.size(); ++i) {
    const auto fields = split_csv(lines[i]);
    REQUIRE(fields.size() == 9);
    CHECK(fields[1].empty());
    CHECK(fields[8].empty());
    if (!fields[3].empty())
      ++episode_rows;
    else
      ++learner_rows;
  }
  CHECK(episode_rows == a.episodes);  // one focal slot per episode
  CHECK(learner_rows == a.learner_steps);
}

TEST_CASE("single and one-worker sync produce identical metrics byte for byte") {
  RunConfig config = small_config(Architecture::kSingle,
                                  "rps_matrix.scenario_0", 1000);
  config.out_dir = fresh_dir("lockstep_single");
  const RunReport single = run(config);

  config.architecture = Architecture::kSync;
  config.out_dir = fresh_dir("lockstep_sync");
  const RunReport sync = run(config);

  CHECK(slurp(single.metrics_path) == slurp(sync.metrics_path));
  CHECK(slurp(single.checkpoint_path) == slurp(sync.checkpoint_path));
  CHECK(single.env_steps == sync.env_steps);
  CHECK(single.episodes == sync.episodes);
  CHECK(single.learner_steps == sync.learner_steps);
}

TEST_CASE("sync pools one unroll per worker into every update") {
  RunConfig config = small_config(Architecture::kSync, "pd_matrix", 480);
  config.num_workers = 3;
  config.population_size = 2;
  config.unroll_length = 8;
  config.out_dir = fresh_dir("sync_pool");
  const RunReport report = run(config);

  CHECK(report.env_steps >= 480);
  CHECK(report.learner_steps > 0);
  REQUIRE(report.final_params.size() == 2);
  // Both agents appear in every pooled batch (the substrate exposes two
  // focal slots and slot assignment alternates them), so both advance in
  // step with the learner.
  CHECK(report.final_params[0].version == report.learner_steps);
  CHECK(report.final_params[1].version == report.learner_steps);

  const auto lines = lines_of(slurp(report.metrics_path));
  size_t learner_rows = 0;
  for (size_t i = 1; i < lines.size(); ++i) {
    const auto fields = split_csv(lines[i]);
    if (fields[3].empty()) ++learner_rows;
    CHECK(fields[1].empty());
  }
  CHECK(learner_rows == 2 * report.learner_steps);

  // Rerunning with the same settings stays deterministic even though the
  // collection phase is threaded.
  RunConfig again = config;
  again.out_dir = fresh_dir("sync_pool_again");
  const RunReport rerun = run(again);
  CHECK(slurp(report.metrics_path) == slurp(rerun.metrics_path));
  CHECK(slurp(report.checkpoint_path) == slurp(rerun.checkpoint_path));
}

TEST_CASE("async trains a population through the replay pipeline") {
  RunConfig config = small_config(Architecture::kAsync, "rps_matrix", 4000);
  config.num_workers = 2;
  config.population_size = 2;
  config.replay_capacity = 64;
  config.out_dir = fresh_dir("async_run");
  const RunReport report = run(config);

  CHECK(report.env_steps >= 4000);
  CHECK(report.episodes > 0);
  CHECK(report.learner_steps > 0);
  REQUIRE(report.final_params.size() == 2);
  CHECK(report.final_params[0].version > 0);
  CHECK(report.final_params[1].version > 0);

  const auto& stats = report.replay_stats;
  CHECK(stats.items_written > 0);
  CHECK(stats.items_sampled > 0);
  CHECK(stats.current_size ==
        stats.items_written - stats.items_sampled - stats.items_dropped);

  const auto lines = lines_of(slurp(report.metrics_path));
  REQUIRE(lines.size() > 1);
  size_t learner_rows = 0;
  size_t episode_rows = 0;
  for (size_t i = 1; i < lines.size(); ++i) {
    const auto fields = split_csv(lines[i]);
    REQUIRE(fields.size() == 9);
    CHECK_FALSE(fields[1].empty());  // real runs stamp wall clock times
    if (fields[3].empty()) {
      ++learner_rows;
      CHECK_FALSE(fields[8].empty());  // learner rows report the backlog
    } else {
      ++episode_rows;
      CHECK(fields[8].empty());
    }
  }
  CHECK(learner_rows > 0);
  // Two focal slots per substrate episode, one row per slot.
  CHECK(episode_rows == 2 * report.episodes);
}

TEST_CASE("sebulba runs the same pipeline behind batched inference") {
  RunConfig config = small_config(Architecture::kSebulba, "rps_matrix", 2400);
  config.num_workers = 2;
  config.population_size = 2;
  config.replay_capacity = 64;
  config.inference_batch_max = 4;
  config.inference_flush_timeout_ms = 1;
  config.out_dir = fresh_dir("sebulba_run");
  const RunReport report = run(config);

  CHECK(report.env_steps >= 2400);
  CHECK(report.learner_steps > 0);
  CHECK(report.final_params[0].version > 0);

  REQUIRE_FALSE(report.inference_batch_sizes.empty());
  uint64_t served = 0;
  for (size_t size : report.inference_batch_sizes) {
    CHECK(size >= 1);
    CHECK(size <= 4);
    served += size;
  }
  // Every env step asks the server once per focal slot, and the substrate
  // has two focal slots.
  CHECK(served == 2 * report.env_steps);

  const auto& stats = report.replay_stats;
  CHECK(stats.current_size ==
        stats.items_written - stats.items_sampled - stats.items_dropped);
}

TEST_CASE("inference answers are reproducible from the reported version") {
  const nn::NetSpec spec{5, 8, 3};
  std::vector<nn::Params> initial;
  for (int a = 0; a < 2; ++a)
    initial.push_back(nn::init_params(spec, derive_seed(11, 3000 + a)));

  // version -> params history per agent, so any reported version can be
  // checked after the fact.
  std::vector<std::map<uint64_t, nn::Params>> history(2);
  for (int a = 0; a < 2; ++a) history[a][0] = initial[a];

  auto store = std::make_shared<ParamStore>(initial);
  InferenceServer server(store, 4, std::chrono::milliseconds(2), 99);

  struct Record {
    uint32_t agent_id;
    std::vector<float> obs;
    InferenceResult result;
  };
  std::vector<std::vector<Record>> per_thread(4);
  std::atomic<bool> halfway{false};

  std::vector<std::thread> askers;
  for (int t = 0; t < 4; ++t) {
    askers.emplace_back([&, t] {
      std::mt19937 rng(static_cast<uint32_t>(100 + t));
      for (int i = 0; i < 250; ++i) {
        if (i == 125) halfway.store(true);
        Record rec;
        rec.agent_id = rng() % 2;
        rec.obs.resize(5);
        for (auto& v : rec.obs)
          v = static_cast<float>(uniform01(rng)) - 0.5f;
        rec.result = server.infer(rec.agent_id, rec.obs);
        per_thread[static_cast<size_t>(t)].push_back(std::move(rec));
      }
    });
  }

  // Publish a new version for agent 0 while requests are in flight.
  while (!halfway.load()) std::this_thread::yield();
  nn::Params updated = initial[0];
  updated.version = 1;
  for (auto& v : updated.w_pi) v += 0.125f;
  store->put(0, updated);
  history[0][1] = updated;

  for (auto& t : askers) t.join();
  server.stop();

  size_t total = 0;
  size_t saw_new_version = 0;
  for (const auto& records : per_thread) {
    for (const auto& rec : records) {
      ++total;
      const auto it = history[rec.agent_id].find(rec.result.param_version);
      REQUIRE(it != history[rec.agent_id].end());
      const nn::Params& params = it->second;
      if (rec.result.param_version == 1) ++saw_new_version;
      const nn::ForwardOut out = nn::forward(params, rec.obs);
      REQUIRE(rec.result.action >= 0);
      REQUIRE(rec.result.action < 3);
      CHECK(rec.result.value == out.value);
      const auto log_probs = nn::log_softmax(out.logits);
      CHECK(rec.result.log_prob ==
            static_cast<float>(log_probs[static_cast<size_t>(
                rec.result.action)]));
    }
  }
  CHECK(total == 1000);
  CHECK(saw_new_version > 0);

  uint64_t served = 0;
  for (size_t size : server.batch_sizes()) {
    CHECK(size >= 1);
    CHECK(size <= 4);
    served += size;
  }
  CHECK(served == total);

  CHECK_THROWS_AS(server.infer(0, std::vector<float>(5, 0.0f)),
                  InferenceTimeout);
}

TEST_CASE("zero parameters make every action equally likely") {
  const nn::NetSpec spec{4, 6, 5};
  nn::Params zero;
  static_cast<nn::Tensors&>(zero) = nn::zeros_like(spec);
  zero.spec = spec;
  auto store = std::make_shared<ParamStore>(std::vector<nn::Params>{zero});
  InferenceServer server(store, 8, std::chrono::milliseconds(1), 5);

  const float expected =
      static_cast<float>(nn::log_softmax(std::vector<float>(5, 0.0f))[0]);
  std::mt19937 rng(3);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 200; ++i) {
    std::vector<float> obs(4);
    for (auto& v : obs) v = static_cast<float>(uniform01(rng));
    const InferenceResult r = server.infer(0, obs);
    CHECK(r.log_prob == expected);
    CHECK(r.value == 0.0f);
    CHECK(r.param_version == 0);
    ++counts[static_cast<size_t>(r.action)];
  }
  for (int c : counts) CHECK(c > 0);
  server.stop();
}

TEST_CASE("the inference wire protocol round trips actions and parameters") {
  const nn::NetSpec spec{3, 6, 4};
  std::vector<nn::Params> initial;
  for (int a = 0; a < 2; ++a)
    initial.push_back(nn::init_params(spec, derive_seed(21, 3000 + a)));
  auto store = std::make_shared<ParamStore>(initial);
  InferenceServer core(store, 4, std::chrono::milliseconds(1), 42);
  InferenceNetServer net(core, store);
  RemoteInference client(net.port());

  std::mt19937 rng(9);
  for (int i = 0; i < 60; ++i) {
    const uint32_t agent_id = rng() % 2;
    std::vector<float> obs(3);
    for (auto& v : obs) v = static_cast<float>(uniform01(rng)) * 2.0f - 1.0f;
    const InferenceResult r = client.infer(agent_id, obs);
    const nn::ForwardOut out = nn::forward(initial[agent_id], obs);
    CHECK(r.param_version == 0);
    CHECK(r.value == out.value);
    CHECK(r.log_prob ==
          static_cast<float>(
              nn::log_softmax(out.logits)[static_cast<size_t>(r.action)]));
  }

  for (uint32_t a = 0; a < 2; ++a) {
    const nn::Params fetched = client.fetch_params(a, spec);
    CHECK(params_equal(fetched, initial[a]));
  }

  CHECK_THROWS_AS(client.infer(9, std::vector<float>(3, 0.0f)),
                  wire::RemoteError);

  // The error dropped that connection; a fresh client keeps working.
  RemoteInference again(net.port());
  const InferenceResult r = again.infer(0, std::vector<float>(3, 0.25f));
  CHECK(r.param_version == 0);

  net.stop();
  core.stop();
}

TEST_CASE("an idle server flushes a lone request after the timeout") {
  const nn::NetSpec spec{2, 4, 2};
  nn::Params zero;
  static_cast<nn::Tensors&>(zero) = nn::zeros_like(spec);
  zero.spec = spec;
  auto store = std::make_shared<ParamStore>(std::vector<nn::Params>{zero});
  InferenceServer server(store, 1000, std::chrono::milliseconds(30), 1);

  const auto t0 = std::chrono::steady_clock::now();
  (void)server.infer(0, std::vector<float>(2, 0.0f));
  const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::steady_clock::now() - t0)
                           .count();
  CHECK(elapsed >= 25);
  CHECK(elapsed < 5000);
  REQUIRE(server.batch_sizes().size() == 1);
  CHECK(server.batch_sizes()[0] == 1);
  server.stop();
}
