#include "marl/cliapp.hpp"

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "marl/evalkit.hpp"
#include "marl/runners.hpp"
#include "marl/scenarios.hpp"

namespace marl::cli {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

constexpr const char* kConfigSnapshotName = "config.txt";

std::string fmt_exact(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string fmt_exact(float v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string trim(const std::string& text) {
  const auto begin = text.find_first_not_of(" \t");
  if (begin == std::string::npos) return "";
  const auto end = text.find_last_not_of(" \t");
  return text.substr(begin, end - begin + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  if constexpr (std::is_floating_point_v<T>) {
    char* end = nullptr;
    const double parsed = std::strtod(text.c_str(), &end);
    if (text.empty() || end != text.c_str() + text.size())
      throw std::invalid_argument("bad value for " + key + ": " + text);
    value = static_cast<T>(parsed);
  } else {
    const auto res =
        std::from_chars(text.data(), text.data() + text.size(), value);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size())
      throw std::invalid_argument("bad value for " + key + ": " + text);
  }
  return value;
}

// One training setting as text. The same table drives config-file parsing
// and snapshot writing so the two can never drift apart.
void apply_setting(runners::RunConfig& config, const std::string& key,
                   const std::string& value) {
  if (key == "arch")
    config.architecture = runners::parse_architecture(value);
  else if (key == "env")
    config.env_name = value;
  else if (key == "steps")
    config.max_steps = parse_number<uint64_t>(key, value);
  else if (key == "workers")
    config.num_workers = parse_number<int>(key, value);
  else if (key == "population")
    config.population_size = parse_number<int>(key, value);
  else if (key == "unroll")
    config.unroll_length = parse_number<int>(key, value);
  else if (key == "seed")
    config.seed = parse_number<uint64_t>(key, value);
  else if (key == "lr")
    config.learning_rate = parse_number<float>(key, value);
  else if (key == "gamma")
    config.vtrace.gamma = parse_number<float>(key, value);
  else if (key == "rho-bar")
    config.vtrace.rho_bar = parse_number<float>(key, value);
  else if (key == "c-bar")
    config.vtrace.c_bar = parse_number<float>(key, value);
  else if (key == "entropy-coef")
    config.vtrace.entropy_coef = parse_number<float>(key, value);
  else if (key == "value-coef")
    config.vtrace.value_coef = parse_number<float>(key, value);
  else if (key == "sync-interval")
    config.param_sync_interval = parse_number<int>(key, value);
  else if (key == "infer-batch")
    config.inference_batch_max = parse_number<int>(key, value);
  else if (key == "infer-timeout-ms")
    config.inference_flush_timeout_ms = parse_number<int>(key, value);
  else if (key == "hidden-dim")
    config.hidden_dim = parse_number<int>(key, value);
  else if (key == "replay-capacity")
    config.replay_capacity = parse_number<size_t>(key, value);
  else
    throw std::invalid_argument("unknown config key: " + key);
}

void apply_config_file(runners::RunConfig& config, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  std::map<std::string, bool> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path + ":" + std::to_string(line_no) +
                                  ": expected key=value");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (seen[key])
      throw std::invalid_argument(path + ":" + std::to_string(line_no) +
                                  ": duplicate key: " + key);
    seen[key] = true;
    apply_setting(config, key, value);
  }
}

// Everything that shapes the run, in a fixed order; --out stays external so
// a snapshot can be replayed into a fresh directory.
void write_config_snapshot(const runners::RunConfig& config,
                           const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write config snapshot: " + path);
  out << "arch=" << runners::architecture_name(config.architecture) << '\n'
      << "env=" << config.env_name << '\n'
      << "steps=" << config.max_steps << '\n'
      << "workers=" << config.num_workers << '\n'
      << "population=" << config.population_size << '\n'
      << "unroll=" << config.unroll_length << '\n'
      << "seed=" << config.seed << '\n'
      << "lr=" << fmt_exact(config.learning_rate) << '\n'
      << "gamma=" << fmt_exact(config.vtrace.gamma) << '\n'
      << "rho-bar=" << fmt_exact(config.vtrace.rho_bar) << '\n'
      << "c-bar=" << fmt_exact(config.vtrace.c_bar) << '\n'
      << "entropy-coef=" << fmt_exact(config.vtrace.entropy_coef) << '\n'
      << "value-coef=" << fmt_exact(config.vtrace.value_coef) << '\n'
      << "sync-interval=" << config.param_sync_interval << '\n'
      << "infer-batch=" << config.inference_batch_max << '\n'
      << "infer-timeout-ms=" << config.inference_flush_timeout_ms << '\n'
      << "hidden-dim=" << config.hidden_dim << '\n'
      << "replay-capacity=" << config.replay_capacity << '\n';
  out.flush();
  if (!out) throw std::runtime_error("failed writing config snapshot: " + path);
}

std::vector<uint64_t> parse_seed_list(const std::string& text) {
  std::vector<uint64_t> seeds;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    const std::string stripped = trim(item);
    seeds.push_back(parse_number<uint64_t>("seeds", stripped));
  }
  if (seeds.empty() || (!text.empty() && text.back() == ','))
    throw std::invalid_argument("bad seed list: " + text);
  return seeds;
}

int report_usage(const std::string& what) {
  std::cerr << "error: " << what << '\n';
  return kExitUsage;
}

int report_runtime(const std::string& what) {
  std::cerr << "error: " << what << '\n';
  return kExitRuntime;
}

struct TrainArgs {
  CLI::App* cmd = nullptr;
  std::string arch = "single";
  std::string env;
  uint64_t steps = 0;
  int workers = 1;
  int population = 1;
  int unroll = 20;
  uint64_t seed = 1;
  float lr = 0.0f;
  float gamma = 0.0f;
  float rho_bar = 0.0f;
  float c_bar = 0.0f;
  float entropy_coef = 0.0f;
  float value_coef = 0.0f;
  int sync_interval = 0;
  int infer_batch = 8;
  int infer_timeout_ms = 2;
  std::string out;
  std::string config_path;
};

int cmd_train(const TrainArgs& args) {
  runners::RunConfig config;
  try {
    if (!args.config_path.empty())
      apply_config_file(config, args.config_path);
    const CLI::App& cmd = *args.cmd;
    if (cmd.count("--arch"))
      config.architecture = runners::parse_architecture(args.arch);
    if (cmd.count("--env")) config.env_name = args.env;
    if (cmd.count("--steps")) config.max_steps = args.steps;
    if (cmd.count("--workers")) config.num_workers = args.workers;
    if (cmd.count("--population")) config.population_size = args.population;
    if (cmd.count("--unroll")) config.unroll_length = args.unroll;
    if (cmd.count("--seed")) config.seed = args.seed;
    if (cmd.count("--lr")) config.learning_rate = args.lr;
    if (cmd.count("--gamma")) config.vtrace.gamma = args.gamma;
    if (cmd.count("--rho-bar")) config.vtrace.rho_bar = args.rho_bar;
    if (cmd.count("--c-bar")) config.vtrace.c_bar = args.c_bar;
    if (cmd.count("--entropy-coef"))
      config.vtrace.entropy_coef = args.entropy_coef;
    if (cmd.count("--value-coef")) config.vtrace.value_coef = args.value_coef;
    if (cmd.count("--sync-interval"))
      config.param_sync_interval = args.sync_interval;
    if (cmd.count("--infer-batch"))
      config.inference_batch_max = args.infer_batch;
    if (cmd.count("--infer-timeout-ms"))
      config.inference_flush_timeout_ms = args.infer_timeout_ms;
    config.out_dir = args.out;

    runners::validate_config(config);
    resolve_scenario_name(config.env_name);  // fail fast on unknown names
  } catch (const std::exception& e) {
    return report_usage(e.what());
  }

  try {
    std::filesystem::create_directories(config.out_dir);
    write_config_snapshot(config,
                          config.out_dir + "/" + kConfigSnapshotName);
    const runners::RunReport report = runners::run(config);
    std::cout << "trained " << config.env_name << ": " << report.env_steps
              << " env steps, " << report.episodes << " episodes, "
              << report.learner_steps << " updates -> " << config.out_dir
              << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    return report_runtime(e.what());
  }
}

struct EvaluateArgs {
  CLI::App* cmd = nullptr;
  std::string ckpt;
  std::string scenario;
  bool all_scenarios = false;
  int episodes = 100;
  std::string seeds = "1";
  std::string label;
  std::string out;
};

int cmd_evaluate(const EvaluateArgs& args) {
  std::vector<std::string> scenario_names;
  std::vector<uint64_t> seeds;
  try {
    if (args.scenario.empty())
      throw std::invalid_argument("--scenario is required");
    if (args.episodes < 1)
      throw std::invalid_argument("--episodes must be >= 1");
    seeds = parse_seed_list(args.seeds);
    if (args.all_scenarios) {
      if (args.scenario.find('.') != std::string::npos)
        throw std::invalid_argument(
            "--all-scenarios expects a bare substrate name");
      scenario_names.push_back(args.scenario);  // self-play row
      for (const auto& spec : list_scenarios(args.scenario))
        scenario_names.push_back(spec.name);
    } else {
      resolve_scenario_name(args.scenario);
      scenario_names.push_back(args.scenario);
    }
  } catch (const std::exception& e) {
    return report_usage(e.what());
  }

  try {
    std::filesystem::create_directories(args.out);
    for (const auto& name : scenario_names) {
      for (uint64_t seed : seeds) {
        const evalkit::EvalResult result =
            evalkit::evaluate(args.ckpt, name, args.episodes, seed,
                              args.label);
        const std::string path =
            args.out + "/" + name + "_s" + std::to_string(seed) + ".csv";
        evalkit::write_result(result, path);
        std::cout << "wrote " << path
                  << " (mean " << fmt_exact(result.mean_focal_return) << ")\n";
      }
    }
    return kExitOk;
  } catch (const std::exception& e) {
    return report_runtime(e.what());
  }
}

struct AggregateArgs {
  std::vector<std::string> files;
  std::string out;
};

int cmd_aggregate(const AggregateArgs& args) {
  if (args.files.empty()) {
    try {
      evalkit::aggregate({});
    } catch (const std::exception& e) {
      return report_usage(e.what());
    }
  }
  try {
    const evalkit::EvalTable table = evalkit::aggregate_files(args.files);
    std::filesystem::create_directories(args.out);
    const std::string path = args.out + "/table.csv";
    std::ofstream csv(path, std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot write table: " + path);
    csv << evalkit::render_table_csv(table);
    csv.flush();
    if (!csv) throw std::runtime_error("failed writing table: " + path);
    std::cout << evalkit::render_table_text(table);
    return kExitOk;
  } catch (const std::exception& e) {
    return report_runtime(e.what());
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"population-based multi-agent actor-critic training"};
  app.require_subcommand(1);

  const runners::RunConfig defaults;
  TrainArgs train;
  train.lr = defaults.learning_rate;
  train.gamma = defaults.vtrace.gamma;
  train.rho_bar = defaults.vtrace.rho_bar;
  train.c_bar = defaults.vtrace.c_bar;
  train.entropy_coef = defaults.vtrace.entropy_coef;
  train.value_coef = defaults.vtrace.value_coef;
  train.cmd = app.add_subcommand("train", "train a population of agents");
  train.cmd->add_option("--arch", train.arch,
                        "single, sync, async or sebulba");
  train.cmd->add_option("--env", train.env, "substrate or scenario name");
  train.cmd->add_option("--steps", train.steps, "environment steps to run");
  train.cmd->add_option("--workers", train.workers, "environment workers");
  train.cmd->add_option("--population", train.population, "agents to train");
  train.cmd->add_option("--unroll", train.unroll, "steps per learning item");
  train.cmd->add_option("--seed", train.seed, "run seed");
  train.cmd->add_option("--lr", train.lr, "Adam learning rate");
  train.cmd->add_option("--gamma", train.gamma, "discount factor");
  train.cmd->add_option("--rho-bar", train.rho_bar,
                        "importance weight clip for targets");
  train.cmd->add_option("--c-bar", train.c_bar,
                        "importance weight clip for traces");
  train.cmd->add_option("--entropy-coef", train.entropy_coef,
                        "entropy bonus weight");
  train.cmd->add_option("--value-coef", train.value_coef,
                        "value loss weight");
  train.cmd->add_option("--sync-interval", train.sync_interval,
                        "actor parameter refresh period in steps");
  train.cmd->add_option("--infer-batch", train.infer_batch,
                        "max inference batch (sebulba)");
  train.cmd->add_option("--infer-timeout-ms", train.infer_timeout_ms,
                        "inference flush timeout (sebulba)");
  train.cmd->add_option("--out", train.out, "run directory")->required();
  train.cmd->add_option("--config", train.config_path,
                        "key=value config file; flags override it");

  EvaluateArgs evaluate;
  evaluate.cmd = app.add_subcommand(
      "evaluate", "play a frozen checkpoint against scenarios");
  evaluate.cmd->add_option("--ckpt", evaluate.ckpt, "checkpoint file")
      ->required();
  evaluate.cmd->add_option("--scenario", evaluate.scenario,
                           "scenario name, or substrate with --all-scenarios");
  evaluate.cmd->add_flag("--all-scenarios", evaluate.all_scenarios,
                         "evaluate the whole registry of the substrate");
  evaluate.cmd->add_option("--episodes", evaluate.episodes,
                           "episodes per scenario and seed");
  evaluate.cmd->add_option("--seeds", evaluate.seeds,
                           "comma-separated seed list");
  evaluate.cmd->add_option("--label", evaluate.label,
                           "column label for aggregation");
  evaluate.cmd->add_option("--out", evaluate.out, "result directory")
      ->required();

  AggregateArgs aggregate;
  CLI::App* agg_cmd = app.add_subcommand(
      "aggregate", "summarize result files into a table");
  agg_cmd->add_option("files", aggregate.files, "result csv files");
  agg_cmd->add_option("--out", aggregate.out, "table directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (train.cmd->parsed()) return cmd_train(train);
  if (evaluate.cmd->parsed()) return cmd_evaluate(evaluate);
  return cmd_aggregate(aggregate);
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> full;
  full.reserve(args.size() + 1);
  full.push_back("marl");
  full.insert(full.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  argv.reserve(full.size());
  for (const auto& arg : full) argv.push_back(arg.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace marl::cli
