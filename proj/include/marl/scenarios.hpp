#pragma once

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "marl/envcore.hpp"
#include "marl/substrates.hpp"

namespace marl {

struct UnknownBot : EnvError {
  explicit UnknownBot(const std::string& id) : EnvError("unknown bot: " + id) {}
};
struct ArityMismatch : EnvError {
  ArityMismatch(int focal, size_t bots, int players)
      : EnvError("focal slots (" + std::to_string(focal) + ") + bots (" +
                 std::to_string(bots) + ") != substrate players (" +
                 std::to_string(players) + ")") {}
};
struct UnknownScenario : EnvError {
  explicit UnknownScenario(const std::string& name)
      : EnvError("unknown scenario: " + name) {}
};

// A frozen background policy: a pure function of the observation (plus a
// caller-supplied rng stream for the stochastic ones).
struct BackgroundBot {
  std::string id;
  std::function<int(const std::vector<float>&, std::mt19937&)> act;
};

// Bot ids: always_rock / always_paper / always_scissors (matrix action
// constants 0/1/2), always_cooperate / always_defect, uniform_random,
// tit_for_tat, best_response_to_last, kitchen_runner, and
// "ckpt:<path>" or "ckpt:<path>#<agent index>" for checkpoint-backed bots.
BackgroundBot make_bot(const std::string& id, const std::string& substrate_name);

struct ScenarioSpec {
  enum class Assignment { kFixed, kShuffledPerEpisode };

  std::string name;       // CLI identifier, e.g. "rps_matrix.scenario_0"
  std::string substrate;  // wrapped substrate name
  std::vector<std::string> background_bots;
  int focal_slots = 1;
  Assignment assignment = Assignment::kFixed;
};

// Wraps a substrate so the background slots are driven internally; the
// caller sees an environment with num_players == focal_slots.
class ScenarioEnv : public Environment {
 public:
  ScenarioEnv(ScenarioSpec spec, uint64_t seed);

  const EnvSpec& spec() const override { return spec_; }
  TimeStep reset() override;
  TimeStep step(const std::vector<int>& actions) override;

  const ScenarioSpec& scenario() const { return scenario_; }
  // Substrate slot currently played by focal index i (test hook).
  int focal_slot(int i) const { return focal_slot_of_[static_cast<size_t>(i)]; }

 private:
  TimeStep project(const TimeStep& inner) const;

  ScenarioSpec scenario_;
  std::unique_ptr<Environment> inner_;
  std::vector<BackgroundBot> bots_;
  std::mt19937 rng_;
  EnvSpec spec_;
  std::vector<int> focal_slot_of_;
  std::vector<int> bot_slot_of_;
  std::vector<std::vector<float>> inner_obs_;  // latest full observations
};

// Built-in registry: 5 scenarios per matrix substrate, 2 for the kitchen.
const std::vector<ScenarioSpec>& list_scenarios(const std::string& substrate);

std::unique_ptr<ScenarioEnv> make_scenario(const ScenarioSpec& spec, uint64_t seed);

// Accepts "<substrate>.scenario_<k>" (registry entry) or a bare substrate
// name (the all-focal pseudo-scenario used for self-play).
ScenarioSpec resolve_scenario_name(const std::string& name);
std::unique_ptr<ScenarioEnv> make_scenario_by_name(const std::string& name, uint64_t seed);

}  // namespace marl
