#include "marl/scenarios.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <memory>
#include <queue>
#include <utility>

#include "marl/nn.hpp"

namespace marl {

namespace {

int argmax_range(const std::vector<float>& v, size_t begin, size_t count) {
  size_t best = begin;
  for (size_t i = begin + 1; i < begin + count; ++i)
    if (v[i] > v[best]) best = i;
  return static_cast<int>(best - begin);
}

int direction_toward(int dx, int dy) {
  if (dy < 0) return kUp;
  if (dy > 0) return kDown;
  if (dx < 0) return kLeft;
  return kRight;
}

// ---------------------------------------------------------------------------
// Kitchen runner: a scripted coordinator that decodes the feature vector,
// picks the next useful station and walks there by BFS.
// ---------------------------------------------------------------------------

struct KitchenView {
  int x, y, dir;
  Held held;
  int other_x, other_y;
  Held other_held;
  int pot_onions;
  bool ready;
};

KitchenView decode_kitchen_obs(const std::vector<float>& obs) {
  KitchenView v;
  v.x = static_cast<int>(obs[0] * (KitchenLayout::kWidth - 1) + 0.5f);
  v.y = static_cast<int>(obs[1] * (KitchenLayout::kHeight - 1) + 0.5f);
  v.dir = argmax_range(obs, 2, 4);
  v.held = static_cast<Held>(argmax_range(obs, 6, 4));
  v.other_x = static_cast<int>(obs[10] * (KitchenLayout::kWidth - 1) + 0.5f);
  v.other_y = static_cast<int>(obs[11] * (KitchenLayout::kHeight - 1) + 0.5f);
  v.other_held = static_cast<Held>(argmax_range(obs, 16, 4));
  v.pot_onions = static_cast<int>(obs[20] * KitchenLayout::kPotCapacity + 0.5f);
  v.ready = obs[22] > 0.5f;
  return v;
}

constexpr int kStepDx[4] = {0, 0, -1, 1};
constexpr int kStepDy[4] = {-1, 1, 0, 0};

// First move action of a shortest path to (tx,ty), avoiding the other agent.
// kActStay when already there or no path exists.
int bfs_step(const KitchenLayout& l, int sx, int sy, int tx, int ty,
             int block_x, int block_y) {
  if (sx == tx && sy == ty) return kActStay;
  auto idx = [](int x, int y) { return y * KitchenLayout::kWidth + x; };
  std::array<int, KitchenLayout::kWidth * KitchenLayout::kHeight> first_move{};
  first_move.fill(-1);
  std::queue<std::pair<int, int>> frontier;
  frontier.push({sx, sy});
  first_move[static_cast<size_t>(idx(sx, sy))] = kActStay;
  while (!frontier.empty()) {
    auto [cx, cy] = frontier.front();
    frontier.pop();
    for (int d = 0; d < 4; ++d) {
      const int nx = cx + kStepDx[d];
      const int ny = cy + kStepDy[d];
      if (l.at(nx, ny) != Cell::kFloor) continue;
      if (nx == block_x && ny == block_y) continue;
      if (first_move[static_cast<size_t>(idx(nx, ny))] != -1) continue;
      const int origin = first_move[static_cast<size_t>(idx(cx, cy))];
      first_move[static_cast<size_t>(idx(nx, ny))] = origin == kActStay ? d : origin;
      if (nx == tx && ny == ty)
        return first_move[static_cast<size_t>(idx(nx, ny))];
      frontier.push({nx, ny});
    }
  }
  return kActStay;
}

// Walk to a floor cell next to a station, then face it, then interact.
int go_use_station(const KitchenView& v, int stand_x, int stand_y,
                   int station_x, int station_y) {
  const KitchenLayout& l = cramped_room_layout();
  if (v.x == stand_x && v.y == stand_y) {
    const int want = direction_toward(station_x - stand_x, station_y - stand_y);
    if (v.dir == want) return kActInteract;
    return want;  // station cells are not floor, so this only turns
  }
  return bfs_step(l, v.x, v.y, stand_x, stand_y, v.other_x, v.other_y);
}

bool other_wants_pot(const KitchenView& v) {
  if (v.other_held == Held::kOnion && v.pot_onions < KitchenLayout::kPotCapacity)
    return true;
  return v.other_held == Held::kDish && v.ready;
}

// Walk to and use the pot stand. Two runners with the same goal would
// otherwise contest the single stand forever, so when both need the pot the
// one with the smaller (x, y) goes first. Both agents evaluate the rule from
// their own observations and reach the same verdict.
int approach_pot(const KitchenView& v) {
  if (v.x == 2 && v.y == 1) return go_use_station(v, 2, 1, 2, 0);
  if (v.other_x == 2 && v.other_y == 1) return kActStay;  // stand is taken
  if (other_wants_pot(v) &&
      std::make_pair(v.x, v.y) > std::make_pair(v.other_x, v.other_y))
    return kActStay;
  return go_use_station(v, 2, 1, 2, 0);
}

// Prefer the onion pile on our own side so two runners naturally split, but
// never target a standing spot the other agent occupies.
int go_to_pile(const KitchenView& v) {
  bool use_right = v.x >= 3;
  if (v.other_x == 1 && v.other_y == 1) use_right = true;
  if (v.other_x == 3 && v.other_y == 1) use_right = false;
  if (use_right) return go_use_station(v, 3, 1, 4, 1);
  return go_use_station(v, 1, 1, 0, 1);
}

// Step off the pot stand toward a free onion stand so the scooper can get in.
int step_aside(const KitchenView& v) {
  const int tx = (v.other_x == 3 && v.other_y == 1) ? 1 : 3;
  return bfs_step(cramped_room_layout(), v.x, v.y, tx, 1, v.other_x, v.other_y);
}

int kitchen_runner_action(const std::vector<float>& obs) {
  const KitchenView v = decode_kitchen_obs(obs);
  const bool at_pot_stand = v.x == 2 && v.y == 1;
  switch (v.held) {
    case Held::kNothing:
      if (v.pot_onions < KitchenLayout::kPotCapacity) return go_to_pile(v);
      // Pot is busy. One dish is enough, so stage a spare onion instead when
      // the partner already carries dishware.
      if (v.other_held == Held::kDish || v.other_held == Held::kSoup)
        return go_to_pile(v);
      if (at_pot_stand) return step_aside(v);
      return go_use_station(v, 1, 2, 1, 3);  // fetch a dish
    case Held::kOnion:
      if (v.pot_onions < KitchenLayout::kPotCapacity) return approach_pot(v);
      if (at_pot_stand) return step_aside(v);
      return kActStay;  // pot full; hold the spare where we stand
    case Held::kDish:
      if (v.ready) return approach_pot(v);
      if (v.pot_onions == KitchenLayout::kPotCapacity) {
        // Cooking: park on the pot stand so the soup can be scooped at once.
        if (at_pot_stand) return kActStay;
        if (v.other_x == 2 && v.other_y == 1) return kActStay;
        return bfs_step(cramped_room_layout(), v.x, v.y, 2, 1, v.other_x,
                        v.other_y);
      }
      // Dish fetched early: wait by the dish pile, clear of the loading run.
      if (v.x == 1 && v.y == 2) return kActStay;
      if (at_pot_stand) return step_aside(v);
      return bfs_step(cramped_room_layout(), v.x, v.y, 1, 2, v.other_x,
                      v.other_y);
    case Held::kSoup:
      return go_use_station(v, 3, 2, 3, 3);
  }
  return kActStay;
}

// ---------------------------------------------------------------------------

EnvSpec substrate_spec(const std::string& substrate_name) {
  return make_substrate(substrate_name, 0)->spec();
}

const MatrixSpec* matrix_spec_for(const std::string& substrate_name) {
  if (substrate_name == "rps_matrix") return &rps_matrix_spec();
  if (substrate_name == "pd_matrix") return &pd_matrix_spec();
  return nullptr;
}

}  // namespace

BackgroundBot make_bot(const std::string& id, const std::string& substrate_name) {
  auto constant = [&](int action) {
    return BackgroundBot{id, [action](const std::vector<float>&, std::mt19937&) {
                           return action;
                         }};
  };
  if (id == "always_rock" || id == "always_cooperate") return constant(0);
  if (id == "always_paper" || id == "always_defect") return constant(1);
  if (id == "always_scissors") return constant(2);

  if (id == "uniform_random") {
    const int num_actions = substrate_spec(substrate_name).num_actions;
    return {id, [num_actions](const std::vector<float>&, std::mt19937& rng) {
              return uniform_below(rng, num_actions);
            }};
  }

  if (id == "tit_for_tat") {
    // Matrix observation: [own one-hot A, opponent one-hot A, first-round
    // flag]. Cooperate (action 0) first, then mirror the opponent.
    return {id, [](const std::vector<float>& obs, std::mt19937&) {
              const size_t num_actions = (obs.size() - 1) / 2;
              if (obs.back() > 0.5f) return 0;
              return argmax_range(obs, num_actions, num_actions);
            }};
  }

  if (id == "best_response_to_last") {
    const MatrixSpec* game = matrix_spec_for(substrate_name);
    if (game == nullptr) throw UnknownBot(id + " (needs a matrix substrate)");
    return {id, [game](const std::vector<float>& obs, std::mt19937& rng) {
              const size_t num_actions = (obs.size() - 1) / 2;
              if (obs.back() > 0.5f)
                return uniform_below(rng, static_cast<int>(num_actions));
              const int opp = argmax_range(obs, num_actions, num_actions);
              // Both bundled games are symmetric, so the row payoffs give
              // the best response for either seat.
              int best = 0;
              for (size_t a = 1; a < num_actions; ++a)
                if (game->payoff_row[a][static_cast<size_t>(opp)] >
                    game->payoff_row[static_cast<size_t>(best)][static_cast<size_t>(opp)])
                  best = static_cast<int>(a);
              return best;
            }};
  }

  if (id == "kitchen_runner") {
    if (substrate_name != "cramped_kitchen")
      throw UnknownBot(id + " (needs cramped_kitchen)");
    return {id, [](const std::vector<float>& obs, std::mt19937&) {
              return kitchen_runner_action(obs);
            }};
  }

  if (id.rfind("ckpt:", 0) == 0) {
    std::string path = id.substr(5);
    size_t agent_idx = 0;
    if (const size_t hash = path.rfind('#'); hash != std::string::npos) {
      agent_idx = static_cast<size_t>(std::stoul(path.substr(hash + 1)));
      path = path.substr(0, hash);
    }
    std::vector<nn::Params> population = nn::load_checkpoint(path);
    if (agent_idx >= population.size())
      throw nn::CheckpointLoadError("agent index " + std::to_string(agent_idx) +
                                    " out of range in " + path);
    auto params = std::make_shared<nn::Params>(std::move(population[agent_idx]));
    return {id, [params](const std::vector<float>& obs, std::mt19937& rng) {
              return nn::sample_action(nn::forward(*params, obs).logits, rng).action;
            }};
  }

  throw UnknownBot(id);
}

// ---------------------------------------------------------------------------
// ScenarioEnv
// ---------------------------------------------------------------------------

ScenarioEnv::ScenarioEnv(ScenarioSpec spec, uint64_t seed)
    : scenario_(std::move(spec)),
      inner_(make_substrate(scenario_.substrate, derive_seed(seed, 1))),
      rng_(static_cast<uint32_t>(derive_seed(seed, 2))) {
  const EnvSpec& inner_spec = inner_->spec();
  if (scenario_.focal_slots < 1 ||
      scenario_.focal_slots + static_cast<int>(scenario_.background_bots.size()) !=
          inner_spec.num_players)
    throw ArityMismatch(scenario_.focal_slots, scenario_.background_bots.size(),
                        inner_spec.num_players);
  for (const std::string& id : scenario_.background_bots)
    bots_.push_back(make_bot(id, scenario_.substrate));
  spec_ = EnvSpec{scenario_.focal_slots, inner_spec.obs_dim,
                  inner_spec.num_actions, inner_spec.max_episode_len};
}

TimeStep ScenarioEnv::project(const TimeStep& inner) const {
  TimeStep out;
  out.step_type = inner.step_type;
  out.discount = inner.discount;
  for (int slot : focal_slot_of_) {
    out.rewards.push_back(inner.rewards[static_cast<size_t>(slot)]);
    out.observations.push_back(inner.observations[static_cast<size_t>(slot)]);
  }
  return out;
}

TimeStep ScenarioEnv::reset() {
  const int players = inner_->spec().num_players;
  std::vector<int> slots(static_cast<size_t>(players));
  for (int i = 0; i < players; ++i) slots[static_cast<size_t>(i)] = i;
  if (scenario_.assignment == ScenarioSpec::Assignment::kShuffledPerEpisode) {
    for (int i = players - 1; i > 0; --i)
      std::swap(slots[static_cast<size_t>(i)],
                slots[static_cast<size_t>(uniform_below(rng_, i + 1))]);
  }
  focal_slot_of_.assign(slots.begin(), slots.begin() + scenario_.focal_slots);
  bot_slot_of_.assign(slots.begin() + scenario_.focal_slots, slots.end());

  TimeStep inner_ts = inner_->reset();
  inner_obs_ = inner_ts.observations;
  return project(inner_ts);
}

TimeStep ScenarioEnv::step(const std::vector<int>& actions) {
  if (actions.size() != static_cast<size_t>(scenario_.focal_slots))
    throw BadActionCount(actions.size(), static_cast<size_t>(scenario_.focal_slots));
  if (inner_obs_.empty()) throw StepAfterEnd();

  std::vector<int> full(static_cast<size_t>(inner_->spec().num_players), 0);
  for (size_t i = 0; i < actions.size(); ++i)
    full[static_cast<size_t>(focal_slot_of_[i])] = actions[i];
  for (size_t j = 0; j < bots_.size(); ++j) {
    const int slot = bot_slot_of_[j];
    full[static_cast<size_t>(slot)] =
        bots_[j].act(inner_obs_[static_cast<size_t>(slot)], rng_);
  }

  TimeStep inner_ts = inner_->step(full);
  inner_obs_ = inner_ts.observations;
  if (inner_ts.last()) inner_obs_.clear();  // guard bot state for StepAfterEnd
  return project(inner_ts);
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

namespace {

std::vector<ScenarioSpec> build_registry(const std::string& substrate,
                                         const std::vector<std::string>& bots) {
  std::vector<ScenarioSpec> out;
  for (size_t k = 0; k < bots.size(); ++k) {
    ScenarioSpec s;
    s.name = substrate + ".scenario_" + std::to_string(k);
    s.substrate = substrate;
    s.background_bots = {bots[k]};
    s.focal_slots = 1;
    s.assignment = ScenarioSpec::Assignment::kFixed;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

const std::vector<ScenarioSpec>& list_scenarios(const std::string& substrate) {
  static const std::map<std::string, std::vector<ScenarioSpec>> registry = {
      {"rps_matrix",
       build_registry("rps_matrix", {"always_rock", "always_paper", "always_scissors",
                                     "uniform_random", "best_response_to_last"})},
      {"pd_matrix",
       build_registry("pd_matrix", {"always_cooperate", "always_defect", "tit_for_tat",
                                    "uniform_random", "best_response_to_last"})},
      {"cramped_kitchen",
       build_registry("cramped_kitchen", {"kitchen_runner", "uniform_random"})},
  };
  auto it = registry.find(substrate);
  if (it == registry.end()) throw UnknownSubstrate(substrate);
  return it->second;
}

std::unique_ptr<ScenarioEnv> make_scenario(const ScenarioSpec& spec, uint64_t seed) {
  return std::make_unique<ScenarioEnv>(spec, seed);
}

ScenarioSpec resolve_scenario_name(const std::string& name) {
  const size_t dot = name.find('.');
  if (dot == std::string::npos) {
    // Bare substrate: every slot is focal (self-play pseudo-scenario).
    ScenarioSpec s;
    s.name = name;
    s.substrate = name;
    s.focal_slots = substrate_spec(name).num_players;  // UnknownSubstrate if bad
    return s;
  }
  const std::string substrate = name.substr(0, dot);
  const std::string suffix = name.substr(dot + 1);
  const std::vector<ScenarioSpec>& entries = list_scenarios(substrate);
  for (const ScenarioSpec& s : entries)
    if (s.name == name) return s;
  (void)suffix;
  throw UnknownScenario(name);
}

std::unique_ptr<ScenarioEnv> make_scenario_by_name(const std::string& name,
                                                   uint64_t seed) {
  return make_scenario(resolve_scenario_name(name), seed);
}

}  // namespace marl
