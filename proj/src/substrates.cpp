#include "marl/substrates.hpp"

#include <algorithm>

namespace marl {

// ---------------------------------------------------------------------------
// Matrix games
// ---------------------------------------------------------------------------

const MatrixSpec& rps_matrix_spec() {
  static const MatrixSpec spec = [] {
    MatrixSpec s;
    s.name = "rps_matrix";
    s.num_actions = 3;
    s.rounds_per_episode = 10;
    // 0 = rock, 1 = paper, 2 = scissors.
    s.payoff_row = {{0.0f, -1.0f, 1.0f}, {1.0f, 0.0f, -1.0f}, {-1.0f, 1.0f, 0.0f}};
    s.payoff_col.assign(3, std::vector<float>(3, 0.0f));
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) s.payoff_col[i][j] = -s.payoff_row[i][j];
    return s;
  }();
  return spec;
}

const MatrixSpec& pd_matrix_spec() {
  static const MatrixSpec spec = [] {
    MatrixSpec s;
    s.name = "pd_matrix";
    s.num_actions = 2;
    s.rounds_per_episode = 10;
    // 0 = cooperate, 1 = defect.
    s.payoff_row = {{3.0f, 0.0f}, {5.0f, 1.0f}};
    s.payoff_col.assign(2, std::vector<float>(2, 0.0f));
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) s.payoff_col[i][j] = s.payoff_row[j][i];
    return s;
  }();
  return spec;
}

std::pair<float, float> matrix_payoff(const MatrixSpec& spec, int a1, int a2) {
  return {spec.payoff_row[static_cast<size_t>(a1)][static_cast<size_t>(a2)],
          spec.payoff_col[static_cast<size_t>(a1)][static_cast<size_t>(a2)]};
}

MatrixGameEnv::MatrixGameEnv(const MatrixSpec& spec, uint64_t seed)
    : EnvBase(EnvSpec{2, 2 * spec.num_actions + 1, spec.num_actions,
                      spec.rounds_per_episode},
              seed),
      game_(spec) {}

std::vector<float> MatrixGameEnv::observation_for(int player) const {
  const int a = game_.num_actions;
  std::vector<float> obs(static_cast<size_t>(2 * a + 1), 0.0f);
  if (round_ == 0) {
    obs.back() = 1.0f;
  } else {
    const int own = last_actions_[static_cast<size_t>(player)];
    const int opp = last_actions_[static_cast<size_t>(1 - player)];
    obs[static_cast<size_t>(own)] = 1.0f;
    obs[static_cast<size_t>(a + opp)] = 1.0f;
  }
  return obs;
}

std::vector<std::vector<float>> MatrixGameEnv::on_reset() {
  round_ = 0;
  last_actions_ = {-1, -1};
  return {observation_for(0), observation_for(1)};
}

EnvBase::StepResult MatrixGameEnv::on_step(const std::vector<int>& actions) {
  last_actions_ = {actions[0], actions[1]};
  ++round_;
  auto [r1, r2] = matrix_payoff(game_, actions[0], actions[1]);
  StepResult out;
  out.rewards = {r1, r2};
  out.observations = {observation_for(0), observation_for(1)};
  // The match is genuinely over after the last round, so this is a
  // termination rather than a truncation.
  out.terminated = round_ >= game_.rounds_per_episode;
  return out;
}

// ---------------------------------------------------------------------------
// Cramped kitchen
// ---------------------------------------------------------------------------

const KitchenLayout& cramped_room_layout() {
  static const KitchenLayout layout = [] {
    KitchenLayout l;
    // X = counter/wall, P = pot, O = onion pile, D = dish pile, S = window.
    const char* rows[KitchenLayout::kHeight] = {
        "XXPXX",
        "O...O",
        "X...X",
        "XDXSX",
    };
    for (int y = 0; y < KitchenLayout::kHeight; ++y) {
      for (int x = 0; x < KitchenLayout::kWidth; ++x) {
        Cell c = Cell::kWall;
        switch (rows[y][x]) {
          case '.': c = Cell::kFloor; break;
          case 'X': c = Cell::kWall; break;
          case 'P': c = Cell::kPot; break;
          case 'O': c = Cell::kOnionPile; break;
          case 'D': c = Cell::kDishPile; break;
          case 'S': c = Cell::kServe; break;
        }
        l.cells[static_cast<size_t>(y * KitchenLayout::kWidth + x)] = c;
      }
    }
    l.spawns = {{{1, 1}, {3, 1}}};
    return l;
  }();
  return layout;
}

namespace {

constexpr int kDx[4] = {0, 0, -1, 1};
constexpr int kDy[4] = {-1, 1, 0, 0};

}  // namespace

KitchenState kitchen_reset(const KitchenLayout& layout) {
  KitchenState s;
  for (int i = 0; i < 2; ++i) {
    s.agents[static_cast<size_t>(i)] = KitchenAgent{
        layout.spawns[static_cast<size_t>(i)].first,
        layout.spawns[static_cast<size_t>(i)].second, kUp, Held::kNothing};
  }
  return s;
}

std::pair<KitchenState, std::array<float, 2>> kitchen_step(
    const KitchenLayout& layout, const KitchenState& state,
    const std::array<int, 2>& actions) {
  KitchenState next = state;
  std::array<float, 2> rewards{0.0f, 0.0f};

  // Cooking progresses regardless of what the agents do. The soup becomes
  // scoopable on the tick the timer reaches zero.
  if (next.pot_onions == KitchenLayout::kPotCapacity && next.pot_timer > 0) {
    --next.pot_timer;
  }

  // Simultaneous movement. A move action always turns the agent; it only
  // changes the position when the target square is free floor. Two agents
  // heading for the same square, or trying to swap, both stay put.
  std::array<std::pair<int, int>, 2> desired;
  for (int i = 0; i < 2; ++i) {
    KitchenAgent& a = next.agents[static_cast<size_t>(i)];
    desired[static_cast<size_t>(i)] = {a.x, a.y};
    if (actions[static_cast<size_t>(i)] < 4) {
      a.dir = actions[static_cast<size_t>(i)];
      const int tx = a.x + kDx[a.dir];
      const int ty = a.y + kDy[a.dir];
      if (layout.at(tx, ty) == Cell::kFloor) {
        desired[static_cast<size_t>(i)] = {tx, ty};
      }
    }
  }
  const bool same_target = desired[0] == desired[1];
  const bool swap =
      desired[0] == std::make_pair(state.agents[1].x, state.agents[1].y) &&
      desired[1] == std::make_pair(state.agents[0].x, state.agents[0].y) &&
      desired[0] != desired[1];
  if (!same_target && !swap) {
    for (int i = 0; i < 2; ++i) {
      next.agents[static_cast<size_t>(i)].x = desired[static_cast<size_t>(i)].first;
      next.agents[static_cast<size_t>(i)].y = desired[static_cast<size_t>(i)].second;
    }
  }

  // Interacts, agent 0 first.
  for (int i = 0; i < 2; ++i) {
    if (actions[static_cast<size_t>(i)] != kActInteract) continue;
    KitchenAgent& a = next.agents[static_cast<size_t>(i)];
    const int fx = a.x + kDx[a.dir];
    const int fy = a.y + kDy[a.dir];
    switch (layout.at(fx, fy)) {
      case Cell::kOnionPile:
        if (a.held == Held::kNothing) a.held = Held::kOnion;
        break;
      case Cell::kDishPile:
        if (a.held == Held::kNothing) a.held = Held::kDish;
        break;
      case Cell::kPot:
        if (a.held == Held::kOnion &&
            next.pot_onions < KitchenLayout::kPotCapacity) {
          a.held = Held::kNothing;
          ++next.pot_onions;
          if (next.pot_onions == KitchenLayout::kPotCapacity) {
            next.pot_timer = KitchenLayout::kCookTime;
          }
        } else if (a.held == Held::kDish && next.soup_ready()) {
          a.held = Held::kSoup;
          next.pot_onions = 0;
          next.pot_timer = 0;
        }
        break;
      case Cell::kServe:
        if (a.held == Held::kSoup) {
          a.held = Held::kNothing;
          rewards[0] += KitchenLayout::kSoupReward;
          rewards[1] += KitchenLayout::kSoupReward;
        }
        break;
      default:
        break;
    }
  }

  return {next, rewards};
}

std::vector<float> kitchen_observation(const KitchenLayout& layout,
                                       const KitchenState& state, int player) {
  std::vector<float> obs;
  obs.reserve(kKitchenObsDim);
  for (int k = 0; k < 2; ++k) {
    const KitchenAgent& a = state.agents[static_cast<size_t>((player + k) % 2)];
    obs.push_back(static_cast<float>(a.x) / (KitchenLayout::kWidth - 1));
    obs.push_back(static_cast<float>(a.y) / (KitchenLayout::kHeight - 1));
    for (int d = 0; d < 4; ++d) obs.push_back(a.dir == d ? 1.0f : 0.0f);
    for (int h = 0; h < 4; ++h) {
      obs.push_back(static_cast<int>(a.held) == h ? 1.0f : 0.0f);
    }
  }
  obs.push_back(static_cast<float>(state.pot_onions) / KitchenLayout::kPotCapacity);
  obs.push_back(static_cast<float>(state.pot_timer) / KitchenLayout::kCookTime);
  obs.push_back(state.soup_ready() ? 1.0f : 0.0f);
  (void)layout;
  return obs;
}

CrampedKitchenEnv::CrampedKitchenEnv(uint64_t seed)
    : EnvBase(EnvSpec{2, kKitchenObsDim, 6, KitchenLayout::kMaxEpisodeLen}, seed) {}

std::vector<std::vector<float>> CrampedKitchenEnv::on_reset() {
  state_ = kitchen_reset(cramped_room_layout());
  return {kitchen_observation(cramped_room_layout(), state_, 0),
          kitchen_observation(cramped_room_layout(), state_, 1)};
}

EnvBase::StepResult CrampedKitchenEnv::on_step(const std::vector<int>& actions) {
  auto [next, rewards] =
      kitchen_step(cramped_room_layout(), state_, {actions[0], actions[1]});
  state_ = next;
  StepResult out;
  out.rewards = {rewards[0], rewards[1]};
  out.observations = {kitchen_observation(cramped_room_layout(), state_, 0),
                      kitchen_observation(cramped_room_layout(), state_, 1)};
  // The shift never "ends" on its own; episodes stop at the step limit, which
  // the base class reports as a truncation (discount stays 1).
  out.terminated = false;
  return out;
}

// ---------------------------------------------------------------------------

std::unique_ptr<Environment> make_substrate(const std::string& name, uint64_t seed) {
  if (name == "rps_matrix") return std::make_unique<MatrixGameEnv>(rps_matrix_spec(), seed);
  if (name == "pd_matrix") return std::make_unique<MatrixGameEnv>(pd_matrix_spec(), seed);
  if (name == "cramped_kitchen") return std::make_unique<CrampedKitchenEnv>(seed);
  throw UnknownSubstrate(name);
}

const std::vector<std::string>& substrate_names() {
  static const std::vector<std::string> names = {"rps_matrix", "pd_matrix",
                                                 "cramped_kitchen"};
  return names;
}

}  // namespace marl
