#pragma once

#include <array>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "marl/envcore.hpp"

namespace marl {

struct UnknownSubstrate : EnvError {
  explicit UnknownSubstrate(const std::string& name)
      : EnvError("unknown substrate: " + name) {}
};

// ---------------------------------------------------------------------------
// Repeated matrix games
// ---------------------------------------------------------------------------

// A two-player repeated matrix game. payoff_row[i][j] pays player 1 when
// player 1 plays i and player 2 plays j; payoff_col pays player 2.
struct MatrixSpec {
  std::string name;
  int num_actions = 0;
  int rounds_per_episode = 0;
  std::vector<std::vector<float>> payoff_row;
  std::vector<std::vector<float>> payoff_col;
};

// rock/paper/scissors as resources, +-1/0 payoffs, zero-sum.
const MatrixSpec& rps_matrix_spec();
// prisoner's dilemma, T=5 R=3 P=1 S=0, symmetric.
const MatrixSpec& pd_matrix_spec();

std::pair<float, float> matrix_payoff(const MatrixSpec& spec, int a1, int a2);

// Observation per player: [one-hot own last action, one-hot opponent last
// action, first-round flag] => obs_dim = 2*A + 1.
class MatrixGameEnv : public EnvBase {
 public:
  MatrixGameEnv(const MatrixSpec& spec, uint64_t seed);
  const MatrixSpec& game() const { return game_; }

 protected:
  std::vector<std::vector<float>> on_reset() override;
  StepResult on_step(const std::vector<int>& actions) override;

 private:
  std::vector<float> observation_for(int player) const;
  MatrixSpec game_;
  int round_ = 0;
  std::array<int, 2> last_actions_{-1, -1};
};

// ---------------------------------------------------------------------------
// Cramped kitchen
// ---------------------------------------------------------------------------

// The cooking loop: onions -> pot x3 -> cook -> scoop onto a dish -> deliver
// at the window. Delivering pays soup_reward to both agents.

enum class Cell : uint8_t { kFloor, kWall, kOnionPile, kPot, kDishPile, kServe };
enum class Held : uint8_t { kNothing, kOnion, kDish, kSoup };

// Orientation and movement actions share indices 0..3.
enum Direction : int { kUp = 0, kDown = 1, kLeft = 2, kRight = 3 };
enum KitchenAction : int {
  kActUp = 0,
  kActDown = 1,
  kActLeft = 2,
  kActRight = 3,
  kActStay = 4,
  kActInteract = 5,
};

struct KitchenLayout {
  static constexpr int kWidth = 5;
  static constexpr int kHeight = 4;
  static constexpr int kCookTime = 20;
  static constexpr float kSoupReward = 20.0f;
  static constexpr int kMaxEpisodeLen = 200;
  static constexpr int kPotCapacity = 3;

  std::array<Cell, kWidth * kHeight> cells{};
  std::array<std::pair<int, int>, 2> spawns{};

  Cell at(int x, int y) const { return cells[static_cast<size_t>(y * kWidth + x)]; }
};

const KitchenLayout& cramped_room_layout();

struct KitchenAgent {
  int x = 0;
  int y = 0;
  int dir = kUp;
  Held held = Held::kNothing;
};

struct KitchenState {
  std::array<KitchenAgent, 2> agents{};
  int pot_onions = 0;
  int pot_timer = 0;  // ticks remaining; > 0 only while pot_onions == 3
  bool soup_ready() const { return pot_onions == KitchenLayout::kPotCapacity && pot_timer == 0; }
};

KitchenState kitchen_reset(const KitchenLayout& layout);

// One simultaneous tick: pot cooking advances, then movement with the
// collision rule (same target or a swap attempt blocks both), then interacts.
std::pair<KitchenState, std::array<float, 2>> kitchen_step(
    const KitchenLayout& layout, const KitchenState& state,
    const std::array<int, 2>& actions);

// Flat features: per agent (self first) x/y normalized, orientation one-hot,
// held one-hot; then pot onions/3, timer/cook_time, soup-ready flag.
// obs_dim = 2*10 + 3 = 23.
std::vector<float> kitchen_observation(const KitchenLayout& layout,
                                       const KitchenState& state, int player);
constexpr int kKitchenObsDim = 23;

class CrampedKitchenEnv : public EnvBase {
 public:
  explicit CrampedKitchenEnv(uint64_t seed);
  const KitchenState& state() const { return state_; }

 protected:
  std::vector<std::vector<float>> on_reset() override;
  StepResult on_step(const std::vector<int>& actions) override;

 private:
  KitchenState state_;
};

// ---------------------------------------------------------------------------

// name in {"rps_matrix", "pd_matrix", "cramped_kitchen"}.
std::unique_ptr<Environment> make_substrate(const std::string& name, uint64_t seed);
const std::vector<std::string>& substrate_names();

}  // namespace marl
