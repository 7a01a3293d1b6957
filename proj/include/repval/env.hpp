#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "repval/rng.hpp"

namespace repval::env {

using AgentId = std::uint32_t;

enum class Team : std::uint8_t { A, B };
enum class Winner : std::uint8_t { None, A, B, Draw };
enum class Scenario : std::uint8_t { Battle, WildWar };
enum class RenderFormat : std::uint8_t { Ascii, Ppm };

std::string_view to_string(Team t);
std::string_view to_string(Winner w);
std::string_view to_string(Scenario s);
Scenario parse_scenario(std::string_view name);

inline Team opponent(Team t) { return t == Team::A ? Team::B : Team::A; }

struct GridConfig {
  int width = 20;
  int height = 20;
  int agents_per_team = 8;
  int max_steps = 100;
  int hp_max = 10;
  int attack_damage = 2;
  int view_radius = 3;
  int neighbor_radius = 6;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the first violated field.
  void validate() const;

  static GridConfig desk();
  /// 40x40 map, 64 agents per army, 400 steps per round.
  static GridConfig full();
};

struct Cell {
  int x = 0;
  int y = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

// ---------------------------------------------------------------------------
// Actions
//
// Index layout (fixed, checkpoints depend on it):
//   0        Stay
//   1 ..  8  Move   N, NE, E, SE, S, SW, W, NW
//   9 .. 16  Attack N, NE, E, SE, S, SW, W, NW
// North is row y-1; directions run clockwise.
// ---------------------------------------------------------------------------

inline constexpr int kDirections = 8;
inline constexpr int kActionCount = 1 + 2 * kDirections;

inline constexpr std::array<Cell, kDirections> kDirectionOffsets{{
    {0, -1}, {1, -1}, {1, 0}, {1, 1}, {0, 1}, {-1, 1}, {-1, 0}, {-1, -1}}};

enum class ActionKind : std::uint8_t { Stay, Move, Attack };

class Action {
 public:
  constexpr Action() = default;
  static constexpr Action stay() { return Action(0); }
  static constexpr Action move(int dir) { return Action(1 + dir); }
  static constexpr Action attack(int dir) { return Action(1 + kDirections + dir); }
  /// Throws ContractError on an index outside [0, kActionCount).
  static Action from_index(int index);

  constexpr int index() const { return index_; }
  constexpr ActionKind kind() const {
    if (index_ == 0) return ActionKind::Stay;
    return index_ <= kDirections ? ActionKind::Move : ActionKind::Attack;
  }
  /// Direction in [0, 8); -1 for Stay.
  constexpr int direction() const {
    if (index_ == 0) return -1;
    return (index_ - 1) % kDirections;
  }

  friend constexpr bool operator==(Action, Action) = default;

 private:
  constexpr explicit Action(int index) : index_(index) {}
  int index_ = 0;
};

struct AgentState {
  AgentId id = 0;
  Team team = Team::A;
  Cell pos;
  int hp = 0;
  bool alive = false;
  Action last_action;
};

// Reward constants of the battle game.
namespace reward {
inline constexpr double kMove = -0.005;
inline constexpr double kAttackEnemy = 0.2;
inline constexpr double kKill = 5.0;
inline constexpr double kAttackEmpty = -0.1;
inline constexpr double kAttacked = -0.1;
}  // namespace reward

using JointAction = std::vector<std::pair<AgentId, Action>>;

struct StepOutcome {
  std::map<AgentId, double> rewards;
  std::vector<std::pair<AgentId, AgentId>> kills;  // (killer, victim)
  bool terminal = false;
  Winner winner = Winner::None;

  /// Distinct agents killed this step; a shared kill lists its victim once.
  std::vector<AgentId> victims() const;
};

struct Observation {
  std::vector<double> self_features;  // x, y normalized; hp fraction; one-hot last action
  std::vector<double> local_view;     // (2r+1)^2 cells x {ally, enemy, hp}, cell-major

  std::vector<double> flatten() const;
  static std::size_t self_size();
  static std::size_t view_size(const GridConfig& cfg);
  static std::size_t flat_size(const GridConfig& cfg);
};

class GridWorld {
 public:
  GridWorld(GridConfig config, std::uint64_t seed);

  const GridConfig& config() const { return config_; }
  int step_count() const { return steps_; }
  const std::vector<AgentState>& agents() const { return agents_; }
  const AgentState& agent(AgentId id) const;
  std::vector<AgentId> living(Team team) const;
  std::vector<AgentId> living() const;
  int living_count(Team team) const;
  /// Living agent id at `c`, if any. Out-of-bounds cells are empty.
  std::optional<AgentId> occupant(Cell c) const;
  bool in_bounds(Cell c) const;

  /// Places a new agent; used by scenario builders and scripted tests.
  AgentId add_agent(Team team, Cell pos);
  /// Direct HP override for scripted setups; hp <= 0 removes the agent.
  void set_hp(AgentId id, int hp);

  StepOutcome step(const JointAction& actions);
  Observation observe(AgentId id) const;
  std::pair<bool, Winner> is_terminal() const;
  std::string render(RenderFormat format) const;

 private:
  int cell_index(Cell c) const { return c.y * config_.width + c.x; }

  GridConfig config_;
  std::vector<AgentState> agents_;
  std::vector<int> occupancy_;  // -1 = empty, else agent id
  int steps_ = 0;
  Rng rng_;
};

/// Builds the initial world. Battle: armies fill the left/right quarter
/// columns row-major; WildWar: distinct uniformly random cells.
GridWorld new_scenario(const GridConfig& config, Scenario scenario, std::uint64_t seed);

}  // namespace repval::env
