#include "repval/env.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "repval/errors.hpp"

namespace repval::env {

std::string_view to_string(Team t) { return t == Team::A ? "A" : "B"; }

std::string_view to_string(Winner w) {
  switch (w) {
    case Winner::A: return "A";
    case Winner::B: return "B";
    case Winner::Draw: return "Draw";
    case Winner::None: break;
  }
  return "None";
}

std::string_view to_string(Scenario s) {
  return s == Scenario::Battle ? "battle" : "wildwar";
}

Scenario parse_scenario(std::string_view name) {
  if (name == "battle" || name == "Battle") return Scenario::Battle;
  if (name == "wildwar" || name == "WildWar" || name == "wild_war") return Scenario::WildWar;
  throw ConfigError("unknown scenario '" + std::string(name) + "' (expected battle|wildwar)");
}

void GridConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) {
    throw ConfigError("env." + key + ": " + why);
  };
  if (width < 4) fail("width", "must be >= 4");
  if (height < 4) fail("height", "must be >= 4");
  if (agents_per_team < 1) fail("agents_per_team", "must be >= 1");
  if (2L * agents_per_team > static_cast<long>(width) * height)
    fail("agents_per_team", "two armies do not fit on the map");
  if (max_steps < 1) fail("max_steps", "must be >= 1");
  if (hp_max < 1) fail("hp_max", "must be >= 1");
  if (attack_damage < 1) fail("attack_damage", "must be >= 1");
  if (view_radius < 0) fail("view_radius", "must be >= 0");
  if (neighbor_radius < 0) fail("neighbor_radius", "must be >= 0");
}

GridConfig GridConfig::desk() { return GridConfig{}; }

GridConfig GridConfig::full() {
  GridConfig c;
  c.width = 40;
  c.height = 40;
  c.agents_per_team = 64;
  c.max_steps = 400;
  return c;
}

Action Action::from_index(int index) {
  if (index < 0 || index >= kActionCount)
    throw ContractError("action index out of range: " + std::to_string(index));
  return Action(index);
}

// ---------------------------------------------------------------------------

std::size_t Observation::self_size() { return 3 + kActionCount; }

std::size_t Observation::view_size(const GridConfig& cfg) {
  const auto side = static_cast<std::size_t>(2 * cfg.view_radius + 1);
  return side * side * 3;
}

std::size_t Observation::flat_size(const GridConfig& cfg) {
  return self_size() + view_size(cfg);
}

std::vector<double> Observation::flatten() const {
  std::vector<double> out;
  out.reserve(self_features.size() + local_view.size());
  out.insert(out.end(), self_features.begin(), self_features.end());
  out.insert(out.end(), local_view.begin(), local_view.end());
  return out;
}

// ---------------------------------------------------------------------------

GridWorld::GridWorld(GridConfig config, std::uint64_t seed)
    : config_(config), rng_(seed) {
  // Full validation happens in new_scenario; bare worlds (scripted tests,
  // tiny render fixtures) only need a non-empty map.
  if (config_.width < 1 || config_.height < 1 || config_.hp_max < 1)
    throw ConfigError("env: map dimensions and hp_max must be positive");
  occupancy_.assign(static_cast<std::size_t>(config_.width) * config_.height, -1);
}

const AgentState& GridWorld::agent(AgentId id) const {
  if (id >= agents_.size()) throw ContractError("unknown agent id " + std::to_string(id));
  return agents_[id];
}

std::vector<AgentId> GridWorld::living(Team team) const {
  std::vector<AgentId> ids;
  for (const auto& a : agents_)
    if (a.alive && a.team == team) ids.push_back(a.id);
  return ids;
}

std::vector<AgentId> GridWorld::living() const {
  std::vector<AgentId> ids;
  for (const auto& a : agents_)
    if (a.alive) ids.push_back(a.id);
  return ids;
}

int GridWorld::living_count(Team team) const {
  return static_cast<int>(std::count_if(agents_.begin(), agents_.end(), [team](const auto& a) {
    return a.alive && a.team == team;
  }));
}

bool GridWorld::in_bounds(Cell c) const {
  return c.x >= 0 && c.y >= 0 && c.x < config_.width && c.y < config_.height;
}

std::optional<AgentId> GridWorld::occupant(Cell c) const {
  if (!in_bounds(c)) return std::nullopt;
  const int v = occupancy_[cell_index(c)];
  if (v < 0) return std::nullopt;
  return static_cast<AgentId>(v);
}

AgentId GridWorld::add_agent(Team team, Cell pos) {
  if (!in_bounds(pos)) throw ContractError("agent placed out of bounds");
  if (occupant(pos)) throw ContractError("cell already occupied");
  AgentState a;
  a.id = static_cast<AgentId>(agents_.size());
  a.team = team;
  a.pos = pos;
  a.hp = config_.hp_max;
  a.alive = true;
  agents_.push_back(a);
  occupancy_[cell_index(pos)] = static_cast<int>(a.id);
  return a.id;
}

void GridWorld::set_hp(AgentId id, int hp) {
  auto& a = agents_.at(id);
  if (!a.alive) throw ContractError("set_hp on dead agent");
  a.hp = std::min(hp, config_.hp_max);
  if (a.hp <= 0) {
    a.hp = 0;
    a.alive = false;
    occupancy_[cell_index(a.pos)] = -1;
  }
}

std::vector<AgentId> StepOutcome::victims() const {
  std::vector<AgentId> out;
  for (const auto& [_, v] : kills)
    if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  return out;
}

StepOutcome GridWorld::step(const JointAction& actions) {
  const auto n = agents_.size();
  std::vector<std::optional<Action>> chosen(n);
  for (const auto& [id, act] : actions) {
    if (id >= n) throw ContractError("action for unknown agent id " + std::to_string(id));
    if (!agents_[id].alive)
      throw ContractError("action for dead agent id " + std::to_string(id));
    if (chosen[id]) throw ContractError("duplicate action for agent id " + std::to_string(id));
    chosen[id] = act;
  }
  for (const auto& a : agents_)
    if (a.alive && !chosen[a.id])
      throw ContractError("missing action for living agent id " + std::to_string(a.id));

  StepOutcome out;
  for (AgentId id = 0; id < n; ++id)
    if (chosen[id]) out.rewards[id] = 0.0;

  // (1) Attacks resolve simultaneously against pre-step positions.
  std::vector<int> damage(n, 0);
  std::vector<std::vector<AgentId>> attackers(n);
  for (AgentId id = 0; id < n; ++id) {
    if (!chosen[id] || chosen[id]->kind() != ActionKind::Attack) continue;
    const auto& self = agents_[id];
    const auto off = kDirectionOffsets[chosen[id]->direction()];
    const auto victim = occupant({self.pos.x + off.x, self.pos.y + off.y});
    if (victim && agents_[*victim].team != self.team) {
      out.rewards[id] += reward::kAttackEnemy;
      out.rewards[*victim] += reward::kAttacked;
      damage[*victim] += config_.attack_damage;
      attackers[*victim].push_back(id);
    } else {
      out.rewards[id] += reward::kAttackEmpty;
    }
  }

  // (2) Apply damage, remove the dead, split kill rewards.
  for (AgentId v = 0; v < n; ++v) {
    if (damage[v] == 0) continue;
    auto& victim = agents_[v];
    victim.hp = std::max(0, victim.hp - damage[v]);
    if (victim.hp > 0) continue;
    victim.alive = false;
    occupancy_[cell_index(victim.pos)] = -1;
    const double share = reward::kKill / static_cast<double>(attackers[v].size());
    for (AgentId k : attackers[v]) {
      out.rewards[k] += share;
      out.kills.emplace_back(k, v);
    }
  }

  // (3) Moves in seeded random order; blocked moves stay put but still pay.
  std::vector<AgentId> movers;
  for (AgentId id = 0; id < n; ++id) {
    if (!chosen[id] || chosen[id]->kind() != ActionKind::Move) continue;
    out.rewards[id] += reward::kMove;
    if (agents_[id].alive) movers.push_back(id);
  }
  shuffle(movers.begin(), movers.end(), rng_);
  for (AgentId id : movers) {
    auto& a = agents_[id];
    const auto off = kDirectionOffsets[chosen[id]->direction()];
    const Cell to{a.pos.x + off.x, a.pos.y + off.y};
    if (!in_bounds(to) || occupancy_[cell_index(to)] >= 0) continue;
    occupancy_[cell_index(a.pos)] = -1;
    a.pos = to;
    occupancy_[cell_index(to)] = static_cast<int>(id);
  }

  for (AgentId id = 0; id < n; ++id)
    if (chosen[id]) agents_[id].last_action = *chosen[id];

  ++steps_;
  std::tie(out.terminal, out.winner) = is_terminal();
  return out;
}

std::pair<bool, Winner> GridWorld::is_terminal() const {
  const int a = living_count(Team::A);
  const int b = living_count(Team::B);
  if (a == 0 && b == 0) return {true, Winner::Draw};
  if (b == 0) return {true, Winner::A};
  if (a == 0) return {true, Winner::B};
  if (steps_ >= config_.max_steps) {
    if (a > b) return {true, Winner::A};
    if (b > a) return {true, Winner::B};
    return {true, Winner::Draw};
  }
  return {false, Winner::None};
}

Observation GridWorld::observe(AgentId id) const {
  const auto& self = agent(id);
  if (!self.alive) throw ContractError("observe on dead agent id " + std::to_string(id));

  Observation obs;
  obs.self_features.assign(Observation::self_size(), 0.0);
  obs.self_features[0] = static_cast<double>(self.pos.x) / (config_.width - 1);
  obs.self_features[1] = static_cast<double>(self.pos.y) / (config_.height - 1);
  obs.self_features[2] = static_cast<double>(self.hp) / config_.hp_max;
  obs.self_features[3 + self.last_action.index()] = 1.0;

  const int r = config_.view_radius;
  obs.local_view.assign(Observation::view_size(config_), 0.0);
  std::size_t k = 0;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx, k += 3) {
      const auto who = occupant({self.pos.x + dx, self.pos.y + dy});
      if (!who) continue;
      const auto& other = agents_[*who];
      obs.local_view[k + (other.team == self.team ? 0 : 1)] = 1.0;
      obs.local_view[k + 2] = static_cast<double>(other.hp) / config_.hp_max;
    }
  }
  return obs;
}

std::string GridWorld::render(RenderFormat format) const {
  const int w = config_.width;
  const int h = config_.height;
  std::string out;
  if (format == RenderFormat::Ascii) {
    out.reserve(static_cast<std::size_t>(w + 1) * h);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const auto who = occupant({x, y});
        if (!who) {
          out.push_back('.');
          continue;
        }
        const auto& a = agents_[*who];
        const bool healthy = 2 * a.hp >= config_.hp_max;
        if (a.team == Team::A)
          out.push_back(healthy ? 'a' : 'A');
        else
          out.push_back(healthy ? 'b' : 'B');
      }
      out.push_back('\n');
    }
    return out;
  }

  out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto who = occupant({x, y});
      unsigned char px[3] = {255, 255, 255};
      if (who) {
        const auto& a = agents_[*who];
        const auto level = static_cast<unsigned char>(
            std::lround(255.0 * static_cast<double>(a.hp) / config_.hp_max));
        px[0] = px[1] = px[2] = 0;
        px[a.team == Team::A ? 0 : 2] = level;
      }
      out.append(reinterpret_cast<const char*>(px), 3);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

GridWorld new_scenario(const GridConfig& config, Scenario scenario, std::uint64_t seed) {
  config.validate();
  GridWorld world(config, seed);
  const int n = config.agents_per_team;

  if (scenario == Scenario::Battle) {
    const int cols = std::max(1, config.width / 4);
    if (static_cast<long>(cols) * config.height < n)
      throw ConfigError("env.agents_per_team: " + std::to_string(n) +
                        " agents do not fit in a " + std::to_string(cols) + "-column camp");
    const int rows = (n + cols - 1) / cols;
    const int top = (config.height - rows) / 2;
    for (Team team : {Team::A, Team::B}) {
      const int left = team == Team::A ? 0 : config.width - cols;
      for (int i = 0; i < n; ++i)
        world.add_agent(team, {left + i % cols, top + i / cols});
    }
    return world;
  }

  // WildWar: partial Fisher-Yates over all cells.
  Rng rng(derive_seed(seed, 0x57494c44ULL));
  std::vector<int> cells(static_cast<std::size_t>(config.width) * config.height);
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
  for (int i = 0; i < 2 * n; ++i) {
    const auto j = i + uniform_index(rng, cells.size() - i);
    std::swap(cells[i], cells[j]);
    const int c = cells[i];
    world.add_agent(i < n ? Team::A : Team::B, {c % config.width, c / config.width});
  }
  return world;
}

}  // namespace repval::env
