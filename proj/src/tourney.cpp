#include "repval/tourney.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "repval/errors.hpp"
#include "repval/rng.hpp"

namespace repval::tourney {

double expected_score(double r_a, double r_b) {
  return 1.0 / (1.0 + std::pow(10.0, (r_b - r_a) / 400.0));
}

std::pair<double, double> elo_update(double r_a, double r_b, Outcome outcome, double k) {
  if (!std::isfinite(r_a) || !std::isfinite(r_b)) throw ContractError("elo_update: non-finite rating");
  if (!(k > 0.0) || !std::isfinite(k)) throw ContractError("elo_update: k must be > 0");
  const double e_a = expected_score(r_a, r_b);
  const double s_a = outcome == Outcome::AWins ? 1.0 : outcome == Outcome::BWins ? 0.0 : 0.5;
  // b moves by k((1 - s_a) - (1 - e_a)) = -delta. Rounding delta to a multiple
  // of 2^-20 keeps both sums exact for ratings on that grid, so the exchange
  // is zero-sum in floating point as well.
  const double delta = std::ldexp(std::nearbyint(std::ldexp(k * (s_a - e_a), 20)), -20);
  return {r_a + delta, r_b - delta};
}

void EloTable::apply(const std::string& a, const std::string& b, Outcome outcome) {
  auto& ra = ratings.at(a);
  auto& rb = ratings.at(b);
  std::tie(ra, rb) = elo_update(ra, rb, outcome, k_factor);
}

double EloTable::total() const {
  double s = 0.0;
  for (const auto& [_, r] : ratings) s += r;
  return s;
}

// ---------------------------------------------------------------------------

env::JointAction LearnerPolicy::act(const env::GridWorld& world, env::Team team,
                                    std::uint64_t seed) const {
  const auto agents = world.living(team);
  if (agents.empty()) return {};
  const auto wf = learn::capture_frame(world);
  const bool explore = learn::is_actor_critic(learner_->variant());
  return learn::choose_actions(*learner_, world, wf, agents, explore, seed, workers_);
}

env::JointAction RandomPolicy::act(const env::GridWorld& world, env::Team team,
                                   std::uint64_t seed) const {
  env::JointAction out;
  for (auto id : world.living(team)) {
    Rng rng(derive_seed(seed, id));
    out.emplace_back(id, env::Action::from_index(
                             static_cast<int>(uniform_index(rng, env::kActionCount))));
  }
  return out;
}

env::JointAction StayPolicy::act(const env::GridWorld& world, env::Team team, std::uint64_t) const {
  env::JointAction out;
  for (auto id : world.living(team)) out.emplace_back(id, env::Action::stay());
  return out;
}

env::JointAction ScriptedAttacker::act(const env::GridWorld& world, env::Team team,
                                       std::uint64_t) const {
  env::JointAction out;
  const auto enemies = world.living(env::opponent(team));
  for (auto id : world.living(team)) {
    const auto pos = world.agent(id).pos;
    std::optional<env::Action> choice;
    for (int d = 0; d < env::kDirections && !choice; ++d) {
      const env::Cell c{pos.x + env::kDirectionOffsets[d].x, pos.y + env::kDirectionOffsets[d].y};
      if (auto occ = world.occupant(c); occ && world.agent(*occ).team != team)
        choice = env::Action::attack(d);
    }
    if (!choice && !enemies.empty()) {
      env::AgentId best = enemies.front();
      int best_dist = -1;
      for (auto e : enemies) {
        const auto p = world.agent(e).pos;
        const int dist = std::max(std::abs(p.x - pos.x), std::abs(p.y - pos.y));
        if (best_dist < 0 || dist < best_dist) {
          best = e;
          best_dist = dist;
        }
      }
      const auto target = world.agent(best).pos;
      const env::Cell step{(target.x > pos.x) - (target.x < pos.x), (target.y > pos.y) - (target.y < pos.y)};
      for (int d = 0; d < env::kDirections; ++d)
        if (env::kDirectionOffsets[d] == step) choice = env::Action::move(d);
    }
    out.emplace_back(id, choice.value_or(env::Action::stay()));
  }
  return out;
}

// ---------------------------------------------------------------------------

Player load_player(const std::string& name, const std::filesystem::path& checkpoint,
                   learn::AlgoVariant variant, int workers) {
  learn::LoadedCheckpoint loaded;
  try {
    loaded = learn::load_checkpoint(checkpoint);
  } catch (const CheckpointError& e) {
    throw CheckpointError("player " + name + ": " + e.what());
  }
  if (loaded.learner->variant() != variant)
    throw CheckpointError("player " + name + ": checkpoint holds " +
                          std::string(learn::to_string(loaded.learner->variant())) + ", expected " +
                          std::string(learn::to_string(variant)));
  Player p;
  p.name = name;
  p.checkpoint = checkpoint;
  p.variant = variant;
  p.policy = std::make_shared<LearnerPolicy>(
      std::shared_ptr<const learn::Learner>(std::move(loaded.learner)), workers);
  return p;
}

std::vector<ScheduledMatch> schedule(std::size_t n_players, int n_games, std::uint64_t seed) {
  if (n_players < 2) throw ConfigError("tournament.players: need at least 2 players");
  if (n_games < 0) throw ConfigError("tournament.n_games: must be >= 0");
  Rng rng(derive_seed(seed, 0));
  std::vector<ScheduledMatch> out;
  out.reserve(static_cast<std::size_t>(n_games));
  for (int g = 0; g < n_games; ++g) {
    ScheduledMatch m;
    m.a = uniform_index(rng, n_players);
    m.b = uniform_index(rng, n_players - 1);
    if (m.b >= m.a) ++m.b;
    m.seed = derive_seed(seed, 1, static_cast<std::uint64_t>(g));
    out.push_back(m);
  }
  return out;
}

MatchResult play_match(const Policy& a, const Policy& b, env::Scenario scenario,
                       const env::GridConfig& config, std::uint64_t seed,
                       const FrameObserver& on_frame) {
  auto world = env::new_scenario(config, scenario, derive_seed(seed, 1));
  if (on_frame) on_frame(world);
  MatchResult r;
  r.seed = seed;
  for (std::uint64_t t = 0;; ++t) {
    auto [done, winner] = world.is_terminal();
    if (done) {
      r.winner = winner;
      break;
    }
    auto joint = a.act(world, env::Team::A, derive_seed(seed, 2, 2 * t));
    auto jb = b.act(world, env::Team::B, derive_seed(seed, 2, 2 * t + 1));
    joint.insert(joint.end(), jb.begin(), jb.end());
    const auto outcome = world.step(joint);
    if (on_frame) on_frame(world);
    for (const auto victim : outcome.victims())
      (world.agent(victim).team == env::Team::B ? r.kills_a : r.kills_b) += 1;
    if (outcome.terminal) {
      r.winner = outcome.winner;
      break;
    }
  }
  r.steps = world.step_count();
  return r;
}

namespace {

void check_player(const Player& p, const env::GridConfig& config) {
  if (!p.policy) throw ContractError("player " + p.name + " has no policy loaded");
  if (const auto* lp = dynamic_cast<const LearnerPolicy*>(p.policy.get())) {
    const auto want = static_cast<int>(env::Observation::flat_size(config));
    if (lp->learner().config().obs_dim != want)
      throw ConfigError("player " + p.name + ": checkpoint observation size " +
                        std::to_string(lp->learner().config().obs_dim) +
                        " does not match the environment (" + std::to_string(want) + ")");
  }
}

}  // namespace

MatchResult play_match(const Player& a, const Player& b, env::Scenario scenario,
                       const env::GridConfig& config, std::uint64_t seed) {
  check_player(a, config);
  check_player(b, config);
  auto r = play_match(*a.policy, *b.policy, scenario, config, seed);
  r.player_a = a.name;
  r.player_b = b.name;
  return r;
}

// ---------------------------------------------------------------------------

TournamentResult run_tournament(const std::vector<Player>& players, env::Scenario scenario,
                                const env::GridConfig& config, int n_games, std::uint64_t seed,
                                const TournamentOptions& options) {
  std::set<std::string> names;
  for (const auto& p : players) {
    if (!names.insert(p.name).second) throw ConfigError("tournament.players: duplicate name " + p.name);
    check_player(p, config);
  }
  const auto plan = schedule(players.size(), n_games, seed);
  std::vector<MatchResult> results(plan.size());

  const int workers = std::max(1, options.workers);
  if (workers == 1 || plan.size() <= 1) {
    for (std::size_t g = 0; g < plan.size(); ++g)
      results[g] = play_match(players[plan[g].a], players[plan[g].b], scenario, config, plan[g].seed);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
      for (std::size_t g; (g = next.fetch_add(1)) < plan.size();) {
        try {
          results[g] = play_match(players[plan[g].a], players[plan[g].b], scenario, config, plan[g].seed);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = plan.size();
        }
      }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < std::min<int>(workers, static_cast<int>(plan.size())); ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
  }
  return summarize(players, std::move(results), options);
}

TournamentResult summarize(const std::vector<Player>& players, std::vector<MatchResult> matches,
                           const TournamentOptions& options) {
  TournamentResult out;
  out.elo.k_factor = options.k_factor;
  out.elo.initial_rating = options.initial_rating;
  std::map<std::string, PlayerStats> stats;
  for (const auto& p : players) {
    out.elo.add_player(p.name);
    stats[p.name].name = p.name;
  }

  for (const auto& m : matches) {
    const Outcome o = m.winner == env::Winner::A   ? Outcome::AWins
                      : m.winner == env::Winner::B ? Outcome::BWins
                                                   : Outcome::Draw;
    out.elo.apply(m.player_a, m.player_b, o);
    auto& a = stats.at(m.player_a);
    auto& b = stats.at(m.player_b);
    ++a.games;
    ++b.games;
    a.kills += m.kills_a;
    a.deaths += m.kills_b;
    b.kills += m.kills_b;
    b.deaths += m.kills_a;
    auto& wa = out.report.wins[m.player_a][m.player_b];
    auto& wb = out.report.wins[m.player_b][m.player_a];
    if (o == Outcome::AWins) {
      ++a.wins;
      ++b.losses;
      ++wa;
    } else if (o == Outcome::BWins) {
      ++b.wins;
      ++a.losses;
      ++wb;
    } else {
      ++a.draws;
      ++b.draws;
    }
  }

  for (auto& [name, s] : stats) {
    s.elo = out.elo.rating(name);
    s.kd_ratio = static_cast<double>(s.kills) / std::max(1, s.deaths);
    s.winrate = s.games > 0 ? static_cast<double>(s.wins) / s.games : 0.0;
    out.report.players.push_back(s);
  }
  std::sort(out.report.players.begin(), out.report.players.end(),
            [](const PlayerStats& x, const PlayerStats& y) {
              return x.elo != y.elo ? x.elo > y.elo : x.name < y.name;
            });
  out.matches = std::move(matches);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<const PlayerStats*> active(const std::vector<PlayerStats>& players) {
  std::vector<const PlayerStats*> out;
  for (const auto& p : players)
    if (p.games > 0) out.push_back(&p);
  return out;
}

int lookup(const std::map<std::string, std::map<std::string, int>>& wins, const std::string& row,
           const std::string& col) {
  const auto r = wins.find(row);
  if (r == wins.end()) return 0;
  const auto c = r->second.find(col);
  return c == r->second.end() ? 0 : c->second;
}

}  // namespace

std::string StatsReport::ranking_csv() const {
  std::ostringstream os;
  os << "rank,player,elo,kd_ratio,kills,winrate,games,draws\n";
  int rank = 0;
  for (const auto* p : active(players))
    os << ++rank << ',' << p->name << ',' << fixed(p->elo, 2) << ',' << fixed(p->kd_ratio, 4) << ','
       << p->kills << ',' << fixed(p->winrate, 4) << ',' << p->games << ',' << p->draws << '\n';
  return os.str();
}

std::string StatsReport::pairwise_csv() const {
  std::ostringstream os;
  os << "player,opponent,wins\n";
  const auto rows = active(players);
  for (const auto* r : rows) {
    const auto it = wins.find(r->name);
    if (it == wins.end()) continue;
    for (const auto* c : rows)
      if (c != r && it->second.contains(c->name))
        os << r->name << ',' << c->name << ',' << it->second.at(c->name) << '\n';
  }
  return os.str();
}

std::string StatsReport::winmatrix_csv() const {
  std::ostringstream os;
  const auto rows = active(players);
  os << "player";
  for (const auto* c : rows) os << ',' << c->name;
  os << '\n';
  for (const auto* r : rows) {
    os << r->name;
    for (const auto* c : rows) os << ',' << lookup(wins, r->name, c->name);
    os << '\n';
  }
  return os.str();
}

}  // namespace repval::tourney
