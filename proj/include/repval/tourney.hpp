#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "repval/env.hpp"
#include "repval/learn.hpp"

namespace repval::tourney {

enum class Outcome : std::uint8_t { AWins, BWins, Draw };

/// Expected score of a against b under the logistic model.
double expected_score(double r_a, double r_b);

/// Throws ContractError on non-finite ratings or k <= 0.
std::pair<double, double> elo_update(double r_a, double r_b, Outcome outcome, double k);

struct EloTable {
  std::map<std::string, double> ratings;
  double k_factor = 32.0;
  double initial_rating = 1200.0;

  void add_player(const std::string& name) { ratings.emplace(name, initial_rating); }
  double rating(const std::string& name) const { return ratings.at(name); }
  void apply(const std::string& a, const std::string& b, Outcome outcome);
  double total() const;
};

// ---------------------------------------------------------------------------
// Policies that can drive an army
// ---------------------------------------------------------------------------

class Policy {
 public:
  virtual ~Policy() = default;
  /// Actions for every living agent of `team`. Deterministic given `seed`.
  virtual env::JointAction act(const env::GridWorld& world, env::Team team,
                               std::uint64_t seed) const = 0;
};

/// Evaluation mode: Q-learners act greedily, actor-critic learners sample
/// from pi_theta. No learning.
class LearnerPolicy final : public Policy {
 public:
  explicit LearnerPolicy(std::shared_ptr<const learn::Learner> learner, int workers = 1)
      : learner_(std::move(learner)), workers_(workers) {}
  env::JointAction act(const env::GridWorld& world, env::Team team, std::uint64_t seed) const override;
  const learn::Learner& learner() const { return *learner_; }

 private:
  std::shared_ptr<const learn::Learner> learner_;
  int workers_;
};

class RandomPolicy final : public Policy {
 public:
  env::JointAction act(const env::GridWorld& world, env::Team team, std::uint64_t seed) const override;
};

class StayPolicy final : public Policy {
 public:
  env::JointAction act(const env::GridWorld& world, env::Team team, std::uint64_t seed) const override;
};

/// Attacks an adjacent enemy if there is one (lowest direction index first),
/// otherwise steps toward the nearest enemy.
class ScriptedAttacker final : public Policy {
 public:
  env::JointAction act(const env::GridWorld& world, env::Team team, std::uint64_t seed) const override;
};

// ---------------------------------------------------------------------------
// Players and matches
// ---------------------------------------------------------------------------

struct Player {
  std::string name;
  std::filesystem::path checkpoint;
  learn::AlgoVariant variant = learn::AlgoVariant::RFQ;
  std::shared_ptr<const Policy> policy;  // set by load_player or directly
};

/// Loads the checkpoint and checks that its variant matches `variant`.
/// Throws CheckpointError naming the player otherwise.
Player load_player(const std::string& name, const std::filesystem::path& checkpoint,
                   learn::AlgoVariant variant, int workers = 1);

struct MatchResult {
  std::string player_a;
  std::string player_b;
  env::Winner winner = env::Winner::None;
  int kills_a = 0;  // army B agents killed by army A
  int kills_b = 0;
  int steps = 0;
  std::uint64_t seed = 0;
};

struct ScheduledMatch {
  std::size_t a = 0;  // index into the player list, drives army A
  std::size_t b = 0;
  std::uint64_t seed = 0;
};

/// n_games uniformly random distinct pairs with random sides. Throws
/// ConfigError with fewer than two players.
std::vector<ScheduledMatch> schedule(std::size_t n_players, int n_games, std::uint64_t seed);

using FrameObserver = std::function<void(const env::GridWorld&)>;

/// Runs one match to terminal; army A follows `a`, army B follows `b`.
/// `on_frame` sees the initial world and the world after every step.
MatchResult play_match(const Policy& a, const Policy& b, env::Scenario scenario,
                       const env::GridConfig& config, std::uint64_t seed,
                       const FrameObserver& on_frame = {});
MatchResult play_match(const Player& a, const Player& b, env::Scenario scenario,
                       const env::GridConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Tournament
// ---------------------------------------------------------------------------

struct PlayerStats {
  std::string name;
  double elo = 0.0;
  int kills = 0;
  int deaths = 0;
  double kd_ratio = 0.0;  // kills / max(1, deaths)
  int wins = 0;
  int losses = 0;
  int draws = 0;
  int games = 0;
  double winrate = 0.0;  // wins / games
};

struct StatsReport {
  std::vector<PlayerStats> players;  // ranking order: elo desc, then name
  std::map<std::string, std::map<std::string, int>> wins;  // wins[row][col]

  std::string ranking_csv() const;
  std::string pairwise_csv() const;
  std::string winmatrix_csv() const;
};

struct TournamentOptions {
  double k_factor = 32.0;
  double initial_rating = 1200.0;
  int workers = 1;
};

struct TournamentResult {
  StatsReport report;
  EloTable elo;
  std::vector<MatchResult> matches;  // schedule order
};

TournamentResult run_tournament(const std::vector<Player>& players, env::Scenario scenario,
                                const env::GridConfig& config, int n_games, std::uint64_t seed,
                                const TournamentOptions& options = {});

/// Elo fold and statistics over completed matches, in the given order.
TournamentResult summarize(const std::vector<Player>& players, std::vector<MatchResult> matches,
                           const TournamentOptions& options = {});

}  // namespace repval::tourney
