#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "repval/env.hpp"
#include "repval/learn.hpp"

namespace repval::cli {

struct PlayerSpec {
  std::string name;
  std::filesystem::path checkpoint;
  learn::AlgoVariant variant = learn::AlgoVariant::RFQ;
};

struct RunConfig {
  env::GridConfig env = env::GridConfig::desk();
  /// obs_dim is derived from `env` and seed from train.seed; neither may be set.
  learn::LearnerConfig algo;

  struct Train {
    int episodes = 500;
    int checkpoint_interval = 100;
    std::uint64_t seed = 1;
    env::Scenario scenario = env::Scenario::Battle;
  } train;

  struct Tournament {
    std::vector<PlayerSpec> players;
    env::Scenario scenario = env::Scenario::Battle;
    int n_games = 100;
    double k_factor = 32.0;
    double initial_rating = 1200.0;
    std::uint64_t seed = 1;
  } tournament;

  struct Paths {
    std::filesystem::path output = "out";
  } paths;

  /// Learner config with obs_dim and seed filled in.
  learn::LearnerConfig learner_config() const;
};

nlohmann::json to_json(const RunConfig& c);
/// Throws ConfigError naming the offending key; unknown keys are rejected.
/// Missing keys keep their defaults.
RunConfig run_config_from_json(const nlohmann::json& j);
/// Throws ConfigError (message contains the path) when the file is missing.
RunConfig load_run_config(const std::filesystem::path& path);

/// Sets one leaf, addressed as "section.key" or by a bare key when it is
/// unique across sections (e.g. "episodes"). Throws ConfigError otherwise.
void apply_override(RunConfig& c, const std::string& key, const std::string& value);

/// REPVAL_SEED, when set, replaces the env, train and tournament seeds.
void apply_seed_env(RunConfig& c);

using Overrides = std::vector<std::pair<std::string, std::string>>;

// Subcommands. Each returns the process exit status and never throws.
int cmd_train(const std::filesystem::path& config, const Overrides& overrides, int workers,
              std::ostream& out, std::ostream& err);
int cmd_tournament(const std::filesystem::path& config, const Overrides& overrides, int workers,
                   std::ostream& out, std::ostream& err);

struct RenderRequest {
  /// Checkpoint path, or one of the built-in policies "random", "stay", "attacker".
  std::string player_a;
  std::string player_b;
  env::Scenario scenario = env::Scenario::Battle;
  std::uint64_t seed = 1;
  std::filesystem::path out_dir;
  /// Environment for built-in-only matches; checkpoints carry their own.
  std::optional<env::GridConfig> env;
};
int cmd_render(const RenderRequest& request, std::ostream& out, std::ostream& err);

struct VerifyOptions {
  std::uint64_t seed = 1;
  std::size_t samples = 10000;
  /// Negative control: a fixture outside the bound's precondition checked
  /// against a 3.9M bound. Must FAIL.
  bool inject_violation = false;
};
int cmd_verify(const VerifyOptions& options, std::ostream& out, std::ostream& err);

}  // namespace repval::cli
