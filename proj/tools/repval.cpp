#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "repval/cli.hpp"
#include "repval/env.hpp"

namespace {

// Collects trailing "--key value" pairs that CLI11 leaves unparsed.
bool split_overrides(const std::vector<std::string>& rest, repval::cli::Overrides& out) {
  for (std::size_t i = 0; i < rest.size(); ++i) {
    const auto& k = rest[i];
    if (k.rfind("--", 0) != 0 || k.size() <= 2) {
      std::cerr << "error: unexpected argument '" << k << "'\n";
      return false;
    }
    const auto eq = k.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(k.substr(2, eq - 2), k.substr(eq + 1));
    } else if (i + 1 < rest.size()) {
      out.emplace_back(k.substr(2), rest[++i]);
    } else {
      std::cerr << "error: override " << k << " has no value\n";
      return false;
    }
  }
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Represented value function learning for many-agent battle games"};
  app.require_subcommand(1);
  int workers = 1;
  app.add_option("--workers", workers, "Parallel workers for rollouts and matches")
      ->check(CLI::PositiveNumber);

  std::string config;
  auto* train = app.add_subcommand("train", "Self-play training");
  train->add_option("config", config, "Run config (JSON)")->required();
  train->allow_extras();

  auto* tourn = app.add_subcommand("tournament", "Elo tournament between trained checkpoints");
  tourn->add_option("config", config, "Run config (JSON)")->required();
  tourn->allow_extras();

  repval::cli::RenderRequest render;
  std::string scenario = "Battle";
  std::string render_config;
  auto* rend = app.add_subcommand("render", "Play one match and dump every frame");
  rend->add_option("player_a", render.player_a, "Checkpoint or random|stay|attacker")->required();
  rend->add_option("player_b", render.player_b, "Checkpoint or random|stay|attacker")->required();
  rend->add_option("--scenario", scenario, "Battle or WildWar");
  rend->add_option("--seed", render.seed, "Match seed");
  rend->add_option("--out", render.out_dir, "Output directory")->required();
  rend->add_option("--config", render_config, "Run config supplying env for built-in players");

  repval::cli::VerifyOptions verify;
  auto* ver = app.add_subcommand("verify", "Numerical checks of the theory and core math");
  ver->add_option("--seed", verify.seed, "Seed");
  ver->add_option("--samples", verify.samples, "Samples per sampled check");
  ver->add_flag("--inject-violation", verify.inject_violation,
                "Add a fixture that must fail (negative control)");

  CLI11_PARSE(app, argc, argv);

  if (train->parsed() || tourn->parsed()) {
    auto* sub = train->parsed() ? train : tourn;
    repval::cli::Overrides overrides;
    if (!split_overrides(sub->remaining(), overrides)) return 2;
    return train->parsed() ? repval::cli::cmd_train(config, overrides, workers, std::cout, std::cerr)
                           : repval::cli::cmd_tournament(config, overrides, workers, std::cout, std::cerr);
  }
  if (rend->parsed()) {
    try {
      render.scenario = repval::env::parse_scenario(scenario);
      if (!render_config.empty()) render.env = repval::cli::load_run_config(render_config).env;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return 2;
    }
    return repval::cli::cmd_render(render, std::cout, std::cerr);
  }
  return repval::cli::cmd_verify(verify, std::cout, std::cerr);
}
