#include "repval/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

#include "repval/aggregate.hpp"
#include "repval/errors.hpp"
#include "repval/nn.hpp"
#include "repval/rng.hpp"
#include "repval/tourney.hpp"

namespace repval::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------

learn::LearnerConfig RunConfig::learner_config() const {
  auto c = algo;
  c.obs_dim = static_cast<int>(env::Observation::flat_size(env));
  c.action_count = env::kActionCount;
  c.seed = train.seed;
  return c;
}

json to_json(const RunConfig& c) {
  auto algo = learn::to_json(c.algo);
  algo.erase("obs_dim");
  algo.erase("action_count");
  algo.erase("seed");
  json players = json::array();
  for (const auto& p : c.tournament.players)
    players.push_back({{"name", p.name},
                       {"checkpoint", p.checkpoint.string()},
                       {"variant", std::string(learn::to_string(p.variant))}});
  return {
      {"env", learn::to_json(c.env)},
      {"algo", algo},
      {"train",
       {{"episodes", c.train.episodes},
        {"checkpoint_interval", c.train.checkpoint_interval},
        {"seed", c.train.seed},
        {"scenario", std::string(env::to_string(c.train.scenario))}}},
      {"tournament",
       {{"players", players},
        {"scenario", std::string(env::to_string(c.tournament.scenario))},
        {"n_games", c.tournament.n_games},
        {"k_factor", c.tournament.k_factor},
        {"initial_rating", c.tournament.initial_rating},
        {"seed", c.tournament.seed}}},
      {"paths", {{"output", c.paths.output.string()}}},
  };
}

namespace {

template <typename T>
void read(const json& v, const std::string& where, T& out) {
  try {
    out = v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + ": wrong type");
  }
}

env::Scenario read_scenario(const json& v, const std::string& where) {
  if (!v.is_string()) throw ConfigError(where + ": wrong type");
  try {
    return env::parse_scenario(v.get<std::string>());
  } catch (const std::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

void require_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
  require_object(j, "config");
  RunConfig c;
  for (const auto& [section, body] : j.items()) {
    if (section == "env") {
      c.env = learn::grid_config_from_json(body);
    } else if (section == "algo") {
      require_object(body, "algo");
      for (const char* derived : {"obs_dim", "action_count", "seed"})
        if (body.contains(derived))
          throw ConfigError(std::string("algo.") + derived + ": derived from env/train, do not set");
      c.algo = learn::learner_config_from_json(body);
    } else if (section == "train") {
      require_object(body, "train");
      for (const auto& [key, v] : body.items()) {
        const auto where = "train." + key;
        if (key == "episodes") read(v, where, c.train.episodes);
        else if (key == "checkpoint_interval") read(v, where, c.train.checkpoint_interval);
        else if (key == "seed") read(v, where, c.train.seed);
        else if (key == "scenario") c.train.scenario = read_scenario(v, where);
        else throw ConfigError(where + ": unknown key");
      }
    } else if (section == "tournament") {
      require_object(body, "tournament");
      for (const auto& [key, v] : body.items()) {
        const auto where = "tournament." + key;
        if (key == "players") {
          if (!v.is_array()) throw ConfigError(where + ": expected an array");
          for (std::size_t i = 0; i < v.size(); ++i) {
            const auto pw = where + "[" + std::to_string(i) + "]";
            require_object(v[i], pw);
            PlayerSpec p;
            bool has_name = false, has_ckpt = false, has_variant = false;
            for (const auto& [pk, pv] : v[i].items()) {
              if (pk == "name") {
                read(pv, pw + ".name", p.name);
                has_name = true;
              } else if (pk == "checkpoint") {
                std::string s;
                read(pv, pw + ".checkpoint", s);
                p.checkpoint = s;
                has_ckpt = true;
              } else if (pk == "variant") {
                std::string s;
                read(pv, pw + ".variant", s);
                try {
                  p.variant = learn::parse_variant(s);
                } catch (const std::exception& e) {
                  throw ConfigError(pw + ".variant: " + e.what());
                }
                has_variant = true;
              } else {
                throw ConfigError(pw + "." + pk + ": unknown key");
              }
            }
            if (!has_name) throw ConfigError(pw + ".name: missing");
            if (!has_ckpt) throw ConfigError(pw + ".checkpoint: missing");
            if (!has_variant) throw ConfigError(pw + ".variant: missing");
            c.tournament.players.push_back(std::move(p));
          }
        } else if (key == "scenario") c.tournament.scenario = read_scenario(v, where);
        else if (key == "n_games") read(v, where, c.tournament.n_games);
        else if (key == "k_factor") read(v, where, c.tournament.k_factor);
        else if (key == "initial_rating") read(v, where, c.tournament.initial_rating);
        else if (key == "seed") read(v, where, c.tournament.seed);
        else throw ConfigError(where + ": unknown key");
      }
    } else if (section == "paths") {
      require_object(body, "paths");
      for (const auto& [key, v] : body.items()) {
        if (key != "output") throw ConfigError("paths." + key + ": unknown key");
        std::string s;
        read(v, "paths.output", s);
        c.paths.output = s;
      }
    } else {
      throw ConfigError(section + ": unknown section");
    }
  }

  c.env.validate();
  c.learner_config().validate();
  if (c.train.episodes < 0) throw ConfigError("train.episodes: must be >= 0");
  if (c.train.checkpoint_interval < 0) throw ConfigError("train.checkpoint_interval: must be >= 0");
  if (c.tournament.n_games < 0) throw ConfigError("tournament.n_games: must be >= 0");
  if (!(c.tournament.k_factor > 0.0)) throw ConfigError("tournament.k_factor: must be > 0");
  if (!std::isfinite(c.tournament.initial_rating))
    throw ConfigError("tournament.initial_rating: must be finite");
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

void apply_override(RunConfig& c, const std::string& key, const std::string& value) {
  auto j = to_json(c);
  std::string section, leaf = key;
  if (const auto dot = key.find('.'); dot != std::string::npos) {
    section = key.substr(0, dot);
    leaf = key.substr(dot + 1);
    if (!j.contains(section) || !j[section].contains(leaf))
      throw ConfigError(key + ": unknown key");
  } else {
    std::vector<std::string> hits;
    for (const auto& [s, body] : j.items())
      if (body.contains(leaf)) hits.push_back(s);
    if (hits.empty()) throw ConfigError(key + ": unknown key");
    if (hits.size() > 1) {
      std::string msg = key + ": ambiguous, use one of";
      for (const auto& h : hits) msg += " " + h + "." + leaf;
      throw ConfigError(msg);
    }
    section = hits.front();
  }

  auto& slot = j[section][leaf];
  const auto where = section + "." + leaf;
  try {
    if (slot.is_string()) {
      slot = value;
    } else if (slot.is_boolean()) {
      if (value != "true" && value != "false") throw ConfigError(where + ": expected true or false");
      slot = value == "true";
    } else if (slot.is_number_unsigned()) {
      if (value.empty() || value.front() == '-') throw ConfigError(where + ": expected a non-negative integer");
      std::size_t pos = 0;
      slot = std::stoull(value, &pos);
      if (pos != value.size()) throw ConfigError(where + ": expected an integer");
    } else if (slot.is_number_integer()) {
      std::size_t pos = 0;
      slot = std::stoll(value, &pos);
      if (pos != value.size()) throw ConfigError(where + ": expected an integer");
    } else if (slot.is_number_float()) {
      std::size_t pos = 0;
      slot = std::stod(value, &pos);
      if (pos != value.size()) throw ConfigError(where + ": expected a number");
    } else {
      slot = json::parse(value);
    }
  } catch (const std::invalid_argument&) {
    throw ConfigError(where + ": cannot parse '" + value + "'");
  } catch (const std::out_of_range&) {
    throw ConfigError(where + ": value out of range '" + value + "'");
  } catch (const json::exception&) {
    throw ConfigError(where + ": cannot parse '" + value + "'");
  }
  c = run_config_from_json(j);
}

void apply_seed_env(RunConfig& c) {
  const char* s = std::getenv("REPVAL_SEED");
  if (!s || !*s) return;
  std::size_t pos = 0;
  std::uint64_t seed = 0;
  try {
    seed = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || s[pos] != '\0' || s[0] == '-')
    throw ConfigError(std::string("REPVAL_SEED: not an unsigned integer '") + s + "'");
  c.env.seed = seed;
  c.train.seed = seed;
  c.tournament.seed = seed;
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

namespace {

RunConfig prepare(const fs::path& path, const Overrides& overrides) {
  auto c = load_run_config(path);
  for (const auto& [k, v] : overrides) apply_override(c, k, v);
  apply_seed_env(c);
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw std::runtime_error("cannot write " + path.string());
}

void make_layout(const fs::path& root) {
  for (const char* d : {"checkpoints", "logs", "reports", "frames"}) fs::create_directories(root / d);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const fs::path& config, const Overrides& overrides, int workers, std::ostream& out,
              std::ostream& err) {
  return guarded(err, [&] {
    const auto c = prepare(config, overrides);
    const auto root = c.paths.output;
    make_layout(root);
    auto learner = learn::make_learner(c.learner_config());
    const std::string tag(learn::to_string(c.algo.variant));

    learn::TrainOptions opts;
    opts.workers = workers;
    opts.checkpoint_interval = c.train.checkpoint_interval;
    opts.on_checkpoint = [&](int episode, const learn::TrainingLog& log) {
      const auto n = std::min<std::size_t>(log.episodes.size(), c.train.checkpoint_interval);
      double ret = 0.0, loss = 0.0, kills = 0.0, deaths = 0.0;
      int losses = 0;
      for (auto it = log.episodes.end() - static_cast<long>(n); it != log.episodes.end(); ++it) {
        ret += it->mean_return;
        kills += it->kills;
        deaths += it->deaths;
        if (it->loss) {
          loss += *it->loss;
          ++losses;
        }
      }
      const double dn = static_cast<double>(n);
      out << "episode " << episode << "/" << c.train.episodes << " mean_return "
          << fmt("%.4f", ret / dn) << " loss " << (losses ? fmt("%.4g", loss / losses) : "-")
          << " kills " << fmt("%.2f", kills / dn) << " deaths " << fmt("%.2f", deaths / dn) << '\n';
      char name[64];
      std::snprintf(name, sizeof name, "%s_ep%05d.ckpt", tag.c_str(), episode);
      learn::save_checkpoint(*learner, root / "checkpoints" / name, {c.env, c.train.seed, episode});
    };

    const auto log = learn::train(*learner, c.env, c.train.scenario, c.train.episodes, c.train.seed, opts);
    write_text(root / "logs" / (tag + "_train.csv"), log.to_csv());
    const auto final_path = root / "checkpoints" / (tag + ".ckpt");
    learn::save_checkpoint(*learner, final_path, {c.env, c.train.seed, c.train.episodes});
    out << "trained " << tag << " for " << c.train.episodes << " episodes; checkpoint "
        << final_path.string() << '\n';
    return 0;
  });
}

// ---------------------------------------------------------------------------
// tournament
// ---------------------------------------------------------------------------

int cmd_tournament(const fs::path& config, const Overrides& overrides, int workers, std::ostream& out,
                   std::ostream& err) {
  return guarded(err, [&] {
    const auto c = prepare(config, overrides);
    const auto& t = c.tournament;
    if (t.players.size() < 2) throw ConfigError("tournament.players: need at least 2 players");
    std::vector<tourney::Player> players;
    for (const auto& spec : t.players) {
      if (!fs::exists(spec.checkpoint))
        throw CheckpointError("player " + spec.name + ": checkpoint not found: " + spec.checkpoint.string());
      players.push_back(tourney::load_player(spec.name, spec.checkpoint, spec.variant));
    }
    make_layout(c.paths.output);
    tourney::TournamentOptions opts{t.k_factor, t.initial_rating, workers};
    const auto result = tourney::run_tournament(players, t.scenario, c.env, t.n_games, t.seed, opts);
    const auto reports = c.paths.output / "reports";
    write_text(reports / "ranking.csv", result.report.ranking_csv());
    write_text(reports / "pairwise.csv", result.report.pairwise_csv());
    write_text(reports / "winmatrix.csv", result.report.winmatrix_csv());
    out << "played " << t.n_games << " games in " << env::to_string(t.scenario) << "; reports in "
        << reports.string() << '\n';
    out << result.report.ranking_csv();
    return 0;
  });
}

// ---------------------------------------------------------------------------
// render
// ---------------------------------------------------------------------------

namespace {

struct Side {
  std::shared_ptr<const tourney::Policy> policy;
  std::optional<env::GridConfig> env;
};

Side resolve_side(const std::string& spec) {
  if (spec == "random") return {std::make_shared<tourney::RandomPolicy>(), std::nullopt};
  if (spec == "stay") return {std::make_shared<tourney::StayPolicy>(), std::nullopt};
  if (spec == "attacker") return {std::make_shared<tourney::ScriptedAttacker>(), std::nullopt};
  auto loaded = learn::load_checkpoint(spec);
  const auto env = loaded.meta.env;
  return {std::make_shared<tourney::LearnerPolicy>(
              std::shared_ptr<const learn::Learner>(std::move(loaded.learner))),
          env};
}

}  // namespace

int cmd_render(const RenderRequest& request, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto a = resolve_side(request.player_a);
    const auto b = resolve_side(request.player_b);
    env::GridConfig config = request.env.value_or(a.env.value_or(b.env.value_or(env::GridConfig::desk())));
    for (const auto* side : {&a, &b})
      if (side->env && env::Observation::flat_size(*side->env) != env::Observation::flat_size(config))
        throw ConfigError("render: checkpoints were trained with incompatible environments");

    const auto frames = request.out_dir / "frames";
    fs::create_directories(frames);
    std::ostringstream transcript;
    int index = 0;
    const auto result = tourney::play_match(
        *a.policy, *b.policy, request.scenario, config, request.seed, [&](const env::GridWorld& w) {
          char name[32];
          std::snprintf(name, sizeof name, "frame_%04d.ppm", index);
          write_text(frames / name, w.render(env::RenderFormat::Ppm));
          transcript << "frame " << index << " step " << w.step_count() << '\n'
                     << w.render(env::RenderFormat::Ascii) << '\n';
          ++index;
        });
    write_text(frames / "ascii.txt", transcript.str());
    out << "rendered " << index << " frames to " << frames.string() << "; winner "
        << env::to_string(result.winner) << ", kills " << result.kills_a << ":" << result.kills_b << '\n';
    return 0;
  });
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

namespace {

struct Reporter {
  std::ostream& out;
  int failures = 0;

  void check(bool ok, const std::string& name, const std::string& detail) {
    out << (ok ? "PASS " : "FAIL ") << name << " (" << detail << ")\n";
    if (!ok) ++failures;
  }
};

std::string sci(double v) { return fmt("%.3e", v); }

Eigen::VectorXd unit_blocks(int s_dim, int a_dim, Rng& rng) {
  Eigen::VectorXd z(s_dim + a_dim);
  for (int i = 0; i < z.size(); ++i) z[i] = normal01(rng);
  z.head(s_dim).normalize();
  z.tail(a_dim).normalize();
  return z;
}

void verify_taylor(Reporter& rep, std::uint64_t seed, std::size_t samples) {
  constexpr int s_dim = 6, a_dim = 4;
  Rng rng(derive_seed(seed, 11));
  double max_sum = 0.0, max_first = 0.0, max_identity = 0.0;
  for (std::size_t n = 0; n < samples; ++n) {
    const auto oracle = agg::SmoothQOracle::random(s_dim + a_dim, 1.0, derive_seed(seed, 12, n));
    const auto k = 1 + uniform_index(rng, 8);
    std::vector<Eigen::VectorXd> nbrs;
    std::vector<double> logits;
    for (std::uint64_t i = 0; i < k; ++i) {
      nbrs.push_back(unit_blocks(s_dim, a_dim, rng));
      logits.push_back(2.0 * normal01(rng));
    }
    const auto w = graph::softmax(logits);
    const auto r = agg::taylor_decompose(oracle, unit_blocks(s_dim, a_dim, rng), w, nbrs);
    max_sum = std::max(max_sum, r.weighted_delta_sum.cwiseAbs().maxCoeff());
    max_first = std::max(max_first, std::abs(r.first_order));
    max_identity = std::max(max_identity, std::abs(r.remainder - r.second_order));
  }
  rep.check(max_sum <= 1e-12 && max_first <= 1e-10, "taylor.first_order_cancellation",
            "max |sum w dz| = " + sci(max_sum) + ", max |first order| = " + sci(max_first));
  rep.check(max_identity <= 1e-9, "taylor.second_order_identity",
            "max |remainder - sum w dz^T H dz / 2| = " + sci(max_identity));
}

void verify_bounds(Reporter& rep, std::uint64_t seed, std::size_t samples) {
  constexpr int s_dim = 6, a_dim = 4;
  for (double m : {0.0, 0.5, 1.0, 2.0}) {
    const auto oracle = agg::SmoothQOracle::random(s_dim + a_dim, m, derive_seed(seed, 21, static_cast<std::uint64_t>(m * 4)));
    agg::BoundCheckOptions opts;
    opts.include_aligned_pairs = true;
    const auto r = agg::remainder_bound_check(oracle, samples, derive_seed(seed, 22), opts);
    rep.check(r.violations == 0, "remainder_bound M=" + fmt("%g", m),
              "max |remainder| = " + fmt("%.6f", r.max_abs_remainder) + " <= 4M = " +
                  fmt("%g", r.bound) + ", violations " + std::to_string(r.violations));
  }
}

void verify_injected(Reporter& rep) {
  // Blocks of norm 2 break the unit-norm precondition; with curvature on a
  // direction spread evenly over both blocks the remainder reaches 4M.
  constexpr int s_dim = 6, a_dim = 4;
  constexpr double m = 1.0;
  Eigen::VectorXd dir = Eigen::VectorXd::Zero(s_dim + a_dim);
  dir[0] = 1.0;
  dir[s_dim] = 1.0;
  const auto oracle = agg::SmoothQOracle::rank_one(dir, m, Eigen::VectorXd::Zero(s_dim + a_dim),
                                                   Eigen::MatrixXd::Zero(s_dim + a_dim, s_dim + a_dim));
  agg::BoundCheckOptions opts;
  opts.component_norm = 2.0;
  opts.bound_factor = 3.9;
  opts.include_aligned_pairs = true;
  const auto r = agg::remainder_bound_check(oracle, 16, 1, opts);
  rep.check(r.violations == 0, "injected_violation bound=3.9M",
            "max |remainder| = " + fmt("%.6f", r.max_abs_remainder) + " vs bound " +
                fmt("%g", r.bound) + ", violations " + std::to_string(r.violations));
}

void verify_gradients(Reporter& rep, std::uint64_t seed, std::size_t trials) {
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(derive_seed(seed, 31, t));
    const std::vector<int> dims{4, 1 + static_cast<int>(uniform_index(rng, 6)),
                                1 + static_cast<int>(uniform_index(rng, 6)), 3};
    auto net = nn::Mlp::init(dims, derive_seed(seed, 32, t));
    std::vector<double> x(4), up(3);
    for (auto& v : x) v = normal01(rng);
    for (auto& v : up) v = normal01(rng);
    const auto g = nn::backward(net, x, up);
    auto f = [&](const nn::Mlp& n, const std::vector<double>& in) {
      const auto y = nn::forward(n, in);
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * up[i];
      return s;
    };
    constexpr double h = 1e-6;
    auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); };
    auto flat = net.flat_parameters();
    std::vector<double> analytic;
    for (const auto& l : g.layers) {
      analytic.insert(analytic.end(), l.weights.begin(), l.weights.end());
      analytic.insert(analytic.end(), l.bias.begin(), l.bias.end());
    }
    for (std::size_t i = 0; i < flat.size(); ++i) {
      const double p = flat[i];
      flat[i] = p + h;
      net.set_flat_parameters(flat);
      const double fp = f(net, x);
      flat[i] = p - h;
      net.set_flat_parameters(flat);
      const double fm = f(net, x);
      flat[i] = p;
      worst = std::max(worst, rel(analytic[i], (fp - fm) / (2 * h)));
    }
    net.set_flat_parameters(flat);
    for (std::size_t i = 0; i < x.size(); ++i) {
      auto xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      worst = std::max(worst, rel(g.input[i], (f(net, xp) - f(net, xm)) / (2 * h)));
    }
  }
  rep.check(worst < 1e-4, "nn.gradient_check", "max relative error " + sci(worst) + " over " +
                                                    std::to_string(trials) + " nets");
}

void verify_elo(Reporter& rep) {
  const auto [a, b] = tourney::elo_update(1200, 1200, tourney::Outcome::AWins, 32);
  rep.check(a == 1216.0 && b == 1184.0, "elo.equal_ratings_win", fmt("%.6f", a) + ", " + fmt("%.6f", b));

  Rng rng(7);
  bool zero_sum = true;
  for (int i = 0; i < 1000; ++i) {
    const double ra = uniform(rng, 800, 2400), rb = uniform(rng, 800, 2400);
    const auto o = static_cast<tourney::Outcome>(uniform_index(rng, 3));
    const auto [na, nb] = tourney::elo_update(ra, rb, o, 32);
    zero_sum = zero_sum && std::abs((na + nb) - (ra + rb)) <= 1e-9 &&
               std::abs(tourney::expected_score(ra, rb) + tourney::expected_score(rb, ra) - 1.0) <= 1e-12;
  }
  rep.check(zero_sum, "elo.zero_sum", "1000 random updates");
  const double e = tourney::expected_score(1200, 1600);
  rep.check(std::abs(e - 1.0 / 11.0) <= 1e-12, "elo.400_point_gap", "E = " + fmt("%.12f", e));
}

}  // namespace

int cmd_verify(const VerifyOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    Reporter rep{out};
    if (options.samples == 0)
      out << "warning: --samples 0, sampled checks run on zero samples and pass vacuously\n";
    verify_taylor(rep, options.seed, options.samples);
    verify_bounds(rep, options.seed, options.samples);
    verify_gradients(rep, options.seed, std::min<std::size_t>(options.samples, 100));
    verify_elo(rep);
    if (options.inject_violation) verify_injected(rep);
    out << (rep.failures == 0 ? "all checks passed\n" : std::to_string(rep.failures) + " check(s) failed\n");
    return rep.failures == 0 ? 0 : 1;
  });
}

}  // namespace repval::cli
