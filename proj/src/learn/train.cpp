#include <algorithm>
#include <cstdio>
#include <sstream>
#include <thread>

#include "repval/errors.hpp"
#include "repval/learn.hpp"

namespace repval::learn {

env::Action act(const Learner& learner, const env::GridWorld& world, env::AgentId id, bool explore,
                Rng& rng) {
  const auto wf = capture_frame(world);
  const auto ctx = make_context(wf, world, id, learner.mode(), world.config().neighbor_radius);
  return env::Action::from_index(learner.act(ctx, explore, rng));
}

env::JointAction choose_actions(const Learner& learner, const env::GridWorld& world,
                                const WorldFrame& wf, std::span<const env::AgentId> agents,
                                bool explore, std::uint64_t seed, int workers,
                                std::vector<DecisionContext>* contexts) {
  const std::size_t n = agents.size();
  env::JointAction actions(n);
  std::vector<DecisionContext> local;
  auto& ctxs = contexts ? *contexts : local;
  ctxs.assign(n, {});
  const int radius = world.config().neighbor_radius;

  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto id = agents[i];
      ctxs[i] = make_context(wf, world, id, learner.mode(), radius);
      Rng rng(derive_seed(seed, id));
      actions[i] = {id, env::Action::from_index(learner.act(ctxs[i], explore, rng))};
    }
  };

  const auto w = static_cast<std::size_t>(std::clamp(workers, 1, static_cast<int>(std::max<std::size_t>(n, 1))));
  if (w <= 1) {
    run(0, n);
    return actions;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + w - 1) / w;
  for (std::size_t b = 0; b < n; b += chunk) pool.emplace_back(run, b, std::min(n, b + chunk));
  for (auto& t : pool) t.join();
  return actions;
}

// ---------------------------------------------------------------------------

std::string TrainingLog::csv_header() { return "episode,mean_return,loss,kills,deaths"; }

std::string TrainingLog::to_csv() const {
  std::ostringstream os;
  os << csv_header() << '\n';
  char buf[64];
  for (const auto& e : episodes) {
    os << e.episode << ',';
    std::snprintf(buf, sizeof buf, "%.6f", e.mean_return);
    os << buf << ',';
    if (e.loss) {
      std::snprintf(buf, sizeof buf, "%.6g", *e.loss);
      os << buf;
    }
    os << ',' << e.kills << ',' << e.deaths << '\n';
  }
  return os.str();
}

TrainingLog train(Learner& learner, const env::GridConfig& config, env::Scenario scenario,
                  int episodes, std::uint64_t seed, const TrainOptions& options) {
  config.validate();
  if (episodes < 0) throw ConfigError("train.episodes: must be >= 0");
  if (learner.config().obs_dim != static_cast<int>(env::Observation::flat_size(config)))
    throw ConfigError("algo.obs_dim: learner expects " + std::to_string(learner.config().obs_dim) +
                      " but the environment produces " +
                      std::to_string(env::Observation::flat_size(config)));

  TrainingLog log;
  const int radius = config.neighbor_radius;
  for (int ep = 0; ep < episodes; ++ep) {
    const auto ep_seed = derive_seed(seed, static_cast<std::uint64_t>(ep));
    auto world = env::new_scenario(config, scenario, derive_seed(ep_seed, 1));
    std::vector<double> returns(world.agents().size(), 0.0);
    double loss_sum = 0.0;
    int loss_count = 0;
    EpisodeLog entry;
    entry.episode = ep;

    auto wf = capture_frame(world);
    std::vector<DecisionContext> ctxs;
    for (int t = 0;; ++t) {
      const auto agents = world.living();
      if (agents.empty()) break;
      const auto actions = choose_actions(learner, world, wf, agents, true,
                                          derive_seed(ep_seed, 2, static_cast<std::uint64_t>(t)),
                                          options.workers, &ctxs);
      const auto outcome = world.step(actions);
      for (const auto victim : outcome.victims()) {
        if (world.agent(victim).team == env::Team::B) ++entry.kills;
        else ++entry.deaths;
      }
      auto next_wf = capture_frame(world);

      std::vector<Transition> step;
      step.reserve(agents.size());
      for (std::size_t i = 0; i < agents.size(); ++i) {
        const auto id = agents[i];
        Transition tr;
        tr.now = std::move(ctxs[i]);
        tr.action = actions[i].second.index();
        const auto it = outcome.rewards.find(id);
        tr.reward = it == outcome.rewards.end() ? 0.0 : it->second;
        returns[id] += tr.reward;
        tr.done = outcome.terminal || !world.agent(id).alive;
        if (!tr.done) tr.next = make_context(next_wf, world, id, learner.mode(), radius);
        step.push_back(std::move(tr));
      }
      if (auto l = learner.observe_step(std::move(step))) {
        loss_sum += *l;
        ++loss_count;
      }
      wf = std::move(next_wf);
      if (outcome.terminal) break;
    }
    if (auto l = learner.end_episode()) {
      loss_sum += *l;
      ++loss_count;
    }

    double total = 0.0;
    for (double r : returns) total += r;
    entry.mean_return = returns.empty() ? 0.0 : total / static_cast<double>(returns.size());
    if (loss_count > 0) entry.loss = loss_sum / loss_count;
    log.episodes.push_back(entry);

    if (options.checkpoint_interval > 0 && options.on_checkpoint &&
        (ep + 1) % options.checkpoint_interval == 0)
      options.on_checkpoint(ep + 1, log);
  }
  return log;
}

}  // namespace repval::learn
