#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "repval/errors.hpp"
#include "repval/learn.hpp"

using namespace repval;
using namespace repval::learn;

namespace {

constexpr int kObs = 3;
constexpr int kAct = 3;

LearnerConfig small_config(AlgoVariant v, std::uint64_t seed = 11) {
  LearnerConfig c;
  c.variant = v;
  c.obs_dim = kObs;
  c.action_count = kAct;
  c.hidden = {5};
  c.embed_dim = 4;
  c.batch_size = 4;
  c.buffer_capacity = 64;
  c.seed = seed;
  return c;
}

// Frame of n agents with random observations and actions; agent 0 sees all others.
std::shared_ptr<Frame> random_frame(Rng& rng, int n) {
  auto f = std::make_shared<Frame>();
  for (int i = 0; i < n; ++i) {
    Vec s(kObs);
    for (auto& x : s) x = uniform01(rng);
    f->ids.push_back(static_cast<env::AgentId>(i));
    f->z.push_back(agg::make_z(s, static_cast<int>(uniform_index(rng, kAct)), kAct));
  }
  return f;
}

DecisionContext context(std::shared_ptr<const Frame> f, std::uint32_t self) {
  DecisionContext c{std::move(f), self, {}};
  for (std::uint32_t i = 0; i < c.frame->z.size(); ++i)
    if (i != self) c.members.push_back(i);
  return c;
}

std::vector<Transition> random_batch(Rng& rng, int n, bool done) {
  std::vector<Transition> out;
  for (int i = 0; i < n; ++i) {
    Transition t;
    t.now = context(random_frame(rng, 1 + static_cast<int>(uniform_index(rng, 4))), 0);
    t.action = static_cast<int>(uniform_index(rng, kAct));
    t.reward = normal01(rng);
    t.done = done;
    if (!done) t.next = context(random_frame(rng, 1 + static_cast<int>(uniform_index(rng, 4))), 0);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<const Transition*> ptrs(const std::vector<Transition>& v) {
  std::vector<const Transition*> p;
  for (const auto& t : v) p.push_back(&t);
  return p;
}

double rel_err(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-5});
}

Vec flatten(const nn::Gradients& g) {
  Vec out;
  for (const auto& l : g.layers) {
    out.insert(out.end(), l.weights.begin(), l.weights.end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

// Central differences of f over the net's flat parameters.
template <class F>
double max_fd_error(nn::Mlp& net, const Vec& analytic, F f) {
  constexpr double h = 1e-6;
  auto p = net.flat_parameters();
  double worst = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double v = p[i];
    p[i] = v + h;
    net.set_flat_parameters(p);
    const double fp = f();
    p[i] = v - h;
    net.set_flat_parameters(p);
    const double fm = f();
    p[i] = v;
    net.set_flat_parameters(p);
    worst = std::max(worst, rel_err(analytic[i], (fp - fm) / (2 * h)));
  }
  return worst;
}

template <class F>
double max_fd_error(std::vector<double>& param, const std::vector<double>& analytic, F f) {
  constexpr double h = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double v = param[i];
    param[i] = v + h;
    const double fp = f();
    param[i] = v - h;
    const double fm = f();
    param[i] = v;
    worst = std::max(worst, rel_err(analytic[i], (fp - fm) / (2 * h)));
  }
  return worst;
}

env::GridConfig tiny_grid() {
  env::GridConfig g;
  g.width = 8;
  g.height = 8;
  g.agents_per_team = 3;
  g.max_steps = 15;
  g.neighbor_radius = 3;
  g.view_radius = 2;
  return g;
}

LearnerConfig tiny_learner(AlgoVariant v, const env::GridConfig& g, std::uint64_t seed = 5) {
  LearnerConfig c;
  c.variant = v;
  c.obs_dim = static_cast<int>(env::Observation::flat_size(g));
  c.hidden = {16};
  c.batch_size = 8;
  c.buffer_capacity = 512;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("variant helpers") {
  for (auto v : kAllVariants) CHECK(parse_variant(to_string(v)) == v);
  CHECK(neighbor_mode(AlgoVariant::IL) == NeighborMode::None);
  CHECK(neighbor_mode(AlgoVariant::AC) == NeighborMode::None);
  CHECK(neighbor_mode(AlgoVariant::MFQ) == NeighborMode::Uniform);
  CHECK(neighbor_mode(AlgoVariant::MFAC) == NeighborMode::Uniform);
  CHECK(neighbor_mode(AlgoVariant::RFAC) == NeighborMode::Attention);
  CHECK(is_actor_critic(AlgoVariant::RFAC));
  CHECK_FALSE(is_actor_critic(AlgoVariant::RFQ));
  CHECK_THROWS_AS(parse_variant("DQN"), ConfigError);
}

TEST_CASE("boltzmann policy limits and properties") {
  const Vec q{0.3, -1.2, 2.0, 0.0};
  const auto u = boltzmann_policy(q, 0.0);
  for (double p : u) CHECK(std::abs(p - 0.25) <= 1e-12);

  const auto g = boltzmann_policy(Vec{1.0, 0.0}, 1000.0);
  CHECK(g[0] >= 1.0 - 1e-6);
  const auto sharp = boltzmann_policy(q, 1000.0);
  CHECK(sharp[2] >= 1.0 - 1e-6);

  const auto h = boltzmann_policy(Vec{std::log(2.0), 0.0}, 1.0);
  CHECK(std::abs(h[0] - 2.0 / 3.0) < 1e-15);
  CHECK(std::abs(h[1] - 1.0 / 3.0) < 1e-15);

  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    Vec v(6);
    for (auto& x : v) x = 5 * normal01(rng);
    const double beta = 3 * uniform01(rng);
    const auto p = boltzmann_policy(v, beta);
    Vec shifted = v;
    const double c = 100 * normal01(rng);
    for (auto& x : shifted) x += c;
    const auto ps = boltzmann_policy(shifted, beta);
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      CHECK(p[i] >= 0.0);
      CHECK(std::abs(p[i] - ps[i]) < 1e-12);
      sum += p[i];
      for (std::size_t j = 0; j < p.size(); ++j)
        if (beta > 0 && v[i] > v[j]) CHECK(p[i] > p[j]);
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }

  // Exact shift invariance when the shift is representable without rounding.
  const auto a = boltzmann_policy(Vec{0.5, 0.25, -1.0}, 2.0);
  const auto b = boltzmann_policy(Vec{8.5, 8.25, 7.0}, 2.0);
  CHECK(a == b);

  const auto flipped = boltzmann_policy(Vec{1.0, 0.0}, 1000.0, true);
  CHECK(flipped[1] >= 1.0 - 1e-6);
  CHECK_THROWS_AS(boltzmann_policy(Vec{1.0}, -1.0), ContractError);
  CHECK_THROWS_AS(boltzmann_policy(Vec{std::nan("")}, 1.0), ContractError);
}

TEST_CASE("td_target") {
  CHECK(td_target(1.0, 0.9, true, Vec{5.0, 7.0}, 1.0) == 1.0);
  for (double beta : {0.0, 1.0, 50.0}) CHECK(td_target(0.5, 0.9, false, Vec{2.0, 2.0, 2.0}, beta) ==
                                                doctest::Approx(0.5 + 0.9 * 2.0).epsilon(1e-15));
  // v = (2/3) ln2 for q = (ln2, 0), beta = 1.
  CHECK(std::abs(td_target(0.0, 1.0 - 1e-9, false, Vec{std::log(2.0), 0.0}, 1.0) -
                 (1.0 - 1e-9) * 2.0 / 3.0 * std::log(2.0)) < 1e-15);
  CHECK(td_target(0.0, 0.5, false, Vec{1.0, 3.0}, 0.0) == 1.0);
  CHECK(td_target(0.0, 0.5, false, Vec{1.0, 3.0}, 0.0, false, true) == 1.5);
}

TEST_CASE("learner config validation and JSON") {
  auto c = small_config(AlgoVariant::RFAC);
  c.validate();
  const auto j = to_json(c);
  const auto back = learner_config_from_json(j);
  CHECK(to_json(back) == j);

  auto bad = c;
  bad.gamma = 1.0;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("gamma"), ConfigError);
  bad = c;
  bad.beta = -0.5;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("beta"), ConfigError);
  bad = c;
  bad.tau = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  auto extra = j;
  extra["momentum"] = 0.9;
  CHECK_THROWS_WITH_AS(learner_config_from_json(extra), doctest::Contains("momentum"), ConfigError);
  CHECK(back.optimizer == Optimizer::Adam);
  auto sgd = j;
  sgd["optimizer"] = "sgd";
  CHECK(learner_config_from_json(sgd).optimizer == Optimizer::Sgd);
  sgd["optimizer"] = "rmsprop";
  CHECK_THROWS_WITH_AS(learner_config_from_json(sgd), doctest::Contains("optimizer"), ConfigError);

  auto partial = nlohmann::json::object();
  partial["variant"] = "IL";
  CHECK(learner_config_from_json(partial).variant == AlgoVariant::IL);
  CHECK(learner_config_from_json(partial).gamma == 0.95);
}

TEST_CASE("replay buffer: ring overwrite and uniform sampling without replacement") {
  ReplayBuffer buf(5, 3);
  Rng rng(1);
  for (int i = 0; i < 7; ++i) {
    auto t = random_batch(rng, 1, true)[0];
    t.reward = i;
    buf.push(std::move(t));
  }
  CHECK(buf.size() == 5);
  std::vector<double> rewards;
  for (std::size_t i = 0; i < 5; ++i) rewards.push_back(buf.at(i).reward);
  std::sort(rewards.begin(), rewards.end());
  CHECK(rewards == std::vector<double>{2, 3, 4, 5, 6});
  CHECK_THROWS_AS(buf.sample(6), ContractError);

  std::map<double, int> hits;
  constexpr int kDraws = 20000;
  for (int d = 0; d < kDraws; ++d) {
    const auto s = buf.sample(2);
    REQUIRE(s.size() == 2);
    CHECK(s[0] != s[1]);
    for (const auto* t : s) ++hits[t->reward];
  }
  // Each element appears with probability 2/5; 4 sigma of Binomial(20000, 0.4).
  const double sigma = std::sqrt(kDraws * 0.4 * 0.6);
  for (const auto& [_, n] : hits) CHECK(std::abs(n - 0.4 * kDraws) < 4 * sigma);
}

TEST_CASE("q_update gradient matches finite differences with the target held fixed") {
  Rng rng(17);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    for (auto v : {AlgoVariant::IL, AlgoVariant::MFQ, AlgoVariant::RFQ}) {
      QLearner q(small_config(v, derive_seed(2, trial)));
      const auto batch = random_batch(rng, 4, false);
      const auto p = ptrs(batch);
      const auto lg = q.loss_and_gradients(p);
      // The TD target reads only the target net, so perturbing q_net leaves y fixed.
      worst = std::max(worst, max_fd_error(q.q_net(), flatten(lg.net),
                                           [&] { return q.loss_and_gradients(p).loss; }));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("attention gradients through the Q loss on terminal transitions") {
  Rng rng(23);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    QLearner q(small_config(AlgoVariant::RFQ, derive_seed(3, trial)));
    auto batch = random_batch(rng, 4, true);
    for (auto& t : batch) t.now = context(random_frame(rng, 3), 0);
    const auto p = ptrs(batch);
    const auto lg = q.loss_and_gradients(p);
    auto* att = q.mutable_attention();
    auto f = [&] { return q.loss_and_gradients(p).loss; };
    worst = std::max(worst, max_fd_error(att->W, lg.attention.W, f));
    worst = std::max(worst, max_fd_error(att->a, lg.attention.a, f));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("q_update: zero loss leaves the parameters unchanged, step lowers loss") {
  QLearner q(small_config(AlgoVariant::MFQ));
  Rng rng(31);
  auto batch = random_batch(rng, 4, true);
  for (auto& t : batch) t.reward = q.q_values(t.now)[t.action];
  const auto before = q.q_net().flat_parameters();
  CHECK(q.q_update(std::span<const Transition>(batch)) < 1e-24);
  const auto after = q.q_net().flat_parameters();
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(std::abs(before[i] - after[i]) <= 1e-12);

  auto fresh = random_batch(rng, 4, true);
  const double l0 = q.q_update(std::span<const Transition>(fresh));
  const double l1 = q.loss_and_gradients(ptrs(fresh)).loss;
  CHECK(l1 < l0);
  CHECK_THROWS_AS(q.q_update(std::span<const Transition>()), ContractError);
}

TEST_CASE("actor gradient: zero critic gives zero gradient, score identity") {
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    ACLearner ac(small_config(AlgoVariant::RFAC, derive_seed(4, trial)));
    auto batch = random_batch(rng, 1, true);
    auto& critic = ac.critic();
    for (auto& l : critic.layers()) {
      std::fill(l.weights.begin(), l.weights.end(), 0.0);
      std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }
    const auto zero = ac.actor_loss_and_gradients(ptrs(batch)).second;
    for (double g : flatten(zero)) CHECK(g == 0.0);

    // Q == 1: sum_a pi(a) grad log pi(a) = 0.
    std::fill(critic.layers().back().bias.begin(), critic.layers().back().bias.end(), 1.0);
    const auto pi = ac.policy(batch[0].now);
    Vec total;
    for (int a = 0; a < kAct; ++a) {
      batch[0].action = a;
      const auto g = flatten(ac.actor_loss_and_gradients(ptrs(batch)).second);
      if (total.empty()) total.assign(g.size(), 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) total[i] += pi[a] * g[i];
    }
    for (double g : total) CHECK(std::abs(g) <= 1e-10);
  }
}

TEST_CASE("the advantage baseline leaves the expected actor gradient unchanged") {
  Rng rng(47);
  for (int trial = 0; trial < 10; ++trial) {
    auto cfg = small_config(AlgoVariant::MFAC, derive_seed(6, trial));
    ACLearner plain(cfg);
    cfg.advantage_baseline = true;
    ACLearner based(cfg);
    auto batch = random_batch(rng, 1, true);
    const auto pi = plain.policy(batch[0].now);
    Vec a_sum, b_sum;
    for (int a = 0; a < kAct; ++a) {
      batch[0].action = a;
      const auto ga = flatten(plain.actor_loss_and_gradients(ptrs(batch)).second);
      const auto gb = flatten(based.actor_loss_and_gradients(ptrs(batch)).second);
      if (a_sum.empty()) a_sum.assign(ga.size(), 0.0), b_sum.assign(gb.size(), 0.0);
      for (std::size_t i = 0; i < ga.size(); ++i) {
        a_sum[i] += pi[a] * ga[i];
        b_sum[i] += pi[a] * gb[i];
      }
    }
    for (std::size_t i = 0; i < a_sum.size(); ++i) CHECK(std::abs(a_sum[i] - b_sum[i]) <= 1e-10);
  }
}

TEST_CASE("expected actor gradient is the policy average of sampled gradients") {
  Rng rng(53);
  double worst_fd = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    auto cfg = small_config(AlgoVariant::RFAC, derive_seed(8, trial));
    ACLearner sampled(cfg);
    cfg.actor_gradient = ActorGradient::Expected;
    ACLearner expected(cfg);
    auto batch = random_batch(rng, 1, true);
    const auto pi = sampled.policy(batch[0].now);
    Vec avg;
    for (int a = 0; a < kAct; ++a) {
      batch[0].action = a;
      const auto g = flatten(sampled.actor_loss_and_gradients(ptrs(batch)).second);
      if (avg.empty()) avg.assign(g.size(), 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) avg[i] += pi[a] * g[i];
    }
    const auto ge = flatten(expected.actor_loss_and_gradients(ptrs(batch)).second);
    for (std::size_t i = 0; i < avg.size(); ++i) CHECK(std::abs(avg[i] - ge[i]) <= 1e-12);

    const auto many = random_batch(rng, 4, false);
    const auto p = ptrs(many);
    worst_fd = std::max(worst_fd, max_fd_error(expected.actor(),
                                               flatten(expected.actor_loss_and_gradients(p).second),
                                               [&] { return expected.actor_loss_and_gradients(p).first; }));
  }
  CHECK(worst_fd < 1e-4);
  CHECK(parse_actor_gradient("expected") == ActorGradient::Expected);
  CHECK_THROWS_AS(parse_actor_gradient("mean"), ConfigError);
}

TEST_CASE("actor and critic gradients match finite differences") {
  Rng rng(43);
  double worst_actor = 0.0, worst_critic = 0.0, worst_att = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    for (auto v : {AlgoVariant::AC, AlgoVariant::MFAC, AlgoVariant::RFAC}) {
      auto cfg = small_config(v, derive_seed(5, trial));
      cfg.entropy_coef = trial % 2 == 0 ? 0.0 : 0.3;
      ACLearner ac(cfg);
      const auto batch = random_batch(rng, 4, false);
      const auto p = ptrs(batch);
      const auto [al, ag] = ac.actor_loss_and_gradients(p);
      worst_actor = std::max(worst_actor, max_fd_error(ac.actor(), flatten(ag), [&] {
                               return ac.actor_loss_and_gradients(p).first;
                             }));
      const auto cg = ac.critic_loss_and_gradients(p).second;
      worst_critic = std::max(worst_critic, max_fd_error(ac.critic(), flatten(cg.first), [&] {
                                return ac.critic_loss_and_gradients(p).first;
                              }));
      if (v == AlgoVariant::RFAC) {
        auto term = random_batch(rng, 4, true);
        for (auto& t : term) t.now = context(random_frame(rng, 3), 0);
        const auto tp = ptrs(term);
        const auto g = ac.critic_loss_and_gradients(tp).second.second;
        auto f = [&] { return ac.critic_loss_and_gradients(tp).first; };
        worst_att = std::max(worst_att, max_fd_error(ac.mutable_attention()->W, g.W, f));
        worst_att = std::max(worst_att, max_fd_error(ac.mutable_attention()->a, g.a, f));
      }
    }
  }
  CHECK(worst_actor < 1e-4);
  CHECK(worst_critic < 1e-4);
  CHECK(worst_att < 1e-4);
}

TEST_CASE("MFQ and RFQ inputs coincide with exactly one neighbor") {
  Rng rng(51);
  for (int trial = 0; trial < 100; ++trial) {
    const auto ctx = context(random_frame(rng, 2), 0);
    const auto p = graph::AttentionParams::init(kObs, 4, 0.2, derive_seed(6, trial));
    const auto u = build_inputs(ctx, NeighborMode::Uniform, nullptr);
    const auto a = build_inputs(ctx, NeighborMode::Attention, &p);
    REQUIRE(a.weights.size() == 1);
    CHECK(a.weights[0] == 1.0);
    REQUIRE(u.flat.size() == a.flat.size());
    for (std::size_t i = 0; i < u.flat.size(); ++i) CHECK(std::abs(u.flat[i] - a.flat[i]) <= 1e-12);
    const auto none = build_inputs(ctx, NeighborMode::None, nullptr);
    CHECK(none.inputs.empty_neighborhood);
    CHECK(none.flat.back() == 1.0);
  }
}

TEST_CASE("value iteration oracle: single-agent Q-learning converges to Q*") {
  // Deterministic 5-state ring: action 0 stays, action 1 advances. Entering
  // state 4 pays 1, staying in state 2 pays 0.3.
  constexpr int kS = 5;
  constexpr double gamma = 0.8;
  auto next = [](int s, int a) { return a == 1 ? (s + 1) % kS : s; };
  auto reward = [&](int s, int a) {
    if (next(s, a) == 4 && s != 4) return 1.0;
    return (s == 2 && a == 0) ? 0.3 : 0.0;
  };
  double qstar[kS][2] = {};
  for (int it = 0; it < 2000; ++it) {
    double nq[kS][2];
    for (int s = 0; s < kS; ++s)
      for (int a = 0; a < 2; ++a) {
        const int n = next(s, a);
        nq[s][a] = reward(s, a) + gamma * std::max(qstar[n][0], qstar[n][1]);
      }
    std::copy(&nq[0][0], &nq[0][0] + 2 * kS, &qstar[0][0]);
  }

  LearnerConfig c;
  c.variant = AlgoVariant::RFQ;
  c.obs_dim = kS;
  c.action_count = 2;
  c.hidden = {};
  c.gamma = gamma;
  c.optimizer = Optimizer::Sgd;
  c.lr = 0.5;
  c.tau = 0.05;
  c.max_backup = true;
  c.seed = 3;
  QLearner q(c);

  std::vector<DecisionContext> ctx;
  for (int s = 0; s < kS; ++s) {
    auto f = std::make_shared<Frame>();
    Vec onehot(kS, 0.0);
    onehot[s] = 1.0;
    f->ids = {0};
    f->z = {agg::make_z(onehot, 0, 2)};
    ctx.push_back(DecisionContext{f, 0, {}});
  }
  std::vector<Transition> all;
  for (int s = 0; s < kS; ++s)
    for (int a = 0; a < 2; ++a) all.push_back(Transition{ctx[s], a, reward(s, a), ctx[next(s, a)], false});

  double err = 1e9;
  int updates = 0;
  for (; updates < 50000 && err > 1e-3; ++updates) {
    q.q_update(std::span<const Transition>(all));
    if (updates % 100 == 0) {
      err = 0.0;
      for (int s = 0; s < kS; ++s) {
        const auto v = q.q_values(ctx[s]);
        for (int a = 0; a < 2; ++a) err = std::max(err, std::abs(v[a] - qstar[s][a]));
      }
    }
  }
  CHECK(err < 1e-2);
  CHECK(updates <= 50000);
  for (int s = 0; s < kS; ++s)
    CHECK(q.greedy_action(ctx[s]) == (qstar[s][1] > qstar[s][0] ? 1 : 0));
}

TEST_CASE("Q-learning with Adam picks the rewarded action per context") {
  // Four contexts, each rewarding a different action; terminal transitions.
  auto c = small_config(AlgoVariant::IL, 12);
  c.obs_dim = 4;
  c.action_count = 4;
  c.hidden = {16, 16};
  QLearner q(c);
  std::vector<DecisionContext> ctx;
  for (int s = 0; s < 4; ++s) {
    auto f = std::make_shared<Frame>();
    Vec onehot(4, 0.0);
    onehot[s] = 1.0;
    f->ids = {0};
    f->z = {agg::make_z(onehot, 0, 4)};
    ctx.push_back(DecisionContext{f, 0, {}});
  }
  std::vector<Transition> all;
  for (int s = 0; s < 4; ++s)
    for (int a = 0; a < 4; ++a) all.push_back(Transition{ctx[s], a, a == s ? 0.2 : -0.1, {}, true});
  for (int it = 0; it < 3000; ++it) q.q_update(std::span<const Transition>(all));
  for (int s = 0; s < 4; ++s) {
    CHECK(q.greedy_action(ctx[s]) == s);
    CHECK(std::abs(q.q_values(ctx[s])[s] - 0.2) < 0.02);
  }
}

TEST_CASE("actor-critic learns a one-step bandit") {
  auto c = small_config(AlgoVariant::AC, 8);
  c.optimizer = Optimizer::Sgd;
  c.actor_lr = 0.05;
  c.critic_lr = 0.05;
  ACLearner ac(c);
  Rng rng(9);
  const auto ctx = context(random_frame(rng, 1), 0);
  const double payoff[kAct] = {0.0, 1.0, 0.5};
  for (int episode = 0; episode < 300; ++episode) {
    std::vector<Transition> traj;
    for (int i = 0; i < 16; ++i) {
      const int a = ac.act(ctx, true, rng);
      traj.push_back(Transition{ctx, a, payoff[a], {}, true});
    }
    ac.ac_update(traj);
  }
  CHECK(ac.policy(ctx)[1] > 0.9);
  CHECK(ac.greedy_action(ctx) == 1);
  CHECK(std::abs(ac.critic_values(ctx)[1] - 1.0) < 0.05);
  CHECK_THROWS_AS(ac.ac_update(std::span<const Transition>()), ContractError);
}

TEST_CASE("checkpoint round trip for every variant") {
  const auto g = tiny_grid();
  const auto dir = std::filesystem::temp_directory_path() / "repval_test_learn_ckpt";
  std::filesystem::create_directories(dir);
  for (auto v : kAllVariants) {
    auto l = make_learner(tiny_learner(v, g, 77));
    train(*l, g, env::Scenario::WildWar, 2, 3);
    const auto path = dir / (std::string(to_string(v)) + ".ckpt");
    save_checkpoint(*l, path, CheckpointMeta{g, 3, 2});
    CHECK(std::filesystem::exists(sidecar_path(path)));
    auto loaded = load_checkpoint(path);
    CHECK(loaded.learner->variant() == v);
    CHECK(loaded.meta.episode == 2);
    CHECK(loaded.meta.seed == 3);
    CHECK(loaded.meta.env.agents_per_team == g.agents_per_team);
    const auto a = l->sections(), b = loaded.learner->sections();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].first == b[i].first);
      CHECK(a[i].second->flat_parameters() == b[i].second->flat_parameters());
    }
    if (l->attention()) {
      CHECK(l->attention()->W == loaded.learner->attention()->W);
      CHECK(l->attention()->a == loaded.learner->attention()->a);
    }
  }
  const auto path = dir / "RFQ.ckpt";
  {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    std::ofstream out(dir / "cut.ckpt", std::ios::binary);
    out << bytes.substr(0, bytes.size() / 2);
  }
  std::filesystem::copy_file(sidecar_path(path), sidecar_path(dir / "cut.ckpt"),
                             std::filesystem::copy_options::overwrite_existing);
  CHECK_THROWS_AS(load_checkpoint(dir / "cut.ckpt"), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), CheckpointError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("RFQ with neighbor radius 0 reproduces IL bit for bit") {
  auto g = tiny_grid();
  g.neighbor_radius = 0;
  auto il = make_learner(tiny_learner(AlgoVariant::IL, g));
  auto rfq = make_learner(tiny_learner(AlgoVariant::RFQ, g));
  const auto log_il = train(*il, g, env::Scenario::WildWar, 4, 9);
  const auto log_rfq = train(*rfq, g, env::Scenario::WildWar, 4, 9);
  CHECK(log_il.to_csv() == log_rfq.to_csv());
  const auto& a = dynamic_cast<QLearner&>(*il);
  const auto& b = dynamic_cast<QLearner&>(*rfq);
  CHECK(a.q_net().flat_parameters() == b.q_net().flat_parameters());
  CHECK(a.target_net().flat_parameters() == b.target_net().flat_parameters());
  bool any_loss = false;
  for (const auto& e : log_il.episodes) any_loss = any_loss || e.loss.has_value();
  CHECK(any_loss);
}

TEST_CASE("training is deterministic and independent of the worker count") {
  const auto g = tiny_grid();
  for (auto v : {AlgoVariant::RFQ, AlgoVariant::RFAC}) {
    auto a = make_learner(tiny_learner(v, g));
    auto b = make_learner(tiny_learner(v, g));
    const auto la = train(*a, g, env::Scenario::Battle, 3, 21);
    TrainOptions opts;
    opts.workers = 3;
    const auto lb = train(*b, g, env::Scenario::Battle, 3, 21, opts);
    CHECK(la.to_csv() == lb.to_csv());
    CHECK(a->sections()[0].second->flat_parameters() == b->sections()[0].second->flat_parameters());
  }
}

TEST_CASE("choose_actions does not depend on workers") {
  const auto g = tiny_grid();
  auto world = env::new_scenario(g, env::Scenario::WildWar, 4);
  const auto learner = make_learner(tiny_learner(AlgoVariant::RFAC, g));
  const auto wf = capture_frame(world);
  const auto agents = world.living(env::Team::A);
  const auto one = choose_actions(*learner, world, wf, agents, true, 99, 1);
  const auto many = choose_actions(*learner, world, wf, agents, true, 99, 4);
  CHECK(one == many);
  CHECK(one.size() == agents.size());
}

TEST_CASE("train logs and errors") {
  const auto g = tiny_grid();
  auto l = make_learner(tiny_learner(AlgoVariant::MFQ, g));
  int calls = 0;
  TrainOptions opts;
  opts.checkpoint_interval = 2;
  opts.on_checkpoint = [&](int ep, const TrainingLog& log) {
    CHECK(ep % 2 == 0);
    CHECK(static_cast<int>(log.episodes.size()) == ep);
    ++calls;
  };
  const auto log = train(*l, g, env::Scenario::Battle, 5, 1, opts);
  CHECK(calls == 2);
  REQUIRE(log.episodes.size() == 5);
  CHECK(log.episodes[0].episode == 0);
  CHECK(TrainingLog::csv_header() == "episode,mean_return,loss,kills,deaths");
  CHECK(log.to_csv().starts_with(TrainingLog::csv_header() + "\n0,"));
  for (const auto& e : log.episodes) {
    CHECK(std::isfinite(e.mean_return));
    CHECK(e.kills >= 0);
    CHECK(e.kills <= g.agents_per_team);
  }
  CHECK(train(*l, g, env::Scenario::Battle, 0, 1).episodes.empty());

  auto wrong = tiny_learner(AlgoVariant::IL, g);
  wrong.obs_dim += 1;
  auto w = make_learner(wrong);
  CHECK_THROWS_WITH_AS(train(*w, g, env::Scenario::Battle, 1, 1), doctest::Contains("obs_dim"), ConfigError);
}
