#include <cmath>
#include <map>

#include "doctest.h"

#include "repval/errors.hpp"
#include "repval/graph.hpp"

using namespace repval;
using namespace repval::graph;

namespace {

// Independent reference for a single-head GAT weight: plain loops, no shared code.
std::vector<double> reference_weights(const AttentionParams& p, const std::vector<double>& owner,
                                      const std::vector<std::vector<double>>& nbrs) {
  auto embed = [&](const std::vector<double>& h) {
    std::vector<double> e(p.embed_dim, 0.0);
    for (int i = 0; i < p.feature_dim; ++i)
      for (int o = 0; o < p.embed_dim; ++o) e[o] += h[i] * p.W[i * p.embed_dim + o];
    return e;
  };
  const auto ej = embed(owner);
  std::vector<double> logits;
  for (const auto& h : nbrs) {
    const auto ek = embed(h);
    double u = 0.0;
    for (int o = 0; o < p.embed_dim; ++o) u += p.a[o] * ej[o] + p.a[p.embed_dim + o] * ek[o];
    logits.push_back(u > 0 ? u : p.leaky_slope * u);
  }
  long double z = 0;
  for (double l : logits) z += std::exp(static_cast<long double>(l));
  std::vector<double> w;
  for (double l : logits) w.push_back(static_cast<double>(std::exp(static_cast<long double>(l)) / z));
  return w;
}

std::vector<double> random_vec(Rng& rng, int n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * normal01(rng);
  return v;
}

}  // namespace

TEST_CASE("neighbors: Chebyshev radius, both teams, ascending id") {
  env::GridConfig c;
  env::GridWorld w(c, 1);
  const auto j = w.add_agent(env::Team::A, {10, 10});
  CHECK(neighbors(w, j, 6).empty());
  const auto far = w.add_agent(env::Team::B, {17, 10});  // distance 7
  const auto diag = w.add_agent(env::Team::B, {16, 4});  // distance 6
  const auto ally = w.add_agent(env::Team::A, {11, 10});
  const auto n = neighbors(w, j, 6);
  CHECK(n.owner == j);
  CHECK(n.members == std::vector<env::AgentId>{diag, ally});
  CHECK(neighbors(w, ally, 6).members == std::vector<env::AgentId>{j, far, diag});
  CHECK(neighbors(w, j, 0).empty());
  CHECK(neighbors(w, far, 1).empty());
  w.set_hp(ally, 0);
  CHECK(neighbors(w, j, 6).members == std::vector<env::AgentId>{diag});
  CHECK_THROWS_AS(neighbors(w, ally, 6), ContractError);
}

TEST_CASE("neighbors: ring at radius + 1 is excluded") {
  env::GridConfig c;
  env::GridWorld w(c, 1);
  const auto j = w.add_agent(env::Team::A, {10, 10});
  for (int d = -3; d <= 3; ++d) {
    w.add_agent(env::Team::B, {10 + d, 7});
    w.add_agent(env::Team::B, {10 + d, 13});
  }
  CHECK(neighbors(w, j, 2).empty());
  CHECK(neighbors(w, j, 3).size() == 14);
}

TEST_CASE("softmax hand values and stability") {
  const std::vector<double> l1{std::log(3.0), 0.0};
  const auto w1 = softmax(l1);
  CHECK(w1[0] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(w1[1] == doctest::Approx(0.25).epsilon(1e-15));
  const std::vector<double> l2{std::log(2.0), 0.0};
  const auto w2 = softmax(l2);
  CHECK(std::abs(w2[0] - 2.0 / 3.0) < 1e-15);
  CHECK(std::abs(w2[1] - 1.0 / 3.0) < 1e-15);
  const std::vector<double> big{1000.0, 999.0};
  const auto w3 = softmax(big);
  CHECK(std::isfinite(w3[0]));
  CHECK(w3[0] + w3[1] == doctest::Approx(1.0));
}

TEST_CASE("attention weights: logits (ln 3, 0) give (0.75, 0.25)") {
  AttentionParams p;
  p.feature_dim = 1;
  p.embed_dim = 1;
  p.W = {1.0};
  p.a = {0.0, 1.0};
  const std::map<env::AgentId, std::vector<double>> feats{{0, {5.0}}, {1, {std::log(3.0)}}, {2, {0.0}}};
  const NeighborSet n{0, {1, 2}};
  const auto w = attention_weights(feats, n, p);
  REQUIRE(w.weights.size() == 2);
  CHECK(w.weights[0].first == 1);
  CHECK(std::abs(w.weights[0].second - 0.75) < 1e-12);
  CHECK(std::abs(w.weights[1].second - 0.25) < 1e-12);
}

TEST_CASE("attention weights match the reference and satisfy the simplex") {
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    const int f = 1 + static_cast<int>(uniform_index(rng, 6));
    const int e = 1 + static_cast<int>(uniform_index(rng, 5));
    const auto p = AttentionParams::init(f, e, 0.2, derive_seed(7, trial));
    const int k = 1 + static_cast<int>(uniform_index(rng, 8));
    std::map<env::AgentId, std::vector<double>> feats;
    NeighborSet n{0, {}};
    feats[0] = random_vec(rng, f, 3.0);
    std::vector<std::vector<double>> nb;
    for (int i = 1; i <= k; ++i) {
      feats[i] = random_vec(rng, f, 3.0);
      n.members.push_back(i);
      nb.push_back(feats[i]);
    }
    const auto w = attention_weights(feats, n, p);
    const auto ref = reference_weights(p, feats[0], nb);
    double sum = 0.0;
    for (int i = 0; i < k; ++i) {
      CHECK(w.weights[i].second >= 0.0);
      CHECK(w.weights[i].second <= 1.0);
      CHECK(std::abs(w.weights[i].second - ref[i]) < 1e-12);
      sum += w.weights[i].second;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
    CHECK(std::abs(w.sum() - 1.0) < 1e-9);
  }
}

TEST_CASE("identical features give exactly uniform weights") {
  const auto p = AttentionParams::init(5, 4, 0.2, 3);
  std::map<env::AgentId, std::vector<double>> feats{{0, {1, 2, 3, 4, 5}}};
  NeighborSet n{0, {}};
  for (int i = 1; i <= 3; ++i) {
    feats[i] = {0.5, -1, 2, 0, 1};
    n.members.push_back(i);
  }
  const auto w = attention_weights(feats, n, p);
  const auto u = uniform_weights(n);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::abs(w.weights[i].second - 1.0 / 3.0) < 1e-12);
    CHECK(std::abs(w.weights[i].second - u.weights[i].second) < 1e-12);
  }
}

TEST_CASE("permutation equivariance") {
  Rng rng(9);
  const auto p = AttentionParams::init(4, 3, 0.2, 11);
  std::map<env::AgentId, std::vector<double>> feats;
  for (env::AgentId i = 0; i < 5; ++i) feats[i] = random_vec(rng, 4);
  const auto a = attention_weights(feats, {0, {1, 2, 3, 4}}, p);
  const auto b = attention_weights(feats, {0, {3, 1, 4, 2}}, p);
  std::map<env::AgentId, double> ma(a.weights.begin(), a.weights.end());
  for (const auto& [id, w] : b.weights) CHECK(std::abs(ma[id] - w) < 1e-15);
}

TEST_CASE("uniform weights") {
  const auto w4 = uniform_weights({0, {1, 2, 3, 4}});
  for (const auto& [_, w] : w4.weights) CHECK(w == 0.25);
  CHECK(uniform_weights({0, {7}}).weights[0].second == 1.0);
  CHECK(std::abs(uniform_weights({0, {1, 2, 3}}).sum() - 1.0) < 1e-12);
  CHECK_THROWS_AS(uniform_weights({0, {}}), ContractError);
}

TEST_CASE("attention errors") {
  const auto p = AttentionParams::init(2, 2, 0.2, 1);
  std::map<env::AgentId, std::vector<double>> feats{{0, {1, 1}}, {1, {0, 1}}};
  CHECK_THROWS_AS(attention_weights(feats, {0, {}}, p), ContractError);
  CHECK_THROWS_AS(attention_weights(feats, {0, {1, 2}}, p), ContractError);
  auto bad = p;
  bad.a.pop_back();
  CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("attention backward matches central differences") {
  Rng rng(5);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int f = 2 + static_cast<int>(uniform_index(rng, 4));
    const int e = 1 + static_cast<int>(uniform_index(rng, 4));
    auto p = AttentionParams::init(f, e, 0.2, derive_seed(3, trial));
    const int k = 1 + static_cast<int>(uniform_index(rng, 5));
    const auto owner = random_vec(rng, f);
    std::vector<std::vector<double>> nb;
    for (int i = 0; i < k; ++i) nb.push_back(random_vec(rng, f));
    std::vector<std::span<const double>> spans(nb.begin(), nb.end());
    const auto g = random_vec(rng, k);  // loss = g . w

    auto loss = [&](const AttentionParams& q) {
      const auto fwd = attention_forward(q, owner, spans);
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += g[i] * fwd.weights[i];
      return s;
    };
    const auto fwd = attention_forward(p, owner, spans);
    auto grads = AttentionGrads::zeros_like(p);
    attention_backward(p, fwd, owner, spans, g, grads);

    constexpr double h = 1e-5;
    auto check = [&](std::vector<double>& param, const std::vector<double>& analytic) {
      for (std::size_t i = 0; i < param.size(); ++i) {
        const double v = param[i];
        param[i] = v + h;
        const double lp = loss(p);
        param[i] = v - h;
        const double lm = loss(p);
        param[i] = v;
        const double num = (lp - lm) / (2 * h);
        worst = std::max(worst, std::abs(num - analytic[i]) /
                                    std::max({std::abs(num), std::abs(analytic[i]), 1e-5}));
      }
    };
    check(p.W, grads.W);
    check(p.a, grads.a);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("attention sgd rejects non-finite gradients") {
  auto p = AttentionParams::init(2, 2, 0.2, 1);
  auto g = AttentionGrads::zeros_like(p);
  g.a[1] = std::nan("");
  CHECK_THROWS_AS(sgd_step(p, g, 0.1), NumericError);
  g.a[1] = 1.0;
  const double before = p.a[1];
  sgd_step(p, g, 0.1);
  CHECK(p.a[1] == doctest::Approx(before - 0.1));
}
