#include "repval/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "repval/errors.hpp"
#include "repval/rng.hpp"

namespace repval::graph {

AttentionParams AttentionParams::init(int feature_dim, int embed_dim, double leaky_slope,
                                      std::uint64_t seed) {
  if (feature_dim <= 0 || embed_dim <= 0)
    throw ConfigError("attention dimensions must be positive");
  AttentionParams p;
  p.feature_dim = feature_dim;
  p.embed_dim = embed_dim;
  p.leaky_slope = leaky_slope;
  Rng rng(seed);
  const double wb = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  p.W.resize(static_cast<std::size_t>(feature_dim) * embed_dim);
  for (auto& w : p.W) w = uniform(rng, -wb, wb);
  const double ab = 1.0 / std::sqrt(2.0 * embed_dim);
  p.a.resize(2 * static_cast<std::size_t>(embed_dim));
  for (auto& v : p.a) v = uniform(rng, -ab, ab);
  return p;
}

void AttentionParams::validate() const {
  if (W.size() != static_cast<std::size_t>(feature_dim) * embed_dim ||
      a.size() != 2 * static_cast<std::size_t>(embed_dim))
    throw ContractError("attention parameter shapes inconsistent");
  auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(W.begin(), W.end(), finite) || !std::all_of(a.begin(), a.end(), finite) ||
      !std::isfinite(leaky_slope))
    throw ContractError("attention parameters not finite");
}

std::vector<double> WeightVector::values() const {
  std::vector<double> v;
  v.reserve(weights.size());
  for (const auto& [id, w] : weights) v.push_back(w);
  return v;
}

double WeightVector::sum() const {
  double s = 0.0;
  for (const auto& [id, w] : weights) s += w;
  return s;
}

NeighborSet neighbors(const env::GridWorld& world, AgentId j, int radius) {
  const auto& self = world.agent(j);
  if (!self.alive) throw ContractError("neighbors of dead agent " + std::to_string(j));
  NeighborSet set;
  set.owner = j;
  for (const auto& other : world.agents()) {
    if (!other.alive || other.id == j) continue;
    const int d = std::max(std::abs(other.pos.x - self.pos.x), std::abs(other.pos.y - self.pos.y));
    if (d <= radius) set.members.push_back(other.id);
  }
  return set;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += out[i] = std::exp(logits[i] - m);
  for (auto& v : out) v /= z;
  return out;
}

namespace {

std::vector<double> embed(const AttentionParams& p, std::span<const double> h) {
  if (h.size() != static_cast<std::size_t>(p.feature_dim))
    throw ContractError("attention feature length " + std::to_string(h.size()) +
                        " != " + std::to_string(p.feature_dim));
  std::vector<double> g(p.embed_dim, 0.0);
  for (int f = 0; f < p.feature_dim; ++f) {
    const double hf = h[f];
    if (hf == 0.0) continue;
    const double* row = p.W.data() + static_cast<std::size_t>(f) * p.embed_dim;
    for (int i = 0; i < p.embed_dim; ++i) g[i] += hf * row[i];
  }
  return g;
}

}  // namespace

AttentionForward attention_forward(const AttentionParams& params,
                                   std::span<const double> owner_features,
                                   std::span<const std::span<const double>> nbr_features) {
  if (nbr_features.empty()) throw ContractError("attention over an empty neighbor set");
  const auto E = static_cast<std::size_t>(params.embed_dim);
  AttentionForward fwd;
  fwd.owner_embed = embed(params, owner_features);
  double owner_term = 0.0;
  for (std::size_t i = 0; i < E; ++i) owner_term += params.a[i] * fwd.owner_embed[i];

  fwd.nbr_embeds.reserve(nbr_features.size());
  for (const auto h : nbr_features) {
    fwd.nbr_embeds.push_back(embed(params, h));
    const auto& g = fwd.nbr_embeds.back();
    double u = owner_term;
    for (std::size_t i = 0; i < E; ++i) u += params.a[E + i] * g[i];
    fwd.pre_activation.push_back(u);
    fwd.logits.push_back(u > 0.0 ? u : params.leaky_slope * u);
  }
  fwd.weights = softmax(fwd.logits);
  return fwd;
}

void attention_backward(const AttentionParams& params, const AttentionForward& fwd,
                        std::span<const double> owner_features,
                        std::span<const std::span<const double>> nbr_features,
                        std::span<const double> grad_weights, AttentionGrads& grads) {
  const auto K = fwd.weights.size();
  const auto E = static_cast<std::size_t>(params.embed_dim);
  if (grad_weights.size() != K || nbr_features.size() != K)
    throw ContractError("attention_backward: size mismatch");

  double mean = 0.0;
  for (std::size_t k = 0; k < K; ++k) mean += fwd.weights[k] * grad_weights[k];

  std::vector<double> owner_embed_grad(E, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const double d_logit = fwd.weights[k] * (grad_weights[k] - mean);
    const double d_pre = d_logit * (fwd.pre_activation[k] > 0.0 ? 1.0 : params.leaky_slope);
    if (d_pre == 0.0) continue;
    const auto& gk = fwd.nbr_embeds[k];
    std::vector<double> nbr_embed_grad(E);
    for (std::size_t i = 0; i < E; ++i) {
      grads.a[i] += d_pre * fwd.owner_embed[i];
      grads.a[E + i] += d_pre * gk[i];
      owner_embed_grad[i] += d_pre * params.a[i];
      nbr_embed_grad[i] = d_pre * params.a[E + i];
    }
    const auto h = nbr_features[k];
    for (std::size_t f = 0; f < h.size(); ++f) {
      if (h[f] == 0.0) continue;
      double* row = grads.W.data() + f * E;
      for (std::size_t i = 0; i < E; ++i) row[i] += h[f] * nbr_embed_grad[i];
    }
  }
  for (std::size_t f = 0; f < owner_features.size(); ++f) {
    if (owner_features[f] == 0.0) continue;
    double* row = grads.W.data() + f * E;
    for (std::size_t i = 0; i < E; ++i) row[i] += owner_features[f] * owner_embed_grad[i];
  }
}

AttentionGrads AttentionGrads::zeros_like(const AttentionParams& p) {
  return {std::vector<double>(p.W.size(), 0.0), std::vector<double>(p.a.size(), 0.0)};
}

void AttentionGrads::add(const AttentionGrads& other) {
  if (other.W.size() != W.size() || other.a.size() != a.size())
    throw ContractError("attention gradient shape mismatch");
  for (std::size_t i = 0; i < W.size(); ++i) W[i] += other.W[i];
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += other.a[i];
}

void sgd_step(AttentionParams& params, const AttentionGrads& grads, double lr) {
  if (grads.W.size() != params.W.size() || grads.a.size() != params.a.size())
    throw ContractError("attention gradient shape mismatch");
  for (std::size_t i = 0; i < grads.W.size(); ++i)
    if (!std::isfinite(grads.W[i]))
      throw NumericError("non-finite attention gradient at W[" + std::to_string(i) + "]");
  for (std::size_t i = 0; i < grads.a.size(); ++i)
    if (!std::isfinite(grads.a[i]))
      throw NumericError("non-finite attention gradient at a[" + std::to_string(i) + "]");
  for (std::size_t i = 0; i < params.W.size(); ++i) params.W[i] -= lr * grads.W[i];
  for (std::size_t i = 0; i < params.a.size(); ++i) params.a[i] -= lr * grads.a[i];
}

WeightVector attention_weights(const std::map<AgentId, std::vector<double>>& features,
                               const NeighborSet& nbrs, const AttentionParams& params) {
  if (nbrs.empty()) throw ContractError("attention_weights: empty neighbor set");
  auto lookup = [&](AgentId id) -> std::span<const double> {
    const auto it = features.find(id);
    if (it == features.end())
      throw ContractError("attention_weights: missing features for agent " + std::to_string(id));
    return it->second;
  };
  const auto owner = lookup(nbrs.owner);
  std::vector<std::span<const double>> hs;
  hs.reserve(nbrs.size());
  for (AgentId k : nbrs.members) hs.push_back(lookup(k));
  const auto fwd = attention_forward(params, owner, hs);

  WeightVector w;
  w.owner = nbrs.owner;
  for (std::size_t i = 0; i < nbrs.size(); ++i) w.weights.emplace_back(nbrs.members[i], fwd.weights[i]);
  return w;
}

WeightVector uniform_weights(const NeighborSet& nbrs) {
  if (nbrs.empty()) throw ContractError("uniform_weights: empty neighbor set");
  WeightVector w;
  w.owner = nbrs.owner;
  const double v = 1.0 / static_cast<double>(nbrs.size());
  for (AgentId k : nbrs.members) w.weights.emplace_back(k, v);
  return w;
}

}  // namespace repval::graph
