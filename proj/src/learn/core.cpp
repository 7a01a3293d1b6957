#include <algorithm>
#include <cmath>
#include <string>

#include "repval/errors.hpp"
#include "repval/learn.hpp"

namespace repval::learn {

std::string_view to_string(AlgoVariant v) {
  switch (v) {
    case AlgoVariant::IL: return "IL";
    case AlgoVariant::MFQ: return "MFQ";
    case AlgoVariant::RFQ: return "RFQ";
    case AlgoVariant::AC: return "AC";
    case AlgoVariant::MFAC: return "MFAC";
    case AlgoVariant::RFAC: return "RFAC";
  }
  return "?";
}

AlgoVariant parse_variant(std::string_view name) {
  for (auto v : kAllVariants)
    if (to_string(v) == name) return v;
  throw ConfigError("unknown algorithm variant '" + std::string(name) +
                    "' (expected IL|MFQ|RFQ|AC|MFAC|RFAC)");
}

std::string_view to_string(Optimizer o) { return o == Optimizer::Sgd ? "sgd" : "adam"; }

std::string_view to_string(ActorGradient g) {
  return g == ActorGradient::Sampled ? "sampled" : "expected";
}

ActorGradient parse_actor_gradient(std::string_view name) {
  if (name == "sampled") return ActorGradient::Sampled;
  if (name == "expected") return ActorGradient::Expected;
  throw ConfigError("algo.actor_gradient: unknown mode '" + std::string(name) +
                    "' (expected sampled|expected)");
}

Optimizer parse_optimizer(std::string_view name) {
  if (name == "sgd") return Optimizer::Sgd;
  if (name == "adam") return Optimizer::Adam;
  throw ConfigError("algo.optimizer: unknown optimizer '" + std::string(name) + "' (expected sgd|adam)");
}

NeighborMode neighbor_mode(AlgoVariant v) {
  switch (v) {
    case AlgoVariant::IL:
    case AlgoVariant::AC: return NeighborMode::None;
    case AlgoVariant::MFQ:
    case AlgoVariant::MFAC: return NeighborMode::Uniform;
    case AlgoVariant::RFQ:
    case AlgoVariant::RFAC: return NeighborMode::Attention;
  }
  return NeighborMode::None;
}

bool is_actor_critic(AlgoVariant v) {
  return v == AlgoVariant::AC || v == AlgoVariant::MFAC || v == AlgoVariant::RFAC;
}

void LearnerConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) {
    throw ConfigError("algo." + key + ": " + why);
  };
  if (obs_dim <= 0) fail("obs_dim", "must be positive");
  if (action_count <= 0) fail("action_count", "must be positive");
  for (int h : hidden)
    if (h <= 0) fail("hidden", "layer widths must be positive");
  if (!(beta >= 0.0) || !std::isfinite(beta)) fail("beta", "must be >= 0");
  if (!(gamma >= 0.0 && gamma < 1.0)) fail("gamma", "must be in [0, 1)");
  if (!(lr >= 0.0)) fail("lr", "must be >= 0");
  if (!(actor_lr >= 0.0)) fail("actor_lr", "must be >= 0");
  if (!(critic_lr >= 0.0)) fail("critic_lr", "must be >= 0");
  if (!(tau >= 0.0 && tau <= 1.0)) fail("tau", "must be in [0, 1]");
  if (buffer_capacity < 1) fail("buffer_capacity", "must be >= 1");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (update_every < 1) fail("update_every", "must be >= 1");
  if (embed_dim < 1) fail("embed_dim", "must be >= 1");
  if (!(entropy_coef >= 0.0) || !std::isfinite(entropy_coef)) fail("entropy_coef", "must be >= 0");
  if (!std::isfinite(leaky_slope)) fail("leaky_slope", "must be finite");
}

nlohmann::json to_json(const LearnerConfig& c) {
  return {
      {"variant", std::string(to_string(c.variant))},
      {"obs_dim", c.obs_dim},
      {"action_count", c.action_count},
      {"hidden", c.hidden},
      {"beta", c.beta},
      {"gamma", c.gamma},
      {"lr", c.lr},
      {"actor_lr", c.actor_lr},
      {"critic_lr", c.critic_lr},
      {"tau", c.tau},
      {"optimizer", std::string(to_string(c.optimizer))},
      {"buffer_capacity", c.buffer_capacity},
      {"batch_size", c.batch_size},
      {"update_every", c.update_every},
      {"embed_dim", c.embed_dim},
      {"leaky_slope", c.leaky_slope},
      {"negative_beta", c.negative_beta},
      {"max_backup", c.max_backup},
      {"advantage_baseline", c.advantage_baseline},
      {"entropy_coef", c.entropy_coef},
      {"actor_gradient", std::string(to_string(c.actor_gradient))},
      {"seed", c.seed},
  };
}

namespace {

template <typename T>
void read_key(const nlohmann::json& j, const char* section, const std::string& key, T& out) {
  try {
    out = j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string(section) + "." + key + ": wrong type");
  }
}

}  // namespace

LearnerConfig learner_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("algo: expected an object");
  LearnerConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "variant") {
      if (!v.is_string()) throw ConfigError("algo.variant: wrong type");
      c.variant = parse_variant(v.get<std::string>());
    } else if (key == "obs_dim") read_key(v, "algo", key, c.obs_dim);
    else if (key == "action_count") read_key(v, "algo", key, c.action_count);
    else if (key == "hidden") read_key(v, "algo", key, c.hidden);
    else if (key == "beta") read_key(v, "algo", key, c.beta);
    else if (key == "gamma") read_key(v, "algo", key, c.gamma);
    else if (key == "lr") read_key(v, "algo", key, c.lr);
    else if (key == "actor_lr") read_key(v, "algo", key, c.actor_lr);
    else if (key == "critic_lr") read_key(v, "algo", key, c.critic_lr);
    else if (key == "tau") read_key(v, "algo", key, c.tau);
    else if (key == "optimizer") {
      if (!v.is_string()) throw ConfigError("algo.optimizer: wrong type");
      c.optimizer = parse_optimizer(v.get<std::string>());
    }
    else if (key == "buffer_capacity") read_key(v, "algo", key, c.buffer_capacity);
    else if (key == "batch_size") read_key(v, "algo", key, c.batch_size);
    else if (key == "update_every") read_key(v, "algo", key, c.update_every);
    else if (key == "embed_dim") read_key(v, "algo", key, c.embed_dim);
    else if (key == "leaky_slope") read_key(v, "algo", key, c.leaky_slope);
    else if (key == "negative_beta") read_key(v, "algo", key, c.negative_beta);
    else if (key == "max_backup") read_key(v, "algo", key, c.max_backup);
    else if (key == "advantage_baseline") read_key(v, "algo", key, c.advantage_baseline);
    else if (key == "entropy_coef") read_key(v, "algo", key, c.entropy_coef);
    else if (key == "actor_gradient") {
      if (!v.is_string()) throw ConfigError("algo.actor_gradient: wrong type");
      c.actor_gradient = parse_actor_gradient(v.get<std::string>());
    }
    else if (key == "seed") read_key(v, "algo", key, c.seed);
    else throw ConfigError("algo." + key + ": unknown key");
  }
  return c;
}

nlohmann::json to_json(const env::GridConfig& c) {
  return {
      {"width", c.width},
      {"height", c.height},
      {"agents_per_team", c.agents_per_team},
      {"max_steps", c.max_steps},
      {"hp_max", c.hp_max},
      {"attack_damage", c.attack_damage},
      {"view_radius", c.view_radius},
      {"neighbor_radius", c.neighbor_radius},
      {"seed", c.seed},
  };
}

env::GridConfig grid_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("env: expected an object");
  env::GridConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "width") read_key(v, "env", key, c.width);
    else if (key == "height") read_key(v, "env", key, c.height);
    else if (key == "agents_per_team") read_key(v, "env", key, c.agents_per_team);
    else if (key == "max_steps") read_key(v, "env", key, c.max_steps);
    else if (key == "hp_max") read_key(v, "env", key, c.hp_max);
    else if (key == "attack_damage") read_key(v, "env", key, c.attack_damage);
    else if (key == "view_radius") read_key(v, "env", key, c.view_radius);
    else if (key == "neighbor_radius") read_key(v, "env", key, c.neighbor_radius);
    else if (key == "seed") read_key(v, "env", key, c.seed);
    else throw ConfigError("env." + key + ": unknown key");
  }
  return c;
}

// ---------------------------------------------------------------------------

Vec boltzmann_policy(std::span<const double> q_values, double beta, bool negative_beta) {
  if (!(beta >= 0.0) || !std::isfinite(beta))
    throw ContractError("boltzmann_policy: beta must be finite and >= 0");
  if (q_values.empty()) throw ContractError("boltzmann_policy: no actions");
  for (double q : q_values)
    if (!std::isfinite(q)) throw ContractError("boltzmann_policy: non-finite Q value");
  // Logits relative to the preferred value: a constant shift cancels before scaling.
  const double s = negative_beta ? -beta : beta;
  const double ref = negative_beta ? *std::min_element(q_values.begin(), q_values.end())
                                : *std::max_element(q_values.begin(), q_values.end());
  Vec logits(q_values.size());
  for (std::size_t i = 0; i < q_values.size(); ++i) logits[i] = s * (q_values[i] - ref);
  return graph::softmax(logits);
}

double td_target(double reward, double gamma, bool done, std::span<const double> next_q_values,
                 double beta, bool negative_beta, bool max_backup) {
  if (!std::isfinite(reward) || !std::isfinite(gamma))
    throw ContractError("td_target: non-finite reward or gamma");
  if (done) return reward;
  double v = 0.0;
  if (max_backup) {
    v = *std::max_element(next_q_values.begin(), next_q_values.end());
    if (!std::isfinite(v)) throw ContractError("td_target: non-finite next Q value");
  } else {
    const auto pi = boltzmann_policy(next_q_values, beta, negative_beta);
    for (std::size_t a = 0; a < pi.size(); ++a) v += pi[a] * next_q_values[a];
  }
  return reward + gamma * v;
}

// ---------------------------------------------------------------------------

WorldFrame capture_frame(const env::GridWorld& world) {
  auto frame = std::make_shared<Frame>();
  WorldFrame wf;
  wf.slot.assign(world.agents().size(), -1);
  for (const auto& a : world.agents()) {
    if (!a.alive) continue;
    wf.slot[a.id] = static_cast<int>(frame->z.size());
    frame->ids.push_back(a.id);
    frame->z.push_back(agg::make_z(world.observe(a.id).flatten(), a.last_action.index()));
  }
  wf.frame = std::move(frame);
  return wf;
}

DecisionContext make_context(const WorldFrame& wf, const env::GridWorld& world, env::AgentId id,
                             NeighborMode mode, int radius) {
  if (id >= wf.slot.size() || wf.slot[id] < 0)
    throw ContractError("decision context for dead or unknown agent " + std::to_string(id));
  DecisionContext ctx;
  ctx.frame = wf.frame;
  ctx.self = static_cast<std::uint32_t>(wf.slot[id]);
  if (mode != NeighborMode::None) {
    for (auto k : graph::neighbors(world, id, radius).members)
      ctx.members.push_back(static_cast<std::uint32_t>(wf.slot[k]));
  }
  return ctx;
}

InputTrace build_inputs(const DecisionContext& ctx, NeighborMode mode,
                        const graph::AttentionParams* attention) {
  InputTrace t;
  const auto& own = ctx.own();
  if (mode == NeighborMode::None || ctx.members.empty()) {
    t.inputs = agg::build_q_input(own);
  } else {
    std::vector<const agg::ZVector*> nbrs;
    nbrs.reserve(ctx.members.size());
    for (auto m : ctx.members) nbrs.push_back(&ctx.frame->z[m]);
    if (mode == NeighborMode::Uniform) {
      t.weights.assign(nbrs.size(), 1.0 / static_cast<double>(nbrs.size()));
    } else {
      if (!attention) throw ContractError("attention variant without attention parameters");
      std::vector<std::span<const double>> hs;
      hs.reserve(nbrs.size());
      for (const auto* z : nbrs) hs.emplace_back(z->s_part);
      t.attention = graph::attention_forward(*attention, own.s_part, hs);
      t.weights = t.attention->weights;
    }
    t.inputs = agg::build_q_input(own, t.weights, nbrs);
  }
  t.flat = t.inputs.flatten();
  return t;
}

void backprop_inputs(const DecisionContext& ctx, const InputTrace& trace,
                     const graph::AttentionParams& attention, std::span<const double> grad_flat,
                     graph::AttentionGrads& grads) {
  if (!trace.attention || ctx.members.empty()) return;
  const auto& own = ctx.own();
  const std::size_t ds = own.s_part.size();
  const std::size_t da = own.a_part.size();
  if (grad_flat.size() != agg::NormalizedInputs::flat_size(ds, da))
    throw ContractError("backprop_inputs: gradient length mismatch");

  std::vector<const agg::ZVector*> nbrs;
  for (auto m : ctx.members) nbrs.push_back(&ctx.frame->z[m]);
  const auto raw = agg::weighted_aggregate(trace.weights, nbrs);
  const auto d_s = agg::l2_normalize_backward(raw.s_part, grad_flat.subspan(ds + da, ds));
  const auto d_a = agg::l2_normalize_backward(raw.a_part, grad_flat.subspan(2 * ds + da, da));

  Vec grad_w(nbrs.size(), 0.0);
  std::vector<std::span<const double>> hs;
  for (std::size_t k = 0; k < nbrs.size(); ++k) {
    const auto& z = *nbrs[k];
    double g = 0.0;
    for (std::size_t i = 0; i < ds; ++i)
      if (z.s_part[i] != 0.0) g += z.s_part[i] * d_s[i];
    for (std::size_t i = 0; i < da; ++i) g += z.a_part[i] * d_a[i];
    grad_w[k] = g;
    hs.emplace_back(z.s_part);
  }
  graph::attention_backward(attention, *trace.attention, own.s_part, hs, grad_w, grads);
}

// ---------------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::uint64_t seed)
    : capacity_(capacity), rng_(seed) {
  if (capacity_ == 0) throw ConfigError("algo.buffer_capacity: must be >= 1");
}

void ReplayBuffer::push(Transition t) {
  if (t.action < 0 || !std::isfinite(t.reward))
    throw ContractError("replay: invalid transition (action/reward)");
  if (data_.size() < capacity_) {
    data_.push_back(std::move(t));
  } else {
    data_[next_] = std::move(t);
  }
  next_ = (next_ + 1) % capacity_;
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t n) {
  const std::size_t total = data_.size();
  if (n > total) throw ContractError("replay: sample larger than buffer");
  std::vector<std::size_t> picked;
  picked.reserve(n);
  for (std::size_t j = total - n; j < total; ++j) {
    const auto t = static_cast<std::size_t>(uniform_index(rng_, j + 1));
    if (std::find(picked.begin(), picked.end(), t) == picked.end())
      picked.push_back(t);
    else
      picked.push_back(j);
  }
  std::vector<const Transition*> out;
  out.reserve(n);
  for (auto i : picked) out.push_back(&data_[i]);
  return out;
}

}  // namespace repval::learn
