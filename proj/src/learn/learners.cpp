#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "repval/errors.hpp"
#include "repval/learn.hpp"

namespace repval::learn {

namespace {

// Sub-stream tags for everything a learner draws from its seed.
enum SeedStream : std::uint64_t {
  kQNetInit = 1,
  kAttentionInit = 2,
  kReplaySampler = 3,
  kActorInit = 4,
  kCriticInit = 5,
  kTrajectoryShuffle = 6,
};

std::vector<int> net_dims(const LearnerConfig& c) {
  std::vector<int> dims{c.q_input_size()};
  dims.insert(dims.end(), c.hidden.begin(), c.hidden.end());
  dims.push_back(c.action_count);
  return dims;
}

int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

int sample_index(std::span<const double> probs, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  // Rounding left u above the final partial sum: take the last nonzero entry.
  for (std::size_t i = probs.size(); i-- > 0;)
    if (probs[i] > 0.0) return static_cast<int>(i);
  return 0;
}

void check_action(const LearnerConfig& c, int a) {
  if (a < 0 || a >= c.action_count)
    throw ContractError("transition action " + std::to_string(a) + " out of range");
}

std::vector<const Transition*> pointers(std::span<const Transition> ts) {
  std::vector<const Transition*> out;
  out.reserve(ts.size());
  for (const auto& t : ts) out.push_back(&t);
  return out;
}

}  // namespace

Learner::Learner(LearnerConfig config) : config_(std::move(config)) {
  config_.validate();
  if (neighbor_mode(config_.variant) == NeighborMode::Attention)
    attention_ = graph::AttentionParams::init(config_.obs_dim, config_.embed_dim,
                                              config_.leaky_slope,
                                              derive_seed(config_.seed, kAttentionInit));
}

void Learner::apply(nn::Mlp& net, const nn::Gradients& grads, nn::Adam& state, double lr) const {
  if (config_.optimizer == Optimizer::Sgd) nn::sgd_step(net, grads, lr);
  else nn::adam_step(net, grads, state, lr);
}

void Learner::apply_attention(const graph::AttentionGrads& grads, double lr) {
  if (config_.optimizer == Optimizer::Sgd) {
    graph::sgd_step(*attention_, grads, lr);
    return;
  }
  auto& p = *attention_;
  if (grads.W.size() != p.W.size() || grads.a.size() != p.a.size())
    throw ContractError("attention: gradient shape mismatch");
  Vec flat = p.W, g = grads.W;
  flat.insert(flat.end(), p.a.begin(), p.a.end());
  g.insert(g.end(), grads.a.begin(), grads.a.end());
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!std::isfinite(g[i])) throw NumericError("non-finite attention gradient at " + std::to_string(i));
  attention_opt_.step(flat, g, lr);
  std::copy(flat.begin(), flat.begin() + static_cast<long>(p.W.size()), p.W.begin());
  std::copy(flat.begin() + static_cast<long>(p.W.size()), flat.end(), p.a.begin());
}

int Learner::act(const DecisionContext& ctx, bool explore, Rng& rng) const {
  if (!explore) return greedy_action(ctx);
  return sample_index(action_probabilities(ctx), rng);
}

std::unique_ptr<Learner> make_learner(const LearnerConfig& config) {
  if (is_actor_critic(config.variant)) return std::make_unique<ACLearner>(config);
  return std::make_unique<QLearner>(config);
}

// ---------------------------------------------------------------------------
// QLearner
// ---------------------------------------------------------------------------

QLearner::QLearner(LearnerConfig config)
    : Learner(std::move(config)),
      q_net_(nn::Mlp::init(net_dims(config_), derive_seed(config_.seed, kQNetInit))),
      target_(q_net_),
      buffer_(config_.buffer_capacity, derive_seed(config_.seed, kReplaySampler)) {
  if (is_actor_critic(config_.variant))
    throw ConfigError("algo.variant: " + std::string(to_string(config_.variant)) +
                      " is not a Q-learning variant");
}

Vec QLearner::q_values(const DecisionContext& ctx) const {
  return nn::forward(q_net_, inputs(ctx).flat);
}

Vec QLearner::action_probabilities(const DecisionContext& ctx) const {
  return boltzmann_policy(q_values(ctx), config_.beta, config_.negative_beta);
}

int QLearner::greedy_action(const DecisionContext& ctx) const { return argmax(q_values(ctx)); }

QLearner::LossGrad QLearner::loss_and_gradients(std::span<const Transition* const> batch) const {
  if (batch.empty()) throw ContractError("q_update: empty batch");
  LossGrad out{0.0, nn::Gradients::zeros_like(q_net_),
               attention_ ? graph::AttentionGrads::zeros_like(*attention_) : graph::AttentionGrads{}};
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const bool attend = attention_.has_value();
  nn::ForwardCache cache;
  Vec upstream(config_.action_count, 0.0);

  for (const Transition* t : batch) {
    check_action(config_, t->action);
    double y = t->reward;
    if (!t->done) {
      if (!t->next.valid()) throw ContractError("q_update: non-terminal transition without next state");
      const auto next_q = nn::forward(target_, inputs(t->next).flat);
      y = td_target(t->reward, config_.gamma, false, next_q, config_.beta, config_.negative_beta,
                    config_.max_backup);
    }
    const auto trace = inputs(t->now);
    const auto q = nn::forward(q_net_, trace.flat, cache);
    const double err = q[t->action] - y;
    out.loss += err * err * inv_b;

    std::fill(upstream.begin(), upstream.end(), 0.0);
    upstream[t->action] = 2.0 * err * inv_b;
    const bool need_input = attend && trace.attention.has_value();
    const auto d_input = nn::backward_accumulate(q_net_, cache, upstream, out.net, need_input);
    if (need_input) backprop_inputs(t->now, trace, *attention_, d_input, out.attention);
  }
  return out;
}

double QLearner::q_update(std::span<const Transition* const> batch) {
  auto lg = loss_and_gradients(batch);
  if (!std::isfinite(lg.loss))
    throw NumericError("q_update: non-finite loss " + std::to_string(lg.loss) + " over batch of " +
                       std::to_string(batch.size()));
  apply(q_net_, lg.net, q_opt_, config_.lr);
  if (attention_) apply_attention(lg.attention, config_.lr);
  nn::soft_update(target_, q_net_, config_.tau);
  return lg.loss;
}

double QLearner::q_update(std::span<const Transition> batch) {
  const auto ptrs = pointers(batch);
  return q_update(std::span<const Transition* const>(ptrs));
}

std::optional<double> QLearner::observe_step(std::vector<Transition> step) {
  for (auto& t : step) buffer_.push(std::move(t));
  ++steps_seen_;
  if (steps_seen_ % config_.update_every != 0 || buffer_.size() < config_.batch_size)
    return std::nullopt;
  const auto batch = buffer_.sample(config_.batch_size);
  return q_update(std::span<const Transition* const>(batch));
}

std::vector<std::pair<std::string, nn::Mlp*>> QLearner::sections() {
  return {{"q_net", &q_net_}, {"target_net", &target_}};
}

// ---------------------------------------------------------------------------
// ACLearner
// ---------------------------------------------------------------------------

ACLearner::ACLearner(LearnerConfig config)
    : Learner(std::move(config)),
      actor_(nn::Mlp::init(net_dims(config_), derive_seed(config_.seed, kActorInit))),
      critic_(nn::Mlp::init(net_dims(config_), derive_seed(config_.seed, kCriticInit))),
      critic_target_(critic_),
      shuffle_rng_(derive_seed(config_.seed, kTrajectoryShuffle)) {
  if (!is_actor_critic(config_.variant))
    throw ConfigError("algo.variant: " + std::string(to_string(config_.variant)) +
                      " is not an actor-critic variant");
}

Vec ACLearner::policy(const DecisionContext& ctx) const {
  return graph::softmax(nn::forward(actor_, inputs(ctx).flat));
}

Vec ACLearner::critic_values(const DecisionContext& ctx) const {
  return nn::forward(critic_, inputs(ctx).flat);
}

int ACLearner::greedy_action(const DecisionContext& ctx) const {
  return argmax(nn::forward(actor_, inputs(ctx).flat));
}

std::pair<double, std::pair<nn::Gradients, graph::AttentionGrads>>
ACLearner::critic_loss_and_gradients(std::span<const Transition* const> batch) const {
  if (batch.empty()) throw ContractError("ac_update: empty batch");
  double loss = 0.0;
  auto g_net = nn::Gradients::zeros_like(critic_);
  auto g_att = attention_ ? graph::AttentionGrads::zeros_like(*attention_) : graph::AttentionGrads{};
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  nn::ForwardCache cache;
  Vec upstream(config_.action_count, 0.0);

  for (const Transition* t : batch) {
    check_action(config_, t->action);
    double y = t->reward;
    if (!t->done) {
      if (!t->next.valid()) throw ContractError("ac_update: non-terminal transition without next state");
      const auto next_flat = inputs(t->next).flat;
      const auto next_q = nn::forward(critic_target_, next_flat);
      double v = 0.0;
      if (config_.max_backup) {
        v = *std::max_element(next_q.begin(), next_q.end());
      } else {
        const auto pi = graph::softmax(nn::forward(actor_, next_flat));
        for (std::size_t a = 0; a < pi.size(); ++a) v += pi[a] * next_q[a];
      }
      y = t->reward + config_.gamma * v;
    }
    const auto trace = inputs(t->now);
    const auto q = nn::forward(critic_, trace.flat, cache);
    const double err = q[t->action] - y;
    loss += err * err * inv_b;
    std::fill(upstream.begin(), upstream.end(), 0.0);
    upstream[t->action] = 2.0 * err * inv_b;
    const bool need_input = attention_.has_value() && trace.attention.has_value();
    const auto d_input = nn::backward_accumulate(critic_, cache, upstream, g_net, need_input);
    if (need_input) backprop_inputs(t->now, trace, *attention_, d_input, g_att);
  }
  return {loss, {std::move(g_net), std::move(g_att)}};
}

std::pair<double, nn::Gradients> ACLearner::actor_loss_and_gradients(
    std::span<const Transition* const> batch) const {
  if (batch.empty()) throw ContractError("ac_update: empty batch");
  double loss = 0.0;
  auto grads = nn::Gradients::zeros_like(actor_);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  nn::ForwardCache cache;
  Vec upstream(config_.action_count);

  for (const Transition* t : batch) {
    check_action(config_, t->action);
    const auto flat = inputs(t->now).flat;
    const auto logits = nn::forward(actor_, flat, cache);
    const auto pi = graph::softmax(logits);
    const auto q = nn::forward(critic_, flat);
    const double v = std::inner_product(pi.begin(), pi.end(), q.begin(), 0.0);
    if (config_.actor_gradient == ActorGradient::Expected) {
      // d/dlogit_i of -sum_a pi_a Q_a = -pi_i (Q_i - v); a baseline cancels.
      loss -= v * inv_b;
      for (int a = 0; a < config_.action_count; ++a) upstream[a] = -pi[a] * (q[a] - v) * inv_b;
    } else {
      double coef = q[t->action];
      if (config_.advantage_baseline) coef -= v;
      loss -= std::log(std::max(pi[t->action], 1e-300)) * coef * inv_b;
      // d/dlogits of -log pi(a) * coef = -coef * (onehot(a) - pi)
      for (int a = 0; a < config_.action_count; ++a)
        upstream[a] = -coef * ((a == t->action ? 1.0 : 0.0) - pi[a]) * inv_b;
    }
    if (config_.entropy_coef > 0.0) {
      // dH/dlogit_i = -pi_i (log pi_i + H)
      double h = 0.0;
      for (double p : pi)
        if (p > 0.0) h -= p * std::log(p);
      loss -= config_.entropy_coef * h * inv_b;
      for (int a = 0; a < config_.action_count; ++a) {
        const double lp = pi[a] > 0.0 ? std::log(pi[a]) : 0.0;
        upstream[a] += config_.entropy_coef * pi[a] * (lp + h) * inv_b;
      }
    }
    nn::backward_accumulate(actor_, cache, upstream, grads, false);
  }
  return {loss, std::move(grads)};
}

ACLearner::Losses ACLearner::ac_update(std::span<const Transition> trajectory) {
  if (trajectory.empty()) throw ContractError("ac_update: empty trajectory");
  std::vector<const Transition*> order = pointers(trajectory);
  repval::shuffle(order.begin(), order.end(), shuffle_rng_);

  Losses total;
  const std::size_t bs = config_.batch_size;
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const auto n = std::min(bs, order.size() - start);
    const std::span<const Transition* const> chunk(order.data() + start, n);
    const double share = static_cast<double>(n) / static_cast<double>(order.size());

    auto [c_loss, c_grads] = critic_loss_and_gradients(chunk);
    if (!std::isfinite(c_loss)) throw NumericError("ac_update: non-finite critic loss");
    apply(critic_, c_grads.first, critic_opt_, config_.critic_lr);
    if (attention_) apply_attention(c_grads.second, config_.critic_lr);
    nn::soft_update(critic_target_, critic_, config_.tau);

    auto [a_loss, a_grads] = actor_loss_and_gradients(chunk);
    if (!std::isfinite(a_loss)) throw NumericError("ac_update: non-finite actor loss");
    apply(actor_, a_grads, actor_opt_, config_.actor_lr);

    total.critic += c_loss * share;
    total.actor += a_loss * share;
  }
  return total;
}

std::optional<double> ACLearner::observe_step(std::vector<Transition> step) {
  for (auto& t : step) trajectory_.push_back(std::move(t));
  return std::nullopt;
}

std::optional<double> ACLearner::end_episode() {
  if (trajectory_.empty()) return std::nullopt;
  const auto losses = ac_update(trajectory_);
  trajectory_.clear();
  return losses.critic;
}

std::vector<std::pair<std::string, nn::Mlp*>> ACLearner::sections() {
  return {{"actor", &actor_}, {"critic", &critic_}, {"critic_target", &critic_target_}};
}

}  // namespace repval::learn
