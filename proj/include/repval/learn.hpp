#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "repval/aggregate.hpp"
#include "repval/env.hpp"
#include "repval/graph.hpp"
#include "repval/nn.hpp"
#include "repval/rng.hpp"

namespace repval::learn {

using Vec = std::vector<double>;

enum class AlgoVariant : std::uint8_t { IL, MFQ, RFQ, AC, MFAC, RFAC };
enum class NeighborMode : std::uint8_t { None, Uniform, Attention };
enum class Optimizer : std::uint8_t { Sgd, Adam };
/// Sampled: grad log pi(a) Q(a) at the taken action. Expected: the same
/// quantity summed over all actions under pi.
enum class ActorGradient : std::uint8_t { Sampled, Expected };

inline constexpr AlgoVariant kAllVariants[] = {AlgoVariant::IL, AlgoVariant::MFQ,
                                               AlgoVariant::RFQ, AlgoVariant::AC,
                                               AlgoVariant::MFAC, AlgoVariant::RFAC};

std::string_view to_string(AlgoVariant v);
AlgoVariant parse_variant(std::string_view name);
NeighborMode neighbor_mode(AlgoVariant v);
bool is_actor_critic(AlgoVariant v);
std::string_view to_string(Optimizer o);
Optimizer parse_optimizer(std::string_view name);
std::string_view to_string(ActorGradient g);
ActorGradient parse_actor_gradient(std::string_view name);

struct LearnerConfig {
  AlgoVariant variant = AlgoVariant::RFQ;
  int obs_dim = 0;  // length of the s-part (observation)
  int action_count = env::kActionCount;
  std::vector<int> hidden{64, 64};

  double beta = 1.0;   // Boltzmann inverse temperature
  double gamma = 0.95;
  double lr = 1e-3;    // Q-learners (network and attention)
  double actor_lr = 1e-3;
  double critic_lr = 1e-3;
  double tau = 0.01;   // soft target update per optimisation step
  Optimizer optimizer = Optimizer::Adam;

  std::size_t buffer_capacity = 1u << 16;
  std::size_t batch_size = 64;
  int update_every = 4;  // env steps between replay updates

  int embed_dim = 16;
  double leaky_slope = 0.2;

  bool negative_beta = false;          // exp(-beta Q) instead of exp(+beta Q)
  bool max_backup = false;          // max_a Q instead of the policy expectation
  bool advantage_baseline = false;  // subtract V from Q in the actor gradient
  double entropy_coef = 0.0;        // actor maximises Q-weighted log pi + coef * H(pi)
  ActorGradient actor_gradient = ActorGradient::Sampled;

  std::uint64_t seed = 0;

  /// Throws ConfigError naming the offending key.
  void validate() const;
  int q_input_size() const {
    return static_cast<int>(agg::NormalizedInputs::flat_size(obs_dim, action_count));
  }
};

nlohmann::json to_json(const LearnerConfig& c);
/// Rejects unknown keys; missing keys keep their defaults.
LearnerConfig learner_config_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Boltzmann policy and TD target
// ---------------------------------------------------------------------------

/// pi(a) proportional to exp(sign * beta * Q(a)); sign = +1 unless negative_beta.
/// Throws ContractError on beta < 0 or non-finite values.
Vec boltzmann_policy(std::span<const double> q_values, double beta, bool negative_beta = false);

/// y = r + gamma * v * (1 - done), v = E_{a ~ Boltzmann}[Q'(a)] (or max_a Q').
double td_target(double reward, double gamma, bool done, std::span<const double> next_q_values,
                 double beta, bool negative_beta = false, bool max_backup = false);

// ---------------------------------------------------------------------------
// Decision contexts and transitions
//
// A Frame holds the z-vector (observation, previous action) of every living
// agent at one decision time. Transitions reference frames through shared
// pointers so a replay buffer stores each observation once per step.
// ---------------------------------------------------------------------------

struct Frame {
  std::vector<env::AgentId> ids;
  std::vector<agg::ZVector> z;
};

struct DecisionContext {
  std::shared_ptr<const Frame> frame;
  std::uint32_t self = 0;
  std::vector<std::uint32_t> members;  // neighbor slots in `frame`

  const agg::ZVector& own() const { return frame->z[self]; }
  bool valid() const { return frame != nullptr; }
};

/// Frame plus agent-id -> slot lookup for one world state.
struct WorldFrame {
  std::shared_ptr<const Frame> frame;
  std::vector<int> slot;  // indexed by agent id; -1 when dead
};

WorldFrame capture_frame(const env::GridWorld& world);
DecisionContext make_context(const WorldFrame& wf, const env::GridWorld& world, env::AgentId id,
                             NeighborMode mode, int radius);

struct Transition {
  DecisionContext now;
  int action = 0;
  double reward = 0.0;
  DecisionContext next;  // unset when done
  bool done = true;

  const Vec& obs() const { return now.own().s_part; }
  const Vec* next_obs() const { return next.valid() ? &next.own().s_part : nullptr; }
};

/// Q-network input for a context, with what the backward pass needs.
struct InputTrace {
  agg::NormalizedInputs inputs;
  Vec flat;
  Vec weights;  // neighbor weights, empty for IL/AC
  std::optional<graph::AttentionForward> attention;
};

InputTrace build_inputs(const DecisionContext& ctx, NeighborMode mode,
                        const graph::AttentionParams* attention);

/// Back-propagates d(loss)/d(flat input) through the normalised neighbor
/// blocks and the attention softmax into `grads`. No-op without neighbors.
void backprop_inputs(const DecisionContext& ctx, const InputTrace& trace,
                     const graph::AttentionParams& attention, std::span<const double> grad_flat,
                     graph::AttentionGrads& grads);

class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::uint64_t seed);

  void push(Transition t);
  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  /// n distinct transitions, uniformly at random (Floyd's algorithm).
  std::vector<const Transition*> sample(std::size_t n);
  const Transition& at(std::size_t i) const { return data_.at(i); }

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Transition> data_;
  Rng rng_;
};

// ---------------------------------------------------------------------------
// Learners
// ---------------------------------------------------------------------------

class Learner {
 public:
  explicit Learner(LearnerConfig config);
  virtual ~Learner() = default;

  const LearnerConfig& config() const { return config_; }
  AlgoVariant variant() const { return config_.variant; }
  NeighborMode mode() const { return neighbor_mode(config_.variant); }
  const graph::AttentionParams* attention() const {
    return attention_ ? &*attention_ : nullptr;
  }

  InputTrace inputs(const DecisionContext& ctx) const {
    return build_inputs(ctx, mode(), attention());
  }

  /// Boltzmann distribution (Q-learners) or pi_theta (actor-critic).
  virtual Vec action_probabilities(const DecisionContext& ctx) const = 0;
  /// argmax Q, or the mode of pi_theta. Ties go to the lowest index.
  virtual int greedy_action(const DecisionContext& ctx) const = 0;
  /// Samples from action_probabilities when explore, else greedy_action.
  int act(const DecisionContext& ctx, bool explore, Rng& rng) const;

  /// Training hooks: transitions of one env step, then end of episode.
  /// Return the mean loss of any optimisation performed.
  virtual std::optional<double> observe_step(std::vector<Transition> step) = 0;
  virtual std::optional<double> end_episode() = 0;

  /// Named MLP sections written to / read from a checkpoint, in order.
  virtual std::vector<std::pair<std::string, nn::Mlp*>> sections() = 0;
  graph::AttentionParams* mutable_attention() { return attention_ ? &*attention_ : nullptr; }

 protected:
  /// One step of the configured optimizer.
  void apply(nn::Mlp& net, const nn::Gradients& grads, nn::Adam& state, double lr) const;
  void apply_attention(const graph::AttentionGrads& grads, double lr);

  LearnerConfig config_;
  std::optional<graph::AttentionParams> attention_;
  nn::Adam attention_opt_;
};

/// IL / MFQ / RFQ: off-policy Q-learning with replay and a soft target net.
class QLearner final : public Learner {
 public:
  explicit QLearner(LearnerConfig config);

  Vec q_values(const DecisionContext& ctx) const;
  Vec action_probabilities(const DecisionContext& ctx) const override;
  int greedy_action(const DecisionContext& ctx) const override;

  /// One SGD step on the mean squared TD error of `batch`; soft-updates the
  /// target. Returns the pre-update loss. Throws on an empty batch or a
  /// non-finite loss.
  double q_update(std::span<const Transition* const> batch);
  double q_update(std::span<const Transition> batch);

  /// Gradients of the batch loss without applying them (diagnostics/tests).
  struct LossGrad {
    double loss = 0.0;
    nn::Gradients net;
    graph::AttentionGrads attention;
  };
  LossGrad loss_and_gradients(std::span<const Transition* const> batch) const;

  std::optional<double> observe_step(std::vector<Transition> step) override;
  std::optional<double> end_episode() override { return std::nullopt; }
  std::vector<std::pair<std::string, nn::Mlp*>> sections() override;

  const nn::Mlp& q_net() const { return q_net_; }
  nn::Mlp& q_net() { return q_net_; }
  const nn::Mlp& target_net() const { return target_; }
  nn::Mlp& target_net() { return target_; }
  const ReplayBuffer& buffer() const { return buffer_; }

 private:
  nn::Mlp q_net_;
  nn::Mlp target_;
  nn::Adam q_opt_;
  ReplayBuffer buffer_;
  long steps_seen_ = 0;
};

/// AC / MFAC / RFAC: on-policy actor-critic, critic first then actor per
/// minibatch of the episode trajectory.
class ACLearner final : public Learner {
 public:
  explicit ACLearner(LearnerConfig config);

  Vec policy(const DecisionContext& ctx) const;
  Vec critic_values(const DecisionContext& ctx) const;
  Vec action_probabilities(const DecisionContext& ctx) const override { return policy(ctx); }
  int greedy_action(const DecisionContext& ctx) const override;

  struct Losses {
    double actor = 0.0;
    double critic = 0.0;
  };
  /// Throws ContractError on an empty trajectory.
  Losses ac_update(std::span<const Transition> trajectory);

  /// Actor gradient of the minimised objective
  /// mean[-log pi(a) * Q(a) - entropy_coef * H(pi)] under the current critic,
  /// without applying it. In Expected mode the first term is
  /// -sum_a pi(a) Q(a) with Q held fixed.
  std::pair<double, nn::Gradients> actor_loss_and_gradients(
      std::span<const Transition* const> batch) const;
  /// Critic TD loss and gradients (network and attention), not applied.
  std::pair<double, std::pair<nn::Gradients, graph::AttentionGrads>> critic_loss_and_gradients(
      std::span<const Transition* const> batch) const;

  std::optional<double> observe_step(std::vector<Transition> step) override;
  std::optional<double> end_episode() override;
  std::vector<std::pair<std::string, nn::Mlp*>> sections() override;

  const nn::Mlp& actor() const { return actor_; }
  nn::Mlp& actor() { return actor_; }
  const nn::Mlp& critic() const { return critic_; }
  nn::Mlp& critic() { return critic_; }

 private:
  nn::Mlp actor_;
  nn::Mlp critic_;
  nn::Mlp critic_target_;
  nn::Adam actor_opt_;
  nn::Adam critic_opt_;
  Rng shuffle_rng_;
  std::vector<Transition> trajectory_;
};

std::unique_ptr<Learner> make_learner(const LearnerConfig& config);

// ---------------------------------------------------------------------------
// Acting in a world
// ---------------------------------------------------------------------------

/// Action for one living agent; builds the frame itself.
env::Action act(const Learner& learner, const env::GridWorld& world, env::AgentId id,
                bool explore, Rng& rng);

/// Actions for the given agents from one shared frame. Each agent samples
/// with its own stream derived from (seed, agent id), so the result does not
/// depend on `workers`.
env::JointAction choose_actions(const Learner& learner, const env::GridWorld& world,
                                const WorldFrame& wf, std::span<const env::AgentId> agents,
                                bool explore, std::uint64_t seed, int workers = 1,
                                std::vector<DecisionContext>* contexts = nullptr);

// ---------------------------------------------------------------------------
// Self-play training
// ---------------------------------------------------------------------------

struct EpisodeLog {
  int episode = 0;
  double mean_return = 0.0;
  std::optional<double> loss;
  int kills = 0;   // army B agents killed by army A
  int deaths = 0;  // army A agents killed
};

struct TrainingLog {
  std::vector<EpisodeLog> episodes;

  static std::string csv_header();  // "episode,mean_return,loss,kills,deaths"
  std::string to_csv() const;
};

struct TrainOptions {
  int checkpoint_interval = 0;  // 0 disables the callback
  std::function<void(int episode, const TrainingLog&)> on_checkpoint;
  int workers = 1;
};

TrainingLog train(Learner& learner, const env::GridConfig& config, env::Scenario scenario,
                  int episodes, std::uint64_t seed, const TrainOptions& options = {});

// ---------------------------------------------------------------------------
// Checkpoints: MLPCKPT sections (plus an ATTNCKPT block for attention
// variants) in one binary file, and a JSON sidecar at <path>.json.
// ---------------------------------------------------------------------------

struct CheckpointMeta {
  env::GridConfig env;
  std::uint64_t seed = 0;
  int episode = 0;
};

void save_checkpoint(Learner& learner, const std::filesystem::path& path, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  std::unique_ptr<Learner> learner;
  CheckpointMeta meta;
};

/// Throws CheckpointError when either file is missing or inconsistent.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

nlohmann::json to_json(const env::GridConfig& c);
/// Rejects unknown keys; missing keys keep their defaults.
env::GridConfig grid_config_from_json(const nlohmann::json& j);

}  // namespace repval::learn
