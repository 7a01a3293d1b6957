#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "repval/env.hpp"

namespace repval::graph {

using env::AgentId;

struct NeighborSet {
  AgentId owner = 0;
  std::vector<AgentId> members;  // ascending id, owner excluded

  std::size_t size() const { return members.size(); }
  bool empty() const { return members.empty(); }
};

/// Single-head graph-attention parameters, shared by every agent of a learner.
struct AttentionParams {
  int feature_dim = 0;
  int embed_dim = 0;
  std::vector<double> W;  // feature_dim x embed_dim, row-major
  std::vector<double> a;  // 2 * embed_dim: [owner half | neighbor half]
  double leaky_slope = 0.2;

  /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  static AttentionParams init(int feature_dim, int embed_dim, double leaky_slope,
                              std::uint64_t seed);
  std::size_t parameter_count() const { return W.size() + a.size(); }
  /// Throws ContractError on inconsistent sizes or non-finite entries.
  void validate() const;
};

struct WeightVector {
  AgentId owner = 0;
  std::vector<std::pair<AgentId, double>> weights;  // in NeighborSet member order

  std::vector<double> values() const;
  double sum() const;
};

/// Living agents (both armies) within Chebyshev distance <= radius of j.
NeighborSet neighbors(const env::GridWorld& world, AgentId j, int radius);

/// Softmax attention over the neighbor set. Throws ContractError on an empty
/// set or a missing feature vector.
WeightVector attention_weights(const std::map<AgentId, std::vector<double>>& features,
                               const NeighborSet& nbrs, const AttentionParams& params);

/// Every weight 1/N. Throws ContractError on an empty set.
WeightVector uniform_weights(const NeighborSet& nbrs);

// ---------------------------------------------------------------------------
// Differentiable core used by the learners.
// ---------------------------------------------------------------------------

struct AttentionForward {
  std::vector<double> owner_embed;               // W^T h_j
  std::vector<std::vector<double>> nbr_embeds;   // W^T h_k
  std::vector<double> pre_activation;            // a^T [W h_j ; W h_k]
  std::vector<double> logits;                    // after LeakyReLU
  std::vector<double> weights;                   // softmax(logits)
};

struct AttentionGrads {
  std::vector<double> W;
  std::vector<double> a;

  static AttentionGrads zeros_like(const AttentionParams& p);
  void add(const AttentionGrads& other);
};

/// Numerically stable softmax (max-subtracted).
std::vector<double> softmax(std::span<const double> logits);

AttentionForward attention_forward(const AttentionParams& params,
                                   std::span<const double> owner_features,
                                   std::span<const std::span<const double>> nbr_features);

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(weights).
void attention_backward(const AttentionParams& params, const AttentionForward& fwd,
                        std::span<const double> owner_features,
                        std::span<const std::span<const double>> nbr_features,
                        std::span<const double> grad_weights, AttentionGrads& grads);

/// p <- p - lr * g. Throws NumericError on non-finite gradients.
void sgd_step(AttentionParams& params, const AttentionGrads& grads, double lr);

}  // namespace repval::graph
