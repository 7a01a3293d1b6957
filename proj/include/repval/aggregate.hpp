#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "repval/graph.hpp"

namespace repval::agg {

using env::AgentId;
using Vec = std::vector<double>;

/// z = (s, a): observation encoding plus one-hot (or mixed) action.
struct ZVector {
  Vec s_part;
  Vec a_part;

  Vec concat() const;
};

ZVector make_z(Vec observation, int action_index, int action_count = env::kActionCount);

/// The four unit-norm Q-network input blocks. When the neighborhood is empty
/// the neighbor blocks are all-zero and the flag is set.
struct NormalizedInputs {
  Vec own_s;
  Vec own_a;
  Vec nbr_s;
  Vec nbr_a;
  bool empty_neighborhood = true;

  /// [own_s | own_a | nbr_s | nbr_a | flag]; flag is 1.0 when empty.
  Vec flatten() const;
  static std::size_t flat_size(std::size_t s_dim, std::size_t a_dim) {
    return 2 * (s_dim + a_dim) + 1;
  }
};

inline constexpr double kNormEpsilon = 1e-12;

/// v / |v|_2, or the zero vector when |v|_2 <= 1e-12.
Vec l2_normalize(std::span<const double> v);

/// Gradient through l2_normalize: (I - y y^T) g / |v|; zero for degenerate v.
Vec l2_normalize_backward(std::span<const double> v, std::span<const double> grad_out);

ZVector weighted_aggregate(const graph::WeightVector& w, const std::map<AgentId, ZVector>& zs);

/// Weighted sum over parallel spans. Sizes must match; neighbors must be
/// shape-congruent.
ZVector weighted_aggregate(std::span<const double> weights, std::span<const ZVector* const> zs);

NormalizedInputs build_q_input(const ZVector& own);
NormalizedInputs build_q_input(const ZVector& own, const graph::WeightVector& w,
                               const std::map<AgentId, ZVector>& neighbor_zs);
NormalizedInputs build_q_input(const ZVector& own, std::span<const double> weights,
                               std::span<const ZVector* const> nbrs);

// ---------------------------------------------------------------------------
// Taylor-expansion oracle
// ---------------------------------------------------------------------------

/// Q(z_j, z_k) = c.z_j + z_j^T A z_k + 1/2 z_k^T H z_k with symmetric H.
/// The Hessian in z_k is H everywhere, so the smoothness constant is exact.
class SmoothQOracle {
 public:
  SmoothQOracle(Eigen::VectorXd c, Eigen::MatrixXd A, Eigen::MatrixXd H);

  /// Random c, A and a symmetric H whose spectral norm is `smoothness`.
  static SmoothQOracle random(int dim, double smoothness, std::uint64_t seed);
  /// H = m * v v^T with |v| = 1: curvature concentrated in one direction.
  static SmoothQOracle rank_one(const Eigen::VectorXd& direction, double smoothness,
                                const Eigen::VectorXd& c, const Eigen::MatrixXd& A);

  int dim() const { return static_cast<int>(c_.size()); }
  double smoothness() const { return m_; }
  const Eigen::MatrixXd& hessian() const { return h_; }

  double value(const Eigen::VectorXd& zj, const Eigen::VectorXd& zk) const;
  Eigen::VectorXd grad_zk(const Eigen::VectorXd& zj, const Eigen::VectorXd& zk) const;

 private:
  Eigen::VectorXd c_;
  Eigen::MatrixXd a_;
  Eigen::MatrixXd h_;
  double m_ = 0.0;  // spectral norm of H, computed
};

struct LagrangePoint {
  Eigen::VectorXd point;  // z_chi + eps * dz
  double epsilon = 0.0;
};

struct RemainderReport {
  double exact = 0.0;        // sum_k w_k Q(z_j, z_k)
  double zeroth = 0.0;       // Q(z_j, z_chi)
  double first_order = 0.0;  // grad Q(z_j, z_chi) . sum_k w_k dz_k
  double remainder = 0.0;    // exact - zeroth - first_order
  Eigen::VectorXd z_chi;
  std::vector<Eigen::VectorXd> deltas;
  Eigen::VectorXd weighted_delta_sum;  // sum_k w_k dz_k
  /// sum_k w_k 1/2 dz_k^T H dz_k, evaluated directly from the Hessian.
  double second_order = 0.0;
  std::vector<LagrangePoint> lagrange_points;
};

RemainderReport taylor_decompose(const SmoothQOracle& oracle, const Eigen::VectorXd& z_j,
                                 std::span<const double> weights,
                                 std::span<const Eigen::VectorXd> neighbors);

RemainderReport taylor_decompose(const SmoothQOracle& oracle, const ZVector& z_j,
                                 const graph::WeightVector& w,
                                 const std::map<AgentId, ZVector>& neighbor_zs);

struct BoundCheckOptions {
  int s_dim = 6;
  int a_dim = 4;
  int max_neighbors = 8;
  /// Norm of every sampled s/a block. The bound's precondition is 1.
  double component_norm = 1.0;
  /// Bound = bound_factor * M.
  double bound_factor = 4.0;
  /// Adds antipodal pairs aligned with the top Hessian eigenvector to the
  /// sample stream; these realise the largest remainder for the given norms.
  bool include_aligned_pairs = false;
};

struct BoundReport {
  double smoothness = 0.0;
  std::size_t samples = 0;
  double max_abs_remainder = 0.0;
  double bound = 0.0;
  std::size_t violations = 0;

  static std::string csv_header();  // "M,samples,max_abs_remainder,bound,violations"
  std::string csv_row() const;
};

BoundReport remainder_bound_check(const SmoothQOracle& oracle, std::size_t n_samples,
                                  std::uint64_t seed, const BoundCheckOptions& opts = {});

}  // namespace repval::agg
