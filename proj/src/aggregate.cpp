#include "repval/aggregate.hpp"

#include <cmath>
#include <cstdio>
#include <string>

#include "repval/errors.hpp"
#include "repval/rng.hpp"

namespace repval::agg {

Vec ZVector::concat() const {
  Vec z;
  z.reserve(s_part.size() + a_part.size());
  z.insert(z.end(), s_part.begin(), s_part.end());
  z.insert(z.end(), a_part.begin(), a_part.end());
  return z;
}

ZVector make_z(Vec observation, int action_index, int action_count) {
  if (action_index < 0 || action_index >= action_count)
    throw ContractError("make_z: action index out of range");
  ZVector z{std::move(observation), Vec(static_cast<std::size_t>(action_count), 0.0)};
  z.a_part[action_index] = 1.0;
  return z;
}

Vec NormalizedInputs::flatten() const {
  Vec x;
  x.reserve(own_s.size() + own_a.size() + nbr_s.size() + nbr_a.size() + 1);
  x.insert(x.end(), own_s.begin(), own_s.end());
  x.insert(x.end(), own_a.begin(), own_a.end());
  x.insert(x.end(), nbr_s.begin(), nbr_s.end());
  x.insert(x.end(), nbr_a.begin(), nbr_a.end());
  x.push_back(empty_neighborhood ? 1.0 : 0.0);
  return x;
}

Vec l2_normalize(std::span<const double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double norm = std::sqrt(sq);
  Vec out(v.size(), 0.0);
  if (norm <= kNormEpsilon) return out;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / norm;
  return out;
}

Vec l2_normalize_backward(std::span<const double> v, std::span<const double> grad_out) {
  if (v.size() != grad_out.size()) throw ContractError("l2_normalize_backward: size mismatch");
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double norm = std::sqrt(sq);
  Vec g(v.size(), 0.0);
  if (norm <= kNormEpsilon) return g;
  double dot = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * grad_out[i];
  dot /= norm;  // y . g
  for (std::size_t i = 0; i < v.size(); ++i) g[i] = (grad_out[i] - (v[i] / norm) * dot) / norm;
  return g;
}

ZVector weighted_aggregate(std::span<const double> weights, std::span<const ZVector* const> zs) {
  if (weights.size() != zs.size()) throw ContractError("weighted_aggregate: size mismatch");
  if (zs.empty()) throw ContractError("weighted_aggregate: no neighbors");
  ZVector out{Vec(zs[0]->s_part.size(), 0.0), Vec(zs[0]->a_part.size(), 0.0)};
  for (std::size_t k = 0; k < zs.size(); ++k) {
    const auto& z = *zs[k];
    if (z.s_part.size() != out.s_part.size() || z.a_part.size() != out.a_part.size())
      throw ContractError("weighted_aggregate: z-vectors of different shapes");
    const double w = weights[k];
    for (std::size_t i = 0; i < z.s_part.size(); ++i) out.s_part[i] += w * z.s_part[i];
    for (std::size_t i = 0; i < z.a_part.size(); ++i) out.a_part[i] += w * z.a_part[i];
  }
  return out;
}

namespace {

std::vector<const ZVector*> gather(const graph::WeightVector& w,
                                   const std::map<AgentId, ZVector>& zs) {
  std::vector<const ZVector*> out;
  out.reserve(w.weights.size());
  for (const auto& [id, weight] : w.weights) {
    const auto it = zs.find(id);
    if (it == zs.end())
      throw ContractError("missing z-vector for neighbor " + std::to_string(id));
    out.push_back(&it->second);
  }
  return out;
}

}  // namespace

ZVector weighted_aggregate(const graph::WeightVector& w, const std::map<AgentId, ZVector>& zs) {
  const auto ptrs = gather(w, zs);
  const auto ws = w.values();
  return weighted_aggregate(ws, ptrs);
}

NormalizedInputs build_q_input(const ZVector& own) {
  NormalizedInputs in;
  in.own_s = l2_normalize(own.s_part);
  in.own_a = l2_normalize(own.a_part);
  in.nbr_s.assign(own.s_part.size(), 0.0);
  in.nbr_a.assign(own.a_part.size(), 0.0);
  in.empty_neighborhood = true;
  return in;
}

NormalizedInputs build_q_input(const ZVector& own, std::span<const double> weights,
                               std::span<const ZVector* const> nbrs) {
  if (nbrs.empty()) return build_q_input(own);
  const auto agg = weighted_aggregate(weights, nbrs);
  if (agg.s_part.size() != own.s_part.size() || agg.a_part.size() != own.a_part.size())
    throw ContractError("build_q_input: neighbor z-vectors differ in shape from own");
  NormalizedInputs in;
  in.own_s = l2_normalize(own.s_part);
  in.own_a = l2_normalize(own.a_part);
  in.nbr_s = l2_normalize(agg.s_part);
  in.nbr_a = l2_normalize(agg.a_part);
  in.empty_neighborhood = false;
  return in;
}

NormalizedInputs build_q_input(const ZVector& own, const graph::WeightVector& w,
                               const std::map<AgentId, ZVector>& neighbor_zs) {
  if (w.weights.empty()) return build_q_input(own);
  const auto ptrs = gather(w, neighbor_zs);
  const auto ws = w.values();
  return build_q_input(own, ws, ptrs);
}

// ---------------------------------------------------------------------------

namespace {

double spectral_norm_symmetric(const Eigen::MatrixXd& h) {
  if (h.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().cwiseAbs().maxCoeff();
}

Eigen::VectorXd gaussian(int n, Rng& rng) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = normal01(rng);
  return v;
}

}  // namespace

SmoothQOracle::SmoothQOracle(Eigen::VectorXd c, Eigen::MatrixXd A, Eigen::MatrixXd H)
    : c_(std::move(c)), a_(std::move(A)), h_(std::move(H)) {
  const auto d = c_.size();
  if (a_.rows() != d || a_.cols() != d || h_.rows() != d || h_.cols() != d)
    throw ContractError("SmoothQOracle: c, A, H dimensions disagree");
  if (!h_.isApprox(h_.transpose(), 1e-12) && h_.norm() > 0.0)
    throw ContractError("SmoothQOracle: H must be symmetric");
  m_ = spectral_norm_symmetric(h_);
}

SmoothQOracle SmoothQOracle::random(int dim, double smoothness, std::uint64_t seed) {
  if (dim <= 0 || smoothness < 0.0) throw ContractError("SmoothQOracle::random: bad arguments");
  Rng rng(seed);
  Eigen::VectorXd c = gaussian(dim, rng) / std::sqrt(static_cast<double>(dim));
  Eigen::MatrixXd A(dim, dim);
  for (int i = 0; i < dim; ++i) A.row(i) = gaussian(dim, rng).transpose();
  A /= std::sqrt(static_cast<double>(dim));

  // Random orthogonal basis; eigenvalues in [-m, m] with one of them at +-m.
  Eigen::MatrixXd g(dim, dim);
  for (int i = 0; i < dim; ++i) g.row(i) = gaussian(dim, rng).transpose();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  const Eigen::MatrixXd q = qr.householderQ();
  Eigen::VectorXd lambda(dim);
  for (int i = 0; i < dim; ++i) lambda[i] = uniform(rng, -smoothness, smoothness);
  lambda[0] = uniform01(rng) < 0.5 ? smoothness : -smoothness;
  Eigen::MatrixXd H = q * lambda.asDiagonal() * q.transpose();
  H = (0.5 * (H + H.transpose())).eval();
  return SmoothQOracle(std::move(c), std::move(A), std::move(H));
}

SmoothQOracle SmoothQOracle::rank_one(const Eigen::VectorXd& direction, double smoothness,
                                      const Eigen::VectorXd& c, const Eigen::MatrixXd& A) {
  const Eigen::VectorXd v = direction.normalized();
  return SmoothQOracle(c, A, smoothness * v * v.transpose());
}

double SmoothQOracle::value(const Eigen::VectorXd& zj, const Eigen::VectorXd& zk) const {
  return c_.dot(zj) + zj.dot(a_ * zk) + 0.5 * zk.dot(h_ * zk);
}

Eigen::VectorXd SmoothQOracle::grad_zk(const Eigen::VectorXd& zj, const Eigen::VectorXd& zk) const {
  return a_.transpose() * zj + h_ * zk;
}

RemainderReport taylor_decompose(const SmoothQOracle& oracle, const Eigen::VectorXd& z_j,
                                 std::span<const double> weights,
                                 std::span<const Eigen::VectorXd> neighbors) {
  if (neighbors.empty()) throw ContractError("taylor_decompose: empty neighborhood");
  if (weights.size() != neighbors.size()) throw ContractError("taylor_decompose: size mismatch");
  const auto d = oracle.dim();
  if (z_j.size() != d) throw ContractError("taylor_decompose: z_j dimension mismatch");

  RemainderReport r;
  r.z_chi = Eigen::VectorXd::Zero(d);
  for (std::size_t k = 0; k < neighbors.size(); ++k) {
    if (neighbors[k].size() != d) throw ContractError("taylor_decompose: neighbor dimension mismatch");
    r.exact += weights[k] * oracle.value(z_j, neighbors[k]);
    r.z_chi += weights[k] * neighbors[k];
  }
  r.zeroth = oracle.value(z_j, r.z_chi);

  r.weighted_delta_sum = Eigen::VectorXd::Zero(d);
  for (std::size_t k = 0; k < neighbors.size(); ++k) {
    r.deltas.push_back(neighbors[k] - r.z_chi);
    r.weighted_delta_sum += weights[k] * r.deltas.back();
  }
  r.first_order = oracle.grad_zk(z_j, r.z_chi).dot(r.weighted_delta_sum);
  r.remainder = r.exact - r.zeroth - r.first_order;

  // The Hessian is constant, so the mean-value form holds at every epsilon;
  // the midpoint is reported.
  for (std::size_t k = 0; k < neighbors.size(); ++k) {
    const auto& dz = r.deltas[k];
    r.second_order += weights[k] * 0.5 * dz.dot(oracle.hessian() * dz);
    r.lagrange_points.push_back({r.z_chi + 0.5 * dz, 0.5});
  }
  return r;
}

RemainderReport taylor_decompose(const SmoothQOracle& oracle, const ZVector& z_j,
                                 const graph::WeightVector& w,
                                 const std::map<AgentId, ZVector>& neighbor_zs) {
  auto to_eigen = [](const ZVector& z) {
    const auto v = z.concat();
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<long>(v.size())));
  };
  std::vector<Eigen::VectorXd> nbrs;
  for (const auto& [id, weight] : w.weights) {
    const auto it = neighbor_zs.find(id);
    if (it == neighbor_zs.end())
      throw ContractError("missing z-vector for neighbor " + std::to_string(id));
    nbrs.push_back(to_eigen(it->second));
  }
  const auto ws = w.values();
  return taylor_decompose(oracle, to_eigen(z_j), ws, nbrs);
}

// ---------------------------------------------------------------------------

std::string BoundReport::csv_header() { return "M,samples,max_abs_remainder,bound,violations"; }

std::string BoundReport::csv_row() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%.6g,%zu,%.12g,%.6g,%zu", smoothness, samples,
                max_abs_remainder, bound, violations);
  return buf;
}

namespace {

Eigen::VectorXd sample_z(int s_dim, int a_dim, double norm, Rng& rng) {
  Eigen::VectorXd z(s_dim + a_dim);
  z.head(s_dim) = gaussian(s_dim, rng).normalized() * norm;
  z.tail(a_dim) = gaussian(a_dim, rng).normalized() * norm;
  return z;
}

}  // namespace

BoundReport remainder_bound_check(const SmoothQOracle& oracle, std::size_t n_samples,
                                  std::uint64_t seed, const BoundCheckOptions& opts) {
  const int d = opts.s_dim + opts.a_dim;
  if (oracle.dim() != d) throw ContractError("remainder_bound_check: oracle dimension mismatch");
  BoundReport rep;
  rep.smoothness = oracle.smoothness();
  rep.bound = opts.bound_factor * oracle.smoothness();
  rep.samples = n_samples;

  Eigen::VectorXd top;
  if (opts.include_aligned_pairs && oracle.smoothness() > 0.0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(oracle.hessian());
    Eigen::Index idx = 0;
    eig.eigenvalues().cwiseAbs().maxCoeff(&idx);
    top = eig.eigenvectors().col(idx);
  }

  Rng rng(seed);
  for (std::size_t n = 0; n < n_samples; ++n) {
    const Eigen::VectorXd zj = sample_z(opts.s_dim, opts.a_dim, opts.component_norm, rng);
    std::vector<Eigen::VectorXd> nbrs;
    std::vector<double> w;

    if (top.size() > 0 && n % 2 == 1) {
      // Antipodal pair whose blocks are as aligned with the top eigenvector
      // as the per-block norm constraint allows.
      Eigen::VectorXd z(d);
      const auto s = top.head(opts.s_dim);
      const auto a = top.tail(opts.a_dim);
      z.head(opts.s_dim) = (s.norm() > 0 ? Eigen::VectorXd(s.normalized())
                                         : sample_z(opts.s_dim, 0, 1.0, rng)) * opts.component_norm;
      z.tail(opts.a_dim) = (a.norm() > 0 ? Eigen::VectorXd(a.normalized())
                                         : sample_z(0, opts.a_dim, 1.0, rng)) * opts.component_norm;
      nbrs = {z, -z};
      w = {0.5, 0.5};
    } else {
      const auto k = 1 + uniform_index(rng, static_cast<std::uint64_t>(opts.max_neighbors));
      std::vector<double> logits;
      for (std::uint64_t i = 0; i < k; ++i) {
        nbrs.push_back(sample_z(opts.s_dim, opts.a_dim, opts.component_norm, rng));
        logits.push_back(2.0 * normal01(rng));
      }
      w = graph::softmax(logits);
    }

    const auto r = taylor_decompose(oracle, zj, w, nbrs);
    const double a = std::abs(r.remainder);
    rep.max_abs_remainder = std::max(rep.max_abs_remainder, a);
    // Absolute slack for rounding in exact - zeroth - first_order.
    if (a > rep.bound + 1e-9) ++rep.violations;
  }
  return rep;
}

}  // namespace repval::agg
