#pragma once

// Closed-form reference quantities for Gaussian / location-scatter measures.
//
// Every W2 quantity here uses the 1/2 * |x - y|^2 ground cost, i.e.
//   BW2(p, q) = 1/2 [ |mu_p - mu_q|^2 + tr(S_p + S_q - 2 (S_q^1/2 S_p S_q^1/2)^1/2) ],
// which is half of the value most references report. Solver losses, transport
// cost estimates and the UVP metric all share this convention.

#include <algorithm>
#include <numeric>
#include <sstream>
#include <vector>

#include "w2bary/linalg.hpp"

namespace w2bary {

template <typename Scalar>
struct GaussianMeasure {
  VectorX<Scalar> mean;
  SpdMatrix<Scalar> cov;

  Eigen::Index dim() const { return mean.size(); }
};

template <typename Scalar>
struct AffineMap {
  MatrixX<Scalar> matrix;
  VectorX<Scalar> offset;

  /// Applies the map to each row of a batch.
  MatrixX<Scalar> operator()(const MatrixX<Scalar>& batch) const {
    return (batch * matrix.transpose()).rowwise() + offset.transpose();
  }
  Eigen::Index dim() const { return offset.size(); }
};

template <typename Scalar>
AffineMap<Scalar> compose(const AffineMap<Scalar>& outer, const AffineMap<Scalar>& inner) {
  return {outer.matrix * inner.matrix, outer.matrix * inner.offset + outer.offset};
}

namespace detail {

template <typename Scalar>
void require_same_dim(const GaussianMeasure<Scalar>& p, const GaussianMeasure<Scalar>& q,
                      const char* who) {
  if (p.dim() != q.dim() || p.cov.rows() != p.dim() || q.cov.rows() != q.dim()) {
    std::ostringstream os;
    os << who << ": dimension mismatch (" << p.dim() << " vs " << q.dim() << ")";
    throw ValidationError(os.str());
  }
}

}  // namespace detail

/// Squared Bures-Wasserstein distance (1/2 cost convention). Accepts PSD
/// covariances, so a point mass (zero covariance) is a valid argument.
template <typename Scalar>
Scalar bures_w2_sq(const GaussianMeasure<Scalar>& p, const GaussianMeasure<Scalar>& q) {
  detail::require_same_dim(p, q, "bures_w2_sq");
  const SpdMatrix<Scalar> root_q = spd_sqrt(q.cov);
  const SpdMatrix<Scalar> cross = spd_sqrt(symmetrize(root_q * p.cov * root_q));
  const Scalar mean_term = (p.mean - q.mean).squaredNorm();
  const Scalar cov_term = p.cov.trace() + q.cov.trace() - Scalar(2) * cross.trace();
  return std::max(Scalar(0), Scalar(0.5) * (mean_term + cov_term));
}

template <typename Scalar>
struct BarycenterSolution {
  SpdMatrix<Scalar> cov;
  Scalar residual;
  int iterations;
};

struct FixedPointOptions {
  double tol = 1e-12;
  int max_iter = 10000;
};

namespace detail {

template <typename Scalar>
void require_weights(const std::vector<Scalar>& weights, std::size_t n, const char* who) {
  if (weights.size() != n) {
    std::ostringstream os;
    os << who << ": " << weights.size() << " weights for " << n << " measures";
    throw ValidationError(os.str());
  }
  for (Scalar w : weights)
    if (!(w > Scalar(0))) throw ValidationError(std::string(who) + ": weights must be positive");
  const Scalar total = std::accumulate(weights.begin(), weights.end(), Scalar(0));
  if (std::abs(total - Scalar(1)) > Scalar(1e-12)) {
    std::ostringstream os;
    os.precision(17);
    os << who << ": weights sum to " << total << ", expected 1";
    throw ValidationError(os.str());
  }
}

}  // namespace detail

/// One application of the covariance fixed-point map
///   S -> S^-1/2 (sum_n a_n (S^1/2 C_n S^1/2)^1/2)^2 S^-1/2.
template <typename Scalar>
SpdMatrix<Scalar> barycenter_update(const SpdMatrix<Scalar>& s, const std::vector<SpdMatrix<Scalar>>& covs,
                                    const std::vector<Scalar>& weights) {
  const SpdMatrix<Scalar> root = spd_sqrt(s);
  const SpdMatrix<Scalar> inv_root = spd_inv_sqrt(s);
  SpdMatrix<Scalar> mix = SpdMatrix<Scalar>::Zero(s.rows(), s.cols());
  for (std::size_t n = 0; n < covs.size(); ++n) mix += weights[n] * spd_sqrt(symmetrize(root * covs[n] * root));
  return symmetrize(inv_root * mix * mix * inv_root);
}

/// Covariance of the W2 barycenter of centred Gaussians with the given
/// covariances, by fixed-point iteration started from the weighted
/// arithmetic mean. The returned matrix is the last iterate, whose update
/// moved it by less than `tol` (relative Frobenius).
template <typename Scalar>
BarycenterSolution<Scalar> gaussian_barycenter(const std::vector<SpdMatrix<Scalar>>& covs,
                                               const std::vector<Scalar>& weights,
                                               FixedPointOptions opts = {}) {
  if (covs.empty()) throw ValidationError("gaussian_barycenter: no input covariances");
  detail::require_weights(weights, covs.size(), "gaussian_barycenter");
  const Eigen::Index dim = covs.front().rows();
  SpdMatrix<Scalar> s = SpdMatrix<Scalar>::Zero(dim, dim);
  for (std::size_t n = 0; n < covs.size(); ++n) {
    if (covs[n].rows() != dim || covs[n].cols() != dim)
      throw ValidationError("gaussian_barycenter: covariance dimensions differ");
    detail::require_symmetric(covs[n], "gaussian_barycenter");
    s += weights[n] * covs[n];
  }
  Scalar residual = std::numeric_limits<Scalar>::infinity();
  for (int it = 0; it < opts.max_iter; ++it) {
    SpdMatrix<Scalar> next = barycenter_update(s, covs, weights);
    residual = (next - s).norm() / s.norm();
    if (residual < Scalar(opts.tol)) return {s, residual, it + 1};
    s = std::move(next);
  }
  std::ostringstream os;
  os << "gaussian_barycenter: no convergence after " << opts.max_iter << " iterations (residual "
     << residual << ")";
  throw IterationError(os.str(), static_cast<double>(residual));
}

/// Barycenter of Gaussians: mean is the weighted mean, covariance from the
/// fixed point.
template <typename Scalar>
GaussianMeasure<Scalar> gaussian_barycenter(const std::vector<GaussianMeasure<Scalar>>& measures,
                                            const std::vector<Scalar>& weights,
                                            FixedPointOptions opts = {}) {
  std::vector<SpdMatrix<Scalar>> covs;
  for (const auto& m : measures) covs.push_back(m.cov);
  auto sol = gaussian_barycenter(covs, weights, opts);
  VectorX<Scalar> mean = VectorX<Scalar>::Zero(measures.front().dim());
  for (std::size_t n = 0; n < measures.size(); ++n) mean += weights[n] * measures[n].mean;
  return {mean, sol.cov};
}

/// BW2-UVP in percent: 100 * BW2(estimate, truth) / (1/2 tr(S_truth)).
template <typename Scalar>
Scalar bw2_uvp(const GaussianMeasure<Scalar>& estimate, const GaussianMeasure<Scalar>& truth) {
  detail::require_same_dim(estimate, truth, "bw2_uvp");
  const Scalar variance = truth.cov.trace();
  if (!(variance > Scalar(0))) throw NumericalError("bw2_uvp: truth has zero total variance");
  return Scalar(100) * bures_w2_sq(estimate, truth) / (Scalar(0.5) * variance);
}

/// Brenier map between Gaussians: x -> A (x - mu_p) + mu_q with A symmetric PD.
template <typename Scalar>
AffineMap<Scalar> gaussian_ot_map(const GaussianMeasure<Scalar>& p, const GaussianMeasure<Scalar>& q) {
  detail::require_same_dim(p, q, "gaussian_ot_map");
  const SpdMatrix<Scalar> root_p = spd_sqrt(p.cov);
  const SpdMatrix<Scalar> inv_root_p = spd_inv_sqrt(p.cov);
  const SpdMatrix<Scalar> a =
      symmetrize(inv_root_p * spd_sqrt(symmetrize(root_p * q.cov * root_p)) * inv_root_p);
  return {a, q.mean - a * p.mean};
}

}  // namespace w2bary
