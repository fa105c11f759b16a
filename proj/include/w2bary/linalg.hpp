#pragma once

// Symmetric / SPD matrix utilities used by the closed-form Gaussian stack.
//
// Square roots go through a symmetric eigendecomposition; the dimensions in
// scope are small (D <= 128), so there is no need for Newton-Schulz style
// iterations and their tuning.

#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>

#include <Eigen/Dense>

#include "w2bary/errors.hpp"
#include "w2bary/rng.hpp"

namespace w2bary {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Dense symmetric positive (semi)definite matrix. Plain Eigen storage; the
/// invariants are checked by the operations that rely on them.
template <typename Scalar>
using SpdMatrix = MatrixX<Scalar>;

inline constexpr double kSymmetryTolerance = 1e-12;
inline constexpr double kEigenClamp = 1e-12;

template <typename Derived>
bool is_symmetric(const Eigen::MatrixBase<Derived>& m,
                  typename Derived::RealScalar rel_tol = kSymmetryTolerance) {
  if (m.rows() != m.cols()) return false;
  const auto scale = m.norm();
  return (m - m.transpose()).norm() <= rel_tol * scale;
}

template <typename Derived>
MatrixX<typename Derived::Scalar> symmetrize(const Eigen::MatrixBase<Derived>& m) {
  return (m + m.transpose()) / typename Derived::Scalar(2);
}

namespace detail {

template <typename Derived>
void require_symmetric(const Eigen::MatrixBase<Derived>& m, const char* who) {
  if (m.rows() != m.cols()) {
    std::ostringstream os;
    os << who << ": matrix is " << m.rows() << "x" << m.cols() << ", expected square";
    throw ValidationError(os.str());
  }
  if (!is_symmetric(m)) {
    std::ostringstream os;
    os << who << ": matrix is not symmetric (asymmetry " << (m - m.transpose()).norm() << ")";
    throw ValidationError(os.str());
  }
}

template <typename Derived>
Eigen::SelfAdjointEigenSolver<MatrixX<typename Derived::Scalar>> eigh(
    const Eigen::MatrixBase<Derived>& m, const char* who) {
  require_symmetric(m, who);
  Eigen::SelfAdjointEigenSolver<MatrixX<typename Derived::Scalar>> es(symmetrize(m));
  if (es.info() != Eigen::Success) throw NumericalError(std::string(who) + ": eigendecomposition failed");
  return es;
}

}  // namespace detail

/// Principal square root of a symmetric PSD matrix.
///
/// Eigenvalues in [-1e-12 * lambda_max, 0) are treated as round-off and
/// clamped to zero; anything more negative throws NotPsdError.
template <typename Derived>
SpdMatrix<typename Derived::Scalar> spd_sqrt(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  const auto es = detail::eigh(m, "spd_sqrt");
  VectorX<Scalar> lambda = es.eigenvalues();
  const Scalar largest = lambda.size() ? lambda.cwiseAbs().maxCoeff() : Scalar(0);
  const Scalar floor = -Scalar(kEigenClamp) * largest;
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda(i) < floor) {
      std::ostringstream os;
      os << "spd_sqrt: matrix is not positive semidefinite (eigenvalue " << lambda(i) << ")";
      throw NotPsdError(os.str(), static_cast<double>(lambda(i)));
    }
    lambda(i) = lambda(i) < Scalar(0) ? Scalar(0) : std::sqrt(lambda(i));
  }
  const auto& v = es.eigenvectors();
  return symmetrize(v * lambda.asDiagonal() * v.transpose());
}

/// Inverse principal square root, R with R * m * R = I.
template <typename Derived>
SpdMatrix<typename Derived::Scalar> spd_inv_sqrt(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  const auto es = detail::eigh(m, "spd_inv_sqrt");
  VectorX<Scalar> lambda = es.eigenvalues();
  const Scalar largest = lambda.size() ? lambda.cwiseAbs().maxCoeff() : Scalar(0);
  const Scalar floor = Scalar(kEigenClamp) * std::max(largest, Scalar(1));
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (!(lambda(i) > floor)) {
      std::ostringstream os;
      os << "spd_inv_sqrt: matrix is near-singular (eigenvalue " << lambda(i) << ", largest "
         << largest << ")";
      throw ConditioningError(os.str(), static_cast<double>(lambda(i)));
    }
    lambda(i) = Scalar(1) / std::sqrt(lambda(i));
  }
  const auto& v = es.eigenvectors();
  return symmetrize(v * lambda.asDiagonal() * v.transpose());
}

/// Haar-distributed rotation (orthogonal, det = +1), deterministic per seed.
template <typename Scalar = double>
MatrixX<Scalar> random_rotation(Eigen::Index dim, std::uint64_t seed) {
  if (dim < 1) throw ValidationError("random_rotation: dim must be >= 1");
  Rng rng = make_stream(seed, "rotation", static_cast<std::uint64_t>(dim));
  const Eigen::MatrixXd g = standard_normal(rng, dim, dim);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < dim; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  if (q.determinant() < 0) q.col(0) = -q.col(0);
  return q.cast<Scalar>();
}

/// Random SPD matrix with eigenvalues log-uniform in [1, cond] (test helper and
/// population generator).
template <typename Scalar = double>
SpdMatrix<Scalar> random_spd(Eigen::Index dim, double cond, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto q = random_rotation<double>(dim, rng());
  Eigen::VectorXd lambda(dim);
  for (Eigen::Index i = 0; i < dim; ++i) lambda(i) = std::pow(cond, u(rng));
  if (dim > 1) {
    lambda(0) = 1.0;
    lambda(dim - 1) = cond;
  }
  return symmetrize(q * lambda.asDiagonal() * q.transpose()).template cast<Scalar>();
}

}  // namespace w2bary
