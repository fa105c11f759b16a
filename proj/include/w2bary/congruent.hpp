#pragma once

// Measures with a known W2 barycenter built from congruent convex potentials.
//
// For a strongly convex, smooth psi and beta in (0, 1), the "left" and
// "right" functions
//   psi_l = conj(beta |.|^2/2 + (1 - beta) psi),
//   psi_r = conj((1 - beta) |.|^2/2 + beta conj(psi))
// satisfy beta psi_l + (1 - beta) psi_r = |.|^2/2. Their gradients are
//   y_l = argmax_y <x, y> - beta |y|^2/2 - (1 - beta) psi(y),   y_r = grad psi(y_l).
// Convex combinations of M such pairs with column-stochastic gamma_l, gamma_r
// give N potentials psi_n with sum_n a_n grad psi_n(x) = x, so the base
// measure is the barycenter of the pushforwards grad psi_n # P.
//
// Only gradients are computed; function values of psi_l / psi_r are needed
// nowhere except the quadratic family, where they are closed-form.

#include <cstdint>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "w2bary/gaussian.hpp"
#include "w2bary/measures.hpp"
#include "w2bary/rng.hpp"

namespace w2bary {

struct QuadraticPotential {
  SpdMatrix<double> matrix;  // psi(x) = x^T A x / 2
};

struct LogSumExpPotential {
  double lambda = 0.2;        // quadratic weight
  double epsilon = 1.0;       // log-sum-exp weight
  Eigen::MatrixXd planes;     // K x D, rows a_k
  Eigen::VectorXd offsets;    // K, entries b_k
};

/// psi(x) = lambda |x|^2/2 + epsilon log sum_k exp(<a_k, x> + b_k), or a quadratic.
class SmoothConvexFunction {
 public:
  static SmoothConvexFunction quadratic(SpdMatrix<double> matrix);
  static SmoothConvexFunction log_sum_exp(double lambda, double epsilon, Eigen::MatrixXd planes,
                                          Eigen::VectorXd offsets);
  /// a_k ~ N(0, I), b_k ~ N(0, 1).
  static SmoothConvexFunction random_log_sum_exp(Eigen::Index dim, Rng& rng, double lambda = 0.2,
                                                 double epsilon = 1.0, int planes = 8);

  Eigen::Index dim() const;
  Eigen::VectorXd value(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd gradient(const Eigen::MatrixXd& x) const;
  double strong_convexity() const;
  double smoothness() const;

  bool is_quadratic() const { return std::holds_alternative<QuadraticPotential>(f_); }
  const QuadraticPotential& as_quadratic() const { return std::get<QuadraticPotential>(f_); }

  nlohmann::json to_json() const;
  static SmoothConvexFunction from_json(const nlohmann::json& j);

 private:
  explicit SmoothConvexFunction(std::variant<QuadraticPotential, LogSumExpPotential> f) : f_(std::move(f)) {}
  std::variant<QuadraticPotential, LogSumExpPotential> f_;
};

enum class ConjugateMethod { kGradient, kAdam };

struct ConjugateSolverOptions {
  ConjugateMethod method = ConjugateMethod::kGradient;
  double tol = 1e-8;      // on |x - beta y - (1 - beta) grad psi(y)|, per point
  int max_steps = 1000;
  double adam_lr = 2e-2;  // kAdam only
};

/// grad psi_l(x) for every row of x. Quadratic psi is solved directly;
/// otherwise the strongly concave problem is solved iteratively and a
/// NumericalError is thrown if some row misses the tolerance.
Eigen::MatrixXd grad_left(const SmoothConvexFunction& psi, double beta, const Eigen::MatrixXd& x,
                          const ConjugateSolverOptions& opts = {});

/// grad psi_r(x) = grad psi(grad psi_l(x)).
Eigen::MatrixXd grad_right(const SmoothConvexFunction& psi, double beta, const Eigen::MatrixXd& x,
                           const ConjugateSolverOptions& opts = {});

/// Per-row optimality residual |x - beta y - (1 - beta) grad psi(y)|.
Eigen::VectorXd left_residual(const SmoothConvexFunction& psi, double beta, const Eigen::MatrixXd& x,
                              const Eigen::MatrixXd& y);

struct CongruentSystem {
  std::vector<SmoothConvexFunction> bases;  // M
  std::vector<double> betas;                // M, in (0, 1)
  std::vector<double> mix_weights;          // M, w_m > 0, sum 1
  Eigen::MatrixXd gamma_left;               // N x M, columns sum to 1
  Eigen::MatrixXd gamma_right;              // N x M, columns sum to 1
  ConjugateSolverOptions solver;
  std::uint64_t seed = 0;                   // provenance only

  Eigen::Index size() const { return gamma_left.rows(); }
  Eigen::Index dim() const { return bases.empty() ? 0 : bases.front().dim(); }
  /// a_n = sum_m w_m [beta_m gamma_l(n, m) + (1 - beta_m) gamma_r(n, m)].
  std::vector<double> alphas() const;
  void validate() const;

  nlohmann::json to_json() const;
  static CongruentSystem from_json(const nlohmann::json& j);
};

/// N = 3, M = 2, beta = w = (1/2, 1/2), gamma_l = [e1 e2], gamma_r = [e2 e3],
/// which gives a = (1/4, 1/2, 1/4).
CongruentSystem three_way_system(SmoothConvexFunction first, SmoothConvexFunction second);

/// Random column-stochastic gamma matrices, betas in [0.1, 0.9], Dirichlet-ish w.
CongruentSystem random_system(std::vector<SmoothConvexFunction> bases, Eigen::Index n, Rng& rng);

/// grad psi_n(x) for n = 0..N-1.
std::vector<Eigen::MatrixXd> system_grads(const CongruentSystem& sys, const Eigen::MatrixXd& x);
Eigen::MatrixXd system_grad(const CongruentSystem& sys, Eigen::Index n, const Eigen::MatrixXd& x);

/// For an all-quadratic system, the symmetric matrices A_n with grad psi_n(x) = A_n x.
std::vector<SpdMatrix<double>> system_linear_maps(const CongruentSystem& sys);

/// max over rows of |sum_n a_n grad psi_n(x) - x| / (1 + |x|).
double verify_congruence(const CongruentSystem& sys, const Eigen::MatrixXd& points);

struct KnownBarycenterDataset {
  std::vector<Sampler> inputs;   // grad psi_n # base
  std::vector<double> weights;   // a_n
  Sampler barycenter;            // the base measure itself
};

/// The base should have a positive density on all of R^D for the barycenter
/// to be unique; Gaussian bases are the ones used for exact checks.
KnownBarycenterDataset make_known_barycenter_dataset(const Sampler& base, const CongruentSystem& sys);

}  // namespace w2bary
