#include "w2bary/congruent.hpp"

#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

#include "w2bary/errors.hpp"
#include "w2bary/linalg.hpp"

namespace w2bary {

namespace {

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (static_cast<Eigen::Index>(j.at(i).size()) != cols) throw ValidationError("ragged matrix in JSON");
    for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = j.at(i).at(k).get<double>();
  }
  return m;
}

nlohmann::json vector_to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

// Row-wise softmax of the affine scores, computed stably.
Eigen::MatrixXd softmax_scores(const LogSumExpPotential& f, const Eigen::MatrixXd& x, Eigen::VectorXd* lse = nullptr) {
  Eigen::MatrixXd s = x * f.planes.transpose();
  s.rowwise() += f.offsets.transpose();
  const Eigen::VectorXd top = s.rowwise().maxCoeff();
  s = (s.colwise() - top).array().exp().matrix();
  const Eigen::VectorXd total = s.rowwise().sum();
  if (lse) *lse = top.array() + total.array().log();
  return s.array().colwise() / total.array();
}

}  // namespace

SmoothConvexFunction SmoothConvexFunction::quadratic(SpdMatrix<double> matrix) {
  detail::require_symmetric(matrix, "quadratic potential");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(matrix);
  if (!(es.eigenvalues().minCoeff() > 0.0))
    throw ValidationError("quadratic potential: matrix must be positive definite");
  return SmoothConvexFunction(QuadraticPotential{std::move(matrix)});
}

SmoothConvexFunction SmoothConvexFunction::log_sum_exp(double lambda, double epsilon, Eigen::MatrixXd planes,
                                                       Eigen::VectorXd offsets) {
  if (!(lambda > 0.0)) throw ValidationError("log-sum-exp potential: lambda must be positive");
  if (!(epsilon >= 0.0)) throw ValidationError("log-sum-exp potential: epsilon must be non-negative");
  if (planes.rows() < 1 || planes.rows() != offsets.size())
    throw ValidationError("log-sum-exp potential: need K >= 1 planes with one offset each");
  return SmoothConvexFunction(LogSumExpPotential{lambda, epsilon, std::move(planes), std::move(offsets)});
}

SmoothConvexFunction SmoothConvexFunction::random_log_sum_exp(Eigen::Index dim, Rng& rng, double lambda,
                                                              double epsilon, int planes) {
  Eigen::MatrixXd a = standard_normal(rng, planes, dim);
  Eigen::VectorXd b = standard_normal(rng, planes, 1);
  return log_sum_exp(lambda, epsilon, std::move(a), std::move(b));
}

Eigen::Index SmoothConvexFunction::dim() const {
  return std::visit(
      [](const auto& f) -> Eigen::Index {
        if constexpr (std::is_same_v<std::decay_t<decltype(f)>, QuadraticPotential>)
          return f.matrix.rows();
        else
          return f.planes.cols();
      },
      f_);
}

Eigen::VectorXd SmoothConvexFunction::value(const Eigen::MatrixXd& x) const {
  if (const auto* q = std::get_if<QuadraticPotential>(&f_))
    return 0.5 * (x * q->matrix).cwiseProduct(x).rowwise().sum();
  const auto& f = std::get<LogSumExpPotential>(f_);
  Eigen::VectorXd lse;
  softmax_scores(f, x, &lse);
  return 0.5 * f.lambda * x.rowwise().squaredNorm() + f.epsilon * lse;
}

Eigen::MatrixXd SmoothConvexFunction::gradient(const Eigen::MatrixXd& x) const {
  if (x.cols() != dim()) throw ValidationError("convex potential: input dimension mismatch");
  if (const auto* q = std::get_if<QuadraticPotential>(&f_)) return x * q->matrix;
  const auto& f = std::get<LogSumExpPotential>(f_);
  return f.lambda * x + f.epsilon * softmax_scores(f, x) * f.planes;
}

double SmoothConvexFunction::strong_convexity() const {
  if (const auto* q = std::get_if<QuadraticPotential>(&f_)) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q->matrix, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
  }
  return std::get<LogSumExpPotential>(f_).lambda;
}

double SmoothConvexFunction::smoothness() const {
  if (const auto* q = std::get_if<QuadraticPotential>(&f_)) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q->matrix, Eigen::EigenvaluesOnly);
    return es.eigenvalues().maxCoeff();
  }
  const auto& f = std::get<LogSumExpPotential>(f_);
  // The log-sum-exp Hessian is a covariance of the a_k, bounded by max |a_k|^2.
  return f.lambda + f.epsilon * f.planes.rowwise().squaredNorm().maxCoeff();
}

nlohmann::json SmoothConvexFunction::to_json() const {
  if (const auto* q = std::get_if<QuadraticPotential>(&f_))
    return {{"family", "quadratic"}, {"matrix", matrix_to_json(q->matrix)}};
  const auto& f = std::get<LogSumExpPotential>(f_);
  return {{"family", "log_sum_exp"},
          {"lambda", f.lambda},
          {"epsilon", f.epsilon},
          {"planes", matrix_to_json(f.planes)},
          {"offsets", vector_to_json(f.offsets)}};
}

SmoothConvexFunction SmoothConvexFunction::from_json(const nlohmann::json& j) {
  const auto family = j.at("family").get<std::string>();
  if (family == "quadratic") return quadratic(matrix_from_json(j.at("matrix")));
  if (family == "log_sum_exp")
    return log_sum_exp(j.at("lambda").get<double>(), j.at("epsilon").get<double>(), matrix_from_json(j.at("planes")),
                       vector_from_json(j.at("offsets")));
  throw ValidationError("unknown convex family '" + family + "'");
}

Eigen::VectorXd left_residual(const SmoothConvexFunction& psi, double beta, const Eigen::MatrixXd& x,
                              const Eigen::MatrixXd& y) {
  return (x - beta * y - (1.0 - beta) * psi.gradient(y)).rowwise().norm();
}

Eigen::MatrixXd grad_left(const SmoothConvexFunction& psi, double beta, const Eigen::MatrixXd& x,
                          const ConjugateSolverOptions& opts) {
  if (!(beta > 0.0 && beta < 1.0)) throw ValidationError("grad_left: beta must lie in (0, 1)");
  if (x.cols() != psi.dim()) throw ValidationError("grad_left: input dimension mismatch");
  if (psi.is_quadratic()) {
    const Eigen::Index d = psi.dim();
    const Eigen::MatrixXd system =
        beta * Eigen::MatrixXd::Identity(d, d) + (1.0 - beta) * psi.as_quadratic().matrix;
    // Rows of x are points; solve (beta I + (1 - beta) A) y = x for each.
    return system.llt().solve(x.transpose()).transpose();
  }

  // Ascent direction of <x, y> - beta |y|^2/2 - (1 - beta) psi(y).
  auto ascent = [&](const Eigen::MatrixXd& y) -> Eigen::MatrixXd {
    return x - beta * y - (1.0 - beta) * psi.gradient(y);
  };
  Eigen::MatrixXd y = x;
  Eigen::MatrixXd g = ascent(y);
  double worst = g.rowwise().norm().maxCoeff();
  if (opts.method == ConjugateMethod::kGradient) {
    const double mu = beta + (1.0 - beta) * psi.strong_convexity();
    const double lip = beta + (1.0 - beta) * psi.smoothness();
    const double step = 2.0 / (mu + lip);
    for (int it = 0; it < opts.max_steps && worst >= opts.tol; ++it) {
      y += step * g;
      g = ascent(y);
      worst = g.rowwise().norm().maxCoeff();
    }
  } else {
    Eigen::ArrayXXd m = Eigen::ArrayXXd::Zero(y.rows(), y.cols());
    Eigen::ArrayXXd v = Eigen::ArrayXXd::Zero(y.rows(), y.cols());
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (int it = 1; it <= opts.max_steps && worst >= opts.tol; ++it) {
      const Eigen::ArrayXXd grad = -g.array();
      m = b1 * m + (1.0 - b1) * grad;
      v = b2 * v + (1.0 - b2) * grad.square();
      const double c1 = 1.0 - std::pow(b1, it), c2 = 1.0 - std::pow(b2, it);
      y.array() -= opts.adam_lr * (m / c1) / ((v / c2).sqrt() + eps);
      g = ascent(y);
      worst = g.rowwise().norm().maxCoeff();
    }
  }
  if (!(worst < opts.tol)) {
    std::ostringstream os;
    os << "grad_left: residual " << worst << " above tolerance " << opts.tol << " after " << opts.max_steps
       << " steps";
    throw IterationError(os.str(), worst);
  }
  return y;
}

Eigen::MatrixXd grad_right(const SmoothConvexFunction& psi, double beta, const Eigen::MatrixXd& x,
                           const ConjugateSolverOptions& opts) {
  return psi.gradient(grad_left(psi, beta, x, opts));
}

std::vector<double> CongruentSystem::alphas() const {
  std::vector<double> out(static_cast<std::size_t>(size()), 0.0);
  for (Eigen::Index n = 0; n < size(); ++n)
    for (std::size_t m = 0; m < bases.size(); ++m)
      out[n] += mix_weights[m] * (betas[m] * gamma_left(n, m) + (1.0 - betas[m]) * gamma_right(n, m));
  return out;
}

void CongruentSystem::validate() const {
  const auto m_count = static_cast<Eigen::Index>(bases.size());
  if (m_count < 1) throw ValidationError("congruent system: no base functions");
  if (static_cast<Eigen::Index>(betas.size()) != m_count || static_cast<Eigen::Index>(mix_weights.size()) != m_count)
    throw ValidationError("congruent system: need one beta and one mixture weight per base function");
  for (const auto& b : bases)
    if (b.dim() != dim()) throw ValidationError("congruent system: base functions differ in dimension");
  for (double b : betas)
    if (!(b > 0.0 && b < 1.0)) throw ValidationError("congruent system: beta must lie in (0, 1)");
  detail::require_weights(mix_weights, bases.size(), "congruent system mixture");
  for (const auto* g : {&gamma_left, &gamma_right}) {
    if (g->cols() != m_count || g->rows() != gamma_left.rows() || g->rows() < 1)
      throw ValidationError("congruent system: gamma matrices must both be N x M");
    if ((g->array() < 0.0).any()) throw ValidationError("congruent system: gamma entries must be non-negative");
    for (Eigen::Index m = 0; m < m_count; ++m) {
      if (std::abs(g->col(m).sum() - 1.0) > 1e-12) {
        std::ostringstream os;
        os << "congruent system: gamma column " << m << " sums to " << g->col(m).sum();
        throw ValidationError(os.str());
      }
    }
  }
  for (double a : alphas())
    if (!(a > 0.0)) throw ValidationError("congruent system: every derived weight a_n must be positive");
}

nlohmann::json CongruentSystem::to_json() const {
  nlohmann::json j;
  j["format"] = "w2bary-congruent-system";
  j["version"] = 1;
  j["seed"] = seed;
  j["bases"] = nlohmann::json::array();
  for (const auto& b : bases) j["bases"].push_back(b.to_json());
  j["betas"] = betas;
  j["mix_weights"] = mix_weights;
  j["gamma_left"] = matrix_to_json(gamma_left);
  j["gamma_right"] = matrix_to_json(gamma_right);
  j["solver"] = {{"method", solver.method == ConjugateMethod::kGradient ? "gradient" : "adam"},
                 {"tol", solver.tol},
                 {"max_steps", solver.max_steps},
                 {"adam_lr", solver.adam_lr}};
  j["alphas"] = alphas();
  return j;
}

CongruentSystem CongruentSystem::from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != "w2bary-congruent-system")
    throw ValidationError("congruent system JSON: missing or unknown format tag");
  if (j.value("version", 0) != 1) throw ValidationError("congruent system JSON: unsupported version");
  CongruentSystem sys;
  for (const auto& b : j.at("bases")) sys.bases.push_back(SmoothConvexFunction::from_json(b));
  sys.betas = j.at("betas").get<std::vector<double>>();
  sys.mix_weights = j.at("mix_weights").get<std::vector<double>>();
  sys.gamma_left = matrix_from_json(j.at("gamma_left"));
  sys.gamma_right = matrix_from_json(j.at("gamma_right"));
  sys.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("solver")) {
    const auto& s = j.at("solver");
    const auto method = s.value("method", std::string("gradient"));
    if (method != "gradient" && method != "adam") throw ValidationError("unknown conjugate solver '" + method + "'");
    sys.solver.method = method == "gradient" ? ConjugateMethod::kGradient : ConjugateMethod::kAdam;
    sys.solver.tol = s.value("tol", sys.solver.tol);
    sys.solver.max_steps = s.value("max_steps", sys.solver.max_steps);
    sys.solver.adam_lr = s.value("adam_lr", sys.solver.adam_lr);
  }
  sys.validate();
  return sys;
}

CongruentSystem three_way_system(SmoothConvexFunction first, SmoothConvexFunction second) {
  CongruentSystem sys;
  sys.bases = {std::move(first), std::move(second)};
  sys.betas = {0.5, 0.5};
  sys.mix_weights = {0.5, 0.5};
  sys.gamma_left = Eigen::MatrixXd::Zero(3, 2);
  sys.gamma_right = Eigen::MatrixXd::Zero(3, 2);
  sys.gamma_left(0, 0) = 1.0;
  sys.gamma_left(1, 1) = 1.0;
  sys.gamma_right(1, 0) = 1.0;
  sys.gamma_right(2, 1) = 1.0;
  sys.validate();
  return sys;
}

CongruentSystem random_system(std::vector<SmoothConvexFunction> bases, Eigen::Index n, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  CongruentSystem sys;
  const auto m_count = static_cast<Eigen::Index>(bases.size());
  sys.bases = std::move(bases);
  // Entries drawn away from zero so every a_n is comfortably positive.
  auto stochastic = [&] {
    Eigen::MatrixXd g(n, m_count);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < m_count; ++j) g(i, j) = 0.05 + u(rng);
    for (Eigen::Index j = 0; j < m_count; ++j) g.col(j) /= g.col(j).sum();
    return g;
  };
  sys.gamma_left = stochastic();
  sys.gamma_right = stochastic();
  double total = 0.0;
  for (Eigen::Index m = 0; m < m_count; ++m) {
    sys.betas.push_back(0.1 + 0.8 * u(rng));
    sys.mix_weights.push_back(0.05 + u(rng));
    total += sys.mix_weights.back();
  }
  for (auto& w : sys.mix_weights) w /= total;
  // Renormalize exactly so the sum check holds to round-off.
  const double sum = std::accumulate(sys.mix_weights.begin(), sys.mix_weights.end(), 0.0);
  sys.mix_weights.back() += 1.0 - sum;
  sys.validate();
  return sys;
}

namespace {

struct PairGradients {
  Eigen::MatrixXd left;
  Eigen::MatrixXd right;
};

PairGradients pair_gradients(const CongruentSystem& sys, std::size_t m, const Eigen::MatrixXd& x) {
  PairGradients g;
  g.left = grad_left(sys.bases[m], sys.betas[m], x, sys.solver);
  g.right = sys.bases[m].gradient(g.left);
  return g;
}

Eigen::MatrixXd combine(const CongruentSystem& sys, Eigen::Index n, const std::vector<PairGradients>& pairs,
                        double alpha, Eigen::Index rows) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(rows, sys.dim());
  for (std::size_t m = 0; m < pairs.size(); ++m) {
    const double wl = sys.mix_weights[m] * sys.betas[m] * sys.gamma_left(n, m);
    const double wr = sys.mix_weights[m] * (1.0 - sys.betas[m]) * sys.gamma_right(n, m);
    if (wl != 0.0) out += wl * pairs[m].left;
    if (wr != 0.0) out += wr * pairs[m].right;
  }
  return out / alpha;
}

}  // namespace

std::vector<Eigen::MatrixXd> system_grads(const CongruentSystem& sys, const Eigen::MatrixXd& x) {
  sys.validate();
  if (x.cols() != sys.dim()) throw ValidationError("system_grads: input dimension mismatch");
  std::vector<PairGradients> pairs;
  for (std::size_t m = 0; m < sys.bases.size(); ++m) pairs.push_back(pair_gradients(sys, m, x));
  const auto alphas = sys.alphas();
  std::vector<Eigen::MatrixXd> out;
  for (Eigen::Index n = 0; n < sys.size(); ++n) out.push_back(combine(sys, n, pairs, alphas[n], x.rows()));
  return out;
}

Eigen::MatrixXd system_grad(const CongruentSystem& sys, Eigen::Index n, const Eigen::MatrixXd& x) {
  if (n < 0 || n >= sys.size()) throw ValidationError("system_grad: index out of range");
  if (x.cols() != sys.dim()) throw ValidationError("system_grad: input dimension mismatch");
  std::vector<PairGradients> pairs(sys.bases.size());
  for (std::size_t m = 0; m < sys.bases.size(); ++m) {
    if (sys.gamma_left(n, m) != 0.0 || sys.gamma_right(n, m) != 0.0) {
      pairs[m] = pair_gradients(sys, m, x);
    } else {
      pairs[m].left = pairs[m].right = Eigen::MatrixXd::Zero(x.rows(), x.cols());
    }
  }
  return combine(sys, n, pairs, sys.alphas()[static_cast<std::size_t>(n)], x.rows());
}

std::vector<SpdMatrix<double>> system_linear_maps(const CongruentSystem& sys) {
  sys.validate();
  const Eigen::Index d = sys.dim();
  std::vector<Eigen::MatrixXd> left, right;
  for (std::size_t m = 0; m < sys.bases.size(); ++m) {
    if (!sys.bases[m].is_quadratic()) throw ValidationError("system_linear_maps: all base functions must be quadratic");
    const auto& a = sys.bases[m].as_quadratic().matrix;
    const Eigen::MatrixXd inv =
        (sys.betas[m] * Eigen::MatrixXd::Identity(d, d) + (1.0 - sys.betas[m]) * a).inverse();
    left.push_back(symmetrize(inv));
    right.push_back(symmetrize(a * inv));
  }
  const auto alphas = sys.alphas();
  std::vector<SpdMatrix<double>> out;
  for (Eigen::Index n = 0; n < sys.size(); ++n) {
    Eigen::MatrixXd a_n = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t m = 0; m < sys.bases.size(); ++m)
      a_n += sys.mix_weights[m] * (sys.betas[m] * sys.gamma_left(n, m) * left[m] +
                                   (1.0 - sys.betas[m]) * sys.gamma_right(n, m) * right[m]);
    out.push_back(symmetrize(Eigen::MatrixXd(a_n / alphas[n])));
  }
  return out;
}

double verify_congruence(const CongruentSystem& sys, const Eigen::MatrixXd& points) {
  const auto grads = system_grads(sys, points);
  const auto alphas = sys.alphas();
  Eigen::MatrixXd mix = Eigen::MatrixXd::Zero(points.rows(), points.cols());
  for (std::size_t n = 0; n < grads.size(); ++n) mix += alphas[n] * grads[n];
  const Eigen::ArrayXd err = (mix - points).rowwise().norm().array();
  const Eigen::ArrayXd scale = 1.0 + points.rowwise().norm().array();
  return points.rows() ? (err / scale).maxCoeff() : 0.0;
}

KnownBarycenterDataset make_known_barycenter_dataset(const Sampler& base, const CongruentSystem& sys) {
  sys.validate();
  if (base.dim() != sys.dim()) throw ValidationError("make_known_barycenter_dataset: base dimension mismatch");
  auto shared = std::make_shared<const CongruentSystem>(sys);
  KnownBarycenterDataset out{{}, sys.alphas(), base};
  for (Eigen::Index n = 0; n < sys.size(); ++n) {
    out.inputs.push_back(pushforward(
        base, [shared, n](const Eigen::MatrixXd& x) { return system_grad(*shared, n, x); }, sys.dim(),
        {{"congruent_gradient", n}}));
  }
  return out;
}

}  // namespace w2bary
