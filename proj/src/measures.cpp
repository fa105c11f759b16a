#include "w2bary/measures.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "w2bary/errors.hpp"
#include "w2bary/linalg.hpp"

namespace w2bary {

Sampler::Sampler(Eigen::Index dim, DrawFn draw, nlohmann::json descriptor)
    : dim_(dim), draw_(std::make_shared<const DrawFn>(std::move(draw))), descriptor_(std::move(descriptor)) {
  if (dim_ < 1) throw ValidationError("Sampler: dimension must be positive");
}

Eigen::MatrixXd Sampler::sample(Rng& rng, Eigen::Index batch_size) const {
  if (batch_size < 0) throw ValidationError("Sampler: negative batch size");
  Eigen::MatrixXd out = (*draw_)(rng, batch_size);
  if (out.rows() != batch_size || out.cols() != dim_) {
    std::ostringstream os;
    os << "Sampler '" << descriptor_.value("kind", std::string("?")) << "': produced " << out.rows() << "x"
       << out.cols() << " batch, expected " << batch_size << "x" << dim_;
    throw ValidationError(os.str());
  }
  return out;
}

BaseKind parse_base_kind(std::string_view name) {
  if (name == "gaussian") return BaseKind::kGaussian;
  if (name == "uniform") return BaseKind::kUniform;
  throw ValidationError("unknown base measure '" + std::string(name) + "' (expected gaussian|uniform)");
}

std::string_view to_string(BaseKind kind) { return kind == BaseKind::kGaussian ? "gaussian" : "uniform"; }

Sampler base_sampler(BaseKind kind, Eigen::Index dim) {
  if (dim < 1) throw ValidationError("base_sampler: dim must be >= 1");
  nlohmann::json desc = {{"kind", "base"}, {"base", to_string(kind)}, {"dim", dim}};
  if (kind == BaseKind::kGaussian)
    return Sampler(dim, [dim](Rng& rng, Eigen::Index b) { return standard_normal(rng, b, dim); }, desc);
  const double half_width = std::sqrt(3.0);
  return Sampler(dim, [dim, half_width](Rng& rng, Eigen::Index b) { return uniform(rng, b, dim, -half_width, half_width); },
                 desc);
}

Sampler base_sampler(std::string_view kind, Eigen::Index dim) { return base_sampler(parse_base_kind(kind), dim); }

Sampler constant_sampler(const Eigen::VectorXd& point) {
  nlohmann::json desc = {{"kind", "constant"}, {"point", std::vector<double>(point.data(), point.data() + point.size())}};
  return Sampler(point.size(), [point](Rng&, Eigen::Index b) -> Eigen::MatrixXd { return point.transpose().replicate(b, 1); },
                 desc);
}

Sampler pushforward(const Sampler& source, BatchMap map, Eigen::Index out_dim, nlohmann::json map_descriptor) {
  if (!map) throw ValidationError("pushforward: empty map");
  const Eigen::Index dim = out_dim < 0 ? source.dim() : out_dim;
  nlohmann::json desc = {{"kind", "pushforward"}, {"source", source.descriptor()}, {"map", std::move(map_descriptor)}};
  return Sampler(dim, [source, map = std::move(map)](Rng& rng, Eigen::Index b) { return map(source.sample(rng, b)); },
                 std::move(desc));
}

Sampler affine_pushforward(const Sampler& source, const AffineMap<double>& map) {
  if (map.matrix.cols() != source.dim())
    throw ValidationError("affine_pushforward: map input dimension does not match sampler");
  nlohmann::json desc = {{"affine", {{"dim", map.dim()}}}};
  return pushforward(source, map, map.matrix.rows(), desc);
}

Toy2dShape parse_toy_shape(std::string_view name) {
  if (name == "rectangle") return Toy2dShape::kRectangle;
  if (name == "swiss_roll") return Toy2dShape::kSwissRoll;
  throw ValidationError("unknown toy shape '" + std::string(name) + "' (expected rectangle|swiss_roll)");
}

namespace {

constexpr double kRollStart = 1.5 * std::numbers::pi;
constexpr double kRollSpan = 4.0 * std::numbers::pi;
constexpr double kRollNoise = 0.1;

}  // namespace

GaussianMeasure<double> swiss_roll_raw_moments() {
  // Composite Simpson over t; the noise only enters the second moment as +sigma^2.
  const int intervals = 20000;
  const double h = kRollSpan / intervals;
  Eigen::Vector2d m1 = Eigen::Vector2d::Zero();
  Eigen::Matrix2d m2 = Eigen::Matrix2d::Zero();
  for (int i = 0; i <= intervals; ++i) {
    const double t = kRollStart + i * h;
    const double w = (i == 0 || i == intervals) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    const Eigen::Vector2d dir(std::cos(t), std::sin(t));
    m1 += w * t * dir;
    m2 += w * (t * t + kRollNoise * kRollNoise) * dir * dir.transpose();
  }
  m1 *= h / 3.0 / kRollSpan;
  m2 *= h / 3.0 / kRollSpan;
  return {m1, symmetrize(Eigen::MatrixXd(m2 - m1 * m1.transpose()))};
}

Sampler toy2d_sampler(Toy2dShape shape) {
  if (shape == Toy2dShape::kRectangle) {
    // Var(U[-a, a]) = a^2 / 3.
    const Eigen::Vector2d inv_std(std::sqrt(3.0) / 2.0, std::sqrt(3.0));
    return Sampler(
        2,
        [inv_std](Rng& rng, Eigen::Index b) {
          Eigen::MatrixXd raw(b, 2);
          std::uniform_real_distribution<double> u(-1.0, 1.0);
          for (Eigen::Index i = 0; i < b; ++i) {
            raw(i, 0) = 2.0 * u(rng);
            raw(i, 1) = u(rng);
          }
          return Eigen::MatrixXd(raw * inv_std.asDiagonal());
        },
        {{"kind", "toy2d"}, {"shape", "rectangle"}});
  }
  const auto moments = swiss_roll_raw_moments();
  const Eigen::Matrix2d whiten = spd_inv_sqrt(moments.cov);
  const Eigen::Vector2d center = moments.mean;
  return Sampler(
      2,
      [whiten, center](Rng& rng, Eigen::Index b) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::normal_distribution<double> noise(0.0, kRollNoise);
        Eigen::MatrixXd raw(b, 2);
        for (Eigen::Index i = 0; i < b; ++i) {
          const double t = kRollStart + kRollSpan * u(rng);
          const double r = t + noise(rng);
          raw(i, 0) = r * std::cos(t) - center(0);
          raw(i, 1) = r * std::sin(t) - center(1);
        }
        return Eigen::MatrixXd(raw * whiten);
      },
      {{"kind", "toy2d"}, {"shape", "swiss_roll"}});
}

void LocationScatterSpec::validate() const {
  if (members.empty()) throw ValidationError("location-scatter population has no members");
  const Eigen::Index d = dim();
  for (const auto& m : members) {
    if (m.scatter.rows() != d || m.scatter.cols() != d || m.shift.size() != d)
      throw ValidationError("location-scatter member dimensions differ");
    detail::require_symmetric(m.scatter, "location-scatter member");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.scatter);
    if (!(es.eigenvalues().minCoeff() > 0.0))
      throw ValidationError("location-scatter member scatter matrix is not positive definite");
  }
  detail::require_weights(weights, members.size(), "location-scatter population");
}

Eigen::VectorXd scatter_spectrum(Eigen::Index dim) {
  if (dim < 2) throw ValidationError("scatter population needs dim >= 2");
  const double b = std::pow(4.0, 1.0 / static_cast<double>(dim - 1));
  Eigen::VectorXd lambda(dim);
  for (Eigen::Index k = 0; k < dim; ++k) lambda(k) = 0.5 * std::pow(b, static_cast<double>(k));
  lambda(dim - 1) = 2.0;
  return lambda;
}

LocationScatterSpec make_scatter_population(Eigen::Index dim, Eigen::Index n_members, std::uint64_t seed,
                                            BaseKind base, std::vector<double> weights) {
  if (n_members < 1) throw ValidationError("scatter population needs at least one member");
  const Eigen::VectorXd lambda = scatter_spectrum(dim);
  LocationScatterSpec spec;
  spec.base = base;
  if (weights.empty()) weights.assign(n_members, 1.0 / static_cast<double>(n_members));
  spec.weights = std::move(weights);
  Rng rng = make_stream(seed, "scatter_population", static_cast<std::uint64_t>(dim));
  for (Eigen::Index n = 0; n < n_members; ++n) {
    const Eigen::MatrixXd r = random_rotation<double>(dim, rng());
    spec.members.push_back({symmetrize(r.transpose() * lambda.asDiagonal() * r), Eigen::VectorXd::Zero(dim)});
  }
  spec.validate();
  return spec;
}

std::vector<Sampler> population_samplers(const LocationScatterSpec& spec, const Sampler& base) {
  spec.validate();
  if (base.dim() != spec.dim()) throw ValidationError("population_samplers: base dimension mismatch");
  std::vector<Sampler> out;
  for (const auto& m : spec.members) out.push_back(affine_pushforward(base, {m.scatter, m.shift}));
  return out;
}

std::vector<Sampler> population_samplers(const LocationScatterSpec& spec) {
  return population_samplers(spec, base_sampler(spec.base, spec.dim()));
}

GaussianMeasure<double> location_scatter_truth(const LocationScatterSpec& spec, FixedPointOptions opts) {
  spec.validate();
  std::vector<SpdMatrix<double>> covs;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(spec.dim());
  for (std::size_t n = 0; n < spec.members.size(); ++n) {
    const auto& s = spec.members[n].scatter;
    covs.push_back(symmetrize(s * s.transpose()));
    mean += spec.weights[n] * spec.members[n].shift;
  }
  return {mean, gaussian_barycenter(covs, spec.weights, opts).cov};
}

GaussianMeasure<double> empirical_moments(const Eigen::MatrixXd& samples) {
  const Eigen::Index n = samples.rows();
  const Eigen::Index d = samples.cols();
  if (n < d + 1 || n < 2) {
    std::ostringstream os;
    os << "empirical_moments: " << n << " samples is too few for dimension " << d;
    throw ValidationError(os.str());
  }
  const Eigen::VectorXd mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples.rowwise() - mean.transpose();
  Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  return {mean, symmetrize(cov)};
}

GaussianMeasure<double> empirical_moments(const Sampler& sampler, Eigen::Index n_samples, std::uint64_t seed) {
  const Eigen::Index d = sampler.dim();
  if (n_samples < d + 1 || n_samples < 2) {
    std::ostringstream os;
    os << "empirical_moments: " << n_samples << " samples is too few for dimension " << d;
    throw ValidationError(os.str());
  }
  Rng rng = make_stream(seed, "moments");
  constexpr Eigen::Index kChunk = 1 << 16;
  Eigen::VectorXd shift;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index done = 0; done < n_samples;) {
    const Eigen::Index b = std::min(kChunk, n_samples - done);
    Eigen::MatrixXd x = sampler.sample(rng, b);
    // Shifting by the first chunk's mean keeps the one-pass formula well conditioned.
    if (shift.size() == 0) shift = x.colwise().mean().transpose();
    x.rowwise() -= shift.transpose();
    s1 += x.colwise().sum().transpose();
    s2.noalias() += x.transpose() * x;
    done += b;
  }
  const double n = static_cast<double>(n_samples);
  Eigen::MatrixXd cov = (s2 - s1 * s1.transpose() / n) / (n - 1.0);
  return {shift + s1 / n, symmetrize(cov)};
}

void write_samples_csv(std::ostream& out, const Eigen::MatrixXd& samples) {
  for (Eigen::Index j = 0; j < samples.cols(); ++j) out << (j ? "," : "") << "x" << j;
  out << "\n";
  out.precision(17);
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    for (Eigen::Index j = 0; j < samples.cols(); ++j) out << (j ? "," : "") << samples(i, j);
    out << "\n";
  }
}

void write_samples_csv(const std::string& path, const Eigen::MatrixXd& samples) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_samples_csv(out, samples);
  if (!out) throw IoError("write to '" + path + "' failed");
}

Eigen::MatrixXd read_samples_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("samples CSV: empty input");
  const auto cols = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ',') + 1);
  std::vector<double> values;
  Eigen::Index rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    Eigen::Index c = 0;
    while (std::getline(ls, cell, ',')) {
      values.push_back(std::stod(cell));
      ++c;
    }
    if (c != cols) throw IoError("samples CSV: ragged row " + std::to_string(rows + 2));
    ++rows;
  }
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = values[static_cast<std::size_t>(i * cols + j)];
  return out;
}

}  // namespace w2bary
