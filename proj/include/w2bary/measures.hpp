#pragma once

// Probability measures accessible through samples.
//
// A Sampler is an immutable description of a measure; randomness comes only
// from the Rng passed to sample(), so equal generator states give equal
// batches and one measure can be shared freely between threads as long as
// each thread brings its own stream.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "w2bary/gaussian.hpp"
#include "w2bary/rng.hpp"

namespace w2bary {

/// Row-wise map on a batch (B x in -> B x out).
using BatchMap = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

class Sampler {
 public:
  using DrawFn = std::function<Eigen::MatrixXd(Rng&, Eigen::Index)>;

  Sampler(Eigen::Index dim, DrawFn draw, nlohmann::json descriptor);

  Eigen::Index dim() const { return dim_; }
  const nlohmann::json& descriptor() const { return descriptor_; }

  /// batch_size i.i.d. draws, one per row.
  Eigen::MatrixXd sample(Rng& rng, Eigen::Index batch_size) const;

 private:
  Eigen::Index dim_;
  std::shared_ptr<const DrawFn> draw_;
  nlohmann::json descriptor_;
};

enum class BaseKind { kGaussian, kUniform };

BaseKind parse_base_kind(std::string_view name);
std::string_view to_string(BaseKind kind);

/// Standardized base measure: N(0, I) or uniform on [-sqrt3, sqrt3]^D.
Sampler base_sampler(BaseKind kind, Eigen::Index dim);
Sampler base_sampler(std::string_view kind, Eigen::Index dim);

/// Dirac mass at `point`.
Sampler constant_sampler(const Eigen::VectorXd& point);

/// Image of `source` under `map`. out_dim < 0 means "same as source"; a map
/// that returns any other width throws ValidationError at sample time.
Sampler pushforward(const Sampler& source, BatchMap map, Eigen::Index out_dim = -1,
                    nlohmann::json map_descriptor = "map");

Sampler affine_pushforward(const Sampler& source, const AffineMap<double>& map);

enum class Toy2dShape { kRectangle, kSwissRoll };

Toy2dShape parse_toy_shape(std::string_view name);

/// Two-dimensional toy measures, whitened to zero mean and identity
/// covariance:
///   rectangle  - uniform on [-2, 2] x [-1, 1];
///   swiss_roll - r (cos t, sin t), t ~ U[1.5 pi, 5.5 pi] (two turns),
///                r = t + 0.1 * N(0, 1).
Sampler toy2d_sampler(Toy2dShape shape);

/// Exact (quadrature) mean and covariance of the raw swiss roll, before whitening.
GaussianMeasure<double> swiss_roll_raw_moments();

struct ScatterMember {
  SpdMatrix<double> scatter;  // S, positive definite
  Eigen::VectorXd shift;      // u
};

/// A population f_{S_n, u_n} # P0 of location-scatter images of a base
/// measure, with barycenter weights.
struct LocationScatterSpec {
  BaseKind base = BaseKind::kGaussian;
  std::vector<ScatterMember> members;
  std::vector<double> weights;

  Eigen::Index dim() const { return members.empty() ? 0 : members.front().shift.size(); }
  void validate() const;
};

/// S_n = R_n^T diag(1/2 b^0, ..., 1/2 b^(D-1)) R_n with b = 4^(1/(D-1)) and
/// Haar rotations R_n; u_n = 0. Uniform weights when none are given.
LocationScatterSpec make_scatter_population(Eigen::Index dim, Eigen::Index n_members, std::uint64_t seed,
                                            BaseKind base = BaseKind::kGaussian,
                                            std::vector<double> weights = {});

/// Spectrum used by make_scatter_population.
Eigen::VectorXd scatter_spectrum(Eigen::Index dim);

/// One sampler per member, pushing `base` through x -> S_n x + u_n.
std::vector<Sampler> population_samplers(const LocationScatterSpec& spec, const Sampler& base);
std::vector<Sampler> population_samplers(const LocationScatterSpec& spec);

/// Moments of the barycenter of a population over a standardized base:
/// mean sum a_n u_n, covariance the Gaussian fixed point over S_n S_n^T.
GaussianMeasure<double> location_scatter_truth(const LocationScatterSpec& spec, FixedPointOptions opts = {});

/// Sample mean and (n - 1)-normalized covariance from n_samples draws.
GaussianMeasure<double> empirical_moments(const Sampler& sampler, Eigen::Index n_samples, std::uint64_t seed);
GaussianMeasure<double> empirical_moments(const Eigen::MatrixXd& samples);

/// CSV with header x0,...,x{D-1} and one sample per line.
void write_samples_csv(std::ostream& out, const Eigen::MatrixXd& samples);
void write_samples_csv(const std::string& path, const Eigen::MatrixXd& samples);
Eigen::MatrixXd read_samples_csv(std::istream& in);

}  // namespace w2bary
