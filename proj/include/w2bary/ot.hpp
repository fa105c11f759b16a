#pragma once

// Reversed maximin OT solver between two sampled measures P (source) and Q
// (target):
//
//   max_v min_T  E_P[ 1/2 |x - T(x)|^2 - v(T(x)) ] + E_Q[ v(y) ].
//
// Each potential step descends
//   L_v = mean_x v(T(x)) - mean_y v(y)
// and is followed by K_T map steps descending
//   L_T = mean_x [ 1/2 |x - T(x)|^2 - v(T(x)) ].
// Both networks are plain (non-convex) MLPs.

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "w2bary/measures.hpp"
#include "w2bary/nn.hpp"

namespace w2bary {

struct MmrConfig {
  int potential_steps = 50;  // K_v
  int map_steps = 10;        // K_T, per potential step
  Eigen::Index batch_size = 1024;
  LrSchedule potential_lr{1e-3, 10000, 0.5};
  LrSchedule map_lr{1e-3, 10000, 0.5};

  void validate() const;
};

/// Map network T: D -> D and potential network v: D -> 1, each with its own
/// optimizer state.
struct MmrPair {
  TrainableNet map;
  TrainableNet potential;

  /// He-initialized pair with the given hidden stack.
  static MmrPair create(Eigen::Index dim, const std::vector<Eigen::Index>& hidden, const MmrConfig& cfg,
                        std::uint64_t seed);
  Eigen::Index dim() const { return map.net.input_dim(); }
  void validate() const;
  void reset_optimizers();
};

struct LossRecord {
  std::int64_t step;    // potential step counter (cumulative over calls)
  double loss_v;
  double loss_t;        // mean of the K_T map losses that followed this potential step
  double lr_v;
  double lr_t;
};

using LossTrace = std::vector<LossRecord>;

/// K_v potential steps, each followed by K_T map steps; fresh batches for
/// every gradient step. Throws NumericalError on a non-finite loss.
LossTrace mmr_update(MmrPair& pair, const Sampler& source, const Sampler& target, const MmrConfig& cfg, Rng& rng);

/// Loss values and gradients of one potential / map step on fixed batches;
/// exposed for gradient-level tests of the objective.
struct PotentialStep {
  double loss;
  Eigen::VectorXd grad;
};
struct MapStep {
  double loss;
  Eigen::VectorXd grad;
};
PotentialStep potential_objective(const MmrPair& pair, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);
MapStep map_objective(const MmrPair& pair, const Eigen::MatrixXd& x);

/// Monte-Carlo estimate of E_P 1/2 |x - T(x)|^2.
double transport_cost_estimate(const BatchMap& map, const Sampler& source, Eigen::Index n_samples, Rng& rng);
double transport_cost_estimate(const MmrPair& pair, const Sampler& source, Eigen::Index n_samples, Rng& rng);

/// Dual value E_P[1/2 |x - T(x)|^2 - v(T(x))] + E_Q[v(y)], an estimate of W2^2(P, Q).
double dual_cost_estimate(const MmrPair& pair, const Sampler& source, const Sampler& target,
                          Eigen::Index n_samples, Rng& rng);

/// Normalized map error E_P |T(x) - T*(x)|^2 / tr Cov(T* # P).
double normalized_map_error(const BatchMap& learned, const BatchMap& reference, const Sampler& source,
                            Eigen::Index n_samples, Rng& rng);

BatchMap as_batch_map(const Mlp& net);

struct InverseMapConfig {
  MmrConfig solver;
  int iterations = 10000;  // potential updates per input measure
  std::vector<Eigen::Index> hidden;
};

/// Learns maps P_n -> G # S for a frozen generator: the solver runs with the
/// inputs as sources and the generated measure as target. Pairs are created
/// if `pairs` is empty, otherwise continued.
std::vector<LossTrace> fit_inverse_maps(const Mlp& generator, const Sampler& latent, const std::vector<Sampler>& inputs,
                                        const InverseMapConfig& cfg, std::vector<MmrPair>& pairs, std::uint64_t seed);

/// The generated measure G # S as a sampler; the generator is copied.
Sampler generated_sampler(const Mlp& generator, const Sampler& latent);

void write_loss_trace_csv(std::ostream& out, const LossTrace& trace);

}  // namespace w2bary
