#pragma once

// Fixed-point barycenter iteration with a generator network.
//
// Each outer iteration
//   1. refits one OT solver pair per input, from G # S to P_n (warm-started),
//   2. freezes a copy G0 of the generator and regresses G(z) onto
//      sum_n a_n T_n(G0(z)) for K_G steps with the loss 1/2 |.|^2.
// With exact maps this pushes G # S forward by the averaged OT map, i.e. one
// application of the fixed-point operator.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "w2bary/gaussian.hpp"
#include "w2bary/measures.hpp"
#include "w2bary/nn.hpp"
#include "w2bary/ot.hpp"

namespace w2bary {

struct WinConfig {
  int generator_steps = 50;  // K_G; 0 keeps the generator fixed
  MmrConfig solver;          // K_v, K_T, solver batch, lr_v, lr_T
  Eigen::Index batch_size = 1024;
  LrSchedule generator_lr{1e-4, 10000, 0.5};
  int outer_iterations = 40;
  Eigen::Index latent_dim = 0;        // 0: same as the data dimension
  std::vector<Eigen::Index> hidden;   // empty: three layers of max(100, 2D)
  bool reset_solver_optimizers = false;
  int threads = 1;
  Eigen::Index eval_samples = 100000;

  void validate() const;
};

struct WinState {
  TrainableNet generator;
  std::vector<MmrPair> pairs;
  std::vector<double> weights;
  Sampler latent;
  int outer_iteration = 0;

  static WinState create(Eigen::Index dim, std::vector<double> weights, const WinConfig& cfg, std::uint64_t seed);
  Eigen::Index dim() const { return generator.net.output_dim(); }
  void validate() const;
};

/// sum_n a_n T_n(G0(z)) for a latent batch.
Eigen::MatrixXd regression_target(const Mlp& snapshot, const std::vector<MmrPair>& pairs,
                                  const std::vector<double>& weights, const Eigen::MatrixXd& latent_batch);

struct OuterDiagnostics {
  std::vector<LossTrace> solver_traces;
  std::vector<double> generator_losses;
  double loss_g_mean = 0.0;
  // Regression target for a fixed probe batch, evaluated before the first
  // and after the last generator step; equal when the snapshot is frozen.
  Eigen::MatrixXd probe_target_first;
  Eigen::MatrixXd probe_target_last;
};

OuterDiagnostics run_outer_iteration(WinState& state, const std::vector<Sampler>& inputs, const WinConfig& cfg,
                                     Rng& rng);

/// sum_n a_n BW2(moments(generated), moments(P_n)).
double proxy_objective(const GaussianMeasure<double>& generated, const std::vector<GaussianMeasure<double>>& inputs,
                       const std::vector<double>& weights);

struct TimelineRow {
  int outer_iter;
  double proxy_objective;
  double uvp;  // NaN when no ground truth is known
  double loss_g_mean;
  double wall_seconds;
};

struct TrainResult {
  WinState state;
  std::vector<TimelineRow> timeline;
  GaussianMeasure<double> generated_moments;
  std::vector<OuterDiagnostics> last_diagnostics;  // only the final iteration
  std::vector<LossTrace> solver_traces;            // per input, all iterations
  std::vector<double> generator_losses;            // every generator step
};

using ProgressFn = std::function<void(const TimelineRow&)>;

/// Runs cfg.outer_iterations outer loops from a fresh state. The timeline
/// holds the initial state (outer_iter 0) and every iteration after it.
TrainResult train(const std::vector<Sampler>& inputs, const std::vector<double>& weights, const WinConfig& cfg,
                  std::uint64_t seed, const std::optional<GaussianMeasure<double>>& truth = std::nullopt,
                  const ProgressFn& progress = {});

/// Same, continuing from an existing state.
TrainResult train(WinState state, const std::vector<Sampler>& inputs, const WinConfig& cfg, std::uint64_t seed,
                  const std::optional<GaussianMeasure<double>>& truth = std::nullopt, const ProgressFn& progress = {});

struct GradientComparison {
  Eigen::VectorXd regression_grad;
  Eigen::VectorXd variational_grad;
  double relative_difference;
};

/// Generator gradient of the regression loss at G = G0 versus the
/// per-measure sum  sum_n a_n (1/B) sum_z J(z)^T (G(z) - T_n(G(z))).
GradientComparison gradient_identity_check(const Mlp& generator, const std::vector<BatchMap>& maps,
                                         const std::vector<double>& weights, const Eigen::MatrixXd& latent_batch);

struct ConstantShiftBaseline {
  std::vector<Sampler> shifted;
  std::vector<Eigen::VectorXd> input_means;
  Eigen::VectorXd barycenter_mean;
  std::optional<double> uvp;  // UVP of the constant predictor at the barycenter mean
};

/// Translates every input so its mean sits at sum_n a_n mu_n (means estimated
/// from n_samples draws each).
ConstantShiftBaseline constant_shift_baseline(const std::vector<Sampler>& inputs, const std::vector<double>& weights,
                                              Eigen::Index n_samples, Rng& rng,
                                              const std::optional<GaussianMeasure<double>>& truth = std::nullopt);

void write_timeline_csv(std::ostream& out, const std::vector<TimelineRow>& timeline);
std::vector<TimelineRow> read_timeline_csv(std::istream& in);

}  // namespace w2bary
