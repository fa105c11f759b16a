#include "w2bary/win.hpp"

#include <chrono>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <thread>

#include "w2bary/errors.hpp"

namespace w2bary {

void WinConfig::validate() const {
  if (generator_steps < 0) throw ValidationError("win config: K_G must be >= 0");
  if (batch_size < 1) throw ValidationError("win config: batch size must be positive");
  if (outer_iterations < 0) throw ValidationError("win config: outer iteration count must be >= 0");
  if (!(generator_lr.initial_lr > 0.0)) throw ValidationError("win config: lr_G must be positive");
  if (!(generator_lr.decay_factor > 0.0 && generator_lr.decay_factor <= 1.0) || generator_lr.decay_every < 1)
    throw ValidationError("win config: invalid generator learning-rate schedule");
  if (latent_dim < 0) throw ValidationError("win config: latent dimension must be >= 0");
  if (threads < 1) throw ValidationError("win config: threads must be >= 1");
  if (eval_samples < 2) throw ValidationError("win config: eval_samples must be >= 2");
  for (auto h : hidden)
    if (h < 1) throw ValidationError("win config: hidden sizes must be positive");
  solver.validate();
}

WinState WinState::create(Eigen::Index dim, std::vector<double> weights, const WinConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  detail::require_weights(weights, weights.size(), "win");
  const Eigen::Index latent_dim = cfg.latent_dim > 0 ? cfg.latent_dim : dim;
  const auto hidden = cfg.hidden.empty() ? default_hidden(dim) : cfg.hidden;
  WinState state{TrainableNet(he_init(make_layers(latent_dim, hidden, dim), make_stream(seed, "generator")()),
                              cfg.generator_lr),
                 {},
                 std::move(weights),
                 base_sampler(BaseKind::kGaussian, latent_dim),
                 0};
  for (std::size_t n = 0; n < state.weights.size(); ++n)
    state.pairs.push_back(MmrPair::create(dim, hidden, cfg.solver, make_stream(seed, "solver_pair", n)()));
  return state;
}

void WinState::validate() const {
  if (weights.empty()) throw ValidationError("win state: no input measures");
  detail::require_weights(weights, weights.size(), "win state");
  if (pairs.size() != weights.size()) throw ValidationError("win state: need one solver pair per input measure");
  if (generator.net.input_dim() != latent.dim()) throw ValidationError("win state: generator/latent mismatch");
  for (const auto& p : pairs) {
    p.validate();
    if (p.dim() != dim()) throw ValidationError("win state: solver pair dimension differs from generator");
  }
}

Eigen::MatrixXd regression_target(const Mlp& snapshot, const std::vector<MmrPair>& pairs,
                                  const std::vector<double>& weights, const Eigen::MatrixXd& latent_batch) {
  const Eigen::MatrixXd x = snapshot(latent_batch);
  Eigen::MatrixXd target = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  for (std::size_t n = 0; n < pairs.size(); ++n) target += weights[n] * pairs[n].map.net(x);
  return target;
}

OuterDiagnostics run_outer_iteration(WinState& state, const std::vector<Sampler>& inputs, const WinConfig& cfg,
                                     Rng& rng) {
  cfg.validate();
  state.validate();
  if (inputs.size() != state.pairs.size()) throw ValidationError("run_outer_iteration: one input per solver pair");
  for (const auto& s : inputs)
    if (s.dim() != state.dim()) throw ValidationError("run_outer_iteration: input dimension mismatch");

  OuterDiagnostics diag;
  const std::size_t n_inputs = inputs.size();

  // Step 1: solver pairs against the current generated measure. Each pair
  // gets its own stream split off in a fixed order, so the result does not
  // depend on how the pairs are scheduled.
  const Sampler generated = generated_sampler(state.generator.net, state.latent);
  std::vector<Rng> streams;
  for (std::size_t n = 0; n < n_inputs; ++n) streams.push_back(split(rng));
  diag.solver_traces.resize(n_inputs);
  if (cfg.reset_solver_optimizers)
    for (auto& p : state.pairs) p.reset_optimizers();

  auto fit = [&](std::size_t n) {
    diag.solver_traces[n] = mmr_update(state.pairs[n], generated, inputs[n], cfg.solver, streams[n]);
  };
  if (cfg.threads <= 1 || n_inputs == 1) {
    for (std::size_t n = 0; n < n_inputs; ++n) fit(n);
  } else {
    std::vector<std::exception_ptr> errors(n_inputs);
    std::vector<std::thread> workers;
    const std::size_t width = std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), n_inputs);
    for (std::size_t w = 0; w < width; ++w) {
      workers.emplace_back([&, w] {
        for (std::size_t n = w; n < n_inputs; n += width) {
          try {
            fit(n);
          } catch (...) {
            errors[n] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  // Step 2: regression onto the averaged maps applied to a frozen snapshot.
  const Mlp snapshot = state.generator.net;
  const Eigen::MatrixXd probe = state.latent.sample(rng, 8);
  diag.probe_target_first = regression_target(snapshot, state.pairs, state.weights, probe);
  state.generator.schedule = cfg.generator_lr;
  for (int k = 0; k < cfg.generator_steps; ++k) {
    const Eigen::MatrixXd z = state.latent.sample(rng, cfg.batch_size);
    const Eigen::MatrixXd target = regression_target(snapshot, state.pairs, state.weights, z);
    ForwardTape tape;
    const Eigen::MatrixXd out = forward(state.generator.net, z, tape);
    const Eigen::MatrixXd residual = out - target;
    const double b = static_cast<double>(z.rows());
    const double loss = 0.5 * residual.squaredNorm() / b;
    if (!std::isfinite(loss)) {
      std::ostringstream os;
      os << "generator regression: non-finite loss at step " << state.generator.opt.step_count;
      throw NumericalError(os.str());
    }
    state.generator.step(backward(state.generator.net, tape, residual / b, GradientParts::kParameters).params);
    diag.generator_losses.push_back(loss);
  }
  diag.probe_target_last = regression_target(snapshot, state.pairs, state.weights, probe);
  double total = 0.0;
  for (double l : diag.generator_losses) total += l;
  diag.loss_g_mean = diag.generator_losses.empty() ? 0.0 : total / static_cast<double>(diag.generator_losses.size());
  ++state.outer_iteration;
  return diag;
}

double proxy_objective(const GaussianMeasure<double>& generated, const std::vector<GaussianMeasure<double>>& inputs,
                       const std::vector<double>& weights) {
  double total = 0.0;
  for (std::size_t n = 0; n < inputs.size(); ++n) total += weights[n] * bures_w2_sq(generated, inputs[n]);
  return total;
}

TrainResult train(const std::vector<Sampler>& inputs, const std::vector<double>& weights, const WinConfig& cfg,
                  std::uint64_t seed, const std::optional<GaussianMeasure<double>>& truth, const ProgressFn& progress) {
  if (inputs.empty()) throw ValidationError("train: no input measures");
  return train(WinState::create(inputs.front().dim(), weights, cfg, seed), inputs, cfg, seed, truth, progress);
}

TrainResult train(WinState state, const std::vector<Sampler>& inputs, const WinConfig& cfg, std::uint64_t seed,
                  const std::optional<GaussianMeasure<double>>& truth, const ProgressFn& progress) {
  cfg.validate();
  state.validate();
  if (inputs.size() != state.weights.size()) throw ValidationError("train: one weight per input measure required");
  const auto start = std::chrono::steady_clock::now();

  std::vector<GaussianMeasure<double>> input_moments;
  for (std::size_t n = 0; n < inputs.size(); ++n)
    input_moments.push_back(empirical_moments(inputs[n], cfg.eval_samples, make_stream(seed, "input_moments", n)()));
  // Generated moments always use the same latent draws, so consecutive
  // timeline rows differ only through the generator.
  const std::uint64_t eval_seed = make_stream(seed, "eval")();

  TrainResult result{std::move(state), {}, {}, {}, {}, {}};
  result.solver_traces.resize(inputs.size());
  auto record = [&](double loss_g) {
    const auto gen = empirical_moments(generated_sampler(result.state.generator.net, result.state.latent),
                                       cfg.eval_samples, eval_seed);
    TimelineRow row{result.state.outer_iteration, proxy_objective(gen, input_moments, result.state.weights),
                    truth ? bw2_uvp(gen, *truth) : std::numeric_limits<double>::quiet_NaN(), loss_g,
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
    result.timeline.push_back(row);
    result.generated_moments = gen;
    if (progress) progress(row);
  };

  Rng rng = make_stream(seed, "train", static_cast<std::uint64_t>(result.state.outer_iteration));
  record(std::numeric_limits<double>::quiet_NaN());
  for (int it = 0; it < cfg.outer_iterations; ++it) {
    auto diag = run_outer_iteration(result.state, inputs, cfg, rng);
    for (std::size_t n = 0; n < inputs.size(); ++n)
      result.solver_traces[n].insert(result.solver_traces[n].end(), diag.solver_traces[n].begin(),
                                     diag.solver_traces[n].end());
    result.generator_losses.insert(result.generator_losses.end(), diag.generator_losses.begin(),
                                   diag.generator_losses.end());
    record(diag.loss_g_mean);
    if (it + 1 == cfg.outer_iterations) result.last_diagnostics = {std::move(diag)};
  }
  return result;
}

GradientComparison gradient_identity_check(const Mlp& generator, const std::vector<BatchMap>& maps,
                                         const std::vector<double>& weights, const Eigen::MatrixXd& latent_batch) {
  if (maps.size() != weights.size()) throw ValidationError("gradient_identity_check: one weight per map required");
  if (latent_batch.cols() != generator.input_dim())
    throw ValidationError("gradient_identity_check: latent batch does not match generator input");
  ForwardTape tape;
  const Eigen::MatrixXd x = forward(generator, latent_batch, tape);
  const double b = static_cast<double>(latent_batch.rows());

  std::vector<Eigen::MatrixXd> mapped;
  for (const auto& t : maps) {
    mapped.push_back(t(x));
    if (mapped.back().rows() != x.rows() || mapped.back().cols() != x.cols())
      throw ValidationError("gradient_identity_check: map output dimension mismatch");
  }

  // Regression route: one backward pass through the averaged target.
  Eigen::MatrixXd target = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  for (std::size_t n = 0; n < maps.size(); ++n) target += weights[n] * mapped[n];
  GradientComparison out;
  out.regression_grad = backward(generator, tape, (x - target) / b, GradientParts::kParameters).params;

  // Variational route: gradient of each W2 term separately, then weighted.
  out.variational_grad = Eigen::VectorXd::Zero(generator.parameter_count());
  for (std::size_t n = 0; n < maps.size(); ++n)
    out.variational_grad +=
        weights[n] * backward(generator, tape, (x - mapped[n]) / b, GradientParts::kParameters).params;

  const double scale = std::max(out.regression_grad.norm(), out.variational_grad.norm());
  const double diff = (out.regression_grad - out.variational_grad).norm();
  out.relative_difference = scale > 0.0 ? diff / scale : diff;
  return out;
}

ConstantShiftBaseline constant_shift_baseline(const std::vector<Sampler>& inputs, const std::vector<double>& weights,
                                              Eigen::Index n_samples, Rng& rng,
                                              const std::optional<GaussianMeasure<double>>& truth) {
  if (inputs.empty()) throw ValidationError("constant_shift_baseline: no inputs");
  detail::require_weights(weights, inputs.size(), "constant_shift_baseline");
  if (n_samples < 1) throw ValidationError("constant_shift_baseline: need at least one sample");
  ConstantShiftBaseline out;
  const Eigen::Index dim = inputs.front().dim();
  out.barycenter_mean = Eigen::VectorXd::Zero(dim);
  for (std::size_t n = 0; n < inputs.size(); ++n) {
    const Eigen::VectorXd mean = inputs[n].sample(rng, n_samples).colwise().mean().transpose();
    out.input_means.push_back(mean);
    out.barycenter_mean += weights[n] * mean;
  }
  for (std::size_t n = 0; n < inputs.size(); ++n) {
    const Eigen::VectorXd shift = out.barycenter_mean - out.input_means[n];
    out.shifted.push_back(pushforward(
        inputs[n], [shift](const Eigen::MatrixXd& y) -> Eigen::MatrixXd { return y.rowwise() + shift.transpose(); },
        dim, {{"shift", std::vector<double>(shift.data(), shift.data() + shift.size())}}));
  }
  if (truth) {
    const GaussianMeasure<double> constant{out.barycenter_mean, Eigen::MatrixXd::Zero(dim, dim)};
    out.uvp = bw2_uvp(constant, *truth);
  }
  return out;
}

void write_timeline_csv(std::ostream& out, const std::vector<TimelineRow>& timeline) {
  out << "# w2bary metrics v1\n";
  out << "outer_iter,proxy_objective,uvp_vs_truth,loss_G_mean\n";
  out.precision(12);
  // Wall time is left out so that reruns produce identical files.
  for (const auto& r : timeline)
    out << r.outer_iter << "," << r.proxy_objective << "," << r.uvp << "," << r.loss_g_mean << "\n";
}

std::vector<TimelineRow> read_timeline_csv(std::istream& in) {
  std::vector<TimelineRow> rows;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line.rfind("outer_iter,", 0) != 0) throw IoError("metrics CSV: unexpected header '" + line + "'");
      header_seen = true;
      continue;
    }
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 4) throw IoError("metrics CSV: expected 4 columns, got " + std::to_string(cells.size()));
    try {
      rows.push_back({std::stoi(cells[0]), std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3]),
                      std::numeric_limits<double>::quiet_NaN()});
    } catch (const std::logic_error&) {
      throw IoError("metrics CSV: unparsable row '" + line + "'");
    }
  }
  if (!header_seen) throw IoError("metrics CSV: missing header");
  return rows;
}

}  // namespace w2bary
