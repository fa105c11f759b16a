#include "w2bary/ot.hpp"

#include <cmath>
#include <memory>
#include <ostream>
#include <sstream>

#include "w2bary/errors.hpp"

namespace w2bary {

void MmrConfig::validate() const {
  if (potential_steps < 1 || map_steps < 1 || batch_size < 1)
    throw ValidationError("solver config: K_v, K_T and batch size must be positive");
  for (const auto* s : {&potential_lr, &map_lr}) {
    if (!(s->initial_lr > 0.0)) throw ValidationError("solver config: learning rates must be positive");
    if (!(s->decay_factor > 0.0 && s->decay_factor <= 1.0))
      throw ValidationError("solver config: decay factor must lie in (0, 1]");
    if (s->decay_every < 1) throw ValidationError("solver config: decay_every must be positive");
  }
}

MmrPair MmrPair::create(Eigen::Index dim, const std::vector<Eigen::Index>& hidden, const MmrConfig& cfg,
                        std::uint64_t seed) {
  MmrPair pair;
  pair.map = TrainableNet(he_init(make_layers(dim, hidden, dim), seed), cfg.map_lr);
  pair.potential = TrainableNet(he_init(make_layers(dim, hidden, 1), seed ^ 0x9e3779b97f4a7c15ULL), cfg.potential_lr);
  return pair;
}

void MmrPair::validate() const {
  if (map.net.layer_sizes().empty() || potential.net.layer_sizes().empty())
    throw ValidationError("solver pair: networks not initialized");
  if (map.net.input_dim() != map.net.output_dim())
    throw ValidationError("solver pair: map network must be D -> D");
  if (potential.net.output_dim() != 1) throw ValidationError("solver pair: potential network must be D -> 1");
  if (potential.net.input_dim() != map.net.input_dim())
    throw ValidationError("solver pair: map and potential dimensions differ");
}

void MmrPair::reset_optimizers() {
  map.opt.reset();
  potential.opt.reset();
}

PotentialStep potential_objective(const MmrPair& pair, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  const Eigen::MatrixXd tx = pair.map.net(x);
  ForwardTape at_tx, at_y;
  const Eigen::MatrixXd v_tx = forward(pair.potential.net, tx, at_tx);
  const Eigen::MatrixXd v_y = forward(pair.potential.net, y, at_y);
  const double bx = static_cast<double>(x.rows());
  const double by = static_cast<double>(y.rows());
  PotentialStep out;
  out.loss = v_tx.mean() - v_y.mean();
  out.grad = backward(pair.potential.net, at_tx, Eigen::MatrixXd::Constant(x.rows(), 1, 1.0 / bx),
                      GradientParts::kParameters)
                 .params;
  out.grad -= backward(pair.potential.net, at_y, Eigen::MatrixXd::Constant(y.rows(), 1, 1.0 / by),
                       GradientParts::kParameters)
                  .params;
  return out;
}

MapStep map_objective(const MmrPair& pair, const Eigen::MatrixXd& x) {
  ForwardTape map_tape, pot_tape;
  const Eigen::MatrixXd tx = forward(pair.map.net, x, map_tape);
  const Eigen::MatrixXd v_tx = forward(pair.potential.net, tx, pot_tape);
  const double b = static_cast<double>(x.rows());
  const Eigen::MatrixXd disp = tx - x;
  MapStep out;
  out.loss = 0.5 * disp.squaredNorm() / b - v_tx.mean();
  Eigen::MatrixXd upstream = disp / b;
  upstream += backward(pair.potential.net, pot_tape, Eigen::MatrixXd::Constant(x.rows(), 1, -1.0 / b),
                       GradientParts::kInput)
                  .input;
  out.grad = backward(pair.map.net, map_tape, upstream, GradientParts::kParameters).params;
  return out;
}

LossTrace mmr_update(MmrPair& pair, const Sampler& source, const Sampler& target, const MmrConfig& cfg, Rng& rng) {
  cfg.validate();
  pair.validate();
  if (source.dim() != pair.dim() || target.dim() != pair.dim()) {
    std::ostringstream os;
    os << "mmr_update: solver dimension " << pair.dim() << " but source/target are " << source.dim() << "/"
       << target.dim();
    throw ValidationError(os.str());
  }
  pair.map.schedule = cfg.map_lr;
  pair.potential.schedule = cfg.potential_lr;
  LossTrace trace;
  trace.reserve(static_cast<std::size_t>(cfg.potential_steps));
  for (int kv = 0; kv < cfg.potential_steps; ++kv) {
    const Eigen::MatrixXd x = source.sample(rng, cfg.batch_size);
    const Eigen::MatrixXd y = target.sample(rng, cfg.batch_size);
    const auto pot = potential_objective(pair, x, y);
    if (!std::isfinite(pot.loss)) {
      std::ostringstream os;
      os << "mmr_update: non-finite potential loss at step " << pair.potential.opt.step_count;
      throw NumericalError(os.str());
    }
    pair.potential.step(pot.grad);

    double map_loss = 0.0;
    for (int kt = 0; kt < cfg.map_steps; ++kt) {
      const Eigen::MatrixXd xs = source.sample(rng, cfg.batch_size);
      const auto step = map_objective(pair, xs);
      if (!std::isfinite(step.loss)) {
        std::ostringstream os;
        os << "mmr_update: non-finite map loss at step " << pair.map.opt.step_count;
        throw NumericalError(os.str());
      }
      pair.map.step(step.grad);
      map_loss += step.loss;
    }
    trace.push_back({pair.potential.opt.step_count, pot.loss, map_loss / cfg.map_steps,
                     pair.potential.opt.learning_rate, pair.map.opt.learning_rate});
  }
  return trace;
}

namespace {

constexpr Eigen::Index kEvalChunk = 1 << 14;

template <typename Fn>
void for_chunks(const Sampler& source, Eigen::Index n_samples, Rng& rng, Fn&& fn) {
  for (Eigen::Index done = 0; done < n_samples;) {
    const Eigen::Index b = std::min(kEvalChunk, n_samples - done);
    fn(source.sample(rng, b));
    done += b;
  }
}

}  // namespace

double transport_cost_estimate(const BatchMap& map, const Sampler& source, Eigen::Index n_samples, Rng& rng) {
  if (n_samples < 1) throw ValidationError("transport_cost_estimate: need at least one sample");
  double total = 0.0;
  for_chunks(source, n_samples, rng, [&](const Eigen::MatrixXd& x) { total += 0.5 * (map(x) - x).squaredNorm(); });
  return total / static_cast<double>(n_samples);
}

double transport_cost_estimate(const MmrPair& pair, const Sampler& source, Eigen::Index n_samples, Rng& rng) {
  return transport_cost_estimate(as_batch_map(pair.map.net), source, n_samples, rng);
}

double dual_cost_estimate(const MmrPair& pair, const Sampler& source, const Sampler& target,
                          Eigen::Index n_samples, Rng& rng) {
  double primal = 0.0;
  for_chunks(source, n_samples, rng, [&](const Eigen::MatrixXd& x) {
    const Eigen::MatrixXd tx = pair.map.net(x);
    primal += 0.5 * (tx - x).squaredNorm() - pair.potential.net(tx).sum();
  });
  double dual = 0.0;
  for_chunks(target, n_samples, rng, [&](const Eigen::MatrixXd& y) { dual += pair.potential.net(y).sum(); });
  return (primal + dual) / static_cast<double>(n_samples);
}

double normalized_map_error(const BatchMap& learned, const BatchMap& reference, const Sampler& source,
                            Eigen::Index n_samples, Rng& rng) {
  const Eigen::MatrixXd x = source.sample(rng, n_samples);
  const Eigen::MatrixXd ref = reference(x);
  const double err = (learned(x) - ref).squaredNorm() / static_cast<double>(n_samples);
  return err / empirical_moments(ref).cov.trace();
}

BatchMap as_batch_map(const Mlp& net) {
  auto copy = std::make_shared<const Mlp>(net);
  return [copy](const Eigen::MatrixXd& x) { return forward(*copy, x); };
}

Sampler generated_sampler(const Mlp& generator, const Sampler& latent) {
  if (generator.input_dim() != latent.dim())
    throw ValidationError("generated_sampler: generator input does not match latent dimension");
  return pushforward(latent, as_batch_map(generator), generator.output_dim(), "generator");
}

std::vector<LossTrace> fit_inverse_maps(const Mlp& generator, const Sampler& latent, const std::vector<Sampler>& inputs,
                                        const InverseMapConfig& cfg, std::vector<MmrPair>& pairs, std::uint64_t seed) {
  const Sampler barycenter = generated_sampler(generator, latent);
  const Eigen::Index dim = barycenter.dim();
  const auto hidden = cfg.hidden.empty() ? default_hidden(dim) : cfg.hidden;
  if (pairs.empty()) {
    for (std::size_t n = 0; n < inputs.size(); ++n)
      pairs.push_back(MmrPair::create(dim, hidden, cfg.solver, make_stream(seed, "inverse_pair", n)()));
  }
  if (pairs.size() != inputs.size()) throw ValidationError("fit_inverse_maps: one solver pair per input required");
  MmrConfig solver = cfg.solver;
  solver.potential_steps = cfg.iterations;
  std::vector<LossTrace> traces;
  for (std::size_t n = 0; n < inputs.size(); ++n) {
    Rng rng = make_stream(seed, "inverse_maps", n);
    traces.push_back(mmr_update(pairs[n], inputs[n], barycenter, solver, rng));
  }
  return traces;
}

void write_loss_trace_csv(std::ostream& out, const LossTrace& trace) {
  out << "# w2bary loss-trace v1\n";
  out << "step,loss_v,loss_T,lr_v,lr_T\n";
  out.precision(12);
  for (const auto& r : trace) out << r.step << "," << r.loss_v << "," << r.loss_t << "," << r.lr_v << "," << r.lr_t << "\n";
}

}  // namespace w2bary
