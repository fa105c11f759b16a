#include "w2bary/nn.hpp"

#include <cmath>
#include <sstream>

#include "w2bary/errors.hpp"
#include "w2bary/rng.hpp"

namespace w2bary {

Eigen::Index parameter_count(const std::vector<Eigen::Index>& layer_sizes) {
  Eigen::Index total = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) total += (layer_sizes[l] + 1) * layer_sizes[l + 1];
  return total;
}

Mlp::Mlp(std::vector<Eigen::Index> layer_sizes) : sizes_(std::move(layer_sizes)) {
  if (sizes_.size() < 2) throw ValidationError("Mlp: need at least an input and an output size");
  for (auto s : sizes_)
    if (s < 1) throw ValidationError("Mlp: layer sizes must be positive");
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    offsets_.push_back(offset);
    offset += (sizes_[l] + 1) * sizes_[l + 1];
  }
  params_ = Eigen::VectorXd::Zero(offset);
}

Eigen::Map<RowMajorMatrix> Mlp::weight(std::size_t l) {
  return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
}
Eigen::Map<const RowMajorMatrix> Mlp::weight(std::size_t l) const {
  return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
}
Eigen::Map<Eigen::VectorXd> Mlp::bias(std::size_t l) {
  return {params_.data() + offsets_[l] + sizes_[l + 1] * sizes_[l], sizes_[l + 1]};
}
Eigen::Map<const Eigen::VectorXd> Mlp::bias(std::size_t l) const {
  return {params_.data() + offsets_[l] + sizes_[l + 1] * sizes_[l], sizes_[l + 1]};
}

Eigen::MatrixXd Mlp::operator()(const Eigen::MatrixXd& batch) const { return forward(*this, batch); }

namespace {

void check_input(const Mlp& net, const Eigen::MatrixXd& batch) {
  if (net.layer_sizes().empty()) throw ValidationError("forward: empty network");
  if (batch.cols() != net.input_dim()) {
    std::ostringstream os;
    os << "forward: batch has " << batch.cols() << " columns, network expects " << net.input_dim();
    throw ValidationError(os.str());
  }
}

template <typename Record>
Eigen::MatrixXd run_forward(const Mlp& net, const Eigen::MatrixXd& batch, Record&& record) {
  check_input(net, batch);
  Eigen::MatrixXd h = batch;
  const std::size_t layers = net.num_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    Eigen::MatrixXd z(h.rows(), net.layer_sizes()[l + 1]);
    z.noalias() = h * net.weight(l).transpose();
    z.rowwise() += net.bias(l).transpose();
    if (l + 1 < layers) z = z.cwiseMax(0.0);
    record(std::move(h));
    h = std::move(z);
  }
  return h;
}

}  // namespace

Eigen::MatrixXd forward(const Mlp& net, const Eigen::MatrixXd& batch) {
  return run_forward(net, batch, [](Eigen::MatrixXd&&) {});
}

Eigen::MatrixXd forward(const Mlp& net, const Eigen::MatrixXd& batch, ForwardTape& tape) {
  tape.inputs.clear();
  return run_forward(net, batch, [&](Eigen::MatrixXd&& h) { tape.inputs.push_back(std::move(h)); });
}

Gradients backward(const Mlp& net, const ForwardTape& tape, const Eigen::MatrixXd& upstream,
                   GradientParts parts) {
  const std::size_t layers = net.num_layers();
  if (tape.inputs.size() != layers) throw ValidationError("backward: tape does not match network");
  const Eigen::Index rows = tape.inputs.front().rows();
  if (upstream.rows() != rows || upstream.cols() != net.output_dim()) {
    std::ostringstream os;
    os << "backward: upstream gradient is " << upstream.rows() << "x" << upstream.cols() << ", expected "
       << rows << "x" << net.output_dim();
    throw ValidationError(os.str());
  }
  const bool want_params = parts != GradientParts::kInput;
  const bool want_input = parts != GradientParts::kParameters;

  Gradients out;
  Mlp grad_view;
  if (want_params) {
    grad_view = Mlp(net.layer_sizes());
  }
  Eigen::MatrixXd delta = upstream;  // d/d(pre-activation) of the current layer
  for (std::size_t l = layers; l-- > 0;) {
    const Eigen::MatrixXd& a = tape.inputs[l];
    if (want_params) {
      grad_view.weight(l).noalias() = delta.transpose() * a;
      grad_view.bias(l) = delta.colwise().sum().transpose();
    }
    if (l == 0 && !want_input) break;
    Eigen::MatrixXd back(rows, net.layer_sizes()[l]);
    back.noalias() = delta * net.weight(l);
    if (l > 0) back = (a.array() > 0.0).select(back, 0.0);
    delta = std::move(back);
  }
  if (want_params) out.params = std::move(grad_view.parameters());
  if (want_input) out.input = std::move(delta);
  return out;
}

Gradients backward(const Mlp& net, const Eigen::MatrixXd& batch, const Eigen::MatrixXd& upstream,
                   GradientParts parts) {
  ForwardTape tape;
  forward(net, batch, tape);
  return backward(net, tape, upstream, parts);
}

double LrSchedule::at(std::int64_t step) const {
  if (decay_every <= 0) return initial_lr;
  return initial_lr * std::pow(decay_factor, static_cast<double>(step / decay_every));
}

AdamState AdamState::zeros(Eigen::Index n) {
  AdamState s;
  s.first_moment = Eigen::VectorXd::Zero(n);
  s.second_moment = Eigen::VectorXd::Zero(n);
  return s;
}

void AdamState::reset() {
  first_moment.setZero();
  second_moment.setZero();
  step_count = 0;
}

void adam_step(AdamState& state, Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grads,
               const LrSchedule& schedule) {
  if (params.size() != grads.size())
    throw ValidationError("adam_step: parameter and gradient lengths differ");
  if (state.first_moment.size() != params.size()) {
    if (state.step_count != 0) throw ValidationError("adam_step: optimizer state does not match parameters");
    state.first_moment = Eigen::VectorXd::Zero(params.size());
    state.second_moment = Eigen::VectorXd::Zero(params.size());
  }
  for (Eigen::Index i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads(i))) {
      std::ostringstream os;
      os << "adam_step: non-finite gradient at coordinate " << i << " (" << grads(i) << ")";
      throw NumericalError(os.str());
    }
  }
  const double lr = schedule.at(state.step_count);
  ++state.step_count;
  state.learning_rate = lr;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads;
  state.second_moment = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads.cwiseAbs2();
  params.array() -= lr * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + state.epsilon);
}

Mlp he_init(const std::vector<Eigen::Index>& layer_sizes, std::uint64_t seed) {
  Mlp net(layer_sizes);
  Rng rng = make_stream(seed, "he_init");
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const double scale = std::sqrt(2.0 / static_cast<double>(layer_sizes[l]));
    net.weight(l) = scale * standard_normal(rng, layer_sizes[l + 1], layer_sizes[l]);
  }
  return net;
}

std::vector<Eigen::Index> default_hidden(Eigen::Index dim) {
  const Eigen::Index width = std::max<Eigen::Index>(100, 2 * dim);
  return {width, width, width};
}

std::vector<Eigen::Index> make_layers(Eigen::Index in, const std::vector<Eigen::Index>& hidden,
                                      Eigen::Index out) {
  std::vector<Eigen::Index> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

}  // namespace w2bary
