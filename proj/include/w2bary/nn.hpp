#pragma once

// Fully-connected ReLU networks with hand-written reverse mode and Adam.
//
// Batches are B x in matrices, one sample per row. All parameters of a
// network live in one contiguous vector laid out layer by layer as
// [W_0 (row-major, out x in), b_0, W_1, b_1, ...]; the checkpoint format and
// the optimizer both work on that vector directly.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace w2bary {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Mlp {
 public:
  Mlp() = default;
  /// All-zero network with the given layer sizes (input, hidden..., output).
  explicit Mlp(std::vector<Eigen::Index> layer_sizes);

  const std::vector<Eigen::Index>& layer_sizes() const { return sizes_; }
  Eigen::Index input_dim() const { return sizes_.front(); }
  Eigen::Index output_dim() const { return sizes_.back(); }
  /// Number of affine maps.
  std::size_t num_layers() const { return sizes_.size() - 1; }
  Eigen::Index parameter_count() const { return params_.size(); }

  Eigen::VectorXd& parameters() { return params_; }
  const Eigen::VectorXd& parameters() const { return params_; }

  Eigen::Map<RowMajorMatrix> weight(std::size_t layer);
  Eigen::Map<const RowMajorMatrix> weight(std::size_t layer) const;
  Eigen::Map<Eigen::VectorXd> bias(std::size_t layer);
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t layer) const;

  Eigen::MatrixXd operator()(const Eigen::MatrixXd& batch) const;

  friend bool operator==(const Mlp& a, const Mlp& b) {
    return a.sizes_ == b.sizes_ && a.params_ == b.params_;
  }

 private:
  std::vector<Eigen::Index> sizes_;
  std::vector<Eigen::Index> offsets_;  // start of W_l in params_
  Eigen::VectorXd params_;
};

/// Parameter count for a layer-size list: sum over layers of (fan_in + 1) * fan_out.
Eigen::Index parameter_count(const std::vector<Eigen::Index>& layer_sizes);

/// Activations kept from a forward pass; inputs[l] is the input of layer l.
struct ForwardTape {
  std::vector<Eigen::MatrixXd> inputs;
};

Eigen::MatrixXd forward(const Mlp& net, const Eigen::MatrixXd& batch);
Eigen::MatrixXd forward(const Mlp& net, const Eigen::MatrixXd& batch, ForwardTape& tape);

struct Gradients {
  Eigen::VectorXd params;  // empty if not requested
  Eigen::MatrixXd input;   // empty if not requested
};

enum class GradientParts { kBoth, kParameters, kInput };

/// Reverse-mode gradients of sum_rows <upstream_row, forward_row> for the
/// forward pass recorded in `tape`.
Gradients backward(const Mlp& net, const ForwardTape& tape, const Eigen::MatrixXd& upstream,
                   GradientParts parts = GradientParts::kBoth);

/// Convenience: forward + backward on the same batch.
Gradients backward(const Mlp& net, const Eigen::MatrixXd& batch, const Eigen::MatrixXd& upstream,
                   GradientParts parts = GradientParts::kBoth);

/// Step-decayed learning rate: initial_lr * decay_factor^floor(step / decay_every).
struct LrSchedule {
  double initial_lr = 1e-3;
  std::int64_t decay_every = 10000;
  double decay_factor = 0.5;

  double at(std::int64_t step) const;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  std::int64_t step_count = 0;
  double learning_rate = 0.0;  // rate used by the most recent step

  static AdamState zeros(Eigen::Index n);
  void reset();
};

/// Bias-corrected Adam update in place. The learning rate for the k-th update
/// (k = step_count before the call) is schedule.at(k).
void adam_step(AdamState& state, Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grads,
               const LrSchedule& schedule);

/// He-normal weights (std sqrt(2 / fan_in)), zero biases; deterministic per seed.
Mlp he_init(const std::vector<Eigen::Index>& layer_sizes, std::uint64_t seed);

/// A network bundled with its optimizer; the unit the training loops mutate.
struct TrainableNet {
  Mlp net;
  AdamState opt;
  LrSchedule schedule;

  TrainableNet() = default;
  TrainableNet(Mlp n, LrSchedule s) : net(std::move(n)), opt(AdamState::zeros(net.parameter_count())), schedule(s) {}

  void step(const Eigen::VectorXd& grads) { adam_step(opt, net.parameters(), grads, schedule); }
};

/// Hidden stack used throughout: three layers of max(100, 2D) units.
std::vector<Eigen::Index> default_hidden(Eigen::Index dim);
std::vector<Eigen::Index> make_layers(Eigen::Index in, const std::vector<Eigen::Index>& hidden,
                                      Eigen::Index out);

// Checkpoints: one file per network.
//   line 1: "w2bary-mlp"
//   line 2: "version 1"
//   line 3: "activation relu"
//   line 4: "layers <n0> <n1> ... <nL>"
//   line 5: "parameters <count>"
// followed by `count` little-endian IEEE-754 doubles in the parameter layout
// described at the top of this file.
inline constexpr int kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const Mlp& net);
Mlp read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Mlp& net);
Mlp load_checkpoint(const std::string& path);

}  // namespace w2bary
