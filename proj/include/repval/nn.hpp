#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace repval::nn {

using Vec = std::vector<double>;

struct Layer {
  int in = 0;
  int out = 0;
  Vec weights;  // in x out, row-major: row i holds the fan-out of input unit i
  Vec bias;     // out
};

/// Fully connected net: ReLU on hidden layers, identity on the output.
class Mlp {
 public:
  Mlp() = default;
  /// Zero-initialised parameters.
  explicit Mlp(std::vector<int> dims);
  /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases.
  static Mlp init(std::vector<int> dims, std::uint64_t seed);

  const std::vector<int>& dims() const { return dims_; }
  int input_size() const { return dims_.front(); }
  int output_size() const { return dims_.back(); }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t parameter_count() const;

  /// Flat layer-major view: weights then bias per layer.
  Vec flat_parameters() const;
  void set_flat_parameters(std::span<const double> flat);

  bool congruent(const Mlp& other) const { return dims_ == other.dims_; }

 private:
  std::vector<int> dims_;
  std::vector<Layer> layers_;
};

/// Activations kept for the backward pass. activations[0] is the input,
/// activations[L] is the output.
struct ForwardCache {
  std::vector<Vec> activations;
};

struct Gradients {
  std::vector<Layer> layers;  // same shapes as the owning Mlp
  Vec input;                  // d(out . upstream)/d(input)

  static Gradients zeros_like(const Mlp& net);
  /// Layer-major, weights then bias, matching Mlp::flat_parameters.
  Vec flat() const;
  void add(const Gradients& other);
  void scale(double s);
  bool congruent(const Mlp& net) const;
};

/// Throws ContractError on a dimension mismatch.
Vec forward(const Mlp& net, std::span<const double> input);
Vec forward(const Mlp& net, std::span<const double> input, ForwardCache& cache);

/// Gradients of output . upstream with respect to parameters and input.
Gradients backward(const Mlp& net, std::span<const double> input, std::span<const double> upstream);

/// Same, reusing a forward cache and accumulating parameter gradients into
/// `acc`. Returns the input gradient (empty when `want_input_grad` is false).
Vec backward_accumulate(const Mlp& net, const ForwardCache& cache,
                        std::span<const double> upstream, Gradients& acc,
                        bool want_input_grad = true);

/// p <- p - lr * g. Throws NumericError (naming layer and index) on
/// non-finite gradients, ContractError on shape mismatch or lr < 0.
void sgd_step(Mlp& net, const Gradients& grads, double lr);

/// Adam moments for one flat parameter vector. Sized on the first step.
class Adam {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  /// p <- p - lr * m_hat / (sqrt(v_hat) + eps). Throws ContractError if the
  /// parameter count changes between steps or lr < 0.
  void step(std::span<double> params, std::span<const double> grads, double lr);
  long steps() const { return t_; }

 private:
  Vec m_;
  Vec v_;
  long t_ = 0;
};

/// Adam update of every parameter of `net`; same errors as sgd_step.
void adam_step(Mlp& net, const Gradients& grads, Adam& state, double lr);

/// t <- (1 - tau) t + tau o.
void soft_update(Mlp& target, const Mlp& online, double tau);

// MLPCKPT v1: text header "MLPCKPT v1 <d0,d1,...>\n" followed by the flat
// parameters as little-endian IEEE-754 doubles.
void write_checkpoint(std::ostream& os, const Mlp& net);
Mlp read_checkpoint(std::istream& is);

}  // namespace repval::nn
