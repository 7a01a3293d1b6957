#include "repval/nn.hpp"

#include <bit>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "repval/errors.hpp"
#include "repval/rng.hpp"

namespace repval::nn {

Mlp::Mlp(std::vector<int> dims) : dims_(std::move(dims)) {
  if (dims_.size() < 2) throw ContractError("Mlp needs at least input and output dims");
  for (int d : dims_)
    if (d <= 0) throw ContractError("Mlp layer dims must be positive");
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    Layer layer;
    layer.in = dims_[l];
    layer.out = dims_[l + 1];
    layer.weights.assign(static_cast<std::size_t>(layer.in) * layer.out, 0.0);
    layer.bias.assign(layer.out, 0.0);
    layers_.push_back(std::move(layer));
  }
}

Mlp Mlp::init(std::vector<int> dims, std::uint64_t seed) {
  Mlp net(std::move(dims));
  Rng rng(seed);
  for (auto& layer : net.layers_) {
    const double b = 1.0 / std::sqrt(static_cast<double>(layer.in));
    for (auto& w : layer.weights) w = uniform(rng, -b, b);
    for (auto& v : layer.bias) v = uniform(rng, -b, b);
  }
  return net;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
  return n;
}

Vec Mlp::flat_parameters() const {
  Vec flat;
  flat.reserve(parameter_count());
  for (const auto& l : layers_) {
    flat.insert(flat.end(), l.weights.begin(), l.weights.end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  }
  return flat;
}

void Mlp::set_flat_parameters(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw ContractError("flat parameter count mismatch");
  std::size_t i = 0;
  for (auto& l : layers_) {
    for (auto& w : l.weights) w = flat[i++];
    for (auto& b : l.bias) b = flat[i++];
  }
}

// ---------------------------------------------------------------------------

namespace {

void check_input(const Mlp& net, std::size_t n) {
  if (net.dims().empty()) throw ContractError("forward on an empty Mlp");
  if (n != static_cast<std::size_t>(net.input_size()))
    throw ContractError("Mlp input length " + std::to_string(n) + " != " +
                        std::to_string(net.input_size()));
}

// Inputs are often sparse (local views), so accumulate row-by-row and skip zeros.
void affine(const Layer& l, const double* x, double* y) {
  for (int o = 0; o < l.out; ++o) y[o] = l.bias[o];
  for (int i = 0; i < l.in; ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    const double* row = l.weights.data() + static_cast<std::size_t>(i) * l.out;
    for (int o = 0; o < l.out; ++o) y[o] += xi * row[o];
  }
}

}  // namespace

Vec forward(const Mlp& net, std::span<const double> input, ForwardCache& cache) {
  check_input(net, input.size());
  const auto& layers = net.layers();
  cache.activations.resize(layers.size() + 1);
  cache.activations[0].assign(input.begin(), input.end());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& y = cache.activations[l + 1];
    y.resize(layers[l].out);
    affine(layers[l], cache.activations[l].data(), y.data());
    if (l + 1 < layers.size())
      for (auto& v : y) v = v > 0.0 ? v : 0.0;
  }
  return cache.activations.back();
}

Vec forward(const Mlp& net, std::span<const double> input) {
  check_input(net, input.size());
  Vec x(input.begin(), input.end());
  Vec y;
  const auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    y.resize(layers[l].out);
    affine(layers[l], x.data(), y.data());
    if (l + 1 < layers.size())
      for (auto& v : y) v = v > 0.0 ? v : 0.0;
    std::swap(x, y);
  }
  return x;
}

Vec backward_accumulate(const Mlp& net, const ForwardCache& cache,
                        std::span<const double> upstream, Gradients& acc,
                        bool want_input_grad) {
  const auto& layers = net.layers();
  if (cache.activations.size() != layers.size() + 1)
    throw ContractError("backward: forward cache does not match the network");
  if (upstream.size() != static_cast<std::size_t>(net.output_size()))
    throw ContractError("backward: upstream length " + std::to_string(upstream.size()) +
                        " != output size " + std::to_string(net.output_size()));
  if (!acc.congruent(net)) throw ContractError("backward: gradient accumulator shape mismatch");

  Vec delta(upstream.begin(), upstream.end());
  Vec prev;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& layer = layers[l];
    auto& g = acc.layers[l];
    const auto& x = cache.activations[l];
    for (int o = 0; o < layer.out; ++o) g.bias[o] += delta[o];
    const bool need_prev = l > 0 || want_input_grad;
    prev.assign(need_prev ? layer.in : 0, 0.0);
    for (int i = 0; i < layer.in; ++i) {
      const double xi = x[i];
      const auto off = static_cast<std::size_t>(i) * layer.out;
      if (xi != 0.0) {
        double* grow = g.weights.data() + off;
        for (int o = 0; o < layer.out; ++o) grow[o] += xi * delta[o];
      }
      // Hidden activations are post-ReLU: zero means the unit was inactive.
      if (l > 0 ? xi > 0.0 : want_input_grad) {
        const double* wrow = layer.weights.data() + off;
        double s = 0.0;
        for (int o = 0; o < layer.out; ++o) s += wrow[o] * delta[o];
        prev[i] = s;
      }
    }
    std::swap(delta, prev);
  }
  return delta;
}

Gradients backward(const Mlp& net, std::span<const double> input, std::span<const double> upstream) {
  ForwardCache cache;
  forward(net, input, cache);
  auto g = Gradients::zeros_like(net);
  g.input = backward_accumulate(net, cache, upstream, g);
  return g;
}

// ---------------------------------------------------------------------------

Gradients Gradients::zeros_like(const Mlp& net) {
  Gradients g;
  for (const auto& l : net.layers()) {
    Layer z;
    z.in = l.in;
    z.out = l.out;
    z.weights.assign(l.weights.size(), 0.0);
    z.bias.assign(l.bias.size(), 0.0);
    g.layers.push_back(std::move(z));
  }
  g.input.assign(net.input_size(), 0.0);
  return g;
}

bool Gradients::congruent(const Mlp& net) const {
  if (layers.size() != net.layers().size()) return false;
  for (std::size_t l = 0; l < layers.size(); ++l)
    if (layers[l].in != net.layers()[l].in || layers[l].out != net.layers()[l].out) return false;
  return true;
}

Vec Gradients::flat() const {
  Vec out;
  for (const auto& l : layers) {
    out.insert(out.end(), l.weights.begin(), l.weights.end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

void Gradients::add(const Gradients& other) {
  if (other.layers.size() != layers.size()) throw ContractError("gradient shape mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& a = layers[l];
    const auto& b = other.layers[l];
    if (a.weights.size() != b.weights.size()) throw ContractError("gradient shape mismatch");
    for (std::size_t i = 0; i < a.weights.size(); ++i) a.weights[i] += b.weights[i];
    for (std::size_t i = 0; i < a.bias.size(); ++i) a.bias[i] += b.bias[i];
  }
  if (input.size() == other.input.size())
    for (std::size_t i = 0; i < input.size(); ++i) input[i] += other.input[i];
}

void Gradients::scale(double s) {
  for (auto& l : layers) {
    for (auto& w : l.weights) w *= s;
    for (auto& b : l.bias) b *= s;
  }
  for (auto& v : input) v *= s;
}

namespace {

void check_step(const Mlp& net, const Gradients& grads, double lr, const char* op) {
  if (!grads.congruent(net)) throw ContractError(std::string(op) + ": gradient shape mismatch");
  if (!(lr >= 0.0)) throw ContractError(std::string(op) + ": learning rate must be >= 0");
  for (std::size_t l = 0; l < grads.layers.size(); ++l) {
    const auto& g = grads.layers[l];
    for (std::size_t i = 0; i < g.weights.size(); ++i)
      if (!std::isfinite(g.weights[i]))
        throw NumericError("non-finite gradient in layer " + std::to_string(l) + " weight " +
                           std::to_string(i) + ": " + std::to_string(g.weights[i]));
    for (std::size_t i = 0; i < g.bias.size(); ++i)
      if (!std::isfinite(g.bias[i]))
        throw NumericError("non-finite gradient in layer " + std::to_string(l) + " bias " +
                           std::to_string(i) + ": " + std::to_string(g.bias[i]));
  }
}

}  // namespace

void sgd_step(Mlp& net, const Gradients& grads, double lr) {
  check_step(net, grads, lr, "sgd_step");
  for (std::size_t l = 0; l < grads.layers.size(); ++l) {
    auto& p = net.layers()[l];
    const auto& g = grads.layers[l];
    for (std::size_t i = 0; i < p.weights.size(); ++i) p.weights[i] -= lr * g.weights[i];
    for (std::size_t i = 0; i < p.bias.size(); ++i) p.bias[i] -= lr * g.bias[i];
  }
}

void Adam::step(std::span<double> params, std::span<const double> grads, double lr) {
  if (params.size() != grads.size()) throw ContractError("adam: gradient length mismatch");
  if (!(lr >= 0.0)) throw ContractError("adam: learning rate must be >= 0");
  if (t_ == 0) {
    m_.assign(params.size(), 0.0);
    v_.assign(params.size(), 0.0);
  } else if (m_.size() != params.size()) {
    throw ContractError("adam: parameter count changed between steps");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1 * m_[i] + (1.0 - beta1) * grads[i];
    v_[i] = beta2 * v_[i] + (1.0 - beta2) * grads[i] * grads[i];
    params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
  }
}

void adam_step(Mlp& net, const Gradients& grads, Adam& state, double lr) {
  check_step(net, grads, lr, "adam_step");
  auto p = net.flat_parameters();
  state.step(p, grads.flat(), lr);
  net.set_flat_parameters(p);
}

void soft_update(Mlp& target, const Mlp& online, double tau) {
  if (!target.congruent(online)) throw ContractError("soft_update: shape mismatch");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ContractError("soft_update: tau must be in [0, 1]");
  for (std::size_t l = 0; l < target.layers().size(); ++l) {
    auto& t = target.layers()[l];
    const auto& o = online.layers()[l];
    for (std::size_t i = 0; i < t.weights.size(); ++i)
      t.weights[i] = (1.0 - tau) * t.weights[i] + tau * o.weights[i];
    for (std::size_t i = 0; i < t.bias.size(); ++i)
      t.bias[i] = (1.0 - tau) * t.bias[i] + tau * o.bias[i];
  }
}

// ---------------------------------------------------------------------------

void write_checkpoint(std::ostream& os, const Mlp& net) {
  os << "MLPCKPT v1 ";
  for (std::size_t i = 0; i < net.dims().size(); ++i) os << (i ? "," : "") << net.dims()[i];
  os << '\n';
  for (double v : net.flat_parameters()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    os.write(bytes, 8);
  }
  if (!os) throw CheckpointError("failed writing MLP checkpoint");
}

Mlp read_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw CheckpointError("MLP checkpoint: missing header");
  std::istringstream header(line);
  std::string magic, version, dims_text;
  header >> magic >> version >> dims_text;
  if (magic != "MLPCKPT" || version != "v1")
    throw CheckpointError("MLP checkpoint: bad header '" + line + "'");
  std::vector<int> dims;
  std::istringstream ds(dims_text);
  for (std::string tok; std::getline(ds, tok, ',');) {
    try {
      dims.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw CheckpointError("MLP checkpoint: bad dims '" + dims_text + "'");
    }
  }
  Mlp net;
  try {
    net = Mlp(dims);
  } catch (const ContractError& e) {
    throw CheckpointError(std::string("MLP checkpoint: ") + e.what());
  }
  Vec flat(net.parameter_count());
  for (auto& v : flat) {
    unsigned char bytes[8];
    if (!is.read(reinterpret_cast<char*>(bytes), 8))
      throw CheckpointError("MLP checkpoint: truncated parameter block");
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    v = std::bit_cast<double>(bits);
  }
  net.set_flat_parameters(flat);
  return net;
}

}  // namespace repval::nn
