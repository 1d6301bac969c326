#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mpsguard/errors.hpp"
#include "mpsguard/rng.hpp"
#include "mpsguard/tensor.hpp"

namespace mpsguard {

enum class Activation { identity, relu, sigmoid };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity:
    default: return "identity";
  }
}

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "identity") return Activation::identity;
  throw Error("unknown activation '" + s + "'");
}

inline double activate(Activation a, double y) {
  switch (a) {
    case Activation::relu: return y > 0.0 ? y : 0.0;
    case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-y));
    case Activation::identity:
    default: return y;
  }
}

// relu'(0) is taken as 0.
inline double activate_derivative(Activation a, double y) {
  switch (a) {
    case Activation::relu: return y > 0.0 ? 1.0 : 0.0;
    case Activation::sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-y));
      return s * (1.0 - s);
    }
    case Activation::identity:
    default: return 1.0;
  }
}

/// One affine map y = W z + b followed by an elementwise activation. W is (out, in).
struct Layer {
  Tensor weights;
  Tensor bias;
  Activation activation = Activation::identity;
};

struct Mlp {
  std::vector<Layer> layers;

  std::size_t input_dim() const { return layers.front().weights.dim(1); }
  std::size_t output_dim() const { return layers.back().weights.dim(0); }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
  }

  void validate() const {
    if (layers.empty()) throw ShapeError("mlp: no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (l.weights.rank() != 2 || l.bias.rank() != 1 || l.bias.dim(0) != l.weights.dim(0))
        throw ShapeError("mlp: layer " + std::to_string(i) + " has inconsistent weight/bias shapes");
      if (i > 0 && l.weights.dim(1) != layers[i - 1].weights.dim(0))
        throw ShapeError("mlp: layer " + std::to_string(i) + " input does not match previous output");
    }
  }
};

/// `dims` = (input, hidden..., output). Weights ~ N(0, 1/fan_in), biases zero.
inline Mlp init_mlp(std::span<const std::size_t> dims, std::uint64_t seed,
                    Activation hidden = Activation::relu, Activation output = Activation::identity) {
  if (dims.size() < 2) throw ShapeError("init_mlp: need input and output dimensions");
  Rng rng(seed);
  Mlp m;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(dims[i]));
    Layer l{random_tensor({dims[i + 1], dims[i]}, Gaussian{0.0, sd}, rng), Tensor({dims[i + 1]}),
            i + 2 == dims.size() ? output : hidden};
    m.layers.push_back(std::move(l));
  }
  return m;
}

inline Mlp init_mlp(std::initializer_list<std::size_t> dims, std::uint64_t seed) {
  return init_mlp(std::span<const std::size_t>(dims.begin(), dims.size()), seed);
}

inline std::uint64_t param_digest(const Mlp& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::span<const double> xs) {
    for (double x : xs) {
      std::uint64_t bits;
      std::memcpy(&bits, &x, sizeof bits);
      h = (h ^ bits) * 0x100000001b3ULL;
    }
  };
  for (const auto& l : m.layers) {
    mix(l.weights.data());
    mix(l.bias.data());
  }
  return h;
}

struct MlpCache {
  std::vector<std::vector<double>> inputs;  // z^(l-1) fed to each layer
  std::vector<std::vector<double>> pre;     // y^(l) before activation
  std::uint64_t digest = 0;
};

struct MlpGradients {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  std::vector<double> flat() const {
    std::vector<double> out;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      out.insert(out.end(), weights[i].data().begin(), weights[i].data().end());
      out.insert(out.end(), biases[i].data().begin(), biases[i].data().end());
    }
    return out;
  }
};

namespace detail {

inline std::vector<double> mlp_forward_unchecked(const Mlp& m, std::span<const double> x, MlpCache& cache) {
  cache.inputs.resize(m.layers.size());
  cache.pre.resize(m.layers.size());
  std::vector<double> z(x.begin(), x.end());
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    const auto& l = m.layers[li];
    const std::size_t out = l.weights.dim(0), in = l.weights.dim(1);
    auto w = l.weights.data();
    std::vector<double> y(out);
    for (std::size_t o = 0; o < out; ++o) {
      double acc = l.bias.data()[o];
      const double* row = &w[o * in];
      for (std::size_t i = 0; i < in; ++i) acc += row[i] * z[i];
      y[o] = acc;
    }
    cache.inputs[li] = std::move(z);
    z.resize(out);
    for (std::size_t o = 0; o < out; ++o) z[o] = activate(l.activation, y[o]);
    cache.pre[li] = std::move(y);
  }
  return z;
}

/// Adds d(loss)/d(params) into `grads`, which must be parameter-shaped.
inline void mlp_backward_accumulate(const Mlp& m, const MlpCache& cache, std::span<const double> loss_grad,
                                    MlpGradients& grads) {
  std::vector<double> delta(loss_grad.begin(), loss_grad.end());
  for (std::size_t li = m.layers.size(); li-- > 0;) {
    const auto& l = m.layers[li];
    const std::size_t out = l.weights.dim(0), in = l.weights.dim(1);
    for (std::size_t o = 0; o < out; ++o) delta[o] *= activate_derivative(l.activation, cache.pre[li][o]);
    auto gw = grads.weights[li].data();
    auto gb = grads.biases[li].data();
    const auto& z = cache.inputs[li];
    for (std::size_t o = 0; o < out; ++o) {
      gb[o] += delta[o];
      double* row = &gw[o * in];
      for (std::size_t i = 0; i < in; ++i) row[i] += delta[o] * z[i];
    }
    if (li == 0) break;
    std::vector<double> prev(in, 0.0);
    auto w = l.weights.data();
    for (std::size_t o = 0; o < out; ++o) {
      const double* row = &w[o * in];
      for (std::size_t i = 0; i < in; ++i) prev[i] += row[i] * delta[o];
    }
    delta = std::move(prev);
  }
}

inline MlpGradients zero_gradients(const Mlp& m) {
  MlpGradients g;
  for (const auto& l : m.layers) {
    g.weights.emplace_back(l.weights.shape());
    g.biases.emplace_back(l.bias.shape());
  }
  return g;
}

}  // namespace detail

struct MlpForward {
  std::vector<double> logits;
  MlpCache cache;
};

inline MlpForward mlp_forward(const Mlp& m, std::span<const double> x) {
  if (x.size() != m.input_dim())
    throw ShapeError("mlp_forward: input has " + std::to_string(x.size()) + " entries, expected " +
                     std::to_string(m.input_dim()));
  MlpForward f;
  f.logits = detail::mlp_forward_unchecked(m, x, f.cache);
  f.cache.digest = param_digest(m);
  return f;
}

/// Reverse-mode gradients of a scalar loss whose gradient wrt the logits is `loss_grad`.
inline MlpGradients mlp_backward(const Mlp& m, const MlpCache& cache, std::span<const double> loss_grad) {
  if (cache.inputs.size() != m.layers.size() || cache.digest != param_digest(m))
    throw StaleCacheError("mlp_backward: cache was produced by different parameters");
  if (loss_grad.size() != m.output_dim()) throw ShapeError("mlp_backward: loss gradient has wrong length");
  MlpGradients g = detail::zero_gradients(m);
  detail::mlp_backward_accumulate(m, cache, loss_grad, g);
  return g;
}

/// Layer-major, weights (row-major) before biases.
inline std::vector<double> flatten_params(const Mlp& m) {
  std::vector<double> out;
  out.reserve(m.param_count());
  for (const auto& l : m.layers) {
    out.insert(out.end(), l.weights.data().begin(), l.weights.data().end());
    out.insert(out.end(), l.bias.data().begin(), l.bias.data().end());
  }
  return out;
}

inline Mlp unflatten_params(const Mlp& like, std::span<const double> flat) {
  if (flat.size() != like.param_count())
    throw ShapeError("unflatten: expected " + std::to_string(like.param_count()) + " values");
  Mlp m = like;
  std::size_t off = 0;
  for (auto& l : m.layers)
    for (Tensor* t : {&l.weights, &l.bias}) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t->size(), t->data().begin());
      off += t->size();
    }
  return m;
}

// ---------------------------------------------------------------------------
// Toy model: f(x) = phi(w_rel x_rel + w_irr x_irr + b)

struct ToyModel {
  double w_rel = 0.0;
  double w_irr = 0.0;
  double bias = 0.0;
  Activation activation = Activation::sigmoid;
};

struct ToyGradients {
  double w_rel = 0.0;
  double w_irr = 0.0;
  double bias = 0.0;
};

inline double toy_preactivation(const ToyModel& m, double x_rel, double x_irr) {
  return m.w_rel * x_rel + m.w_irr * x_irr + m.bias;
}

inline double toy_forward(const ToyModel& m, double x_rel, double x_irr) {
  return activate(m.activation, toy_preactivation(m, x_rel, x_irr));
}

/// Chain rule through phi: every parameter gradient is (its input) * phi' * dL/dphi,
/// and the bias input is 1, so d/dw_irr = x_irr * d/db holds by construction.
inline ToyGradients toy_backward(const ToyModel& m, double x_rel, double x_irr, double dloss_doutput) {
  const double delta = activate_derivative(m.activation, toy_preactivation(m, x_rel, x_irr)) * dloss_doutput;
  return {x_rel * delta, x_irr * delta, delta};
}

struct ToyLoss {
  double loss = 0.0;
  ToyGradients grads;
};

/// Binary cross-entropy of a sigmoid toy model, evaluated from the pre-activation for stability.
inline ToyLoss toy_loss(const ToyModel& m, double x_rel, double x_irr, int label) {
  if (m.activation != Activation::sigmoid) throw Error("toy_loss: expects a sigmoid output");
  const double y = toy_preactivation(m, x_rel, x_irr);
  const double t = label ? 1.0 : 0.0;
  // log(1 + e^y) - t*y, written to avoid overflow
  const double loss = std::max(y, 0.0) + std::log1p(std::exp(-std::abs(y))) - t * y;
  const double delta = 1.0 / (1.0 + std::exp(-y)) - t;
  return {loss, {x_rel * delta, x_irr * delta, delta}};
}

inline std::vector<double> flatten_params(const ToyModel& m) { return {m.w_rel, m.w_irr, m.bias}; }

inline ToyModel init_toy(std::uint64_t seed) {
  Rng rng(seed);
  // fan_in = 2; the bias is drawn from the same law so untrained models form a 2-D cloud
  std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(2.0));
  ToyModel m;
  m.w_rel = nd(rng);
  m.w_irr = nd(rng);
  m.bias = nd(rng);
  return m;
}

// File layout: "mlp L", then per layer the activation name and two tensor records (W, b).

inline void write_model(std::ostream& os, const Mlp& m) {
  os << "mlp " << m.layers.size() << '\n';
  for (const auto& l : m.layers) {
    os << activation_name(l.activation) << '\n';
    write_tensor(os, l.weights);
    write_tensor(os, l.bias);
  }
}

inline Mlp read_mlp_body(std::istream& is) {
  std::size_t n = 0;
  if (!(is >> n)) throw Error("read_model: truncated mlp header");
  Mlp m;
  for (std::size_t i = 0; i < n; ++i) {
    std::string act;
    if (!(is >> act)) throw Error("read_model: missing activation");
    Layer l;
    l.activation = parse_activation(act);
    l.weights = read_tensor(is);
    l.bias = read_tensor(is);
    m.layers.push_back(std::move(l));
  }
  m.validate();
  return m;
}

inline Mlp read_mlp(std::istream& is) {
  std::string tag;
  if (!(is >> tag) || tag != "mlp") throw Error("read_model: expected 'mlp' header");
  return read_mlp_body(is);
}

}  // namespace mpsguard
