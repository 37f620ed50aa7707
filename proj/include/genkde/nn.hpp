#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "genkde/density.hpp"

namespace genkde {

enum class Activation { identity, relu, tanh, sigmoid };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "sigmoid") return Activation::sigmoid;
  throw InvalidArgument("unknown activation '" + s + "'");
}

inline void apply_activation(Activation a, Matrix& x) {
  switch (a) {
    case Activation::identity: break;
    case Activation::relu: x = x.cwiseMax(0.0); break;
    case Activation::tanh: x = x.array().tanh(); break;
    case Activation::sigmoid: x = (1.0 + (-x.array()).exp()).inverse(); break;
  }
}

/// Multiplies grad in place by the activation derivative, given the
/// pre-activation and the activation output.
inline void activation_backward(Activation a, const Matrix& pre, const Matrix& out, Matrix& grad) {
  switch (a) {
    case Activation::identity: break;
    case Activation::relu: grad = grad.array() * (pre.array() > 0.0).cast<double>(); break;
    case Activation::tanh: grad = grad.array() * (1.0 - out.array().square()); break;
    case Activation::sigmoid: grad = grad.array() * out.array() * (1.0 - out.array()); break;
  }
}

/// Fully connected layer y = act(x W + b); rows of x are samples.
struct Layer {
  Eigen::MatrixXd weight;  // in x out
  Eigen::RowVectorXd bias;  // out
  Activation activation = Activation::identity;
};

struct LayerGrad {
  Eigen::MatrixXd weight;
  Eigen::RowVectorXd bias;
};

using Gradients = std::vector<LayerGrad>;

class Mlp;

/// Activations recorded by forward(); only valid for the parameter version
/// of the network that produced it.
struct ForwardCache {
  const Mlp* net = nullptr;
  std::uint64_t version = 0;
  std::vector<Matrix> inputs;  // inputs[k] feeds layer k; inputs.back() is the output
  std::vector<Matrix> pre;     // pre-activations of each layer
};

struct BackwardResult {
  Gradients params;
  Matrix input_grad;
};

class Mlp {
 public:
  Mlp() = default;

  explicit Mlp(std::vector<Layer> layers) : layers_(std::move(layers)) {
    require(!layers_.empty(), "Mlp: need at least one layer");
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const auto& L = layers_[k];
      require(L.bias.size() == L.weight.cols(), "Mlp: bias length does not match layer width");
      if (k > 0) require(layers_[k - 1].weight.cols() == L.weight.rows(), "Mlp: layer shapes do not chain");
    }
  }

  /// Layer widths {in, h1, ..., out}; one activation per layer.
  /// Weights are uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
  static Mlp random(const std::vector<std::size_t>& widths, const std::vector<Activation>& acts, Rng& rng) {
    require(widths.size() >= 2 && acts.size() == widths.size() - 1, "Mlp::random: widths/activations mismatch");
    std::vector<Layer> layers;
    for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
      const auto in = static_cast<Eigen::Index>(widths[k]), out = static_cast<Eigen::Index>(widths[k + 1]);
      require(in > 0 && out > 0, "Mlp::random: widths must be positive");
      const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
      std::uniform_real_distribution<double> u(-limit, limit);
      Layer L{Eigen::MatrixXd(in, out), Eigen::RowVectorXd::Zero(out), acts[k]};
      for (Eigen::Index c = 0; c < out; ++c)
        for (Eigen::Index r = 0; r < in; ++r) L.weight(r, c) = u(rng);
      layers.push_back(std::move(L));
    }
    return Mlp(std::move(layers));
  }

  std::size_t input_dim() const { return static_cast<std::size_t>(layers_.front().weight.rows()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(layers_.back().weight.cols()); }
  std::size_t depth() const { return layers_.size(); }
  const std::vector<Layer>& layers() const { return layers_; }
  std::uint64_t version() const { return version_; }

  /// Mutable access for optimizers and tests; invalidates existing caches.
  std::vector<Layer>& mutable_layers() {
    ++version_;
    return layers_;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& L : layers_) n += static_cast<std::size_t>(L.weight.size() + L.bias.size());
    return n;
  }

  Matrix forward(const Matrix& batch, ForwardCache* cache = nullptr) const {
    if (static_cast<std::size_t>(batch.cols()) != input_dim())
      throw InvalidArgument("Mlp::forward: batch has " + std::to_string(batch.cols()) + " columns, expected " +
                            std::to_string(input_dim()));
    if (cache) {
      cache->net = this;
      cache->version = version_;
      cache->inputs.assign(1, batch);
      cache->pre.clear();
    }
    Matrix x = batch;
    for (const auto& L : layers_) {
      Matrix a = x * L.weight;
      a.rowwise() += L.bias;
      if (cache) cache->pre.push_back(a);
      apply_activation(L.activation, a);
      x = std::move(a);
      if (cache) cache->inputs.push_back(x);
    }
    return x;
  }

  BackwardResult backward(const ForwardCache& cache, const Matrix& output_grad) const {
    if (cache.net != this || cache.version != version_ || cache.pre.size() != layers_.size())
      throw InvalidArgument("Mlp::backward: stale or foreign forward cache");
    const Matrix& out = cache.inputs.back();
    if (output_grad.rows() != out.rows() || output_grad.cols() != out.cols())
      throw InvalidArgument("Mlp::backward: output gradient shape mismatch");
    BackwardResult r;
    r.params.resize(layers_.size());
    Matrix g = output_grad;
    for (std::size_t k = layers_.size(); k-- > 0;) {
      const auto& L = layers_[k];
      activation_backward(L.activation, cache.pre[k], cache.inputs[k + 1], g);
      r.params[k].weight = cache.inputs[k].transpose() * g;
      r.params[k].bias = g.colwise().sum();
      g = g * L.weight.transpose();
    }
    r.input_grad = std::move(g);
    return r;
  }

 private:
  std::vector<Layer> layers_;
  std::uint64_t version_ = 0;
};

inline Gradients zero_gradients(const Mlp& net) {
  Gradients g;
  for (const auto& L : net.layers())
    g.push_back({Eigen::MatrixXd::Zero(L.weight.rows(), L.weight.cols()), Eigen::RowVectorXd::Zero(L.bias.size())});
  return g;
}

inline double squared_norm(const Gradients& g) {
  double s = 0.0;
  for (const auto& L : g) s += L.weight.squaredNorm() + L.bias.squaredNorm();
  return s;
}

inline void scale(Gradients& g, double c) {
  for (auto& L : g) {
    L.weight *= c;
    L.bias *= c;
  }
}

/// Rescales all gradient sets together so their joint L2 norm is at most
/// max_norm. Returns the norm before clipping.
inline double clip_global_norm(std::vector<Gradients*> grads, double max_norm) {
  double s = 0.0;
  for (const auto* g : grads) s += squared_norm(*g);
  const double norm = std::sqrt(s);
  if (norm > max_norm)
    for (auto* g : grads) scale(*g, max_norm / norm);
  return norm;
}

struct AdamSettings {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamSettings settings;
  std::uint64_t step = 0;
  Gradients first;
  Gradients second;

  AdamState() = default;
  AdamState(const Mlp& net, AdamSettings s) : settings(s), first(zero_gradients(net)), second(zero_gradients(net)) {
    require(s.learning_rate > 0.0, "Adam: learning rate must be positive");
    require(s.beta1 > 0.0 && s.beta1 < 1.0 && s.beta2 > 0.0 && s.beta2 < 1.0, "Adam: betas must lie in (0, 1)");
    require(s.epsilon > 0.0, "Adam: epsilon must be positive");
  }
};

/// One bias-corrected Adam update of net in place.
inline void adam_step(Mlp& net, const Gradients& grads, AdamState& state) {
  require(grads.size() == net.depth() && state.first.size() == net.depth(), "Adam: shape mismatch");
  for (std::size_t k = 0; k < grads.size(); ++k) {
    const auto& L = net.layers()[k];
    require(grads[k].weight.rows() == L.weight.rows() && grads[k].weight.cols() == L.weight.cols() &&
                grads[k].bias.size() == L.bias.size(),
            "Adam: gradient shape mismatch");
    if (!grads[k].weight.allFinite() || !grads[k].bias.allFinite())
      throw NumericError("Adam: non-finite gradient in layer " + std::to_string(k));
  }
  const auto& s = state.settings;
  ++state.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(state.step));
  auto& layers = net.mutable_layers();
  auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
    m = s.beta1 * m + (1.0 - s.beta1) * g;
    v = s.beta2 * v + (1.0 - s.beta2) * g.cwiseProduct(g);
    param.array() -= s.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + s.epsilon);
  };
  for (std::size_t k = 0; k < layers.size(); ++k) {
    update(layers[k].weight, grads[k].weight, state.first[k].weight, state.second[k].weight);
    update(layers[k].bias, grads[k].bias, state.first[k].bias, state.second[k].bias);
  }
}

/// Encoder E: R^d -> R^l and decoder D: R^l -> R^d.
struct Autoencoder {
  Mlp encoder;
  Mlp decoder;

  std::size_t data_dim() const { return encoder.input_dim(); }
  std::size_t latent_dim() const { return encoder.output_dim(); }

  Matrix encode(const Matrix& x) const { return encoder.forward(x); }
  Matrix decode(const Matrix& z) const { return decoder.forward(z); }
  Matrix reconstruct(const Matrix& x) const { return decode(encode(x)); }
};

struct Architecture {
  std::vector<std::size_t> hidden{128, 64};
  Activation hidden_activation = Activation::tanh;
  Activation output_activation = Activation::sigmoid;  // decoder output
};

/// Encoder d -> hidden... -> l (identity output); decoder mirrors it.
inline Autoencoder make_autoencoder(std::size_t data_dim, std::size_t latent_dim, const Architecture& arch, Rng& rng) {
  std::vector<std::size_t> enc{data_dim};
  enc.insert(enc.end(), arch.hidden.begin(), arch.hidden.end());
  enc.push_back(latent_dim);
  std::vector<Activation> enc_act(arch.hidden.size(), arch.hidden_activation);
  enc_act.push_back(Activation::identity);
  std::vector<std::size_t> dec(enc.rbegin(), enc.rend());
  std::vector<Activation> dec_act(arch.hidden.size(), arch.hidden_activation);
  dec_act.push_back(arch.output_activation);
  Mlp e = Mlp::random(enc, enc_act, rng);
  Mlp d = Mlp::random(dec, dec_act, rng);
  return {std::move(e), std::move(d)};
}

}  // namespace genkde
