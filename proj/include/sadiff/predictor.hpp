#pragma once

#include <cmath>
#include <concepts>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sadiff/common.hpp"

namespace sadiff {

/// Anything that maps (x_t, t) to a noise estimate of the same shape.
template <class P>
concept NoisePredictor = requires(const P& p, const Batch& x, int t) {
  { p.predict(x, t) } -> std::convertible_to<Batch>;
};

/// A noise predictor that can also produce parameter gradients of <output, output_grad>.
/// `run` records whatever the backward pass needs; `accumulate_gradients` adds into `acc`.
template <class P>
concept DifferentiablePredictor =
    NoisePredictor<P> &&
    requires(const P& p, const Batch& x, int t, const Batch& g, typename P::Gradients& acc,
             const typename P::Pass& pass) {
      { p.run(x, t) } -> std::same_as<typename P::Pass>;
      { pass.output } -> std::convertible_to<const Batch&>;
      { p.zero_gradients() } -> std::same_as<typename P::Gradients>;
      p.accumulate_gradients(pass, g, acc);
    };

/// Sinusoidal features of t: sin(t w_k) for the first half, cos(t w_k) for the second, with
/// frequencies w_k = 10000^(-k/half) spaced geometrically.
inline Vector embed_time(int t, int T, int dim) {
  if (dim <= 0 || dim % 2 != 0) {
    throw ConfigError("model.time_embed_dim: must be positive and even, got " + std::to_string(dim));
  }
  if (t < 1 || t > T) {
    throw std::invalid_argument("embed_time: timestep " + std::to_string(t) + " outside 1.." +
                                std::to_string(T));
  }
  const int half = dim / 2;
  Vector out(dim);
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / half);
    out[k] = std::sin(t * freq);
    out[k + half] = std::cos(t * freq);
  }
  return out;
}

enum class Activation { silu, tanh };

inline std::string to_string(Activation a) { return a == Activation::silu ? "silu" : "tanh"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "silu") return Activation::silu;
  if (s == "tanh") return Activation::tanh;
  throw ConfigError("model.activation: unknown activation '" + s + "' (expected silu|tanh)");
}

struct MlpConfig {
  int data_dim = 2;
  std::vector<int> hidden{128, 128, 128};
  int time_embed_dim = 16;
  int T = 100;
  Activation activation = Activation::silu;

  void validate() const {
    if (data_dim < 1) throw ConfigError("model.data_dim: must be >= 1");
    if (time_embed_dim <= 0 || time_embed_dim % 2 != 0) {
      throw ConfigError("model.time_embed_dim: must be positive and even");
    }
    if (T < 1) throw ConfigError("model.T: must be >= 1");
    for (int h : hidden) {
      if (h < 1) throw ConfigError("model.hidden: layer widths must be >= 1");
    }
  }
};

struct DenseLayer {
  Batch weight;  // out x in
  Vector bias;   // out
};

/// Layer weights of the noise predictor.
struct MlpParams {
  std::vector<DenseLayer> layers;
};

/// Same shapes as MlpParams.
struct MlpGradients {
  std::vector<DenseLayer> layers;
};

template <class Stack>
concept LayerStack = requires(Stack& s) {
  { s.layers } -> std::convertible_to<std::vector<DenseLayer>&>;
};

template <LayerStack S, class F>
void for_each_tensor(S& s, F&& f) {
  for (auto& l : s.layers) {
    f(std::span<double>(l.weight.data(), static_cast<std::size_t>(l.weight.size())));
    f(std::span<double>(l.bias.data(), static_cast<std::size_t>(l.bias.size())));
  }
}

template <LayerStack S, class F>
void for_each_tensor(const S& s, F&& f) {
  for (const auto& l : s.layers) {
    f(std::span<const double>(l.weight.data(), static_cast<std::size_t>(l.weight.size())));
    f(std::span<const double>(l.bias.data(), static_cast<std::size_t>(l.bias.size())));
  }
}

template <LayerStack A, LayerStack B>
bool same_shapes(const A& a, const B& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].weight.rows() != b.layers[i].weight.rows() ||
        a.layers[i].weight.cols() != b.layers[i].weight.cols() ||
        a.layers[i].bias.size() != b.layers[i].bias.size()) {
      return false;
    }
  }
  return true;
}

/// Calls f(dst_span, src_span) for matching tensors; throws on shape mismatch.
template <LayerStack A, LayerStack B, class F>
void zip_tensors(A& dst, const B& src, F&& f, const char* what) {
  if (!same_shapes(dst, src)) throw std::invalid_argument(std::string(what) + ": parameter shape mismatch");
  for (std::size_t i = 0; i < dst.layers.size(); ++i) {
    auto& d = dst.layers[i];
    const auto& s = src.layers[i];
    f(std::span<double>(d.weight.data(), static_cast<std::size_t>(d.weight.size())),
      std::span<const double>(s.weight.data(), static_cast<std::size_t>(s.weight.size())));
    f(std::span<double>(d.bias.data(), static_cast<std::size_t>(d.bias.size())),
      std::span<const double>(s.bias.data(), static_cast<std::size_t>(s.bias.size())));
  }
}

template <LayerStack S>
std::size_t parameter_count(const S& s) {
  std::size_t n = 0;
  for_each_tensor(s, [&](auto span) { n += span.size(); });
  return n;
}

template <LayerStack S>
bool all_finite(const S& s) {
  bool ok = true;
  for_each_tensor(s, [&](auto span) {
    for (double v : span) ok = ok && std::isfinite(v);
  });
  return ok;
}

/// Flat view of parameter k in declaration order (weights then bias, layer by layer).
template <LayerStack S>
double& parameter_at(S& s, std::size_t k) {
  for (auto& l : s.layers) {
    const auto nw = static_cast<std::size_t>(l.weight.size());
    if (k < nw) return l.weight.data()[k];
    k -= nw;
    const auto nb = static_cast<std::size_t>(l.bias.size());
    if (k < nb) return l.bias.data()[k];
    k -= nb;
  }
  throw std::out_of_range("parameter_at: index past end");
}

template <LayerStack S>
double parameter_at(const S& s, std::size_t k) {
  return parameter_at(const_cast<S&>(s), k);
}

template <LayerStack Dst, LayerStack Src>
Dst zeros_like(const Src& src) {
  Dst out;
  out.layers.reserve(src.layers.size());
  for (const auto& l : src.layers) {
    out.layers.push_back({Batch::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  }
  return out;
}

/// dst += scale * src
template <LayerStack A, LayerStack B>
void axpy(A& dst, double scale, const B& src) {
  zip_tensors(dst, src, [&](std::span<double> d, std::span<const double> s) {
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * s[i];
  }, "axpy");
}

/// Time-conditioned MLP noise predictor: [x_t, embed(t)] -> hidden... -> data_dim, with a
/// smooth activation between layers and a linear output layer. Gradients are written per layer.
class Mlp {
 public:
  using Gradients = MlpGradients;

  struct Pass {
    Batch output;
    std::vector<Batch> inputs;  // input to each layer
    std::vector<Batch> pre;     // pre-activation of each hidden layer
  };

  Mlp(MlpConfig config, MlpParams params) : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
    const auto expected = shapes(config_);
    if (params_.layers.size() != expected.size()) {
      throw std::invalid_argument("Mlp: expected " + std::to_string(expected.size()) + " layers, got " +
                                  std::to_string(params_.layers.size()));
    }
    for (std::size_t i = 0; i < expected.size(); ++i) {
      const auto& l = params_.layers[i];
      if (l.weight.rows() != expected[i].first || l.weight.cols() != expected[i].second ||
          l.bias.size() != expected[i].first) {
        throw std::invalid_argument("Mlp: layer " + std::to_string(i) + " has inconsistent shape");
      }
    }
  }

  /// Hidden layers ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); output layer zero so the untrained
  /// predictor returns 0.
  static Mlp initialize(const MlpConfig& config, Rng& rng) {
    config.validate();
    MlpParams p;
    const auto sh = shapes(config);
    for (std::size_t i = 0; i < sh.size(); ++i) {
      const auto [out, in] = sh[i];
      DenseLayer l{Batch::Zero(out, in), Vector::Zero(out)};
      if (i + 1 < sh.size()) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (Eigen::Index k = 0; k < l.weight.size(); ++k) l.weight.data()[k] = u(rng);
        for (Eigen::Index k = 0; k < l.bias.size(); ++k) l.bias[k] = u(rng);
      }
      p.layers.push_back(std::move(l));
    }
    return Mlp(config, std::move(p));
  }

  const MlpConfig& config() const { return config_; }
  const MlpParams& params() const { return params_; }
  MlpParams& params() { return params_; }

  Batch predict(const Batch& xt, int t) const { return run(xt, t).output; }

  Pass run(const Batch& xt, int t) const {
    if (xt.cols() != config_.data_dim) {
      throw std::invalid_argument("Mlp: input has " + std::to_string(xt.cols()) + " columns, expected " +
                                  std::to_string(config_.data_dim));
    }
    const Vector emb = embed_time(t, config_.T, config_.time_embed_dim);
    Pass pass;
    const std::size_t n = params_.layers.size();
    pass.inputs.reserve(n);
    pass.pre.reserve(n - 1);

    Batch h(xt.rows(), config_.data_dim + config_.time_embed_dim);
    h.leftCols(config_.data_dim) = xt;
    h.rightCols(config_.time_embed_dim).rowwise() = emb.transpose();

    for (std::size_t i = 0; i < n; ++i) {
      const auto& l = params_.layers[i];
      Batch z = h * l.weight.transpose();
      z.rowwise() += l.bias.transpose();
      pass.inputs.push_back(std::move(h));
      if (i + 1 == n) {
        pass.output = std::move(z);
      } else {
        h = activate(z);
        pass.pre.push_back(std::move(z));
      }
    }
    return pass;
  }

  MlpGradients zero_gradients() const { return zeros_like<MlpGradients>(params_); }

  /// acc += d<output, output_grad>/d(params), summed over rows.
  void accumulate_gradients(const Pass& pass, const Batch& output_grad, MlpGradients& acc) const {
    require_same_shape(pass.output, output_grad, "Mlp::backward");
    if (!same_shapes(acc, params_)) throw std::invalid_argument("Mlp::backward: gradient shape mismatch");
    Batch g = output_grad;
    for (std::size_t i = params_.layers.size(); i-- > 0;) {
      const auto& l = params_.layers[i];
      auto& gl = acc.layers[i];
      gl.weight.noalias() += g.transpose() * pass.inputs[i];
      gl.bias += g.colwise().sum().transpose();
      if (i == 0) break;
      Batch gh = g * l.weight;
      g = gh.cwiseProduct(activate_derivative(pass.pre[i - 1]));
    }
  }

  MlpGradients backward(const Batch& xt, int t, const Batch& output_grad) const {
    auto acc = zero_gradients();
    accumulate_gradients(run(xt, t), output_grad, acc);
    return acc;
  }

 private:
  static std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes(const MlpConfig& c) {
    std::vector<std::pair<Eigen::Index, Eigen::Index>> out;
    Eigen::Index in = c.data_dim + c.time_embed_dim;
    for (int h : c.hidden) {
      out.emplace_back(h, in);
      in = h;
    }
    out.emplace_back(c.data_dim, in);
    return out;
  }

  Batch activate(const Batch& z) const {
    if (config_.activation == Activation::tanh) return z.array().tanh().matrix();
    return (z.array() / (1.0 + (-z.array()).exp())).matrix();
  }

  Batch activate_derivative(const Batch& z) const {
    if (config_.activation == Activation::tanh) return (1.0 - z.array().tanh().square()).matrix();
    const auto s = 1.0 / (1.0 + (-z.array()).exp());
    return (s * (1.0 + z.array() * (1.0 - s))).matrix();
  }

  MlpConfig config_;
  MlpParams params_;
};

/// Exponential moving average of predictor parameters.
struct EmaParams {
  MlpParams shadow;
  double decay = 0.9999;
};

/// shadow <- decay * shadow + (1 - decay) * params, elementwise.
inline void ema_update(EmaParams& ema, const MlpParams& params) {
  const double d = ema.decay;
  zip_tensors(ema.shadow, params, [d](std::span<double> s, std::span<const double> p) {
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = d * s[i] + (1.0 - d) * p[i];
  }, "ema_update");
}

}  // namespace sadiff
