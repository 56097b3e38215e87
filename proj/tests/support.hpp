#pragma once

// Shared fixtures for the unit and acceptance tests.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "sadiff/sadiff.hpp"

namespace sadiff::testing {

/// alpha_bar recomputed from the raw betas in long double.
inline std::vector<long double> alpha_bar_extended(const std::vector<long double>& betas) {
  std::vector<long double> ab(betas.size() + 1, 1.0L);
  for (std::size_t t = 1; t <= betas.size(); ++t) ab[t] = ab[t - 1] * (1.0L - betas[t - 1]);
  return ab;
}

inline std::vector<long double> linear_betas_extended(int T, long double b0, long double b1) {
  std::vector<long double> b(static_cast<std::size_t>(T));
  for (int t = 1; t <= T; ++t) b[t - 1] = b0 + (b1 - b0) * static_cast<long double>(t - 1) / (T - 1);
  return b;
}

/// tau_i straight from the definition, in long double.
inline long double tau_extended(const std::vector<long double>& betas, int i) {
  const auto ab = alpha_bar_extended(betas);
  const long double a1 = 1.0L - betas[0];
  const long double g1 = std::sqrt(ab[i - 1]) * betas[i - 1] / (1.0L - ab[i]);
  return std::sqrt(ab[i - 1]) * (1.0L - ab[1]) / (std::sqrt(a1) * (1.0L - ab[i - 1])) * g1 *
         std::sqrt(1.0L - ab[i]) / std::sqrt(ab[i]);
}

/// A schedule with random betas, for sweeps over "any schedule".
inline NoiseSchedule random_schedule(int T, Rng& rng) {
  std::uniform_int_distribution<int> pick(0, 2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  switch (pick(rng)) {
    case 0: return build_linear(T, 1e-4 + 1e-3 * u(rng), 0.02 + 0.2 * u(rng));
    case 1: return build_cosine(T, 0.004 + 0.01 * u(rng));
    default: {
      std::vector<double> b(static_cast<std::size_t>(T));
      for (auto& v : b) v = 1e-3 + 0.3 * u(rng);
      return NoiseSchedule::from_betas(b);
    }
  }
}

/// Randomly initialised MLP whose output layer is also random, so its errors are nonzero.
inline Mlp random_mlp(const MlpConfig& cfg, std::uint64_t seed, double out_scale = 0.5) {
  Rng rng(seed);
  Mlp m = Mlp::initialize(cfg, rng);
  std::normal_distribution<double> normal(0.0, out_scale);
  auto& last = m.params().layers.back();
  for (Eigen::Index k = 0; k < last.weight.size(); ++k) last.weight.data()[k] = normal(rng);
  for (Eigen::Index k = 0; k < last.bias.size(); ++k) last.bias[k] = normal(rng);
  return m;
}

inline MlpConfig tiny_config(int T, Activation act = Activation::silu) {
  MlpConfig c;
  c.data_dim = 2;
  c.hidden = {8};
  c.time_embed_dim = 4;
  c.T = T;
  c.activation = act;
  return c;
}

struct GradientCheck {
  double worst_relative = 0.0;
  std::size_t checked = 0;
};

/// Central differences of `loss` against `analytic` over every parameter of `model`.
/// Relative error uses max(|a|, |n|, floor) in the denominator so tiny entries do not blow up.
template <LayerStack G>
GradientCheck check_gradients(Mlp& model, const G& analytic, const std::function<double(const Mlp&)>& loss,
                              double h = 1e-5, double floor = 1e-6) {
  GradientCheck out;
  const std::size_t n = parameter_count(model.params());
  for (std::size_t k = 0; k < n; ++k) {
    double& p = parameter_at(model.params(), k);
    const double saved = p;
    p = saved + h;
    const double up = loss(model);
    p = saved - h;
    const double down = loss(model);
    p = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double a = parameter_at(analytic, k);
    const double denom = std::max({std::abs(a), std::abs(numeric), floor});
    out.worst_relative = std::max(out.worst_relative, std::abs(a - numeric) / denom);
    ++out.checked;
  }
  return out;
}

}  // namespace sadiff::testing
