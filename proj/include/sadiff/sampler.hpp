#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "sadiff/common.hpp"
#include "sadiff/predictor.hpp"
#include "sadiff/schedule.hpp"

namespace sadiff {

enum class SamplerKind { ddpm, ddim };
enum class VarianceKind { beta_tilde, beta };

inline std::string to_string(SamplerKind k) { return k == SamplerKind::ddpm ? "ddpm" : "ddim"; }
inline std::string to_string(VarianceKind k) { return k == VarianceKind::beta_tilde ? "beta_tilde" : "beta"; }

inline SamplerKind parse_sampler_kind(const std::string& s) {
  if (s == "ddpm") return SamplerKind::ddpm;
  if (s == "ddim") return SamplerKind::ddim;
  throw ConfigError("sampler.kind: unknown sampler '" + s + "' (expected ddpm|ddim)");
}

inline VarianceKind parse_variance_kind(const std::string& s) {
  if (s == "beta_tilde") return VarianceKind::beta_tilde;
  if (s == "beta") return VarianceKind::beta;
  throw ConfigError("sampler.variance: unknown variance '" + s + "' (expected beta_tilde|beta)");
}

/// States x_T ... x_0 visited by a sampler. states[k] is the state at timesteps[k]; the final
/// state is the output at t = 0.
struct Trajectory {
  std::vector<Batch> states;
  std::vector<int> timesteps;
  std::vector<Batch> noise_predictions;  // empty unless requested; aligned with timesteps

  const Batch& final_state() const { return states.back(); }
};

namespace detail {
inline void require_step_order(const NoiseSchedule& sched, int t, int t_prev, const char* what) {
  if (!(0 <= t_prev && t_prev < t && t <= sched.T())) {
    throw std::invalid_argument(std::string(what) + ": need 0 <= t_prev < t <= T, got t=" + std::to_string(t) +
                                " t_prev=" + std::to_string(t_prev));
  }
}
}  // namespace detail

/// Ancestral step from t to t_prev given a precomputed noise prediction `eps_hat`.
///
/// Skipped steps use the effective transition alpha = alpha_bar(t) / alpha_bar(t_prev); for
/// t_prev = t - 1 this is exactly alpha_t, and the update is
///   x_{t-1} = (x_t - beta_t / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t) + sigma_t z.
inline Batch ddpm_update(const NoiseSchedule& sched, const Batch& xt, const Batch& eps_hat, int t, int t_prev,
                         const Batch& z, VarianceKind variance) {
  detail::require_step_order(sched, t, t_prev, "ddpm_step");
  require_same_shape(xt, eps_hat, "ddpm_step");
  require_same_shape(xt, z, "ddpm_step");
  if (t_prev == 0 && (z.array() != 0.0).any()) {
    throw std::invalid_argument("ddpm_step: noise z must be zero on the final step (t=" + std::to_string(t) + ")");
  }
  double a, b, var;
  if (t_prev == t - 1) {
    a = sched.alpha(t);
    b = sched.beta(t);
    var = variance == VarianceKind::beta_tilde ? sched.beta_tilde(t) : b;
  } else {
    a = sched.alpha_bar(t) / sched.alpha_bar(t_prev);
    b = 1.0 - a;
    var = variance == VarianceKind::beta_tilde ? (1.0 - sched.alpha_bar(t_prev)) / (1.0 - sched.alpha_bar(t)) * b : b;
  }
  Batch out = (xt - (b / std::sqrt(1.0 - sched.alpha_bar(t))) * eps_hat) / std::sqrt(a);
  if (t_prev > 0) out += std::sqrt(var) * z;
  return out;
}

/// sigma for the single step t -> t-1.
inline double ddpm_sigma(const NoiseSchedule& sched, int t, VarianceKind variance) {
  return std::sqrt(variance == VarianceKind::beta_tilde ? sched.beta_tilde(t) : sched.beta(t));
}

template <NoisePredictor P>
Batch ddpm_step(const P& f, const NoiseSchedule& sched, const Batch& xt, int t, const Batch& z,
                VarianceKind variance = VarianceKind::beta_tilde, int t_prev = -1) {
  if (t_prev < 0) t_prev = t - 1;
  detail::require_step_order(sched, t, t_prev, "ddpm_step");
  return ddpm_update(sched, xt, f.predict(xt, t), t, t_prev, z, variance);
}

/// Deterministic step: x0_hat = (x_t - sqrt(1 - ab_t) eps_hat) / sqrt(ab_t), then
/// x_prev = sqrt(ab_prev) x0_hat + sqrt(1 - ab_prev) eps_hat, with alpha_bar(0) = 1.
inline Batch ddim_update(const NoiseSchedule& sched, const Batch& xt, const Batch& eps_hat, int t, int t_prev) {
  detail::require_step_order(sched, t, t_prev, "ddim_step");
  require_same_shape(xt, eps_hat, "ddim_step");
  const double ab = sched.alpha_bar(t);
  const double ab_prev = sched.alpha_bar(t_prev);
  const Batch x0_hat = (xt - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
  if (t_prev == 0) return x0_hat;
  return std::sqrt(ab_prev) * x0_hat + std::sqrt(1.0 - ab_prev) * eps_hat;
}

template <NoisePredictor P>
Batch ddim_step(const P& f, const NoiseSchedule& sched, const Batch& xt, int t, int t_prev) {
  detail::require_step_order(sched, t, t_prev, "ddim_step");
  return ddim_update(sched, xt, f.predict(xt, t), t, t_prev);
}

/// n_steps timesteps spaced evenly over 1..T (rounded), from T down to 1.
inline std::vector<int> make_subsequence(int T, int n_steps) {
  if (n_steps < 1 || n_steps > T) {
    throw std::invalid_argument("make_subsequence: n_steps " + std::to_string(n_steps) + " outside 1.." +
                                std::to_string(T));
  }
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n_steps));
  if (n_steps == 1) {
    out.push_back(T);
    return out;
  }
  const long span = T - 1;
  const long gaps = n_steps - 1;
  for (long k = gaps; k >= 0; --k) {
    // round-half-up of 1 + span * k / gaps
    out.push_back(static_cast<int>(1 + (2 * span * k + gaps) / (2 * gaps)));
  }
  return out;
}

struct SamplerOptions {
  SamplerKind kind = SamplerKind::ddpm;
  VarianceKind variance = VarianceKind::beta_tilde;
  bool store_predictions = false;
};

/// Runs the chosen sampler from x_start through `timesteps` (strictly decreasing, first entry is
/// the timestep of x_start) down to t = 0. DDPM draws z from rng except on the final step.
template <NoisePredictor P>
Trajectory rollout(const P& f, const NoiseSchedule& sched, const Batch& x_start, const std::vector<int>& timesteps,
                   const SamplerOptions& opts, Rng& rng) {
  if (timesteps.empty()) throw std::invalid_argument("rollout: empty timestep sequence");
  for (std::size_t i = 1; i < timesteps.size(); ++i) {
    if (timesteps[i] >= timesteps[i - 1]) throw std::invalid_argument("rollout: timesteps must strictly decrease");
  }
  Trajectory traj;
  traj.timesteps = timesteps;
  traj.states.reserve(timesteps.size() + 1);
  traj.states.push_back(x_start);
  for (std::size_t i = 0; i < timesteps.size(); ++i) {
    const int t = timesteps[i];
    const int t_prev = i + 1 < timesteps.size() ? timesteps[i + 1] : 0;
    const Batch& xt = traj.states.back();
    Batch eps_hat = f.predict(xt, t);
    Batch next;
    if (opts.kind == SamplerKind::ddim) {
      next = ddim_update(sched, xt, eps_hat, t, t_prev);
    } else {
      const Batch z = t_prev > 0 ? standard_normal(xt.rows(), xt.cols(), rng) : Batch::Zero(xt.rows(), xt.cols());
      next = ddpm_update(sched, xt, eps_hat, t, t_prev, z, opts.variance);
    }
    if (opts.store_predictions) traj.noise_predictions.push_back(std::move(eps_hat));
    traj.states.push_back(std::move(next));
  }
  return traj;
}

/// Draws x_T ~ N(0, I) with `batch` rows and `dim` columns and samples down to x_0.
template <NoisePredictor P>
Trajectory sample(const P& f, const NoiseSchedule& sched, const SamplerOptions& opts, int n_steps, int batch, int dim,
                  Rng& rng) {
  if (batch < 1) throw std::invalid_argument("sample: batch must be >= 1");
  const auto steps = make_subsequence(sched.T(), n_steps);
  const Batch xT = standard_normal(batch, dim, rng);
  return rollout(f, sched, xT, steps, opts, rng);
}

}  // namespace sadiff
