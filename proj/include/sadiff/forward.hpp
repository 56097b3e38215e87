#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "sadiff/common.hpp"
#include "sadiff/schedule.hpp"

namespace sadiff {

namespace detail {
inline void require_timestep(const NoiseSchedule& sched, int t, int lo, const char* what) {
  if (t < lo || t > sched.T()) {
    throw std::invalid_argument(std::string(what) + ": timestep " + std::to_string(t) + " outside " +
                                std::to_string(lo) + ".." + std::to_string(sched.T()));
  }
}
}  // namespace detail

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
inline Batch diffuse(const NoiseSchedule& sched, const Batch& x0, int t, const Batch& eps) {
  detail::require_timestep(sched, t, 1, "diffuse");
  require_same_shape(x0, eps, "diffuse");
  const double ab = sched.alpha_bar(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

/// Draws standard normal noise from rng and diffuses x0 with it.
inline Batch diffuse(const NoiseSchedule& sched, const Batch& x0, int t, Rng& rng) {
  return diffuse(sched, x0, t, standard_normal(x0.rows(), x0.cols(), rng));
}

/// The noise that maps x0 to xt at step t; inverse of diffuse.
inline Batch recover_noise(const NoiseSchedule& sched, const Batch& x0, const Batch& xt, int t) {
  detail::require_timestep(sched, t, 1, "recover_noise");
  require_same_shape(x0, xt, "recover_noise");
  const double ab = sched.alpha_bar(t);
  return (xt - std::sqrt(ab) * x0) / std::sqrt(1.0 - ab);
}

/// Mean of q(x_{t-1} | x_t, x0): gamma1_t x0 + gamma2_t x_t. The variance is beta_tilde(t).
inline Batch posterior_mean(const NoiseSchedule& sched, const Batch& x0, const Batch& xt, int t) {
  detail::require_timestep(sched, t, 2, "posterior_mean");
  require_same_shape(x0, xt, "posterior_mean");
  return sched.gamma1(t) * x0 + sched.gamma2(t) * xt;
}

}  // namespace sadiff
