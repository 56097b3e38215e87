#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "sadiff/common.hpp"
#include "sadiff/forward.hpp"
#include "sadiff/predictor.hpp"
#include "sadiff/sampler.hpp"
#include "sadiff/schedule.hpp"

namespace sadiff {

/// True noises eps_t indexed by timestep; entry t holds the noise used to form x_t.
class NoiseSequence {
 public:
  NoiseSequence() = default;
  explicit NoiseSequence(int T) : by_t_(static_cast<std::size_t>(T) + 1) {}

  static NoiseSequence draw(int T, Eigen::Index rows, Eigen::Index cols, Rng& rng, int first = 2) {
    NoiseSequence seq(T);
    for (int t = first; t <= T; ++t) seq.by_t_[t] = standard_normal(rows, cols, rng);
    return seq;
  }

  void set(int t, Batch eps) {
    if (t < 0) throw std::out_of_range("NoiseSequence: negative timestep");
    if (static_cast<std::size_t>(t) >= by_t_.size()) by_t_.resize(static_cast<std::size_t>(t) + 1);
    by_t_[t] = std::move(eps);
  }

  bool has(int t) const {
    return t >= 0 && static_cast<std::size_t>(t) < by_t_.size() && by_t_[t].size() > 0;
  }

  const Batch& at(int t) const {
    if (!has(t)) throw std::invalid_argument("noise sequence: missing noise for timestep " + std::to_string(t));
    return by_t_[t];
  }

 private:
  std::vector<Batch> by_t_;
};

/// Per-timestep and accumulated estimation gaps over the visited timesteps t_start..2.
struct GapReport {
  std::vector<int> timesteps;             // descending, t_start .. 2
  std::vector<double> per_step_gap_norm;  // mean over rows of ||d_t||
  std::vector<double> cumulative_gap_norm;  // mean over rows of ||dbar_t||
  double terminal_gap_norm = 0.0;         // mean ||dbar_2||
  int batch = 0;
  int start_timestep = 0;
  Batch terminal_gap;                     // dbar_2, one row per sample
};

/// Scale mapping a noise-prediction error at t to the posterior-mean error:
/// gamma1_t * sqrt(1 - ab_t) / sqrt(ab_t).
inline double gap_scale(const NoiseSchedule& sched, int t) {
  const double ab = sched.alpha_bar(t);
  return sched.gamma1(t) * std::sqrt(1.0 - ab) / std::sqrt(ab);
}

/// d_t = gamma1_t sqrt(1 - ab_t)/sqrt(ab_t) (f(x_t, t) - eps_t), with x_t diffused from x0 by eps_t.
template <NoisePredictor P>
Batch step_gap(const P& f, const NoiseSchedule& sched, const Batch& x0, const Batch& eps_t, int t) {
  if (t < 2 || t > sched.T()) {
    throw std::invalid_argument("step_gap: timestep " + std::to_string(t) + " outside 2.." + std::to_string(sched.T()));
  }
  const Batch xt = diffuse(sched, x0, t, eps_t);
  return gap_scale(sched, t) * (f.predict(xt, t) - eps_t);
}

/// Runs dbar_t = d_t + gamma2_t dbar_{t+1} downward over consecutive timesteps, seeding
/// dbar at the first visited timestep with its local gap. gaps[k] belongs to timesteps[k].
inline GapReport accumulate_gaps(const NoiseSchedule& sched, const std::vector<int>& timesteps,
                                 const std::vector<Batch>& gaps) {
  if (timesteps.empty() || timesteps.size() != gaps.size()) {
    throw std::invalid_argument("accumulate_gaps: need one gap per visited timestep");
  }
  GapReport rep;
  rep.timesteps = timesteps;
  rep.start_timestep = timesteps.front();
  rep.batch = static_cast<int>(gaps.front().rows());
  Batch dbar;
  for (std::size_t k = 0; k < timesteps.size(); ++k) {
    const int t = timesteps[k];
    if (k > 0 && t != timesteps[k - 1] - 1) throw std::invalid_argument("accumulate_gaps: timesteps must be consecutive");
    if (k == 0) {
      dbar = gaps[k];
    } else {
      dbar = gaps[k] + sched.gamma2(t) * dbar;
    }
    rep.per_step_gap_norm.push_back(mean_row_norm(gaps[k]));
    rep.cumulative_gap_norm.push_back(mean_row_norm(dbar));
  }
  rep.terminal_gap_norm = rep.cumulative_gap_norm.back();
  rep.terminal_gap = std::move(dbar);
  return rep;
}

/// Accumulated gap from t_start down to 2 along the forward-process states x_t = diffuse(x0, eps_t).
template <NoisePredictor P>
GapReport cumulative_gap(const P& f, const NoiseSchedule& sched, const Batch& x0, const NoiseSequence& eps,
                         int t_start) {
  if (t_start < 2 || t_start > sched.T()) {
    throw std::invalid_argument("cumulative_gap: t_start " + std::to_string(t_start) + " outside 2.." +
                                std::to_string(sched.T()));
  }
  std::vector<int> ts;
  std::vector<Batch> gaps;
  for (int t = t_start; t >= 2; --t) {
    ts.push_back(t);
    gaps.push_back(step_gap(f, sched, x0, eps.at(t), t));
  }
  return accumulate_gaps(sched, ts, gaps);
}

/// d(x0) = sum_{i=2}^{T} tau_i (f(x_i, i) - eps_i).
template <NoisePredictor P>
Batch total_gap(const P& f, const NoiseSchedule& sched, const Batch& x0, const NoiseSequence& eps) {
  Batch sum = Batch::Zero(x0.rows(), x0.cols());
  for (int i = 2; i <= sched.T(); ++i) {
    const Batch& e = eps.at(i);
    sum += sched.tau(i) * (f.predict(diffuse(sched, x0, i, e), i) - e);
  }
  return sum;
}

/// Moments of q(x_{t-1} | x_T, x0) = N(a_t x0 + c_t eps_T, beta'_t I), indexed by t in 2..T.
struct ReverseDistCoeffs {
  std::vector<double> mu_prime_x0_coeff;   // a_t = sqrt(ab_{t-1})
  std::vector<double> mu_prime_eps_coeff;  // c_t = sqrt(ab_T)(1 - ab_{t-1}) / sqrt(ab_{t-1}(1 - ab_T))
  std::vector<double> beta_prime;          // beta'_T = beta~_T, beta'_t = gamma2_t^2 beta'_{t+1} + beta~_t
};

inline ReverseDistCoeffs reverse_dist_coeffs(const NoiseSchedule& sched) {
  const int T = sched.T();
  const auto n = static_cast<std::size_t>(T) + 1;
  ReverseDistCoeffs c{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  const double abT = sched.alpha_bar(T);
  for (int t = 2; t <= T; ++t) {
    const double ab_prev = sched.alpha_bar(t - 1);
    c.mu_prime_x0_coeff[t] = std::sqrt(ab_prev);
    c.mu_prime_eps_coeff[t] = std::sqrt(abT) * (1.0 - ab_prev) / std::sqrt(ab_prev * (1.0 - abT));
  }
  c.beta_prime[T] = sched.beta_tilde(T);
  for (int t = T - 1; t >= 2; --t) {
    const double g2 = sched.gamma2(t);
    c.beta_prime[t] = g2 * g2 * c.beta_prime[t + 1] + sched.beta_tilde(t);
  }
  return c;
}

/// Sampler started from known data noised to t_start: follows the chosen sampler over every
/// timestep t_start..1, recovers the actual noise of each visited state against x0, and
/// accumulates the gap over t_start..2.
template <NoisePredictor P>
GapReport gap_experiment_x_start(const P& f, const NoiseSchedule& sched, const Batch& x0, int t_start,
                                 SamplerOptions opts, Rng& rng) {
  if (t_start < 2 || t_start > sched.T()) {
    throw std::invalid_argument("gap_experiment: t_start " + std::to_string(t_start) + " outside 2.." +
                                std::to_string(sched.T()));
  }
  const Batch x_start = diffuse(sched, x0, t_start, standard_normal(x0.rows(), x0.cols(), rng));
  std::vector<int> steps;
  for (int t = t_start; t >= 1; --t) steps.push_back(t);
  opts.store_predictions = true;
  const Trajectory traj = rollout(f, sched, x_start, steps, opts, rng);

  std::vector<int> ts;
  std::vector<Batch> gaps;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const int t = steps[k];
    if (t < 2) break;
    const Batch eps_t = recover_noise(sched, x0, traj.states[k], t);
    ts.push_back(t);
    gaps.push_back(gap_scale(sched, t) * (traj.noise_predictions[k] - eps_t));
  }
  return accumulate_gaps(sched, ts, gaps);
}

}  // namespace sadiff
