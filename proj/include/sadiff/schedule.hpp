#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "sadiff/common.hpp"

namespace sadiff {

enum class ScheduleKind { linear, cosine };

inline std::string to_string(ScheduleKind k) { return k == ScheduleKind::linear ? "linear" : "cosine"; }

inline ScheduleKind parse_schedule_kind(const std::string& s) {
  if (s == "linear") return ScheduleKind::linear;
  if (s == "cosine") return ScheduleKind::cosine;
  throw ConfigError("schedule.kind: unknown schedule '" + s + "' (expected linear|cosine)");
}

/// Every timestep-indexed coefficient of a discrete Gaussian diffusion with T steps.
///
/// Indexing is 1-based: t = 1..T. Index 0 is clean data, where alpha_bar(0) = 1 and the
/// remaining coefficients take their limiting values (beta = 0, gamma1 = 1 at t = 1 etc.).
/// All arrays are filled at construction; the object is immutable afterwards.
class NoiseSchedule {
 public:
  /// Builds from an explicit beta sequence beta_1..beta_T, each in (0, 1].
  static NoiseSchedule from_betas(std::vector<double> betas) {
    if (betas.size() < 2) throw ConfigError("schedule: T must be >= 2");
    for (std::size_t i = 0; i < betas.size(); ++i) {
      if (!(betas[i] > 0.0 && betas[i] <= 1.0)) {
        throw ConfigError("schedule: beta[" + std::to_string(i + 1) + "] = " +
                          std::to_string(betas[i]) + " outside (0, 1]");
      }
    }
    return NoiseSchedule(std::move(betas));
  }

  int T() const { return T_; }

  double beta(int t) const { return beta_[check(t)]; }
  double alpha(int t) const { return alpha_[check(t)]; }
  double alpha_bar(int t) const { return alpha_bar_[check(t)]; }
  double beta_tilde(int t) const { return beta_tilde_[check(t)]; }
  double gamma1(int t) const { return gamma1_[check(t)]; }
  double gamma2(int t) const { return gamma2_[check(t)]; }

  /// Weight of step i's prediction error in the total estimation gap; zero outside 2..T.
  double tau(int i) const {
    if (i < 2 || i > T_) return 0.0;
    return tau_[static_cast<std::size_t>(i)];
  }

  /// prod_{s=t}^{i-1} gamma2(s), via the telescoped closed form.
  double gamma2_product(int t, int i) const {
    if (!(2 <= t && t < i && i <= T_)) {
      throw std::invalid_argument("gamma2_product: need 2 <= t < i <= T, got t=" + std::to_string(t) +
                                  " i=" + std::to_string(i) + " T=" + std::to_string(T_));
    }
    const double ab_i1 = alpha_bar_[i - 1];
    const double ab_t1 = alpha_bar_[t - 1];
    return std::sqrt(ab_i1) * (1.0 - ab_t1) / (std::sqrt(ab_t1) * (1.0 - ab_i1));
  }

 private:
  explicit NoiseSchedule(std::vector<double> betas) : T_(static_cast<int>(betas.size())) {
    const std::size_t n = betas.size() + 1;
    beta_.assign(n, 0.0);
    alpha_.assign(n, 1.0);
    alpha_bar_.assign(n, 1.0);
    beta_tilde_.assign(n, 0.0);
    gamma1_.assign(n, 0.0);
    gamma2_.assign(n, 0.0);
    tau_.assign(n, 0.0);

    for (int t = 1; t <= T_; ++t) {
      beta_[t] = betas[t - 1];
      alpha_[t] = 1.0 - beta_[t];
      alpha_bar_[t] = alpha_bar_[t - 1] * alpha_[t];
    }
    for (int t = 1; t <= T_; ++t) {
      const double one_minus_ab = 1.0 - alpha_bar_[t];
      const double one_minus_ab_prev = 1.0 - alpha_bar_[t - 1];
      beta_tilde_[t] = one_minus_ab_prev / one_minus_ab * beta_[t];
      gamma1_[t] = std::sqrt(alpha_bar_[t - 1]) * beta_[t] / one_minus_ab;
      gamma2_[t] = std::sqrt(alpha_[t]) * one_minus_ab_prev / one_minus_ab;
    }
    const double head = (1.0 - alpha_bar_[1]) / std::sqrt(alpha_[1]);
    for (int i = 2; i <= T_; ++i) {
      const double bracket = std::sqrt(alpha_bar_[i - 1]) * head / (1.0 - alpha_bar_[i - 1]);
      tau_[i] = bracket * gamma1_[i] * std::sqrt(1.0 - alpha_bar_[i]) / std::sqrt(alpha_bar_[i]);
    }
  }

  std::size_t check(int t) const {
    if (t < 0 || t > T_) {
      throw std::out_of_range("schedule: timestep " + std::to_string(t) + " outside 0.." +
                              std::to_string(T_));
    }
    return static_cast<std::size_t>(t);
  }

  int T_;
  std::vector<double> beta_, alpha_, alpha_bar_, beta_tilde_, gamma1_, gamma2_, tau_;
};

/// Linearly spaced betas from beta_start (t = 1) to beta_end (t = T).
inline NoiseSchedule build_linear(int T, double beta_start = 1e-4, double beta_end = 0.02) {
  if (T < 2) throw ConfigError("schedule.T: must be >= 2, got " + std::to_string(T));
  if (!(beta_start > 0.0)) throw ConfigError("schedule.beta_start: must be > 0, got " + std::to_string(beta_start));
  if (!(beta_end < 1.0)) throw ConfigError("schedule.beta_end: must be < 1, got " + std::to_string(beta_end));
  if (!(beta_start <= beta_end)) {
    throw ConfigError("schedule.beta_start: must be <= beta_end (" + std::to_string(beta_start) +
                      " > " + std::to_string(beta_end) + ")");
  }
  std::vector<double> betas(static_cast<std::size_t>(T));
  const double span = beta_end - beta_start;
  for (int t = 1; t <= T; ++t) {
    betas[t - 1] = beta_start + span * static_cast<double>(t - 1) / static_cast<double>(T - 1);
  }
  return NoiseSchedule::from_betas(std::move(betas));
}

/// Squared-cosine schedule: target alpha_bar(t) = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2).
/// Betas are the ratio-derived values clipped to 0.999; alpha_bar is then the product of the
/// clipped alphas, so it coincides with f(t)/f(0) everywhere the clip is inactive.
inline NoiseSchedule build_cosine(int T, double s_offset = 0.008) {
  if (T < 2) throw ConfigError("schedule.T: must be >= 2, got " + std::to_string(T));
  if (!(s_offset > 0.0)) throw ConfigError("schedule.s: must be > 0, got " + std::to_string(s_offset));
  auto f = [&](int t) {
    const double c = std::cos((static_cast<double>(t) / T + s_offset) / (1.0 + s_offset) * std::numbers::pi / 2.0);
    return c * c;
  };
  std::vector<double> betas(static_cast<std::size_t>(T));
  for (int t = 1; t <= T; ++t) {
    betas[t - 1] = std::min(1.0 - f(t) / f(t - 1), 0.999);
  }
  return NoiseSchedule::from_betas(std::move(betas));
}

struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::linear;
  int T = 100;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  double s = 0.008;

  NoiseSchedule build() const {
    return kind == ScheduleKind::linear ? build_linear(T, beta_start, beta_end) : build_cosine(T, s);
  }
};

}  // namespace sadiff
