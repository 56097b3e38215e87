#pragma once

#include <cmath>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "sadiff/common.hpp"
#include "sadiff/forward.hpp"
#include "sadiff/gap.hpp"
#include "sadiff/predictor.hpp"
#include "sadiff/schedule.hpp"

namespace sadiff {

/// Estimates of the three losses ordered by
///   (T-1)/(T+K) * L_simple^tau  >=  L_sa  >=  L_theta / (T+K)^2
/// where L_simple^tau = E_{t in 2..T} tau_t^2 ||e_t||^2,
///       L_sa         = E_{t in 1-K..T} ||(1/K) sum_{s=t}^{t+K-1} tau_s e_s||^2,
///       L_theta      = E ||sum_{s=2}^{T} tau_s e_s||^2, with e_s = f(x_s, s) - eps_s.
struct BoundsReport {
  int T = 0;
  int K = 0;
  bool exact = false;
  double l_simple_tau = 0.0, l_sa = 0.0, l_theta = 0.0;
  double se_simple_tau = 0.0, se_sa = 0.0, se_theta = 0.0;
  double upper_lhs = 0.0, upper_rhs = 0.0;  // (T-1)/(T+K) L_simple^tau vs L_sa
  double lower_lhs = 0.0, lower_rhs = 0.0;  // L_sa vs L_theta / (T+K)^2
  bool upper_holds = false;
  bool lower_holds = false;
};

namespace detail {

inline void finish_bounds(BoundsReport& r, double z) {
  const double T = r.T, K = r.K;
  r.upper_lhs = (T - 1.0) / (T + K) * r.l_simple_tau;
  r.upper_rhs = r.l_sa;
  r.lower_lhs = r.l_sa;
  r.lower_rhs = r.l_theta / ((T + K) * (T + K));
  if (r.exact) {
    auto holds = [](double lhs, double rhs) { return lhs >= rhs - 1e-12 * std::max(std::abs(lhs), std::abs(rhs)); };
    r.upper_holds = holds(r.upper_lhs, r.upper_rhs);
    r.lower_holds = holds(r.lower_lhs, r.lower_rhs);
  } else {
    const double cu = (T - 1.0) / (T + K);
    const double cl = 1.0 / ((T + K) * (T + K));
    const double se_u = std::sqrt(cu * cu * r.se_simple_tau * r.se_simple_tau + r.se_sa * r.se_sa);
    const double se_l = std::sqrt(r.se_sa * r.se_sa + cl * cl * r.se_theta * r.se_theta);
    r.upper_holds = r.upper_lhs - r.upper_rhs + z * se_u >= 0.0;
    r.lower_holds = r.lower_lhs - r.lower_rhs + z * se_l >= 0.0;
  }
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_and_se(const std::vector<double>& v) {
  MeanSe out;
  if (v.empty()) return out;
  double sum = 0.0;
  for (double x : v) sum += x;
  out.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - out.mean) * (x - out.mean);
    out.se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return out;
}

}  // namespace detail

/// Exact finite-sum evaluation for fixed data x0 and one fixed noise draw eps_2..eps_T: every
/// expectation over t becomes a sum, so both inequalities must hold deterministically.
/// Rows of x0 are independent samples; reported values are means over rows.
template <NoisePredictor P>
BoundsReport bounds_check_exact(const P& f, const NoiseSchedule& sched, int K, const Batch& x0,
                                const NoiseSequence& eps) {
  if (K < 2) throw std::invalid_argument("bounds_check: K must be >= 2, got " + std::to_string(K));
  const int T = sched.T();
  if (T > 64 || x0.cols() > 8) {
    throw ConfigError("bounds_check: exact mode is limited to T <= 64 and dim <= 8");
  }
  const Eigen::Index n = x0.rows();
  // weighted errors tau_s e_s, indexed by s; zero outside 2..T
  std::vector<Batch> we(static_cast<std::size_t>(T) + 1, Batch::Zero(n, x0.cols()));
  for (int s = 2; s <= T; ++s) {
    const Batch& e = eps.at(s);
    we[s] = sched.tau(s) * (f.predict(diffuse(sched, x0, s, e), s) - e);
  }
  BoundsReport r;
  r.T = T;
  r.K = K;
  r.exact = true;

  double simple = 0.0;
  Batch total = Batch::Zero(n, x0.cols());
  for (int s = 2; s <= T; ++s) {
    simple += mean_row_sq_norm(we[s]);
    total += we[s];
  }
  r.l_simple_tau = simple / (T - 1);
  r.l_theta = mean_row_sq_norm(total);

  double sa = 0.0;
  for (int t = 1 - K; t <= T; ++t) {
    Batch window = Batch::Zero(n, x0.cols());
    for (int s = std::max(t, 2); s <= std::min(t + K - 1, T); ++s) window += we[s];
    sa += mean_row_sq_norm(window / K);
  }
  r.l_sa = sa / (T + K);
  detail::finish_bounds(r, 0.0);
  return r;
}

/// Monte-Carlo estimates with independent draws for each quantity. Each of the n_mc samples
/// picks a row of x0_pool uniformly; t is uniform on 2..T for L_simple^tau and on 1-K..T for
/// L_sa. An inequality is reported as holding when it is not violated by more than
/// `z` combined standard errors.
template <NoisePredictor P>
BoundsReport bounds_check_monte_carlo(const P& f, const NoiseSchedule& sched, int K, const Batch& x0_pool,
                                      int n_mc, Rng& rng, double z = 3.0) {
  if (K < 2) throw std::invalid_argument("bounds_check: K must be >= 2, got " + std::to_string(K));
  if (n_mc < 2) throw std::invalid_argument("bounds_check: n_mc must be >= 2");
  if (x0_pool.rows() == 0) throw std::invalid_argument("bounds_check: empty data pool");
  const int T = sched.T();
  const Eigen::Index dim = x0_pool.cols();
  std::uniform_int_distribution<Eigen::Index> pick_row(0, x0_pool.rows() - 1);
  auto gather = [&](const std::vector<Eigen::Index>& rows) {
    Batch out(static_cast<Eigen::Index>(rows.size()), dim);
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x0_pool.row(rows[i]);
    return out;
  };
  auto weighted_error = [&](const Batch& x0, int s, const Batch& e) -> Batch {
    return sched.tau(s) * (f.predict(diffuse(sched, x0, s, e), s) - e);
  };

  BoundsReport r;
  r.T = T;
  r.K = K;

  {  // L_simple^tau
    std::uniform_int_distribution<int> pick_t(2, T);
    std::map<int, std::vector<Eigen::Index>> by_t;
    for (int m = 0; m < n_mc; ++m) {
      const auto row = pick_row(rng);
      by_t[pick_t(rng)].push_back(row);
    }
    std::vector<double> vals;
    vals.reserve(static_cast<std::size_t>(n_mc));
    for (const auto& [t, rows] : by_t) {
      const Batch x0 = gather(rows);
      const Batch we = weighted_error(x0, t, standard_normal(x0.rows(), dim, rng));
      for (Eigen::Index i = 0; i < we.rows(); ++i) vals.push_back(we.row(i).squaredNorm());
    }
    const auto ms = detail::mean_and_se(vals);
    r.l_simple_tau = ms.mean;
    r.se_simple_tau = ms.se;
  }
  {  // L_sa
    std::uniform_int_distribution<int> pick_t(1 - K, T);
    std::map<int, std::vector<Eigen::Index>> by_t;
    for (int m = 0; m < n_mc; ++m) {
      const auto row = pick_row(rng);
      by_t[pick_t(rng)].push_back(row);
    }
    std::vector<double> vals;
    vals.reserve(static_cast<std::size_t>(n_mc));
    for (const auto& [t, rows] : by_t) {
      const Batch x0 = gather(rows);
      Batch window = Batch::Zero(x0.rows(), dim);
      for (int s = t; s <= t + K - 1; ++s) {
        const Batch e = standard_normal(x0.rows(), dim, rng);
        if (s >= 2 && s <= T) window += weighted_error(x0, s, e);
      }
      window /= K;
      for (Eigen::Index i = 0; i < window.rows(); ++i) vals.push_back(window.row(i).squaredNorm());
    }
    const auto ms = detail::mean_and_se(vals);
    r.l_sa = ms.mean;
    r.se_sa = ms.se;
  }
  {  // L_theta
    std::vector<Eigen::Index> rows(static_cast<std::size_t>(n_mc));
    for (auto& row : rows) row = pick_row(rng);
    const Batch x0 = gather(rows);
    Batch total = Batch::Zero(x0.rows(), dim);
    for (int s = 2; s <= T; ++s) total += weighted_error(x0, s, standard_normal(x0.rows(), dim, rng));
    std::vector<double> vals;
    vals.reserve(static_cast<std::size_t>(n_mc));
    for (Eigen::Index i = 0; i < total.rows(); ++i) vals.push_back(total.row(i).squaredNorm());
    const auto ms = detail::mean_and_se(vals);
    r.l_theta = ms.mean;
    r.se_theta = ms.se;
  }
  detail::finish_bounds(r, z);
  return r;
}

}  // namespace sadiff
