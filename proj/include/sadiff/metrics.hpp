#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "sadiff/common.hpp"

namespace sadiff {

/// 2-Wasserstein distance between two 1-D empirical distributions given as sorted samples.
/// Integrates the squared difference of the two quantile functions exactly.
inline double wasserstein2_sorted(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("wasserstein2: empty sample");
  const auto n = static_cast<long long>(a.size());
  const auto m = static_cast<long long>(b.size());
  long long i = 0, j = 0;
  double u = 0.0, acc = 0.0;
  while (i < n && j < m) {
    // next breakpoint is min((i+1)/n, (j+1)/m)
    const long long lhs = (i + 1) * m;
    const long long rhs = (j + 1) * n;
    const double next = lhs <= rhs ? static_cast<double>(i + 1) / n : static_cast<double>(j + 1) / m;
    const double d = a[i] - b[j];
    acc += (next - u) * d * d;
    u = next;
    if (lhs <= rhs) ++i;
    if (rhs <= lhs) ++j;
  }
  return std::sqrt(std::max(acc, 0.0));
}

/// Mean over n_projections random unit directions of the 1-D W2 distance between the projected
/// samples. The directions depend only on (dim, n_projections, seed), so the value is symmetric.
inline double sliced_wasserstein(const Batch& a, const Batch& b, int n_projections, std::uint64_t seed) {
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("sliced_wasserstein: dimension mismatch (" + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.cols()) + ")");
  }
  if (a.rows() == 0 || b.rows() == 0) throw std::invalid_argument("sliced_wasserstein: empty batch");
  if (n_projections < 1) throw std::invalid_argument("sliced_wasserstein: n_projections must be >= 1");
  Rng rng(seed);
  const Batch dirs_raw = standard_normal(n_projections, a.cols(), rng);
  double total = 0.0;
  std::vector<double> pa(static_cast<std::size_t>(a.rows())), pb(static_cast<std::size_t>(b.rows()));
  for (int k = 0; k < n_projections; ++k) {
    const Vector dir = dirs_raw.row(k).transpose().normalized();
    const Vector va = a * dir;
    const Vector vb = b * dir;
    std::copy(va.data(), va.data() + va.size(), pa.begin());
    std::copy(vb.data(), vb.data() + vb.size(), pb.begin());
    std::sort(pa.begin(), pa.end());
    std::sort(pb.begin(), pb.end());
    total += wasserstein2_sorted(pa, pb);
  }
  return total / n_projections;
}

/// Number of centers with at least one sample within `radius` (Euclidean).
inline int mode_coverage(const Batch& samples, const std::vector<Vector>& centers, double radius) {
  int covered = 0;
  for (const auto& c : centers) {
    if (samples.rows() == 0) break;
    if (c.size() != samples.cols()) throw std::invalid_argument("mode_coverage: dimension mismatch");
    const double best = (samples.rowwise() - c.transpose()).rowwise().squaredNorm().minCoeff();
    if (best <= radius * radius) ++covered;
  }
  return covered;
}

}  // namespace sadiff
