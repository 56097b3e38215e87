#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace sadiff {

// Rows are samples, columns are data dimensions.
using Batch = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

using Rng = std::mt19937_64;

// Raised when a configuration value is outside its documented range.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised when a numerical routine produces a non-finite value.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Batch standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Batch out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = normal(rng);
  return out;
}

inline bool all_finite(const Batch& b) { return b.allFinite(); }

inline void require_same_shape(const Batch& a, const Batch& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch (" +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
  }
}

// Mean over rows of the squared L2 norm of each row.
inline double mean_row_sq_norm(const Batch& b) {
  if (b.rows() == 0) return 0.0;
  return b.rowwise().squaredNorm().sum() / static_cast<double>(b.rows());
}

// Mean over rows of the L2 norm of each row.
inline double mean_row_norm(const Batch& b) {
  if (b.rows() == 0) return 0.0;
  return b.rowwise().norm().sum() / static_cast<double>(b.rows());
}

inline double relative_error(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  if (scale == 0.0) return 0.0;
  return std::abs(a - b) / scale;
}

}  // namespace sadiff
