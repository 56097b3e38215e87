#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "sadiff/common.hpp"

namespace sadiff {

enum class DatasetKind { gaussian_ring, swiss_roll, checkerboard, delta_point };

inline std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::gaussian_ring: return "gaussian_ring";
    case DatasetKind::swiss_roll: return "swiss_roll";
    case DatasetKind::checkerboard: return "checkerboard";
    case DatasetKind::delta_point: return "delta_point";
  }
  return "?";
}

inline DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "gaussian_ring") return DatasetKind::gaussian_ring;
  if (s == "swiss_roll") return DatasetKind::swiss_roll;
  if (s == "checkerboard") return DatasetKind::checkerboard;
  if (s == "delta_point") return DatasetKind::delta_point;
  throw ConfigError("dataset.kind: unknown dataset '" + s +
                    "' (expected gaussian_ring|swiss_roll|checkerboard|delta_point)");
}

struct DatasetSpec {
  DatasetKind kind = DatasetKind::gaussian_ring;
  int n_points = 8000;
  int dim = 2;
  bool normalize = true;
  std::vector<double> point;  // delta_point location; default used when empty

  void validate() const {
    if (n_points < 1) throw ConfigError("dataset.n_points: must be >= 1");
    if (kind == DatasetKind::delta_point) {
      if (dim < 1) throw ConfigError("dataset.dim: must be >= 1");
      if (!point.empty() && static_cast<int>(point.size()) != dim) {
        throw ConfigError("dataset.point: expected " + std::to_string(dim) + " coordinates");
      }
    } else if (dim != 2) {
      throw ConfigError("dataset.dim: " + to_string(kind) + " is two-dimensional, got dim=" + std::to_string(dim));
    }
  }
};

struct SyntheticDataset {
  DatasetSpec spec;
  Batch points;
  Vector shift;  // normalized = (raw - shift) / scale
  Vector scale;
  std::vector<Vector> mode_centers;  // gaussian_ring only, in normalized coordinates
};

namespace detail {

inline constexpr int kRingModes = 8;
inline constexpr double kRingStd = 0.05;

inline Vector ring_center(int k) {
  const double a = 2.0 * std::numbers::pi * k / kRingModes;
  Vector c(2);
  c << std::cos(a), std::sin(a);
  return c;
}

inline Vector default_delta_point(int dim) {
  Vector p(dim);
  for (int k = 0; k < dim; ++k) p[k] = 0.25 * (k + 1) * (k % 2 == 0 ? 1.0 : -1.0);
  return p;
}

inline Batch raw_points(const DatasetSpec& spec, int n, Rng& rng) {
  Batch out(n, spec.dim);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  switch (spec.kind) {
    case DatasetKind::gaussian_ring: {
      std::uniform_int_distribution<int> mode(0, kRingModes - 1);
      for (int i = 0; i < n; ++i) {
        const Vector c = ring_center(mode(rng));
        const double nx = normal(rng), ny = normal(rng);
        out(i, 0) = c[0] + kRingStd * nx;
        out(i, 1) = c[1] + kRingStd * ny;
      }
      break;
    }
    case DatasetKind::swiss_roll: {
      for (int i = 0; i < n; ++i) {
        const double t = 1.5 * std::numbers::pi * (1.0 + 2.0 * unif(rng));
        const double nx = normal(rng), ny = normal(rng);
        out(i, 0) = t * std::cos(t) + 0.25 * nx;
        out(i, 1) = t * std::sin(t) + 0.25 * ny;
      }
      break;
    }
    case DatasetKind::checkerboard: {
      std::uniform_int_distribution<int> coin(0, 1);
      for (int i = 0; i < n; ++i) {
        const double x1 = 4.0 * unif(rng) - 2.0;
        const double u = unif(rng);
        const int c = coin(rng);
        const double x2 = u - 2.0 * c + static_cast<double>(static_cast<int>(std::floor(x1)) & 1);
        out(i, 0) = 2.0 * x1;
        out(i, 1) = 2.0 * x2;
      }
      break;
    }
    case DatasetKind::delta_point: {
      const Vector p = spec.point.empty() ? default_delta_point(spec.dim)
                                          : Eigen::Map<const Vector>(spec.point.data(), spec.dim).eval();
      for (int i = 0; i < n; ++i) out.row(i) = p.transpose();
      break;
    }
  }
  return out;
}

}  // namespace detail

/// Draws n_points from the spec'd distribution. Normalization constants come from a fixed
/// reference draw of the same distribution, so every seed shares one affine map.
inline SyntheticDataset generate_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  spec.validate();
  SyntheticDataset ds;
  ds.spec = spec;
  Rng rng(seed);
  ds.points = detail::raw_points(spec, spec.n_points, rng);
  ds.shift = Vector::Zero(spec.dim);
  ds.scale = Vector::Ones(spec.dim);

  if (spec.normalize && spec.kind != DatasetKind::delta_point) {
    Rng ref_rng(0x5eedULL);
    const Batch ref = detail::raw_points(spec, 100000, ref_rng);
    ds.shift = ref.colwise().mean().transpose();
    const Batch centered = ref.rowwise() - ds.shift.transpose();
    ds.scale = (centered.colwise().squaredNorm() / static_cast<double>(ref.rows())).cwiseSqrt().transpose();
    ds.points = ((ds.points.rowwise() - ds.shift.transpose()).array().rowwise() / ds.scale.transpose().array()).matrix();
  }
  if (spec.kind == DatasetKind::gaussian_ring) {
    for (int k = 0; k < detail::kRingModes; ++k) {
      ds.mode_centers.push_back(((detail::ring_center(k) - ds.shift).array() / ds.scale.array()).matrix());
    }
  }
  return ds;
}

}  // namespace sadiff
