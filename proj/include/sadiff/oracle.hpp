#pragma once

#include <stdexcept>
#include <vector>

#include "sadiff/common.hpp"
#include "sadiff/forward.hpp"
#include "sadiff/predictor.hpp"
#include "sadiff/schedule.hpp"

namespace sadiff {

/// Gradient type for predictors without trainable parameters.
struct NoGradients {
  std::vector<DenseLayer> layers;
};

/// Returns the exact noise relating a known x0 to x_t, shifted by a constant per-dimension
/// offset c (zero by default). With c = 0 it is the ideal noise predictor; with c != 0 every
/// prediction error equals c, which makes gap and loss quantities computable by hand.
///
/// A single-row x0 is broadcast against every row of x_t.
class NoiseOracle {
 public:
  using Gradients = NoGradients;
  struct Pass {
    Batch output;
  };

  NoiseOracle(NoiseSchedule sched, Batch x0) : sched_(std::move(sched)), x0_(std::move(x0)) {
    offset_ = Vector::Zero(x0_.cols());
  }
  NoiseOracle(NoiseSchedule sched, Batch x0, Vector offset)
      : sched_(std::move(sched)), x0_(std::move(x0)), offset_(std::move(offset)) {
    if (offset_.size() != x0_.cols()) throw std::invalid_argument("NoiseOracle: offset dimension mismatch");
  }

  Batch predict(const Batch& xt, int t) const {
    Batch eps = recover_noise(sched_, broadcast(xt.rows()), xt, t);
    eps.rowwise() += offset_.transpose();
    return eps;
  }

  Pass run(const Batch& xt, int t) const { return {predict(xt, t)}; }
  Gradients zero_gradients() const { return {}; }
  void accumulate_gradients(const Pass&, const Batch&, Gradients&) const {}

 private:
  Batch broadcast(Eigen::Index rows) const {
    if (x0_.rows() == rows) return x0_;
    if (x0_.rows() == 1) return x0_.replicate(rows, 1);
    throw std::invalid_argument("NoiseOracle: x0 has " + std::to_string(x0_.rows()) +
                                " rows but x_t has " + std::to_string(rows));
  }

  NoiseSchedule sched_;
  Batch x0_;
  Vector offset_;
};

/// Wraps a predictor and rescales its error against a known noise oracle:
/// g(x, t) = eps(x, t) + scale * (f(x, t) - eps(x, t)).
template <NoisePredictor P>
class ScaledErrorPredictor {
 public:
  ScaledErrorPredictor(const P& inner, const NoiseOracle& oracle, double scale)
      : inner_(inner), oracle_(oracle), scale_(scale) {}

  Batch predict(const Batch& xt, int t) const {
    const Batch eps = oracle_.predict(xt, t);
    return eps + scale_ * (inner_.predict(xt, t) - eps);
  }

 private:
  const P& inner_;
  const NoiseOracle& oracle_;
  double scale_;
};

}  // namespace sadiff
