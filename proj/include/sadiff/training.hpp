#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sadiff/common.hpp"
#include "sadiff/forward.hpp"
#include "sadiff/predictor.hpp"
#include "sadiff/schedule.hpp"

namespace sadiff {

enum class LossKind { simple, sequence_aware };

inline std::string to_string(LossKind k) { return k == LossKind::simple ? "simple" : "sequence_aware"; }

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "simple") return LossKind::simple;
  if (s == "sequence_aware") return LossKind::sequence_aware;
  throw ConfigError("loss_kind: unknown value '" + s + "' (expected simple|sequence_aware)");
}

struct TrainConfig {
  LossKind loss_kind = LossKind::simple;
  int K = 2;
  double lambda = 1.0;
  bool use_tau_weights = false;
  double learning_rate = 2e-4;
  int batch_size = 128;
  long steps = 1000;
  double ema_decay = 0.9999;
  std::uint64_t seed = 0;

  void validate() const {
    if (K < 1) throw ConfigError("K: must be >= 1, got " + std::to_string(K));
    if (loss_kind == LossKind::sequence_aware && K < 2) {
      throw ConfigError("K: sequence_aware loss needs K >= 2, got " + std::to_string(K));
    }
    if (!(lambda >= 0.0)) throw ConfigError("lambda: must be >= 0, got " + std::to_string(lambda));
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate: must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size: must be >= 1");
    if (steps < 0) throw ConfigError("steps: must be >= 0");
    if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw ConfigError("ema_decay: must lie in [0, 1]");
  }

  bool sequence_term_active() const { return loss_kind == LossKind::sequence_aware && lambda > 0.0; }
};

struct LossBreakdown {
  double l_simple = 0.0;
  double l_sa = 0.0;
  double l_total = 0.0;
};

template <class G>
struct LossAndGradients {
  double loss = 0.0;
  G gradients;
};

/// Per-term weight inside the sequence-aware window: tau_s, or the indicator of s in {2..T}.
inline double window_weight(const NoiseSchedule& sched, int s, bool use_tau_weights) {
  if (s < 2 || s > sched.T()) return 0.0;
  return use_tau_weights ? sched.tau(s) : 1.0;
}

/// Mean over rows of ||f(x_t, t) - eps||^2 with x_t = diffuse(x0, t, eps), and its gradient.
template <DifferentiablePredictor P>
LossAndGradients<typename P::Gradients> simple_loss(const P& f, const NoiseSchedule& sched, const Batch& x0,
                                                    int t, const Batch& eps) {
  const Batch xt = diffuse(sched, x0, t, eps);
  const auto pass = f.run(xt, t);
  const Batch err = pass.output - eps;
  const double n = static_cast<double>(x0.rows());
  LossAndGradients<typename P::Gradients> out{mean_row_sq_norm(err), f.zero_gradients()};
  f.accumulate_gradients(pass, (2.0 / n) * err, out.gradients);
  return out;
}

/// Mean over rows of ||(1/K) sum_{s=t}^{t+K-1} w_s (f(x_s, s) - eps_s)||^2, K = eps_seq.size().
/// Every x_s is diffused from the same x0 with its own eps_s. Terms with zero weight are skipped.
template <DifferentiablePredictor P>
LossAndGradients<typename P::Gradients> sa_loss(const P& f, const NoiseSchedule& sched, const Batch& x0, int t,
                                                std::span<const Batch> eps_seq, bool use_tau_weights) {
  const int K = static_cast<int>(eps_seq.size());
  if (K < 1) throw std::invalid_argument("sa_loss: empty noise sequence");
  if (t < 1 - K || t > sched.T()) {
    throw std::invalid_argument("sa_loss: window start " + std::to_string(t) + " outside " +
                                std::to_string(1 - K) + ".." + std::to_string(sched.T()));
  }
  for (const auto& e : eps_seq) require_same_shape(x0, e, "sa_loss");

  struct Term {
    double weight;
    typename P::Pass pass;
  };
  std::vector<Term> terms;
  Batch r = Batch::Zero(x0.rows(), x0.cols());
  for (int k = 0; k < K; ++k) {
    const int s = t + k;
    const double w = window_weight(sched, s, use_tau_weights);
    if (w == 0.0) continue;
    auto pass = f.run(diffuse(sched, x0, s, eps_seq[k]), s);
    r += (w / K) * (pass.output - eps_seq[k]);
    terms.push_back({w, std::move(pass)});
  }
  LossAndGradients<typename P::Gradients> out{mean_row_sq_norm(r), f.zero_gradients()};
  const double n = static_cast<double>(x0.rows());
  for (const auto& term : terms) {
    f.accumulate_gradients(term.pass, (2.0 * term.weight / (K * n)) * r, out.gradients);
  }
  return out;
}

/// L = L_simple(t) + lambda * L_sa(t..t+K-1), sharing the prediction at t between both terms.
/// eps_window[0] is the noise at t; the remaining entries are only read when the sequence
/// term is active.
template <DifferentiablePredictor P>
LossAndGradients<typename P::Gradients> combined_loss(const P& f, const NoiseSchedule& sched, const TrainConfig& cfg,
                                                      const Batch& x0, int t, std::span<const Batch> eps_window,
                                                      LossBreakdown& breakdown) {
  const double n = static_cast<double>(x0.rows());
  const auto pass_t = f.run(diffuse(sched, x0, t, eps_window[0]), t);
  const Batch err_t = pass_t.output - eps_window[0];
  breakdown = {};
  breakdown.l_simple = mean_row_sq_norm(err_t);
  Batch grad_t = (2.0 / n) * err_t;

  LossAndGradients<typename P::Gradients> out{0.0, f.zero_gradients()};
  if (cfg.sequence_term_active()) {
    const int K = cfg.K;
    if (static_cast<int>(eps_window.size()) != K) {
      throw std::invalid_argument("combined_loss: noise window length " + std::to_string(eps_window.size()) +
                                  " != K = " + std::to_string(K));
    }
    struct Term {
      int k;
      double weight;
      typename P::Pass pass;
    };
    std::vector<Term> terms;
    Batch r = Batch::Zero(x0.rows(), x0.cols());
    double w_t = 0.0;
    for (int k = 0; k < K; ++k) {
      const int s = t + k;
      const double w = window_weight(sched, s, cfg.use_tau_weights);
      if (w == 0.0) continue;
      if (k == 0) {
        w_t = w;
        r += (w / K) * err_t;
        continue;
      }
      auto pass = f.run(diffuse(sched, x0, s, eps_window[k]), s);
      r += (w / K) * (pass.output - eps_window[k]);
      terms.push_back({k, w, std::move(pass)});
    }
    breakdown.l_sa = mean_row_sq_norm(r);
    const double scale = cfg.lambda * 2.0 / (K * n);
    if (w_t != 0.0) grad_t += (scale * w_t) * r;
    for (const auto& term : terms) f.accumulate_gradients(term.pass, (scale * term.weight) * r, out.gradients);
  }
  f.accumulate_gradients(pass_t, grad_t, out.gradients);
  breakdown.l_total = breakdown.l_simple + cfg.lambda * breakdown.l_sa;
  out.loss = breakdown.l_total;
  return out;
}

/// Adam first/second moment estimates.
struct AdamState {
  MlpParams m;
  MlpParams v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

inline AdamState make_adam_state(const MlpParams& like) {
  return {zeros_like<MlpParams>(like), zeros_like<MlpParams>(like)};
}

inline void adam_update(MlpParams& params, const MlpGradients& grads, AdamState& state, double lr) {
  if (!same_shapes(params, grads) || !same_shapes(params, state.m)) {
    throw std::invalid_argument("adam_update: shape mismatch");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    auto update = [&](double* p, const double* g, double* m, double* v, Eigen::Index n) {
      for (Eigen::Index i = 0; i < n; ++i) {
        m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
        v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
        p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + state.epsilon);
      }
    };
    auto& P = params.layers[li];
    const auto& G = grads.layers[li];
    auto& M = state.m.layers[li];
    auto& V = state.v.layers[li];
    update(P.weight.data(), G.weight.data(), M.weight.data(), V.weight.data(), P.weight.size());
    update(P.bias.data(), G.bias.data(), M.bias.data(), V.bias.data(), P.bias.size());
  }
}

/// Everything the training loop mutates.
struct TrainState {
  Mlp model;
  EmaParams ema;
  AdamState adam;

  static TrainState initialize(const MlpConfig& model_cfg, const TrainConfig& cfg, Rng& rng) {
    Mlp model = Mlp::initialize(model_cfg, rng);
    EmaParams ema{model.params(), cfg.ema_decay};
    AdamState adam = make_adam_state(model.params());
    return {std::move(model), std::move(ema), std::move(adam)};
  }

  /// The predictor used for sampling and evaluation.
  Mlp ema_model() const { return Mlp(model.config(), ema.shadow); }
};

/// One optimisation step: draw t ~ U{1..T}, the noise window, take an Adam step on
/// L_simple + lambda L_sa, then update the EMA. With the sequence term inactive the random
/// stream matches plain L_simple training draw for draw.
inline LossBreakdown train_step(TrainState& state, const TrainConfig& cfg, const NoiseSchedule& sched,
                                const Batch& x0, Rng& rng) {
  std::uniform_int_distribution<int> pick_t(1, sched.T());
  const int t = pick_t(rng);
  std::vector<Batch> eps;
  eps.reserve(static_cast<std::size_t>(cfg.K));
  eps.push_back(standard_normal(x0.rows(), x0.cols(), rng));
  if (cfg.sequence_term_active()) {
    for (int k = 1; k < cfg.K; ++k) eps.push_back(standard_normal(x0.rows(), x0.cols(), rng));
  }
  LossBreakdown breakdown;
  auto lg = combined_loss(state.model, sched, cfg, x0, t, eps, breakdown);
  if (!std::isfinite(breakdown.l_total)) {
    throw NumericalError("train_step: non-finite loss at step " + std::to_string(state.adam.step + 1) +
                         " (t=" + std::to_string(t) + ", l_simple=" + std::to_string(breakdown.l_simple) +
                         ", l_sa=" + std::to_string(breakdown.l_sa) + ")");
  }
  adam_update(state.model.params(), lg.gradients, state.adam, cfg.learning_rate);
  ema_update(state.ema, state.model.params());
  return breakdown;
}

/// Cycles through the rows of a dataset in shuffled order, reshuffling at each pass.
class MinibatchStream {
 public:
  explicit MinibatchStream(const Batch& data) : data_(data), order_(static_cast<std::size_t>(data.rows())) {
    if (data.rows() == 0) throw std::invalid_argument("MinibatchStream: empty dataset");
    std::iota(order_.begin(), order_.end(), Eigen::Index{0});
    cursor_ = order_.size();
  }

  Batch next(int batch_size, Rng& rng) {
    Batch out(batch_size, data_.cols());
    for (int i = 0; i < batch_size; ++i) {
      if (cursor_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng);
        cursor_ = 0;
      }
      out.row(i) = data_.row(order_[cursor_++]);
    }
    return out;
  }

 private:
  const Batch& data_;
  std::vector<Eigen::Index> order_;
  std::size_t cursor_;
};

struct TrainResult {
  TrainState state;
  std::vector<LossBreakdown> log;
};

/// Runs cfg.steps steps from a fresh initialisation seeded by cfg.seed. `on_step`, if set, is
/// called after every step with (step, breakdown).
inline TrainResult train(const TrainConfig& cfg, const MlpConfig& model_cfg, const Batch& dataset,
                         const NoiseSchedule& sched,
                         const std::function<void(long, const LossBreakdown&)>& on_step = {}) {
  cfg.validate();
  if (dataset.rows() == 0) throw std::invalid_argument("train: dataset is empty");
  if (dataset.cols() != model_cfg.data_dim) {
    throw std::invalid_argument("train: dataset has " + std::to_string(dataset.cols()) +
                                " columns but model.data_dim = " + std::to_string(model_cfg.data_dim));
  }
  if (model_cfg.T != sched.T()) throw std::invalid_argument("train: model.T differs from schedule T");
  Rng rng(cfg.seed);
  TrainResult result{TrainState::initialize(model_cfg, cfg, rng), {}};
  result.log.reserve(static_cast<std::size_t>(cfg.steps));
  MinibatchStream stream(dataset);
  for (long step = 1; step <= cfg.steps; ++step) {
    const Batch x0 = stream.next(cfg.batch_size, rng);
    result.log.push_back(train_step(result.state, cfg, sched, x0, rng));
    if (on_step) on_step(step, result.log.back());
  }
  return result;
}

}  // namespace sadiff
