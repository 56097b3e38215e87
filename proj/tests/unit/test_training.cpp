#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "support.hpp"

using namespace sadiff;
using namespace sadiff::testing;

namespace {

std::vector<Batch> noise_window(int K, Eigen::Index rows, Rng& rng) {
  std::vector<Batch> out;
  for (int k = 0; k < K; ++k) out.push_back(standard_normal(rows, 2, rng));
  return out;
}

}  // namespace

TEST(Loss, OracleGivesZero) {
  const auto s = build_linear(50);
  Rng rng(1);
  const Batch x0 = standard_normal(16, 2, rng);
  const NoiseOracle oracle(s, x0);
  const auto eps = noise_window(3, 16, rng);
  EXPECT_NEAR(simple_loss(oracle, s, x0, 10, eps[0]).loss, 0.0, 1e-24);
  EXPECT_NEAR(sa_loss(oracle, s, x0, 10, std::span<const Batch>(eps), false).loss, 0.0, 1e-24);
  EXPECT_NEAR(sa_loss(oracle, s, x0, -1, std::span<const Batch>(eps), true).loss, 0.0, 1e-24);
}

TEST(Loss, ConstantOffsetStub) {
  const auto s = build_linear(50);
  Rng rng(2);
  const Batch x0 = standard_normal(8, 2, rng);
  Vector c(2);
  c << 0.3, -0.4;
  const NoiseOracle stub(s, x0, c);
  const auto eps = noise_window(2, 8, rng);
  EXPECT_NEAR(simple_loss(stub, s, x0, 5, eps[0]).loss, 0.25, 1e-12);
  EXPECT_NEAR(sa_loss(stub, s, x0, 5, std::span<const Batch>(eps), false).loss, 0.25, 1e-12);
  // t = 1: only s = 2 survives, so the mean is c/2
  EXPECT_NEAR(sa_loss(stub, s, x0, 1, std::span<const Batch>(eps), false).loss, 0.0625, 1e-12);
  // window past T keeps only s = T
  EXPECT_NEAR(sa_loss(stub, s, x0, 50, std::span<const Batch>(eps), false).loss, 0.0625, 1e-12);
  const double w = (s.tau(5) + s.tau(6)) / 2.0;
  EXPECT_NEAR(sa_loss(stub, s, x0, 5, std::span<const Batch>(eps), true).loss, w * w * 0.25, 1e-12);
}

TEST(Loss, SimpleLossMatchesScalarRecomputation) {
  const auto s = build_linear(50);
  const Mlp m = random_mlp(tiny_config(50), 3);
  Rng rng(4);
  const Batch x0 = standard_normal(6, 2, rng), eps = standard_normal(6, 2, rng);
  const Batch out = m.predict(diffuse(s, x0, 17, eps), 17);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < 6; ++i) {
    for (Eigen::Index d = 0; d < 2; ++d) sum += (out(i, d) - eps(i, d)) * (out(i, d) - eps(i, d));
  }
  EXPECT_NEAR(simple_loss(m, s, x0, 17, eps).loss, sum / 6.0, 1e-13);
}

TEST(Loss, ZeroPredictorLossIsDataDimension) {
  const auto s = build_linear(50);
  Rng rng(5);
  const Mlp m = Mlp::initialize(tiny_config(50), rng);
  const int n = 100000;
  const Batch x0 = standard_normal(n, 2, rng), eps = standard_normal(n, 2, rng);
  // ||eps||^2 is chi-square with 2 dof: variance 4
  EXPECT_NEAR(simple_loss(m, s, x0, 30, eps).loss, 2.0, 4.0 * std::sqrt(4.0 / n));
}

TEST(Loss, SaWithKOneIsSimpleOnInteriorSteps) {
  const auto s = build_linear(30);
  const Mlp m = random_mlp(tiny_config(30), 6);
  Rng rng(7);
  const Batch x0 = standard_normal(5, 2, rng);
  for (int t = 1; t <= 30; ++t) {
    const std::vector<Batch> eps{standard_normal(5, 2, rng)};
    const double sa = sa_loss(m, s, x0, t, std::span<const Batch>(eps), false).loss;
    if (t == 1) {
      EXPECT_EQ(sa, 0.0);
    } else {
      EXPECT_NEAR(sa, simple_loss(m, s, x0, t, eps[0]).loss, 1e-13) << t;
    }
  }
}

TEST(Loss, SaRejectsBadWindow) {
  const auto s = build_linear(30);
  const Mlp m = random_mlp(tiny_config(30), 6);
  const Batch x0 = Batch::Zero(2, 2);
  const std::vector<Batch> eps(2, Batch::Zero(2, 2));
  EXPECT_THROW(sa_loss(m, s, x0, -2, std::span<const Batch>(eps), false), std::invalid_argument);
  EXPECT_NO_THROW(sa_loss(m, s, x0, -1, std::span<const Batch>(eps), false));
  EXPECT_THROW(sa_loss(m, s, x0, 31, std::span<const Batch>(eps), false), std::invalid_argument);
  const std::vector<Batch> bad{Batch::Zero(2, 2), Batch::Zero(3, 2)};
  EXPECT_THROW(sa_loss(m, s, x0, 3, std::span<const Batch>(bad), false), std::invalid_argument);

  TrainConfig cfg;
  cfg.loss_kind = LossKind::sequence_aware;
  cfg.K = 3;
  LossBreakdown b;
  EXPECT_THROW(combined_loss(m, s, cfg, x0, 3, std::span<const Batch>(eps), b), std::invalid_argument);
}

struct GradCase {
  LossKind kind;
  int K;
  bool tau;
};

class LossGradient : public ::testing::TestWithParam<GradCase> {};

TEST_P(LossGradient, MatchesCentralDifferences) {
  const auto [kind, K, tau] = GetParam();
  const auto s = build_linear(20, 1e-3, 0.2);
  Rng rng(static_cast<std::uint64_t>(K * 10 + tau));
  TrainConfig cfg;
  cfg.loss_kind = kind;
  cfg.K = K;
  cfg.lambda = 0.7;
  cfg.use_tau_weights = tau;
  for (int rep = 0; rep < 10; ++rep) {
    Mlp m = random_mlp(tiny_config(20), 1000 + rep);
    const Batch x0 = standard_normal(3, 2, rng);
    std::uniform_int_distribution<int> pick_t(1, 20);
    const int t = pick_t(rng);
    const auto eps = noise_window(K, 3, rng);
    LossBreakdown b;
    const auto lg = combined_loss(m, s, cfg, x0, t, std::span<const Batch>(eps), b);
    const auto res = check_gradients(m, lg.gradients, [&](const Mlp& mm) {
      LossBreakdown bb;
      return combined_loss(mm, s, cfg, x0, t, std::span<const Batch>(eps), bb).loss;
    });
    EXPECT_LT(res.worst_relative, 1e-4) << "rep " << rep << " t=" << t;
    EXPECT_NEAR(b.l_total, b.l_simple + cfg.lambda * b.l_sa, 1e-14);
  }
}

INSTANTIATE_TEST_SUITE_P(Kinds, LossGradient,
                         ::testing::Values(GradCase{LossKind::simple, 2, false},
                                           GradCase{LossKind::sequence_aware, 2, false},
                                           GradCase{LossKind::sequence_aware, 3, false},
                                           GradCase{LossKind::sequence_aware, 4, false},
                                           GradCase{LossKind::sequence_aware, 2, true},
                                           GradCase{LossKind::sequence_aware, 3, true},
                                           GradCase{LossKind::sequence_aware, 4, true}));

TEST(Loss, CombinedMatchesSeparateTerms) {
  const auto s = build_linear(20);
  const Mlp m = random_mlp(tiny_config(20), 9);
  Rng rng(10);
  const Batch x0 = standard_normal(4, 2, rng);
  const auto eps = noise_window(3, 4, rng);
  TrainConfig cfg;
  cfg.loss_kind = LossKind::sequence_aware;
  cfg.K = 3;
  cfg.lambda = 2.0;
  LossBreakdown b;
  combined_loss(m, s, cfg, x0, 7, std::span<const Batch>(eps), b);
  EXPECT_NEAR(b.l_simple, simple_loss(m, s, x0, 7, eps[0]).loss, 1e-14);
  EXPECT_NEAR(b.l_sa, sa_loss(m, s, x0, 7, std::span<const Batch>(eps), false).loss, 1e-14);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.loss_kind = LossKind::sequence_aware;
  c.K = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c.K = 2;
  c.lambda = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.lambda = 1.0;
  c.ema_decay = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c.ema_decay = 0.999;
  EXPECT_NO_THROW(c.validate());
  EXPECT_THROW(parse_loss_kind("fancy"), ConfigError);
}

namespace {

const SyntheticDataset& ring() {
  static const SyntheticDataset ds = generate_dataset(DatasetSpec{}, 42);
  return ds;
}

MlpConfig small_model(int T) {
  MlpConfig c;
  c.hidden = {32, 32};
  c.T = T;
  return c;
}

}  // namespace

TEST(Train, LambdaZeroReproducesPlainTraining) {
  const auto s = build_linear(50);
  TrainConfig plain;
  plain.steps = 60;
  plain.batch_size = 16;
  plain.learning_rate = 1e-3;
  plain.seed = 3;
  TrainConfig sa0 = plain;
  sa0.loss_kind = LossKind::sequence_aware;
  sa0.K = 3;
  sa0.lambda = 0.0;
  const auto a = train(plain, small_model(50), ring().points, s);
  const auto b = train(sa0, small_model(50), ring().points, s);

  // Algorithm 1 written out with the same random stream.
  Rng rng(plain.seed);
  TrainState st = TrainState::initialize(small_model(50), plain, rng);
  MinibatchStream stream(ring().points);
  std::uniform_int_distribution<int> pick_t(1, 50);
  for (long k = 0; k < plain.steps; ++k) {
    const Batch x0 = stream.next(plain.batch_size, rng);
    const int t = pick_t(rng);
    const Batch eps = standard_normal(x0.rows(), 2, rng);
    const auto lg = simple_loss(st.model, s, x0, t, eps);
    adam_update(st.model.params(), lg.gradients, st.adam, plain.learning_rate);
    ema_update(st.ema, st.model.params());
    ASSERT_EQ(lg.loss, a.log[k].l_simple) << "step " << k;
  }
  for (std::size_t k = 0; k < parameter_count(st.model.params()); ++k) {
    ASSERT_EQ(parameter_at(a.state.model.params(), k), parameter_at(st.model.params(), k));
    ASSERT_EQ(parameter_at(b.state.model.params(), k), parameter_at(st.model.params(), k));
    ASSERT_EQ(parameter_at(b.state.ema.shadow, k), parameter_at(st.ema.shadow, k));
  }
  for (std::size_t k = 0; k < a.log.size(); ++k) {
    EXPECT_EQ(a.log[k].l_total, b.log[k].l_total);
    EXPECT_EQ(b.log[k].l_sa, 0.0);
  }
}

TEST(Train, ZeroLearningRateMovesOnlyEma) {
  const auto s = build_linear(20);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.ema_decay = 0.5;
  cfg.loss_kind = LossKind::sequence_aware;
  Rng rng(1);
  TrainState st = TrainState::initialize(small_model(20), cfg, rng);
  st.model = random_mlp(small_model(20), 2);
  st.ema.shadow = zeros_like<MlpParams>(st.model.params());
  const MlpParams before = st.model.params();
  const auto b = train_step(st, cfg, s, ring().points.topRows(32), rng);
  EXPECT_NEAR(b.l_total, b.l_simple + b.l_sa, 1e-14);
  for (std::size_t k = 0; k < parameter_count(before); ++k) {
    ASSERT_EQ(parameter_at(st.model.params(), k), parameter_at(before, k));
    ASSERT_EQ(parameter_at(st.ema.shadow, k), 0.5 * parameter_at(before, k));
  }
  EXPECT_EQ(st.adam.step, 1);
}

TEST(Train, ZeroStepsReturnsInitialization) {
  const auto s = build_linear(20);
  TrainConfig cfg;
  cfg.steps = 0;
  cfg.seed = 77;
  const auto r = train(cfg, small_model(20), ring().points, s);
  Rng rng(77);
  const Mlp init = Mlp::initialize(small_model(20), rng);
  EXPECT_TRUE(r.log.empty());
  for (std::size_t k = 0; k < parameter_count(init.params()); ++k) {
    ASSERT_EQ(parameter_at(r.state.model.params(), k), parameter_at(init.params(), k));
    ASSERT_EQ(parameter_at(r.state.ema.shadow, k), parameter_at(init.params(), k));
  }
}

TEST(Train, FixedSeedIsBitIdentical) {
  const auto s = build_linear(50);
  TrainConfig cfg;
  cfg.loss_kind = LossKind::sequence_aware;
  cfg.steps = 40;
  cfg.batch_size = 32;
  cfg.seed = 9;
  const auto a = train(cfg, small_model(50), ring().points, s);
  const auto b = train(cfg, small_model(50), ring().points, s);
  std::ostringstream la, lb;
  write_metrics_csv(la, a.log);
  write_metrics_csv(lb, b.log);
  EXPECT_EQ(la.str(), lb.str());
  EXPECT_EQ(la.str().substr(0, la.str().find('\n')), "step,l_simple,l_sa,l_total");
}

TEST(Train, LossDecreasesOnRing) {
  const auto s = build_linear(100);
  TrainConfig cfg;
  cfg.loss_kind = LossKind::sequence_aware;
  cfg.K = 2;
  cfg.lambda = 1.0;
  cfg.steps = 2000;
  cfg.learning_rate = 1e-3;
  cfg.seed = 1;
  MlpConfig mc;
  mc.T = 100;
  const auto r = train(cfg, mc, ring().points, s);
  double tail = 0.0;
  for (std::size_t k = r.log.size() - 200; k < r.log.size(); ++k) tail += r.log[k].l_simple;
  tail /= 200.0;
  // step 1 starts from the zero predictor, so its loss is about E||eps||^2 = 2
  EXPECT_LT(tail, r.log.front().l_simple);
}

TEST(Train, NonFiniteLossNamesStepAndTimestep) {
  const auto s = build_linear(20);
  TrainConfig cfg;
  Rng rng(1);
  TrainState st = TrainState::initialize(small_model(20), cfg, rng);
  st.model.params().layers.back().bias[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    train_step(st, cfg, s, ring().points.topRows(8), rng);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("t="), std::string::npos) << msg;
  }
}

TEST(Train, MinibatchStreamVisitsEveryRowPerPass) {
  Batch data(10, 1);
  for (int i = 0; i < 10; ++i) data(i, 0) = i;
  MinibatchStream stream(data);
  Rng rng(4);
  const Batch b = stream.next(10, rng);
  std::set<double> seen(b.data(), b.data() + 10);
  EXPECT_EQ(seen.size(), 10u);
}

TEST(Train, RejectsMismatchedInputs) {
  const auto s = build_linear(20);
  TrainConfig cfg;
  EXPECT_THROW(train(cfg, small_model(30), ring().points, s), std::invalid_argument);
  EXPECT_THROW(train(cfg, small_model(20), Batch(0, 2), s), std::invalid_argument);
  EXPECT_THROW(train(cfg, small_model(20), Batch::Zero(4, 3), s), std::invalid_argument);
}
