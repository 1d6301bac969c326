#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mpsguard/data.hpp"
#include "mpsguard/train.hpp"
#include "oracles.hpp"

using namespace mpsguard;

namespace {

Tensor random_input(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  Tensor x({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    const double v = u(rng);
    x(i, 0) = 1 - v;
    x(i, 1) = v;
  }
  return x;
}

}  // namespace

TEST(Train, CrossEntropyGradientIsSoftmaxMinusOneHot) {
  const std::vector<double> z{1.0, -0.5};
  const auto ce = cross_entropy(z, 0);
  const double p0 = std::exp(1.0) / (std::exp(1.0) + std::exp(-0.5));
  EXPECT_NEAR(ce.loss, -std::log(p0), 1e-14);
  EXPECT_NEAR(ce.grad[0], p0 - 1, 1e-14);
  EXPECT_NEAR(ce.grad[1], 1 - p0, 1e-14);
  const std::vector<double> big{1000.0, -1000.0};
  EXPECT_TRUE(std::isfinite(cross_entropy(big, 1).loss));
}

TEST(Train, AdamFirstStepMovesByLearningRate) {
  AdamState st(2, 0.1, 0.0);
  std::vector<double> p{1.0, -1.0};
  const std::vector<double> g{3.0, -0.01};
  adam_step(st, p, g);
  EXPECT_NEAR(p[0], 0.9, 1e-6);
  EXPECT_NEAR(p[1], -0.9, 1e-4);
}

TEST(Train, MpsGradientsMatchFiniteDifferences) {
  for (std::size_t o : {std::size_t{0}, std::size_t{2}, std::size_t{5}}) {
    const MpsModel m = init_mps(6, 2, 2, 2, o, 40 + o);
    Rng rng(o);
    std::vector<Tensor> xs;
    std::vector<int> ys;
    for (int i = 0; i < 4; ++i) {
      xs.push_back(random_input(5, rng));
      ys.push_back(i % 2);
    }
    const auto g = mps_gradients(m, xs, ys);
    std::vector<double> analytic;
    for (const auto& t : g.sites) analytic.insert(analytic.end(), t.data().begin(), t.data().end());
    const auto fd = oracle::finite_difference(
        [&](const std::vector<double>& p) {
          const MpsModel q = unflatten_params(m, p);
          double loss = 0;
          for (std::size_t i = 0; i < xs.size(); ++i) loss += cross_entropy(forward(q, xs[i]), ys[i]).loss;
          return loss / static_cast<double>(xs.size());
        },
        flatten_params(m));
    for (std::size_t i = 0; i < fd.size(); ++i) EXPECT_LT(oracle::rel_err(analytic[i], fd[i]), 1e-6) << o << "/" << i;
  }
}

TEST(Train, MpsLearnsSurrogateTask) {
  const Dataset d = gen_surrogate(2000, 1, 0.5, surrogate_targets(), 1);
  const Dataset test = gen_surrogate(1000, 1, 0.5, surrogate_targets(), 2);
  TrainConfig cfg = mps_train_defaults();
  cfg.seed = 3;
  const auto r = train_model(init_mps(6, 2, 2, 2, 5, 4), d, cfg);
  EXPECT_EQ(r.history.size(), 20u);
  EXPECT_GT(mps_accuracy(r.model, test, 5), 0.75);
  EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
}

TEST(Train, NetworkLearnsSurrogateTaskAndKeepsBestSnapshot) {
  const Dataset d = gen_surrogate(1000, 1, 0.5, surrogate_targets(), 1);
  TrainConfig cfg = nn_train_defaults();
  cfg.epochs = 30;
  cfg.seed = 9;
  const auto r = train_model(init_mlp({9, 16, 16, 8, 4, 2}, 2), d, cfg);
  ASSERT_EQ(r.history.size(), 30u);
  double best = 0;
  for (const auto& h : r.history) best = std::max(best, h.val_acc);
  EXPECT_DOUBLE_EQ(r.history[r.best_epoch - 1].val_acc, best);
  EXPECT_GT(best, 0.7);
}

TEST(Train, PatienceStopsEarly) {
  const Dataset d = gen_surrogate(400, 1, 0.5, surrogate_targets(), 1);
  TrainConfig cfg = nn_train_defaults();
  cfg.epochs = 500;
  cfg.patience = 5;
  const auto r = train_model(init_mlp({9, 4, 2}, 2), d, cfg);
  EXPECT_LT(r.history.size(), 500u);
  EXPECT_EQ(r.history.size() - r.best_epoch, 5u);
}

TEST(Train, TrainingIsDeterministic) {
  const Dataset d = gen_surrogate(500, 0, 0.8, surrogate_targets(), 1);
  TrainConfig cfg = mps_train_defaults();
  cfg.epochs = 3;
  cfg.seed = 11;
  const auto a = train_model(init_mps(6, 2, 2, 2, 5, 4), d, cfg).model;
  const auto b = train_model(init_mps(6, 2, 2, 2, 5, 4), d, cfg).model;
  EXPECT_EQ(flatten_params(a), flatten_params(b));
  cfg.fixed_embedding = true;
  const auto c = train_model(init_mps(6, 2, 2, 2, 5, 4), d, cfg).model;
  EXPECT_NE(flatten_params(c), flatten_params(a));
}

TEST(Train, MissingClassIsADataError) {
  Dataset d = gen_surrogate(100, 1, 0.5, surrogate_targets(), 1);
  const std::size_t li = d.label_index();
  for (auto& r : d.rows) r[li] = d.schema[li].levels[1];
  EXPECT_THROW(train_model(init_mps(6, 2, 2, 2, 5, 4), d, mps_train_defaults()), DataError);
}

TEST(Train, HistoryCsvHasOneRowPerEpoch) {
  std::vector<EpochRecord> h{{1, 0.5, 0.6}, {2, 0.4, 0.7}};
  std::ostringstream os;
  write_history_csv(os, h);
  EXPECT_EQ(os.str(), "epoch,train_loss,train_acc,val_acc\n1,0.500000,0.600000,\n2,0.400000,0.700000,\n");
}

TEST(Train, ToyModelLearnsRelevantFeature) {
  const Dataset d = gen_toy(1000, 1, 1);
  TrainConfig cfg{32, 0.01, 0.0, 50, 0.0, 2, false, 0};
  const auto r = train_toy(init_toy(3), d, cfg);
  EXPECT_GT(toy_accuracy(r.model, d), 0.95);
}
