#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "bqfd/baselines.hpp"

using namespace bqfd;

namespace {

TabularMdp random_env(std::uint64_t seed) {
  Rng rng(seed);
  RandomMdpSpec spec;
  spec.num_states = 2 + rng.index(3);
  spec.num_actions = 2 + rng.index(2);
  spec.horizon = 2 + rng.index(4);
  spec.noise_std = 0.3;
  return random_mdp(spec, rng);
}

void expect_same_run(const TrainResult& a, const TrainResult& b) {
  EXPECT_EQ(a.q.values(), b.q.values());
  EXPECT_EQ(a.curve, b.curve);
  EXPECT_EQ(a.counts, b.counts);
}

}  // namespace

// With alpha_n = 1/(beta + n) and a constant target c, Q after L updates is
// c * L / (beta - 1 + L) for beta >= 1; beta = 1 hits c on the first update.
TEST(QLearning, SingleStateConvergesToReward) {
  const double c = 0.73;
  const TabularMdp m(1, 1, 1, {1.0}, {c}, {0.0}, 1.0, {1.0});
  BaselineConfig cfg;
  cfg.episodes = 10000;
  cfg.beta = 1.0;
  EXPECT_NEAR(q_learning_train(m, cfg).q(0, 0, 0), c, 1e-6);
  cfg.beta = 2.0;
  EXPECT_NEAR(q_learning_train(m, cfg).q(0, 0, 0), c * 10000.0 / 10001.0, 1e-12);
}

TEST(QLearning, GreedyNeverFindsTreasure) {
  const auto m = make_deep_sea(10, DeepSeaReward::kTreasure);
  BaselineConfig cfg;
  cfg.epsilon = 0.0;
  cfg.episodes = 500;
  const auto res = q_learning_train(m, cfg);
  for (const auto& row : res.curve.rows) EXPECT_EQ(row.train_return, 0.0);
  for (double x : res.q.values()) EXPECT_EQ(x, 0.0);
}

TEST(QLearning, SeedDemosAreReplayed) {
  const auto m = make_deep_sea(10, DeepSeaReward::kTreasure);
  BaselineConfig cfg;
  cfg.epsilon = 0.0;
  cfg.episodes = 5;
  const auto demos = scripted_right_expert(10);
  const auto res = q_learning_train(m, cfg, &demos);
  EXPECT_NEAR(res.curve.rows.back().train_return, 0.99, 1e-12);
  // Replays do not count as visits.
  EXPECT_EQ(res.counts.total(), 5 * m.horizon());
}

TEST(QLearning, Deterministic) {
  const auto m = random_env(2);
  BaselineConfig cfg;
  cfg.episodes = 200;
  cfg.seed = 9;
  expect_same_run(q_learning_train(m, cfg), q_learning_train(m, cfg));
}

TEST(Margin, NoOpWhenExpertLeadsByMargin) {
  std::vector<double> row{1.0, 2.0, 0.5};
  const auto before = row;
  EXPECT_FALSE(margin_update(row, 1, 0.8, 0.5));
  EXPECT_EQ(row, before);
  EXPECT_DOUBLE_EQ(margin_hinge(row, 1, 0.8), 0.0);
}

TEST(Margin, ActiveUpdateMovesTheRightEntries) {
  std::vector<double> row{1.0, 1.5};
  // a* = 0 since 1.0 + 0.8 > 1.5; delta = 0.3.
  EXPECT_TRUE(margin_update(row, 1, 0.8, 0.5));
  EXPECT_DOUBLE_EQ(row[1], 1.65);
  EXPECT_DOUBLE_EQ(row[0], 0.85);
}

TEST(Margin, HingeStrictlyDecreasesWhenActive) {
  Rng rng(1);
  int active = 0;
  for (int i = 0; i < 2000; ++i) {
    const std::size_t A = 2 + rng.index(4);
    std::vector<double> row(A);
    for (double& x : row) x = rng.uniform(-2.0, 2.0);
    const std::size_t ae = rng.index(A);
    const double m = rng.uniform(0.0, 1.5);
    const double rate = rng.uniform(0.01, 0.5);
    const double before = margin_hinge(row, ae, m);
    if (margin_update(row, ae, m, rate)) {
      ++active;
      EXPECT_LT(margin_hinge(row, ae, m), before);
    } else {
      EXPECT_DOUBLE_EQ(before, 0.0);
    }
  }
  EXPECT_GT(active, 100);
}

TEST(Dqfd, NoDemosNoMarginEqualsQLearning) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = random_env(seed);
    BaselineConfig cfg;
    cfg.episodes = 200;
    cfg.seed = seed;
    cfg.margin = 0.0;
    expect_same_run(dqfd_margin_train(m, {}, cfg), q_learning_train(m, cfg));
  }
}

TEST(Dqfd, TreasureWithRightExpert) {
  const auto m = make_deep_sea(20, DeepSeaReward::kTreasure);
  BaselineConfig cfg;
  cfg.epsilon = 0.0;
  cfg.episodes = 10;
  EXPECT_NEAR(dqfd_margin_train(m, scripted_right_expert(20), cfg).curve.rows.back().train_return, 0.99, 1e-12);
}

TEST(Dqfd, BombKeepsGoingRight) {
  const auto m = make_deep_sea(20, DeepSeaReward::kBomb);
  BaselineConfig cfg;
  cfg.epsilon = 0.0;
  cfg.episodes = 1000;
  const auto res = dqfd_margin_train(m, scripted_right_expert(20), cfg);
  EXPECT_NEAR(res.curve.rows.back().eval_return, -1.01, 1e-12);
}

TEST(Dqfd, FixedExpertRate) {
  const auto m = make_deep_sea(5, DeepSeaReward::kTreasure);
  BaselineConfig cfg;
  cfg.epsilon = 0.0;
  cfg.episodes = 3;
  cfg.expert_rate = 0.25;
  const auto a = dqfd_margin_train(m, scripted_right_expert(5), cfg);
  const auto b = dqfd_margin_train(m, scripted_right_expert(5), cfg);
  expect_same_run(a, b);
  cfg.expert_rate = std::nullopt;
  EXPECT_NE(dqfd_margin_train(m, scripted_right_expert(5), cfg).q.values(), a.q.values());
}

TEST(BaselineConfig, Rejections) {
  const auto m = make_deep_sea(3, DeepSeaReward::kTreasure);
  auto bad = [&](auto mutate) {
    BaselineConfig c;
    mutate(c);
    EXPECT_THROW(q_learning_train(m, c), std::invalid_argument);
    EXPECT_THROW(dqfd_margin_train(m, {}, c), std::invalid_argument);
  };
  bad([](BaselineConfig& c) { c.epsilon = -0.1; });
  bad([](BaselineConfig& c) { c.margin = -1.0; });
  bad([](BaselineConfig& c) { c.expert_rate = 0.0; });
  bad([](BaselineConfig& c) { c.episodes = 0; });
  bad([](BaselineConfig& c) { c.beta = 0.0; });
}

TEST(BaselineConfig, FromJson) {
  const auto c = baseline_config_from_json(nlohmann::json::parse(R"({"margin": 0.5, "expert_rate": 0.1})"));
  EXPECT_EQ(c.margin, 0.5);
  EXPECT_EQ(c.expert_rate, 0.1);
  EXPECT_EQ(c.epsilon, 0.1);
  EXPECT_FALSE(baseline_config_from_json(nlohmann::json::parse(R"({"expert_rate": null})")).expert_rate);
  EXPECT_THROW(baseline_config_from_json(nlohmann::json::parse(R"({"eta": 3})")), std::invalid_argument);
}
