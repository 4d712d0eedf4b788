#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "bqfd/gekf.hpp"
#include "bqfd/oracles.hpp"

using namespace bqfd;
using namespace bqfd::gekf;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

EpisodeInputs without_demos(EpisodeInputs in) {
  for (auto& d : in.demos) d.clear();
  return in;
}

}  // namespace

TEST(BuildTransform, PicksArgmaxAtSuccessor) {
  const PairLayout L{2, 2};
  const Vector q_next = vec({1, 2, 3, 0});
  const std::vector<std::size_t> next{1, 0, 0, 1};
  const auto t = build_transform(L, q_next, next, 1.0);
  const Matrix d = t.dense();
  EXPECT_EQ(d(L.index(0, 0), L.index(1, 0)), 1.0);
  EXPECT_EQ(d.row(L.index(0, 0)).sum(), 1.0);
  EXPECT_EQ(d(L.index(0, 1), L.index(0, 1)), 1.0);
}

TEST(BuildTransform, TiesUseActionZero) {
  const PairLayout L{2, 3};
  const Vector q_next = Vector::Constant(6, 0.4);
  const std::vector<std::size_t> next{0, 1, 1, 0, 1, 0};
  const auto t = build_transform(L, q_next, next, 0.9);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(t.target[i], L.index(next[i], 0));
}

TEST(BuildTransform, ZeroGammaIsZeroMatrix) {
  const PairLayout L{2, 2};
  const auto t = build_transform(L, vec({1, 2, 3, 4}), std::vector<std::size_t>{0, 1, 1, 0}, 0.0);
  EXPECT_TRUE(t.dense().isZero(0.0));
}

TEST(BuildTransform, RejectsBadSizes) {
  const PairLayout L{2, 2};
  EXPECT_THROW(build_transform(L, vec({1, 2, 3}), std::vector<std::size_t>{0, 1, 1, 0}, 1.0),
               std::invalid_argument);
  EXPECT_THROW(build_transform(L, vec({1, 2, 3, 4}), std::vector<std::size_t>{0, 1, 2, 0}, 1.0),
               std::invalid_argument);
}

TEST(ExpertScore, UniformTwoActions) {
  const PairLayout L{1, 2};
  const std::vector<ExpertAction> demos{{0, 0}};
  const Vector g = expert_score(L, vec({0.3, 0.3}), demos, 1.0);
  EXPECT_DOUBLE_EQ(g[0], 0.5);
  EXPECT_DOUBLE_EQ(g[1], -0.5);
}

TEST(ExpertScore, SaturatedIsZero) {
  const PairLayout L{1, 2};
  const std::vector<ExpertAction> demos{{0, 0}};
  EXPECT_LT(expert_score(L, vec({40.0, 0.0}), demos, 1.0).lpNorm<Eigen::Infinity>(), 1e-15);
}

TEST(ExpertScore, NonDemoStatesAreZeroAndRecordsAdd) {
  const PairLayout L{2, 2};
  const std::vector<ExpertAction> demos{{1, 1}, {1, 1}};
  const Vector g = expert_score(L, Vector::Zero(4), demos, 2.0);
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], 0.0);
  EXPECT_DOUBLE_EQ(g[3], 2.0);  // 2 records * eta 2 * (1 - 0.5)
}

TEST(ExpertScore, MatchesFiniteDifferences) {
  for (std::size_t i = 0; i < 100; ++i) {
    EXPECT_LE(oracle::derivative_errors(oracle::random_derivative_case(1, i)).score, 1e-6) << i;
  }
}

TEST(NegHessian, UniformBlock) {
  const PairLayout L{1, 2};
  const std::vector<ExpertAction> demos{{0, 1}};
  const Matrix u = expert_neg_hessian(L, Vector::Zero(2), demos, 1.0);
  EXPECT_DOUBLE_EQ(u(0, 0), 0.25);
  EXPECT_DOUBLE_EQ(u(0, 1), -0.25);
  EXPECT_DOUBLE_EQ(u(1, 0), -0.25);
  EXPECT_DOUBLE_EQ(u(1, 1), 0.25);
}

TEST(NegHessian, OneHotIsZero) {
  const PairLayout L{1, 3};
  const std::vector<ExpertAction> demos{{0, 0}};
  EXPECT_LT(expert_neg_hessian(L, vec({50, 0, 0}), demos, 1.0).lpNorm<Eigen::Infinity>(), 1e-20);
}

TEST(NegHessian, MatchesFiniteDifferencesAndIsPsd) {
  for (std::size_t i = 0; i < 100; ++i) {
    const auto c = oracle::random_derivative_case(2, i);
    EXPECT_LE(oracle::derivative_errors(c).neg_hessian, 1e-5) << i;
    EXPECT_GE(min_eigenvalue(expert_neg_hessian(c.layout, c.q, c.demos, c.eta)), -1e-12);
  }
}

TEST(BackwardPass, HandDerivedExample) {
  const auto pass = gekf_backward_pass(oracle::symmetric_instance(1.0, 1.0));
  EXPECT_TRUE(pass.w_pred[0].isApprox(Matrix::Identity(2, 2), 1e-15));
  Matrix expect(2, 2);
  expect << 5.0 / 6, 1.0 / 6, 1.0 / 6, 5.0 / 6;
  EXPECT_LE((pass.w[0] - expect).lpNorm<Eigen::Infinity>(), 1e-12);
  EXPECT_NEAR(pass.q(0, 0, 0), 5.0 / 12, 1e-10);
  EXPECT_NEAR(pass.q(0, 0, 1), -5.0 / 12, 1e-10);
  EXPECT_EQ(pass.q(1, 0, 0), 0.0);
  EXPECT_TRUE(pass.w[1].isZero(0.0));
}

// Without demos, Q is the sampled Bellman chain and
// W_h = lambda * sum_{k=h}^{H-1} M_k M_k^T with M_k = T_h ... T_{k-1}.
TEST(BackwardPass, NoDemosClosedForm) {
  for (std::size_t i = 0; i < 20; ++i) {
    const auto in = without_demos(oracle::random_instance(3, i));
    const auto pass = gekf_backward_pass(in);
    const std::size_t H = in.horizon(), n = in.layout.size();
    Vector next = Vector::Zero(static_cast<Eigen::Index>(n));
    for (std::size_t h = H; h-- > 0;) {
      next = in.rewards[h] + pass.transforms[h].apply(next);
      EXPECT_LE((to_vector(pass.q.slice(h)) - next).lpNorm<Eigen::Infinity>(), 1e-14);
      Matrix w = Matrix::Zero(n, n), m = Matrix::Identity(n, n);
      for (std::size_t k = h; k < H; ++k) {
        w += in.lambda * m * m.transpose();
        m = m * pass.transforms[k].dense();
      }
      EXPECT_LE((pass.w[h] - w).lpNorm<Eigen::Infinity>(), 1e-12) << i << " h=" << h;
    }
  }
}

TEST(BackwardPass, EqualDiagonalCorrectionsSumToZero) {
  EpisodeInputs in;
  in.layout = {1, 3};
  in.rewards = {Vector::Zero(3)};
  in.sampled_next = {{0, 0, 0}};
  in.demos = {{{0, 2}}};
  in.lambda = 0.6;
  in.eta = 3.0;
  const auto pass = gekf_backward_pass(in);
  double total = 0.0;
  for (std::size_t a = 0; a < 3; ++a) total += pass.q(0, 0, a);
  EXPECT_NEAR(total, 0.0, 1e-14);
  EXPECT_GT(pass.q(0, 0, 2), 0.0);
}

TEST(BackwardPass, RejectsBadInputs) {
  auto in = oracle::symmetric_instance();
  in.lambda = 0.0;
  EXPECT_THROW(gekf_backward_pass(in), std::invalid_argument);
  in = oracle::symmetric_instance();
  in.demos = {{{0, 2}}};
  EXPECT_THROW(gekf_backward_pass(in), std::invalid_argument);
  in = oracle::symmetric_instance();
  in.sampled_next.clear();
  EXPECT_THROW(gekf_backward_pass(in), std::invalid_argument);
}

TEST(SpdInverse, RejectsIndefinite) {
  Matrix m(2, 2);
  m << 1, 2, 2, 1;
  EXPECT_THROW(spd_inverse(m), std::logic_error);
}

TEST(LocalMode, NoDemosReturnsPrediction) {
  const PairLayout L{2, 2};
  const Vector q_pred = vec({0.1, -0.2, 0.3, 0.4});
  EXPECT_EQ(local_mode_newton(L, q_pred, Matrix::Identity(4, 4) * 0.6, {}, 3.0), q_pred);
}

TEST(LocalMode, SymmetricScalarRoot) {
  const double c = oracle::symmetric_mode(1.0, 1.0);
  EXPECT_NEAR(c, 0.3376, 5e-4);  // root is 0.337416...
  EXPECT_NEAR(c, 1.0 - 1.0 / (1.0 + std::exp(-2.0 * c)), 1e-14);
  const std::vector<ExpertAction> demos{{0, 0}};
  const Vector m = local_mode_newton({1, 2}, Vector::Zero(2), Matrix::Identity(2, 2), demos, 1.0);
  EXPECT_NEAR(m[0], c, 1e-10);
  EXPECT_NEAR(m[1], -c, 1e-10);
}

TEST(LocalMode, NewtonAgreesWithGradientDescent) {
  for (std::size_t i = 0; i < 20; ++i) {
    const auto in = oracle::random_instance(4, i);
    const auto pass = gekf_backward_pass(in);
    for (std::size_t h = 0; h < in.horizon(); ++h) {
      const Vector a = local_mode_newton(in.layout, pass.q_pred[h], pass.w_pred[h], in.demos[h], in.eta);
      const Vector b = local_mode_gd(in.layout, pass.q_pred[h], pass.w_pred[h], in.demos[h], in.eta);
      EXPECT_LE((a - b).lpNorm<Eigen::Infinity>(), 1e-5) << i << " h=" << h;
    }
  }
}

TEST(LocalMode, NonConvergenceCarriesDiagnostics) {
  const std::vector<ExpertAction> demos{{0, 0}};
  try {
    local_mode_newton({1, 2}, Vector::Zero(2), Matrix::Identity(2, 2), demos, 1.0, {1, 1e-300});
    FAIL() << "expected NewtonNonConvergence";
  } catch (const NewtonNonConvergence& e) {
    EXPECT_EQ(e.last_iterate.size(), 2);
    EXPECT_GT(e.last_step_norm, 0.0);
  }
}

TEST(MapOracle, NoDemosGivesBellmanChain) {
  for (std::size_t i = 0; i < 10; ++i) {
    const auto in = without_demos(oracle::random_instance(5, i));
    const auto pass = gekf_backward_pass(in);
    const auto p = map_problem_from(in, pass);
    const auto q = map_oracle_gd(p);
    for (std::size_t h = 0; h < in.horizon(); ++h) {
      const Vector qh = to_vector(q.slice(h));
      const Vector qn = h + 1 < in.horizon() ? to_vector(q.slice(h + 1)) : Vector::Zero(qh.size());
      EXPECT_LE((qh - in.rewards[h] - p.transforms[h].apply(qn)).lpNorm<Eigen::Infinity>(), 1e-12);
    }
  }
}

TEST(MapOracle, SymmetricHorizonOne) {
  const auto in = oracle::symmetric_instance(1.0, 1.0);
  const auto q = map_oracle_gd(map_problem_from(in, gekf_backward_pass(in)));
  const double c = oracle::symmetric_mode(1.0, 1.0);
  EXPECT_NEAR(q(0, 0, 0), c, 1e-7);
  EXPECT_NEAR(q(0, 0, 1), -c, 1e-7);
}

TEST(MapOracle, GradientMatchesFiniteDifferences) {
  for (std::size_t i = 0; i < 20; ++i) {
    const auto in = oracle::random_instance(6, i);
    const auto p = map_problem_from(in, gekf_backward_pass(in));
    auto f = [&](const Vector& x) { return p.objective(x); };
    // At a perturbed point the gradient is O(1), so a relative check is meaningful.
    Rng rng(i);
    Vector x = p.bellman_chain();
    for (Eigen::Index k = 0; k < x.size(); ++k) x[k] += rng.uniform(-0.5, 0.5);
    EXPECT_LE(oracle::relative_error(p.gradient(x), oracle::fd_gradient(f, x)), 1e-5) << i;
    // At the minimizer both are ~0.
    const auto q = map_oracle_gd(p);
    Vector xs(x.size());
    for (std::size_t h = 0; h < in.horizon(); ++h) {
      xs.segment(static_cast<Eigen::Index>(h * in.layout.size()), static_cast<Eigen::Index>(in.layout.size())) =
          to_vector(q.slice(h));
    }
    EXPECT_LE(p.gradient(xs).norm(), 1e-8);
    EXPECT_LE(oracle::fd_gradient(f, xs).lpNorm<Eigen::Infinity>(), 1e-6);
  }
}

TEST(MapOracle, HorizonOneMatchesLocalNewton) {
  std::size_t checked = 0;
  for (std::size_t i = 0; checked < 5 && i < 200; ++i) {
    const auto in = oracle::random_instance(7, i);
    if (in.horizon() != 1) continue;
    ++checked;
    const auto pass = gekf_backward_pass(in);
    const auto q = map_oracle_gd(map_problem_from(in, pass));
    const Vector m = local_mode_newton(in.layout, pass.q_pred[0], pass.w_pred[0], in.demos[0], in.eta);
    EXPECT_LE((to_vector(q.slice(0)) - m).lpNorm<Eigen::Infinity>(), 1e-5);
  }
  EXPECT_EQ(checked, 5u);
}

TEST(Properties, CheckSuitePassesOnSeveralSeeds) {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const auto report = oracle::gekf_check({20, seed, 1e-5, 100});
    for (const auto& l : report.lines) EXPECT_TRUE(l.ok()) << "seed " << seed << ": " << l.name << " worst " << l.worst;
  }
}

TEST(Properties, CorrectionSignAtDemoStates) {
  for (std::size_t i = 0; i < 30; ++i) {
    const auto in = oracle::random_instance(8, i);
    const auto pass = gekf_backward_pass(in);
    for (std::size_t h = 0; h < in.horizon(); ++h) {
      if (in.demos[h].size() != 1) continue;
      const auto d = in.demos[h][0];
      for (std::size_t a = 0; a < in.layout.num_actions; ++a) {
        const double moved = pass.q(h, d.s, a) - pass.q_pred[h][in.layout.index(d.s, a)];
        if (a == d.a) EXPECT_GT(moved, 0.0);
        else EXPECT_LT(moved, 0.0);
      }
    }
  }
}
