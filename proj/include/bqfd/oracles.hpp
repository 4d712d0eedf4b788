#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "bqfd/experts.hpp"
#include "bqfd/gekf.hpp"
#include "bqfd/mdp.hpp"
#include "bqfd/rng.hpp"

// Independent checks for the exact posterior engine. Nothing here calls the
// analytic score or Hessian; the log-likelihood is re-derived from its
// definition and differentiated numerically.

namespace bqfd::oracle {

using gekf::Matrix;
using gekf::PairLayout;
using gekf::Vector;

// log pi(a_E | s) summed over records, written directly from the Boltzmann
// definition (no max-subtraction; inputs here are moderate).
inline double naive_log_likelihood(const PairLayout& L, const Vector& q, std::span<const ExpertAction> demos,
                                   double eta) {
  double total = 0.0;
  for (const auto& d : demos) {
    double z = 0.0;
    for (std::size_t b = 0; b < L.num_actions; ++b) z += std::exp(eta * q[L.index(d.s, b)]);
    total += std::log(std::exp(eta * q[L.index(d.s, d.a)]) / z);
  }
  return total;
}

inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double step = 1e-5) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector xp = x, xm = x;
    xp[i] += step;
    xm[i] -= step;
    g[i] = (f(xp) - f(xm)) / (2 * step);
  }
  return g;
}

inline Matrix fd_hessian(const std::function<double(const Vector&)>& f, const Vector& x, double step = 2e-4) {
  const Eigen::Index n = x.size();
  Matrix hess(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      auto at = [&](double di, double dj) {
        Vector y = x;
        y[i] += di;
        y[j] += dj;
        return f(y);
      };
      hess(i, j) = (at(step, step) - at(step, -step) - at(-step, step) + at(-step, -step)) / (4 * step * step);
    }
  }
  return hess;
}

// ||a - b||_inf / max(||b||_inf, floor).
inline double relative_error(const Matrix& a, const Matrix& b, double floor = 1e-12) {
  return (a - b).lpNorm<Eigen::Infinity>() / std::max(b.lpNorm<Eigen::Infinity>(), floor);
}

/// Root of c = lambda * eta * (1 - sigmoid(2 eta c)) by bisection: the step-local
/// mode of the symmetric one-state two-action problem is (c, -c).
inline double symmetric_mode(double lambda, double eta) {
  auto f = [&](double c) { return c - lambda * eta * (1.0 - 1.0 / (1.0 + std::exp(-2.0 * eta * c))); };
  double lo = 0.0, hi = lambda * eta;  // f(lo) < 0 <= f(hi)
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) < 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// The one-state, two-action, H = 1 instance with zero rewards and demo a0.
inline gekf::EpisodeInputs symmetric_instance(double lambda = 1.0, double eta = 1.0) {
  gekf::EpisodeInputs in;
  in.layout = {1, 2};
  in.rewards = {Vector::Zero(2)};
  in.sampled_next = {{0, 0}};
  in.demos = {{{0, 0}}};
  in.lambda = lambda;
  in.eta = eta;
  in.gamma = 1.0;
  return in;
}

/// Seeded random instance with H <= 3, |S| <= 3, |A| <= 2 and lambda cycling
/// through {0.1, 0.6, 1}. Demonstrations come from a Boltzmann expert on the
/// instance's optimal Q.
inline gekf::EpisodeInputs random_instance(std::uint64_t seed, std::size_t index) {
  static constexpr double kLambdas[] = {0.1, 0.6, 1.0};
  Rng rng(mix64(seed ^ mix64(index + 1)));
  RandomMdpSpec spec;
  spec.num_states = 1 + rng.index(3);
  spec.num_actions = 2;
  spec.horizon = 1 + rng.index(3);
  spec.reward_lo = -1.0;
  spec.reward_hi = 1.0;
  spec.noise_std = 0.2;
  spec.discount = rng.uniform(0.5, 1.0);
  const TabularMdp mdp = random_mdp(spec, rng);
  const double eta = rng.uniform(0.5, 3.0);
  const auto demos = boltzmann_expert_sample(value_iteration(mdp), mdp, eta, 1 + rng.index(2), rng);
  return gekf::sample_episode_inputs(mdp, demos_by_step(demos, mdp.horizon()), kLambdas[index % 3], eta, rng);
}

struct DerivativeCase {
  PairLayout layout;
  Vector q;
  std::vector<ExpertAction> demos;
  double eta = 1.0;
};

inline DerivativeCase random_derivative_case(std::uint64_t seed, std::size_t index) {
  Rng rng(mix64(seed ^ mix64(0xd1ffULL + index)));
  DerivativeCase c;
  c.layout = {1 + rng.index(3), 2 + rng.index(2)};
  c.q = Vector(c.layout.size());
  for (Eigen::Index i = 0; i < c.q.size(); ++i) c.q[i] = rng.uniform(-2.0, 2.0);
  const std::size_t records = 1 + rng.index(3);
  for (std::size_t r = 0; r < records; ++r) {
    c.demos.push_back({rng.index(c.layout.num_states), rng.index(c.layout.num_actions)});
  }
  c.eta = rng.uniform(0.3, 3.0);
  return c;
}

struct DerivativeErrors {
  double score = 0.0;
  double neg_hessian = 0.0;
};

inline DerivativeErrors derivative_errors(const DerivativeCase& c) {
  auto psi = [&](const Vector& q) { return naive_log_likelihood(c.layout, q, c.demos, c.eta); };
  const Vector g_fd = fd_gradient(psi, c.q);
  const Matrix h_fd = fd_hessian(psi, c.q);
  return {relative_error(gekf::expert_score(c.layout, c.q, c.demos, c.eta), g_fd),
          relative_error(gekf::expert_neg_hessian(c.layout, c.q, c.demos, c.eta), -h_fd)};
}

// ---------------------------------------------------------------------------
// The full property suite, shared by the CLI and the acceptance tests.

struct CheckLine {
  std::string name;
  std::size_t cases = 0;
  std::size_t failures = 0;
  double worst = 0.0;  // largest error (or smallest margin) observed
  double threshold = 0.0;

  bool ok() const noexcept { return failures == 0 && cases > 0; }
};

struct CheckReport {
  std::vector<CheckLine> lines;
  bool ok() const {
    return std::all_of(lines.begin(), lines.end(), [](const auto& l) { return l.ok(); });
  }
};

namespace detail {
// Records an error-style measurement: passes when value <= threshold.
inline void record_max(CheckLine& line, double value) {
  ++line.cases;
  line.worst = std::max(line.worst, value);
  if (!(value <= line.threshold)) ++line.failures;
}
// Records a margin-style measurement: passes when value >= threshold.
inline void record_min(CheckLine& line, double value) {
  if (line.cases == 0) line.worst = value;
  ++line.cases;
  line.worst = std::min(line.worst, value);
  if (!(value >= line.threshold)) ++line.failures;
}
}  // namespace detail

struct CheckOptions {
  std::size_t instances = 20;
  std::uint64_t seed = 0;
  double tol = 1e-5;
  std::size_t derivative_cases = 100;
};

inline CheckReport gekf_check(const CheckOptions& opt) {
  using detail::record_max;
  using detail::record_min;
  CheckLine hand{"hand-derived H=1 example", 0, 0, 0.0, 1e-10};
  CheckLine scalar{"symmetric mode vs scalar root", 0, 0, 0.0, opt.tol};
  CheckLine newton_gd{"local Newton vs gradient descent", 0, 0, 0.0, opt.tol};
  CheckLine map_newton{"H=1 MAP oracle vs local Newton", 0, 0, 0.0, opt.tol};
  CheckLine score{"score vs finite differences (rel)", 0, 0, 0.0, 1e-5};
  CheckLine hessian{"neg. Hessian vs finite differences (rel)", 0, 0, 0.0, 1e-5};
  CheckLine sym{"covariance symmetry", 0, 0, 0.0, 1e-10};
  CheckLine pred_eig{"predicted W: min eig - lambda", 0, 0, 0.0, -1e-8};
  CheckLine post_pd{"corrected W: min eig", 0, 0, 0.0, std::numeric_limits<double>::min()};
  CheckLine shrink{"W_pred - W_post: min eig", 0, 0, 0.0, -1e-10};
  CheckLine sign{"correction sign at demo states (violations)", 0, 0, 0.0, 0.0};

  {
    const auto pass = gekf::gekf_backward_pass(symmetric_instance());
    record_max(hand, std::max(std::abs(pass.q(0, 0, 0) - 5.0 / 12.0), std::abs(pass.q(0, 0, 1) + 5.0 / 12.0)));
    const auto in = symmetric_instance();
    const Vector mode =
        gekf::local_mode_newton(in.layout, pass.q_pred[0], pass.w_pred[0], in.demos[0], in.eta);
    const double c = symmetric_mode(in.lambda, in.eta);
    record_max(scalar, std::max(std::abs(mode[0] - c), std::abs(mode[1] + c)));
  }

  for (std::size_t i = 0; i < opt.instances; ++i) {
    const auto in = random_instance(opt.seed, i);
    const auto pass = gekf::gekf_backward_pass(in);
    const auto& L = in.layout;
    for (std::size_t h = 0; h < in.horizon(); ++h) {
      const Vector newton = gekf::local_mode_newton(L, pass.q_pred[h], pass.w_pred[h], in.demos[h], in.eta);
      const Vector gd = gekf::local_mode_gd(L, pass.q_pred[h], pass.w_pred[h], in.demos[h], in.eta);
      record_max(newton_gd, (newton - gd).lpNorm<Eigen::Infinity>());
      if (in.horizon() == 1) {
        const QFunction map = gekf::map_oracle_gd(gekf::map_problem_from(in, pass));
        record_max(map_newton, (gekf::to_vector(map.slice(0)) - newton).lpNorm<Eigen::Infinity>());
      }

      const Matrix& wp = pass.w_pred[h];
      const Matrix& w = pass.w[h];
      record_max(sym, std::max((wp - wp.transpose()).lpNorm<Eigen::Infinity>(),
                               (w - w.transpose()).lpNorm<Eigen::Infinity>()));
      record_min(pred_eig, gekf::min_eigenvalue(wp) - in.lambda);
      record_min(post_pd, gekf::min_eigenvalue(w));
      record_min(shrink, gekf::min_eigenvalue(wp - w));

      // Sign check at states whose demo records all agree.
      std::map<std::size_t, std::set<std::size_t>> acts;
      for (const auto& d : in.demos[h]) acts[d.s].insert(d.a);
      std::size_t violations = 0;
      for (const auto& [s, set] : acts) {
        if (set.size() != 1) continue;
        const std::size_t ae = *set.begin();
        const auto p = softmax(gekf::state_row(pass.q_pred[h], L, s), in.eta);
        for (std::size_t a = 0; a < L.num_actions; ++a) {
          const double moved = pass.q(h, s, a) - pass.q_pred[h][L.index(s, a)];
          if (a == ae && p[a] < 1.0 && !(moved > 0.0)) ++violations;
          if (a != ae && p[a] > 0.0 && !(moved < 0.0)) ++violations;
        }
      }
      record_max(sign, static_cast<double>(violations));
    }
  }

  for (std::size_t i = 0; i < opt.derivative_cases; ++i) {
    const auto e = derivative_errors(random_derivative_case(opt.seed, i));
    record_max(score, e.score);
    record_max(hessian, e.neg_hessian);
  }

  return {{hand, scalar, newton_gd, map_newton, score, hessian, sym, pred_eig, post_pd, shrink, sign}};
}

}  // namespace bqfd::oracle
