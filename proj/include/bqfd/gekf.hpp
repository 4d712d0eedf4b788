#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <limits>
#include <iostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "bqfd/experts.hpp"
#include "bqfd/mdp.hpp"
#include "bqfd/rng.hpp"
#include "bqfd/softmax.hpp"

// Exact full-matrix posterior recursion over the joint (state, action) index.
// Everything here is dense and meant for small instances: it is the reference
// the approximate tabular learner is measured against.

namespace bqfd::gekf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using CovMatrix = Matrix;
using ScoreVector = Vector;
using NegHessian = Matrix;  // block diagonal, one |A|x|A| block per demo state

inline constexpr double kConditionWarning = 1e8;

// Flattening of (s, a) into s*A + a.
struct PairLayout {
  std::size_t num_states = 0;
  std::size_t num_actions = 0;

  std::size_t size() const noexcept { return num_states * num_actions; }
  std::size_t index(std::size_t s, std::size_t a) const noexcept { return s * num_actions + a; }
};

inline std::span<const double> state_row(const Vector& q, const PairLayout& L, std::size_t s) {
  return {q.data() + L.index(s, 0), L.num_actions};
}

/// Sampled Bellman transformation: row (s,a) holds gamma at column (s', a')
/// where s' is the sampled successor and a' the tie-broken argmax of Q_{h+1}
/// at s'. Stored as one column index per row.
struct TransformMatrix {
  PairLayout layout;
  double gamma = 1.0;
  std::vector<std::size_t> target;

  Matrix dense() const {
    Matrix t = Matrix::Zero(layout.size(), layout.size());
    for (std::size_t i = 0; i < target.size(); ++i) t(i, target[i]) = gamma;
    return t;
  }

  Vector apply(const Vector& q_next) const {
    Vector out(layout.size());
    for (std::size_t i = 0; i < target.size(); ++i) out[i] = gamma * q_next[target[i]];
    return out;
  }
};

inline TransformMatrix build_transform(const PairLayout& layout, const Vector& q_next,
                                       std::span<const std::size_t> sampled_next, double gamma) {
  if (sampled_next.size() != layout.size() || static_cast<std::size_t>(q_next.size()) != layout.size()) {
    throw std::invalid_argument("build_transform: size mismatch");
  }
  TransformMatrix t{layout, gamma, std::vector<std::size_t>(layout.size())};
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const std::size_t s2 = sampled_next[i];
    if (s2 >= layout.num_states) throw std::invalid_argument("build_transform: successor out of range");
    t.target[i] = layout.index(s2, argmax(state_row(q_next, layout, s2)));
  }
  return t;
}

// psi(Q_h) = sum over demo records of log pi_eta(a_E | s; Q_h).
inline double log_likelihood(const PairLayout& L, const Vector& q, std::span<const ExpertAction> demos,
                             double eta) {
  double total = 0.0;
  for (const auto& d : demos) {
    const auto row = state_row(q, L, d.s);
    total += eta * row[d.a] - log_sum_exp(row, eta);
  }
  return total;
}

/// Gradient of psi: eta * (1[a = a_E] - softmax_eta(Q_h(s, .))(a)) at demo
/// states, zero elsewhere. Repeated records at a state add up.
inline ScoreVector expert_score(const PairLayout& L, const Vector& q, std::span<const ExpertAction> demos,
                                double eta) {
  ScoreVector g = ScoreVector::Zero(L.size());
  for (const auto& d : demos) {
    const auto p = softmax(state_row(q, L, d.s), eta);
    for (std::size_t a = 0; a < L.num_actions; ++a) {
      g[L.index(d.s, a)] += eta * ((a == d.a ? 1.0 : 0.0) - p[a]);
    }
  }
  return g;
}

/// Negative Hessian of psi: eta^2 (diag(p) - p p^T) per demo state. Positive
/// semidefinite, so (W^-1 + U)^-1 can only shrink W.
inline NegHessian expert_neg_hessian(const PairLayout& L, const Vector& q,
                                     std::span<const ExpertAction> demos, double eta) {
  NegHessian u = NegHessian::Zero(L.size(), L.size());
  const double eta2 = eta * eta;
  for (const auto& d : demos) {
    const auto p = softmax(state_row(q, L, d.s), eta);
    for (std::size_t a = 0; a < L.num_actions; ++a) {
      for (std::size_t b = 0; b < L.num_actions; ++b) {
        u(L.index(d.s, a), L.index(d.s, b)) += eta2 * ((a == b ? p[a] : 0.0) - p[a] * p[b]);
      }
    }
  }
  return u;
}

// ---------------------------------------------------------------------------
// Backward pass

/// Inputs of one episode's backward recursion.
struct EpisodeInputs {
  PairLayout layout;
  std::vector<Vector> rewards;                         // R_h over pairs, h = 0..H-1
  std::vector<std::vector<std::size_t>> sampled_next;  // s' per pair, h = 0..H-1
  std::vector<std::vector<ExpertAction>> demos;        // expert actions at step h
  double lambda = 0.6;
  double eta = 3.0;
  double gamma = 1.0;

  std::size_t horizon() const noexcept { return rewards.size(); }
};

struct BackwardPass {
  QFunction q;                       // corrected Q_0..Q_H
  std::vector<Vector> q_pred;        // Q_h after the prediction step
  std::vector<CovMatrix> w_pred;     // T W_{h+1} T^T + lambda I
  std::vector<CovMatrix> w;          // corrected W_0..W_H (W_H = 0)
  std::vector<NegHessian> u;         // U_h at the predicted Q_h
  std::vector<TransformMatrix> transforms;
  std::vector<double> condition_numbers;  // of w_pred[h]
};

inline Vector to_vector(std::span<const double> v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline double min_eigenvalue(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline double max_eigenvalue(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

inline Matrix spd_inverse(const Matrix& m) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) {
    throw std::logic_error("spd_inverse: matrix is not positive definite");
  }
  Matrix inv = llt.solve(Matrix::Identity(m.rows(), m.cols()));
  return 0.5 * (inv + inv.transpose());
}

inline void validate(const EpisodeInputs& in) {
  const std::size_t n = in.layout.size();
  if (!(in.lambda > 0.0)) throw std::invalid_argument("gekf: lambda must be > 0");
  if (!(in.eta > 0.0)) throw std::invalid_argument("gekf: eta must be > 0");
  if (in.sampled_next.size() != in.horizon() || in.demos.size() != in.horizon()) {
    throw std::invalid_argument("gekf: per-step inputs must all have length H");
  }
  for (std::size_t h = 0; h < in.horizon(); ++h) {
    if (static_cast<std::size_t>(in.rewards[h].size()) != n || in.sampled_next[h].size() != n) {
      throw std::invalid_argument("gekf: step " + std::to_string(h) + " has wrong size");
    }
    for (const auto& d : in.demos[h]) {
      if (d.s >= in.layout.num_states || d.a >= in.layout.num_actions) {
        throw std::invalid_argument("gekf: demo out of range at step " + std::to_string(h));
      }
    }
  }
}

/// One episode of the posterior recursion, h = H-1 .. 0:
///   prediction   Q_h = R_h + T_h Q_{h+1},  W_h = T_h W_{h+1} T_h^T + lambda I
///   correction   W_h = (W_h^-1 + U_h)^-1
///                Q_h(s,a) += W_h[(s,a),(s,a)] * score(s,a)
/// with U_h and the score both evaluated at the predicted Q_h.
inline BackwardPass gekf_backward_pass(const EpisodeInputs& in) {
  validate(in);
  const auto& L = in.layout;
  const std::size_t H = in.horizon(), n = L.size();
  BackwardPass out{QFunction(H, L.num_states, L.num_actions), std::vector<Vector>(H),
                   std::vector<CovMatrix>(H), std::vector<CovMatrix>(H + 1), std::vector<NegHessian>(H),
                   {}, std::vector<double>(H)};
  out.transforms.resize(H);
  out.w[H] = CovMatrix::Zero(n, n);
  Vector q_next = Vector::Zero(n);
  const Matrix identity = Matrix::Identity(n, n);

  for (std::size_t h = H; h-- > 0;) {
    auto& t = out.transforms[h] = build_transform(L, q_next, in.sampled_next[h], in.gamma);
    const Vector q_pred = in.rewards[h] + t.apply(q_next);
    const Matrix td = t.dense();
    CovMatrix w_pred = td * out.w[h + 1] * td.transpose() + in.lambda * identity;
    w_pred = 0.5 * (w_pred + w_pred.transpose());

    Eigen::SelfAdjointEigenSolver<Matrix> es(w_pred, Eigen::EigenvaluesOnly);
    const double cond = es.eigenvalues().maxCoeff() / es.eigenvalues().minCoeff();
    out.condition_numbers[h] = cond;
    if (cond > kConditionWarning) {
      std::clog << "gekf: step " << h << " predicted covariance condition number " << cond << '\n';
    }

    const NegHessian u = expert_neg_hessian(L, q_pred, in.demos[h], in.eta);
    const CovMatrix w_post = spd_inverse(spd_inverse(w_pred) + u);
    const ScoreVector score = expert_score(L, q_pred, in.demos[h], in.eta);

    Vector q = q_pred;
    for (std::size_t i = 0; i < n; ++i) q[i] += w_post(i, i) * score[i];

    auto slice = out.q.mutable_slice(h);
    for (std::size_t i = 0; i < n; ++i) slice[i] = q[i];
    out.q_pred[h] = q_pred;
    out.w_pred[h] = std::move(w_pred);
    out.w[h] = w_post;
    out.u[h] = u;
    q_next = q;
  }
  return out;
}

/// Samples the per-pair rewards and successors of one episode from an MDP.
inline EpisodeInputs sample_episode_inputs(const TabularMdp& mdp, std::vector<std::vector<ExpertAction>> demos,
                                           double lambda, double eta, Rng& rng) {
  EpisodeInputs in;
  in.layout = {mdp.num_states(), mdp.num_actions()};
  in.lambda = lambda;
  in.eta = eta;
  in.gamma = mdp.discount();
  in.demos = std::move(demos);
  in.demos.resize(mdp.horizon());
  for (std::size_t h = 0; h < mdp.horizon(); ++h) {
    Vector r(in.layout.size());
    std::vector<std::size_t> next(in.layout.size());
    for (std::size_t s = 0; s < mdp.num_states(); ++s) {
      for (std::size_t a = 0; a < mdp.num_actions(); ++a) {
        r[in.layout.index(s, a)] = mdp.sample_reward(s, a, rng);
        next[in.layout.index(s, a)] = mdp.sample_next_state(s, a, rng);
      }
    }
    in.rewards.push_back(std::move(r));
    in.sampled_next.push_back(std::move(next));
  }
  return in;
}

// ---------------------------------------------------------------------------
// Step-local mode: Newton on  -1/2 |Q - q_pred|^2_{W_pred^-1} + psi(Q)

class NewtonNonConvergence : public std::runtime_error {
 public:
  NewtonNonConvergence(Vector last, double step_norm, std::size_t iters)
      : std::runtime_error("local_mode_newton: no convergence after " + std::to_string(iters) +
                           " iterations, last step norm " + std::to_string(step_norm)),
        last_iterate(std::move(last)),
        last_step_norm(step_norm) {}
  Vector last_iterate;
  double last_step_norm;
};

struct NewtonOptions {
  std::size_t max_iters = 100;
  double tol = 1e-12;
};

// Negated step-local objective (the quantity both minimizers drive down).
inline double local_objective(const PairLayout& L, const Vector& q, const Vector& q_pred,
                              const Matrix& precision, std::span<const ExpertAction> demos, double eta) {
  const Vector d = q - q_pred;
  return 0.5 * d.dot(precision * d) - log_likelihood(L, q, demos, eta);
}

inline Vector local_gradient(const PairLayout& L, const Vector& q, const Vector& q_pred,
                             const Matrix& precision, std::span<const ExpertAction> demos, double eta) {
  return precision * (q - q_pred) - expert_score(L, q, demos, eta);
}

/// Full-matrix Newton iteration Q <- Q + (W_pred^-1 + U(Q))^-1 (l(Q) - W_pred^-1 (Q - q_pred))
/// from q_pred. The first step is exactly the Kalman correction with the full
/// posterior covariance; iterating reaches the mode of the step-local posterior.
inline Vector local_mode_newton(const PairLayout& L, const Vector& q_pred, const CovMatrix& w_pred,
                                std::span<const ExpertAction> demos, double eta,
                                const NewtonOptions& opts = {}) {
  const Matrix precision = spd_inverse(w_pred);
  Vector q = q_pred;
  double step_norm = 0.0;
  for (std::size_t it = 0; it < opts.max_iters; ++it) {
    const Vector grad = local_gradient(L, q, q_pred, precision, demos, eta);
    const Matrix hess = precision + expert_neg_hessian(L, q, demos, eta);
    const Vector step = -hess.llt().solve(grad);
    // Damp only if the full step fails to decrease the objective.
    const double f0 = local_objective(L, q, q_pred, precision, demos, eta);
    double t = 1.0;
    while (t > 1e-10 && local_objective(L, q + t * step, q_pred, precision, demos, eta) > f0 + 1e-14 * (1 + std::abs(f0))) {
      t *= 0.5;
    }
    q += t * step;
    step_norm = (t * step).lpNorm<Eigen::Infinity>();
    if (step_norm < opts.tol) return q;
  }
  throw NewtonNonConvergence(q, step_norm, opts.max_iters);
}

// ---------------------------------------------------------------------------
// Gradient-descent oracles

class LineSearchFailure : public std::runtime_error {
 public:
  LineSearchFailure(double grad_norm, std::size_t iters)
      : std::runtime_error("gradient descent: line search failed at gradient norm " +
                           std::to_string(grad_norm) + " after " + std::to_string(iters) + " iterations"),
        grad_norm(grad_norm) {}
  double grad_norm;
};

struct GdOptions {
  double grad_tol = 1e-8;
  std::size_t max_iters = 2'000'000;
};

struct GdResult {
  Vector x;
  double grad_norm = 0.0;
  std::size_t iterations = 0;
};

/// Plain gradient descent with Armijo backtracking. The step length grows
/// after each accepted step so well-conditioned problems do not crawl.
template <class Objective, class Gradient>
GdResult minimize_gd(Objective&& f, Gradient&& grad, Vector x, const GdOptions& opts = {}) {
  double fx = f(x);
  Vector g = grad(x);
  double t = 1.0;
  for (std::size_t it = 0; it < opts.max_iters; ++it) {
    const double gnorm = g.norm();
    if (gnorm <= opts.grad_tol) return {std::move(x), gnorm, it};
    while (true) {
      const Vector x_new = x - t * g;
      const double f_new = f(x_new);
      const bool armijo = f_new <= fx - 1e-4 * t * gnorm * gnorm;
      // Near the optimum the decrease drowns in rounding; accept a step that
      // does not raise f beyond rounding and shrinks the gradient.
      bool accept = armijo;
      Vector g_new;
      if (!accept && f_new <= fx + 8 * std::numeric_limits<double>::epsilon() * (1 + std::abs(fx))) {
        g_new = grad(x_new);
        accept = g_new.norm() < gnorm;
      }
      if (accept) {
        x = x_new;
        fx = f_new;
        g = g_new.size() ? std::move(g_new) : grad(x);
        t = std::min(t * 2.0, 1e6);
        break;
      }
      t *= 0.5;
      if (t < 1e-30) throw LineSearchFailure(gnorm, it);
    }
  }
  throw LineSearchFailure(g.norm(), opts.max_iters);
}

/// Oracle for local_mode_newton: minimizes the same step-local objective by
/// gradient descent.
inline Vector local_mode_gd(const PairLayout& L, const Vector& q_pred, const CovMatrix& w_pred,
                            std::span<const ExpertAction> demos, double eta, const GdOptions& opts = {}) {
  const Matrix precision = spd_inverse(w_pred);
  auto f = [&](const Vector& q) { return local_objective(L, q, q_pred, precision, demos, eta); };
  auto g = [&](const Vector& q) { return local_gradient(L, q, q_pred, precision, demos, eta); };
  return minimize_gd(f, g, q_pred, opts).x;
}

/// The whole-episode MAP objective with the argmax selections frozen:
///   J = 1/2 sum_h |Q_h - R_h - T_h Q_{h+1}|^2 / lambda - sum_h psi(Q_h),  Q_H = 0.
/// Decision variable is [Q_0; ...; Q_{H-1}].
struct MapProblem {
  PairLayout layout;
  std::vector<Vector> rewards;
  std::vector<TransformMatrix> transforms;
  std::vector<std::vector<ExpertAction>> demos;
  double lambda = 0.6;
  double eta = 3.0;

  std::size_t horizon() const noexcept { return rewards.size(); }

  Vector block(const Vector& x, std::size_t h) const {
    const auto n = static_cast<Eigen::Index>(layout.size());
    if (h >= horizon()) return Vector::Zero(n);
    return x.segment(static_cast<Eigen::Index>(h) * n, n);
  }

  Vector residual(const Vector& x, std::size_t h) const {
    return block(x, h) - rewards[h] - transforms[h].apply(block(x, h + 1));
  }

  double objective(const Vector& x) const {
    double j = 0.0;
    for (std::size_t h = 0; h < horizon(); ++h) {
      j += 0.5 * residual(x, h).squaredNorm() / lambda - log_likelihood(layout, block(x, h), demos[h], eta);
    }
    return j;
  }

  Vector gradient(const Vector& x) const {
    const auto n = static_cast<Eigen::Index>(layout.size());
    Vector g = Vector::Zero(x.size());
    for (std::size_t h = 0; h < horizon(); ++h) {
      const Vector r = residual(x, h) / lambda;
      g.segment(static_cast<Eigen::Index>(h) * n, n) += r - expert_score(layout, block(x, h), demos[h], eta);
      if (h + 1 < horizon()) {
        // d r_h / d Q_{h+1} = -T_h, so the contribution is -T_h^T r_h.
        auto seg = g.segment(static_cast<Eigen::Index>(h + 1) * n, n);
        const auto& t = transforms[h];
        for (std::size_t i = 0; i < t.target.size(); ++i) seg[t.target[i]] -= t.gamma * r[i];
      }
    }
    return g;
  }

  // Zero-residual chain Q_h = R_h + T_h Q_{h+1}.
  Vector bellman_chain() const {
    const auto n = static_cast<Eigen::Index>(layout.size());
    Vector x = Vector::Zero(static_cast<Eigen::Index>(horizon()) * n);
    Vector next = Vector::Zero(n);
    for (std::size_t h = horizon(); h-- > 0;) {
      next = rewards[h] + transforms[h].apply(next);
      x.segment(static_cast<Eigen::Index>(h) * n, n) = next;
    }
    return x;
  }
};

inline MapProblem map_problem_from(const EpisodeInputs& in, const BackwardPass& reference) {
  return {in.layout, in.rewards, reference.transforms, in.demos, in.lambda, in.eta};
}

/// Brute-force MAP oracle: minimizes J by gradient descent. J is convex for
/// fixed T (quadratic plus negative log-softmax), so the result is the global
/// minimizer.
inline QFunction map_oracle_gd(const MapProblem& p, const GdOptions& opts = {}) {
  if (p.transforms.size() != p.horizon() || p.demos.size() != p.horizon()) {
    throw std::invalid_argument("map_oracle_gd: per-step inputs must all have length H");
  }
  auto f = [&](const Vector& x) { return p.objective(x); };
  auto g = [&](const Vector& x) { return p.gradient(x); };
  const GdResult res = minimize_gd(f, g, p.bellman_chain(), opts);
  QFunction q(p.horizon(), p.layout.num_states, p.layout.num_actions);
  for (std::size_t h = 0; h < p.horizon(); ++h) {
    const Vector b = p.block(res.x, h);
    auto slice = q.mutable_slice(h);
    for (std::size_t i = 0; i < p.layout.size(); ++i) slice[i] = b[i];
  }
  return q;
}

}  // namespace bqfd::gekf
