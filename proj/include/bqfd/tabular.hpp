#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "bqfd/experts.hpp"
#include "bqfd/mdp.hpp"
#include "bqfd/rng.hpp"
#include "bqfd/softmax.hpp"

// Machinery shared by every tabular learner: epsilon-greedy rollouts, the
// count-based backward Bellman update, demo replay and learning-curve rows.

namespace bqfd {

/// Visit counts n(s, a), aggregated over time steps.
class VisitCounts {
 public:
  VisitCounts(std::size_t num_states, std::size_t num_actions)
      : num_actions_(num_actions), n_(num_states * num_actions, 0) {}

  std::uint64_t operator()(std::size_t s, std::size_t a) const { return n_[s * num_actions_ + a]; }
  std::uint64_t increment(std::size_t s, std::size_t a) { return ++n_[s * num_actions_ + a]; }
  std::uint64_t total() const { return std::accumulate(n_.begin(), n_.end(), std::uint64_t{0}); }
  const std::vector<std::uint64_t>& values() const noexcept { return n_; }

  friend bool operator==(const VisitCounts&, const VisitCounts&) = default;

 private:
  std::size_t num_actions_;
  std::vector<std::uint64_t> n_;
};

struct CurveRow {
  std::size_t episode = 0;  // 1-based
  double train_return = 0.0;
  double eval_return = 0.0;
  friend bool operator==(const CurveRow&, const CurveRow&) = default;
};

struct LearningCurve {
  std::vector<CurveRow> rows;
  friend bool operator==(const LearningCurve&, const LearningCurve&) = default;
};

struct TrainResult {
  QFunction q;
  LearningCurve curve;
  VisitCounts counts;
};

/// First-order decaying learning rate 1 / (beta + n).
inline double learning_rate(std::uint64_t n, double beta) { return 1.0 / (beta + static_cast<double>(n)); }

// Settings every tabular learner shares.
struct CoreConfig {
  double beta = 2.0;
  double gamma = 1.0;
  double epsilon = 0.0;
  std::size_t episodes = 3000;
  std::uint64_t seed = 0;
  bool demo_replay = true;
};

inline void validate(const CoreConfig& c) {
  if (!(c.beta > 0.0)) throw std::invalid_argument("config: beta must be > 0");
  if (!(c.gamma > 0.0 && c.gamma <= 1.0)) throw std::invalid_argument("config: gamma must lie in (0, 1]");
  if (!(c.epsilon >= 0.0 && c.epsilon <= 1.0)) throw std::invalid_argument("config: epsilon must lie in [0, 1]");
  if (c.episodes == 0) throw std::invalid_argument("config: episodes must be >= 1");
}

// Epsilon-greedy rollout of length H. With epsilon == 0 no random numbers are
// spent on action selection.
inline Trajectory rollout(const TabularMdp& mdp, const QFunction& q, double epsilon, Rng& rng) {
  Trajectory t;
  t.steps.reserve(mdp.horizon());
  std::size_t s = mdp.sample_initial_state(rng);
  for (std::size_t h = 0; h < mdp.horizon(); ++h) {
    std::size_t a;
    if (epsilon > 0.0 && rng.uniform() < epsilon) {
      a = rng.index(mdp.num_actions());
    } else {
      a = q.greedy_action(h, s);
    }
    const double r = mdp.sample_reward(s, a, rng);
    const std::size_t s2 = mdp.sample_next_state(s, a, rng);
    t.steps.push_back({h, s, a, r, s2});
    t.return_undiscounted += r;
    s = s2;
  }
  return t;
}

// Q_h(s,a) <- (1 - alpha) Q_h(s,a) + alpha (r + gamma max_a' Q_{h+1}(s', a')).
inline void bellman_update(QFunction& q, std::size_t h, std::size_t s, std::size_t a, double r,
                           std::size_t s2, double alpha, double gamma) {
  const double target = r + gamma * q.max_at(h + 1, s2);
  auto row = q.mutable_row(h, s);
  row[a] = (1.0 - alpha) * row[a] + alpha * target;
}

inline constexpr std::uint64_t kEvalStream = 0x5eed'e7a1'0000'0001ULL;

/// Runs the shared training loop. Per episode:
///   1. epsilon-greedy rollout with the current Q;
///   2. backward over the rollout: Bellman update at the visited pair with
///      alpha = learning_rate(n(s,a)), increment n(s,a), then call
///      rule(row, a, expert actions at s, n(s,a), s, counts) if s has demos;
///   3. if demo replay is on, replay every demo trajectory backward through
///      the same update; replays do not increment visit counts;
///   4. one greedy evaluation rollout on a separate stream.
/// ExpertRule is a no-op for plain Q-learning.
template <class ExpertRule>
TrainResult run_tabular(const TabularMdp& mdp, const DemoSet& demos, const CoreConfig& cfg, ExpertRule& rule) {
  validate(cfg);
  validate(demos, DemoLimits::of(mdp));
  const std::size_t H = mdp.horizon();

  TrainResult res{QFunction(mdp), {}, VisitCounts(mdp.num_states(), mdp.num_actions())};
  res.curve.rows.reserve(cfg.episodes);
  Rng rng(cfg.seed);
  Rng eval_rng(cfg.seed ^ kEvalStream);

  const auto by_state = demos_by_state(demos);
  const auto replay = cfg.demo_replay ? demo_trajectories(demos) : std::vector<std::vector<DemoRecord>>{};
  static const std::vector<std::size_t> kNone;
  auto expert_actions = [&](std::size_t s) -> const std::vector<std::size_t>& {
    auto it = by_state.find(s);
    return it == by_state.end() ? kNone : it->second;
  };

  for (std::size_t ep = 1; ep <= cfg.episodes; ++ep) {
    const Trajectory traj = rollout(mdp, res.q, cfg.epsilon, rng);

    for (auto it = traj.steps.rbegin(); it != traj.steps.rend(); ++it) {
      const auto& st = *it;
      bellman_update(res.q, st.h, st.s, st.a, st.r, st.s_next, learning_rate(res.counts(st.s, st.a), cfg.beta),
                     cfg.gamma);
      const std::uint64_t n = res.counts.increment(st.s, st.a);
      const auto& acts = expert_actions(st.s);
      if (!acts.empty()) rule(res.q.mutable_row(st.h, st.s), st.a, std::span(acts), n, st.s, res.counts);
    }

    for (const auto& recs : replay) {
      for (std::size_t i = recs.size(); i-- > 0;) {
        const auto& d = recs[i];
        const double r = mdp.sample_reward(d.s, d.a, rng);
        std::size_t s2 = 0;
        if (i + 1 < recs.size()) {
          s2 = recs[i + 1].s;
        } else if (d.h + 1 < H) {
          s2 = mdp.sample_next_state(d.s, d.a, rng);
        }  // at the last step the successor only meets Q_H = 0
        const std::uint64_t n = res.counts(d.s, d.a);
        bellman_update(res.q, d.h, d.s, d.a, r, s2, learning_rate(n, cfg.beta), cfg.gamma);
        rule(res.q.mutable_row(d.h, d.s), d.a, std::span(expert_actions(d.s)), n, d.s, res.counts);
      }
    }

    const Trajectory eval = rollout(mdp, res.q, 0.0, eval_rng);
    res.curve.rows.push_back({ep, traj.return_undiscounted, eval.return_undiscounted});
  }
  return res;
}

struct NoExpertRule {
  void operator()(std::span<double>, std::size_t, std::span<const std::size_t>, std::uint64_t, std::size_t,
                  const VisitCounts&) const {}
};

}  // namespace bqfd
