#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bqfd/io.hpp"
#include "bqfd/rng.hpp"
#include "bqfd/softmax.hpp"

namespace bqfd {

inline constexpr double kProbabilityTolerance = 1e-12;

/// Finite-horizon tabular MDP <S, A, P, gamma, R, rho>.
///
/// Tables are row-major: transition[(s*A + a)*S + s'], reward tables [s*A + a].
/// Immutable after construction; the constructor enforces every invariant.
class TabularMdp {
 public:
  TabularMdp(std::size_t num_states, std::size_t num_actions, std::size_t horizon,
             std::vector<double> transition, std::vector<double> reward_mean,
             std::vector<double> reward_noise_std, double discount,
             std::vector<double> initial_dist)
      : num_states_(num_states),
        num_actions_(num_actions),
        horizon_(horizon),
        transition_(std::move(transition)),
        reward_mean_(std::move(reward_mean)),
        reward_noise_std_(std::move(reward_noise_std)),
        discount_(discount),
        initial_dist_(std::move(initial_dist)) {
    validate();
  }

  std::size_t num_states() const noexcept { return num_states_; }
  std::size_t num_actions() const noexcept { return num_actions_; }
  std::size_t horizon() const noexcept { return horizon_; }
  std::size_t num_pairs() const noexcept { return num_states_ * num_actions_; }
  double discount() const noexcept { return discount_; }

  std::size_t pair(std::size_t s, std::size_t a) const noexcept { return s * num_actions_ + a; }

  std::span<const double> next_state_probs(std::size_t s, std::size_t a) const {
    return {transition_.data() + pair(s, a) * num_states_, num_states_};
  }
  double transition(std::size_t s, std::size_t a, std::size_t s2) const {
    return transition_[pair(s, a) * num_states_ + s2];
  }
  double reward_mean(std::size_t s, std::size_t a) const { return reward_mean_[pair(s, a)]; }
  double reward_noise_std(std::size_t s, std::size_t a) const {
    return reward_noise_std_[pair(s, a)];
  }
  std::span<const double> initial_dist() const noexcept { return initial_dist_; }

  const std::vector<double>& transition_table() const noexcept { return transition_; }
  const std::vector<double>& reward_mean_table() const noexcept { return reward_mean_; }
  const std::vector<double>& reward_noise_table() const noexcept { return reward_noise_std_; }

  double max_abs_reward() const {
    double m = 0.0;
    for (double r : reward_mean_) m = std::max(m, std::abs(r));
    return m;
  }

  std::size_t sample_initial_state(Rng& rng) const { return rng.categorical(initial_dist_); }

  double sample_reward(std::size_t s, std::size_t a, Rng& rng) const {
    const double sd = reward_noise_std(s, a);
    return sd > 0.0 ? reward_mean(s, a) + sd * rng.normal() : reward_mean(s, a);
  }

  std::size_t sample_next_state(std::size_t s, std::size_t a, Rng& rng) const {
    return rng.categorical(next_state_probs(s, a));
  }

  friend bool operator==(const TabularMdp&, const TabularMdp&) = default;

 private:
  void validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("TabularMdp: " + what); };
    if (num_states_ == 0 || num_actions_ == 0) fail("state and action spaces must be non-empty");
    if (horizon_ == 0) fail("horizon must be >= 1");
    if (transition_.size() != num_pairs() * num_states_) fail("transition table has wrong size");
    if (reward_mean_.size() != num_pairs()) fail("reward_mean table has wrong size");
    if (reward_noise_std_.size() != num_pairs()) fail("reward_noise_std table has wrong size");
    if (initial_dist_.size() != num_states_) fail("initial_dist has wrong size");
    if (!(discount_ > 0.0 && discount_ <= 1.0)) fail("discount must lie in (0, 1]");
    for (std::size_t i = 0; i < num_pairs(); ++i) {
      double total = 0.0;
      for (std::size_t s2 = 0; s2 < num_states_; ++s2) {
        const double p = transition_[i * num_states_ + s2];
        if (!(p >= 0.0 && p <= 1.0)) fail("transition entry outside [0, 1]");
        total += p;
      }
      if (std::abs(total - 1.0) > kProbabilityTolerance) {
        fail("transition row " + std::to_string(i) + " does not sum to 1");
      }
      if (!std::isfinite(reward_mean_[i])) fail("non-finite reward");
      if (!(reward_noise_std_[i] >= 0.0)) fail("reward_noise_std must be >= 0");
    }
    double total = 0.0;
    for (double p : initial_dist_) {
      if (!(p >= 0.0 && p <= 1.0)) fail("initial_dist entry outside [0, 1]");
      total += p;
    }
    if (std::abs(total - 1.0) > kProbabilityTolerance) fail("initial_dist does not sum to 1");
  }

  std::size_t num_states_;
  std::size_t num_actions_;
  std::size_t horizon_;
  std::vector<double> transition_;
  std::vector<double> reward_mean_;
  std::vector<double> reward_noise_std_;
  double discount_;
  std::vector<double> initial_dist_;
};

/// Time-indexed Q-table Q_h(s, a) for h = 0..H. The slice h = H is pinned to 0
/// and is not writable.
class QFunction {
 public:
  QFunction(std::size_t horizon, std::size_t num_states, std::size_t num_actions)
      : horizon_(horizon),
        num_states_(num_states),
        num_actions_(num_actions),
        values_((horizon + 1) * num_states * num_actions, 0.0) {}

  explicit QFunction(const TabularMdp& mdp)
      : QFunction(mdp.horizon(), mdp.num_states(), mdp.num_actions()) {}

  std::size_t horizon() const noexcept { return horizon_; }
  std::size_t num_states() const noexcept { return num_states_; }
  std::size_t num_actions() const noexcept { return num_actions_; }

  double operator()(std::size_t h, std::size_t s, std::size_t a) const {
    return values_[offset(h, s) + a];
  }

  std::span<const double> row(std::size_t h, std::size_t s) const {
    return {values_.data() + offset(h, s), num_actions_};
  }

  std::span<double> mutable_row(std::size_t h, std::size_t s) {
    if (h >= horizon_) throw std::out_of_range("QFunction: Q_H is fixed at zero");
    return {values_.data() + offset(h, s), num_actions_};
  }

  void set(std::size_t h, std::size_t s, std::size_t a, double v) { mutable_row(h, s)[a] = v; }

  // Q_h flattened over (s, a) in pair order s*A + a.
  std::span<const double> slice(std::size_t h) const {
    return {values_.data() + offset(h, 0), num_states_ * num_actions_};
  }
  std::span<double> mutable_slice(std::size_t h) {
    if (h >= horizon_) throw std::out_of_range("QFunction: Q_H is fixed at zero");
    return {values_.data() + offset(h, 0), num_states_ * num_actions_};
  }

  double max_at(std::size_t h, std::size_t s) const { return max_value(row(h, s)); }
  std::size_t greedy_action(std::size_t h, std::size_t s) const { return argmax(row(h, s)); }

  const std::vector<double>& values() const noexcept { return values_; }

  friend bool operator==(const QFunction&, const QFunction&) = default;

 private:
  std::size_t offset(std::size_t h, std::size_t s) const {
    return (h * num_states_ + s) * num_actions_;
  }

  std::size_t horizon_;
  std::size_t num_states_;
  std::size_t num_actions_;
  std::vector<double> values_;
};

inline double sup_norm_diff(const QFunction& a, const QFunction& b) {
  if (a.values().size() != b.values().size()) throw std::invalid_argument("QFunction shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  }
  return m;
}

/// Time-dependent stochastic policy, probs[(h*S + s)*A + a].
class Policy {
 public:
  Policy(std::size_t horizon, std::size_t num_states, std::size_t num_actions,
         std::vector<double> probs)
      : horizon_(horizon), num_states_(num_states), num_actions_(num_actions), probs_(std::move(probs)) {
    if (probs_.size() != horizon_ * num_states_ * num_actions_) {
      throw std::invalid_argument("Policy: table has wrong size");
    }
    for (std::size_t i = 0; i < horizon_ * num_states_; ++i) {
      double total = 0.0;
      for (std::size_t a = 0; a < num_actions_; ++a) {
        const double p = probs_[i * num_actions_ + a];
        if (!(p >= 0.0)) throw std::invalid_argument("Policy: negative probability");
        total += p;
      }
      if (std::abs(total - 1.0) > kProbabilityTolerance) {
        throw std::invalid_argument("Policy: action vector does not sum to 1");
      }
    }
  }

  std::span<const double> probs(std::size_t h, std::size_t s) const {
    return {probs_.data() + (h * num_states_ + s) * num_actions_, num_actions_};
  }
  std::size_t horizon() const noexcept { return horizon_; }

 private:
  std::size_t horizon_;
  std::size_t num_states_;
  std::size_t num_actions_;
  std::vector<double> probs_;
};

inline Policy greedy_policy(const QFunction& q) {
  const std::size_t S = q.num_states(), A = q.num_actions(), H = q.horizon();
  std::vector<double> probs(H * S * A, 0.0);
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t s = 0; s < S; ++s) probs[(h * S + s) * A + q.greedy_action(h, s)] = 1.0;
  }
  return Policy(H, S, A, std::move(probs));
}

struct Step {
  std::size_t h;
  std::size_t s;
  std::size_t a;
  double r;
  std::size_t s_next;
  friend bool operator==(const Step&, const Step&) = default;
};

struct Trajectory {
  std::vector<Step> steps;
  double return_undiscounted = 0.0;
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

// Checks consecutive step indices and chaining of s_next into the next s.
inline bool is_chain_consistent(const Trajectory& t) {
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    if (t.steps[i].h != i) return false;
    if (i + 1 < t.steps.size() && t.steps[i].s_next != t.steps[i + 1].s) return false;
  }
  return true;
}

inline Trajectory sample_trajectory(const TabularMdp& mdp, const Policy& policy, Rng& rng) {
  if (policy.horizon() != mdp.horizon()) throw std::invalid_argument("sample_trajectory: horizon mismatch");
  Trajectory t;
  t.steps.reserve(mdp.horizon());
  std::size_t s = mdp.sample_initial_state(rng);
  for (std::size_t h = 0; h < mdp.horizon(); ++h) {
    const std::size_t a = rng.categorical(policy.probs(h, s));
    const double r = mdp.sample_reward(s, a, rng);
    const std::size_t s2 = mdp.sample_next_state(s, a, rng);
    t.steps.push_back({h, s, a, r, s2});
    t.return_undiscounted += r;
    s = s2;
  }
  return t;
}

inline std::string trajectory_csv(const Trajectory& t) {
  std::string out = "h,s,a,r,s_next\n";
  for (const auto& st : t.steps) {
    out += std::to_string(st.h) + ',' + std::to_string(st.s) + ',' + std::to_string(st.a) + ',' +
           format_double(st.r) + ',' + std::to_string(st.s_next) + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// DeepSea

inline constexpr std::size_t kLeft = 0;
inline constexpr std::size_t kRight = 1;

enum class DeepSeaReward { kTreasure, kBomb };

/// DeepSea chain of length n. The state is the column; the grid row equals the
/// time step and is carried by the time-indexed Q-table instead.
///
/// Left: reward 0, move left (clamped). Right: reward -0.01/n, move right
/// (clamped). The terminal bonus (+1 or -1) is attached to a right action in
/// the last column, which is reachable only at step n-1, so it is paid at most
/// once per episode.
inline TabularMdp make_deep_sea(std::size_t n, DeepSeaReward terminal) {
  if (n < 2) throw std::invalid_argument("make_deep_sea: chain length must be >= 2");
  const std::size_t S = n, A = 2;
  const double step_penalty = -0.01 / static_cast<double>(n);
  const double bonus = terminal == DeepSeaReward::kTreasure ? 1.0 : -1.0;
  std::vector<double> transition(S * A * S, 0.0);
  std::vector<double> reward(S * A, 0.0);
  for (std::size_t s = 0; s < S; ++s) {
    const std::size_t left = s == 0 ? 0 : s - 1;
    const std::size_t right = s + 1 == S ? s : s + 1;
    transition[(s * A + kLeft) * S + left] = 1.0;
    transition[(s * A + kRight) * S + right] = 1.0;
    reward[s * A + kLeft] = 0.0;
    reward[s * A + kRight] = step_penalty + (s + 1 == S ? bonus : 0.0);
  }
  std::vector<double> rho(S, 0.0);
  rho[0] = 1.0;
  return TabularMdp(S, A, n, std::move(transition), std::move(reward), std::vector<double>(S * A, 0.0),
                    1.0, std::move(rho));
}

// ---------------------------------------------------------------------------
// Exact dynamic programming

inline QFunction value_iteration(const TabularMdp& mdp) {
  QFunction q(mdp);
  const std::size_t S = mdp.num_states(), A = mdp.num_actions();
  std::vector<double> v_next(S, 0.0);
  for (std::size_t h = mdp.horizon(); h-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      auto row = q.mutable_row(h, s);
      for (std::size_t a = 0; a < A; ++a) {
        double expect = 0.0;
        for (std::size_t s2 = 0; s2 < S; ++s2) expect += mdp.transition(s, a, s2) * v_next[s2];
        row[a] = mdp.reward_mean(s, a) + mdp.discount() * expect;
      }
    }
    for (std::size_t s = 0; s < S; ++s) v_next[s] = q.max_at(h, s);
  }
  return q;
}

inline constexpr double kMaxEnumeratedPolicies = 1e6;

/// Independent oracle for value_iteration: evaluates every deterministic
/// time-dependent policy exactly and keeps the elementwise maximum of Q^pi.
/// No max operator appears inside the policy evaluation.
inline QFunction brute_force_optimal_q(const TabularMdp& mdp) {
  const std::size_t S = mdp.num_states(), A = mdp.num_actions(), H = mdp.horizon();
  const std::size_t decisions = S * H;
  double count = 1.0;
  for (std::size_t i = 0; i < decisions; ++i) {
    count *= static_cast<double>(A);
    if (count > kMaxEnumeratedPolicies) {
      throw std::invalid_argument("brute_force_optimal_q: |A|^(|S|*H) exceeds enumeration guard");
    }
  }

  QFunction best(mdp);
  std::vector<double> best_vals((H + 1) * S * A, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> choice(decisions, 0);  // choice[h*S + s]
  std::vector<double> q_pi((H + 1) * S * A, 0.0);
  std::vector<double> v_next(S), v_cur(S);

  while (true) {
    std::fill(v_next.begin(), v_next.end(), 0.0);
    for (std::size_t h = H; h-- > 0;) {
      for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t a = 0; a < A; ++a) {
          double expect = 0.0;
          for (std::size_t s2 = 0; s2 < S; ++s2) expect += mdp.transition(s, a, s2) * v_next[s2];
          const double val = mdp.reward_mean(s, a) + mdp.discount() * expect;
          q_pi[(h * S + s) * A + a] = val;
          auto& b = best_vals[(h * S + s) * A + a];
          if (val > b) b = val;
        }
        v_cur[s] = q_pi[(h * S + s) * A + choice[h * S + s]];
      }
      std::swap(v_next, v_cur);
    }
    // Mixed-radix increment over all decisions.
    std::size_t i = 0;
    while (i < decisions && ++choice[i] == A) choice[i++] = 0;
    if (i == decisions) break;
  }

  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t a = 0; a < A; ++a) best.set(h, s, a, best_vals[(h * S + s) * A + a]);
    }
  }
  return best;
}

// Undiscounted expected return of the greedy policy of q, from rho.
inline double greedy_expected_return(const TabularMdp& mdp, const QFunction& q) {
  const std::size_t S = mdp.num_states();
  std::vector<double> v_next(S, 0.0), v(S, 0.0);
  for (std::size_t h = mdp.horizon(); h-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t a = q.greedy_action(h, s);
      double expect = 0.0;
      for (std::size_t s2 = 0; s2 < S; ++s2) expect += mdp.transition(s, a, s2) * v_next[s2];
      v[s] = mdp.reward_mean(s, a) + expect;
    }
    std::swap(v, v_next);
  }
  double total = 0.0;
  for (std::size_t s = 0; s < S; ++s) total += mdp.initial_dist()[s] * v_next[s];
  return total;
}

// ---------------------------------------------------------------------------
// Random instances

struct RandomMdpSpec {
  std::size_t num_states = 2;
  std::size_t num_actions = 2;
  std::size_t horizon = 2;
  double reward_lo = -1.0;
  double reward_hi = 1.0;
  double noise_std = 0.0;
  double discount = 1.0;
};

inline std::vector<double> dirichlet_row(std::size_t k, Rng& rng) {
  std::vector<double> row(k);
  double total = 0.0;
  for (double& x : row) {
    x = rng.exponential();
    total += x;
  }
  for (double& x : row) x /= total;
  return row;
}

inline TabularMdp random_mdp(const RandomMdpSpec& spec, Rng& rng) {
  if (spec.num_states == 0 || spec.num_actions == 0 || spec.horizon == 0) {
    throw std::invalid_argument("random_mdp: sizes must be >= 1");
  }
  if (!std::isfinite(spec.reward_lo) || !std::isfinite(spec.reward_hi) || spec.reward_lo > spec.reward_hi) {
    throw std::invalid_argument("random_mdp: reward range must be finite and ordered");
  }
  const std::size_t S = spec.num_states, A = spec.num_actions;
  std::vector<double> transition;
  transition.reserve(S * A * S);
  for (std::size_t i = 0; i < S * A; ++i) {
    auto row = dirichlet_row(S, rng);
    transition.insert(transition.end(), row.begin(), row.end());
  }
  std::vector<double> reward(S * A);
  for (double& r : reward) r = rng.uniform(spec.reward_lo, spec.reward_hi);
  auto rho = dirichlet_row(S, rng);
  return TabularMdp(S, A, spec.horizon, std::move(transition), std::move(reward),
                    std::vector<double>(S * A, spec.noise_std), spec.discount, std::move(rho));
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const TabularMdp& mdp) {
  return {
      {"num_states", mdp.num_states()},
      {"num_actions", mdp.num_actions()},
      {"horizon", mdp.horizon()},
      {"transition", mdp.transition_table()},
      {"reward_mean", mdp.reward_mean_table()},
      {"reward_noise_std", mdp.reward_noise_table()},
      {"discount", mdp.discount()},
      {"initial_dist", std::vector<double>(mdp.initial_dist().begin(), mdp.initial_dist().end())},
  };
}

inline TabularMdp mdp_from_json(const nlohmann::json& j) {
  return TabularMdp(j.at("num_states").get<std::size_t>(), j.at("num_actions").get<std::size_t>(),
                    j.at("horizon").get<std::size_t>(), j.at("transition").get<std::vector<double>>(),
                    j.at("reward_mean").get<std::vector<double>>(),
                    j.at("reward_noise_std").get<std::vector<double>>(), j.at("discount").get<double>(),
                    j.at("initial_dist").get<std::vector<double>>());
}

}  // namespace bqfd
