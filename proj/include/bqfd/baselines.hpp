#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>

#include <json.hpp>

#include "bqfd/bqfd.hpp"
#include "bqfd/experts.hpp"
#include "bqfd/mdp.hpp"
#include "bqfd/softmax.hpp"
#include "bqfd/tabular.hpp"

namespace bqfd {

struct BaselineConfig {
  double epsilon = 0.1;
  double margin = 0.8;
  // Fixed expert step size; when empty the margin step uses learning_rate(n(s, a_E), beta).
  std::optional<double> expert_rate;
  double beta = 2.0;
  double gamma = 1.0;
  std::size_t episodes = 3000;
  std::uint64_t seed = 0;
  bool demo_replay = true;

  CoreConfig core() const { return {beta, gamma, epsilon, episodes, seed, demo_replay}; }
};

inline void validate(const BaselineConfig& c) {
  validate(c.core());
  if (!(c.margin >= 0.0)) throw std::invalid_argument("config: margin must be >= 0");
  if (c.expert_rate && !(*c.expert_rate > 0.0)) throw std::invalid_argument("config: expert_rate must be > 0");
}

/// Tabular Q-learning with epsilon-greedy rollouts. Seed demonstrations, when
/// given, are replayed once per episode as extra Bellman updates.
inline TrainResult q_learning_train(const TabularMdp& mdp, const BaselineConfig& cfg,
                                    const DemoSet* seed_demos = nullptr) {
  validate(cfg);
  NoExpertRule rule;
  static const DemoSet kEmpty;
  return run_tabular(mdp, seed_demos ? *seed_demos : kEmpty, cfg.core(), rule);
}

// Hinge value max_a [Q(a) + m 1[a != a_E]] - Q(a_E).
inline double margin_hinge(std::span<const double> row, std::size_t expert_action, double margin) {
  double best = row[expert_action];
  for (std::size_t a = 0; a < row.size(); ++a) {
    if (a != expert_action) best = std::max(best, row[a] + margin);
  }
  return best - row[expert_action];
}

/// Large-margin step: if a* = argmax_a [Q(a) + m 1[a != a_E]] differs from a_E,
/// move Q(a_E) up and Q(a*) down by rate * delta, delta = Q(a*) + m - Q(a_E).
/// Returns true when the hinge was active.
inline bool margin_update(std::span<double> row, std::size_t expert_action, double margin, double rate) {
  std::size_t best = 0;
  double best_val = row[0] + (expert_action == 0 ? 0.0 : margin);
  for (std::size_t a = 1; a < row.size(); ++a) {
    const double v = row[a] + (a == expert_action ? 0.0 : margin);
    if (v > best_val) {
      best = a;
      best_val = v;
    }
  }
  if (best == expert_action) return false;
  const double delta = best_val - row[expert_action];
  row[expert_action] += rate * delta;
  row[best] -= rate * delta;
  return true;
}

struct MarginRule {
  double margin;
  std::optional<double> expert_rate;
  double beta;

  void operator()(std::span<double> row, std::size_t, std::span<const std::size_t> demo_actions, std::uint64_t,
                  std::size_t s, const VisitCounts& counts) const {
    for (std::size_t d : demo_actions) {
      const double rate = expert_rate ? *expert_rate : learning_rate(counts(s, d), beta);
      margin_update(row, d, margin, rate);
    }
  }
};

/// Tabular DQfD analogue: the Q-learning updates plus a margin step at every
/// demonstrated state. The margin pressure never decays relative to the
/// Bellman step.
inline TrainResult dqfd_margin_train(const TabularMdp& mdp, const DemoSet& demos, const BaselineConfig& cfg) {
  validate(cfg);
  MarginRule rule{cfg.margin, cfg.expert_rate, cfg.beta};
  return run_tabular(mdp, demos, cfg.core(), rule);
}

inline BaselineConfig baseline_config_from_json(const nlohmann::json& j, BaselineConfig c = {}) {
  detail::for_each_key(j, [&](const std::string& k, const nlohmann::json& v) {
    if (k == "epsilon") c.epsilon = v.get<double>();
    else if (k == "margin") c.margin = v.get<double>();
    else if (k == "expert_rate") c.expert_rate = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
    else if (k == "beta") c.beta = v.get<double>();
    else if (k == "gamma") c.gamma = v.get<double>();
    else if (k == "episodes") c.episodes = v.get<std::size_t>();
    else if (k == "seed") c.seed = v.get<std::uint64_t>();
    else if (k == "demo_replay") c.demo_replay = v.get<bool>();
    else detail::unknown_key(k);
  });
  validate(c);
  return c;
}

}  // namespace bqfd
