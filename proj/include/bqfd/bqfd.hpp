#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "bqfd/experts.hpp"
#include "bqfd/mdp.hpp"
#include "bqfd/softmax.hpp"
#include "bqfd/tabular.hpp"

namespace bqfd {

/// Closed-form surrogate for the posterior variance of a pair visited n times:
/// (beta^2 + 4n) / (beta + n)^2. Equals 1 at n = 0 and behaves like 4/n.
inline double weight_decay(std::uint64_t n, double beta) {
  const double nd = static_cast<double>(n);
  return (beta * beta + 4.0 * nd) / ((beta + nd) * (beta + nd));
}

/// [softmax_eta(q_row)(a)]^zeta; zeta rescales so the weight does not vanish.
inline double importance_weight(std::span<const double> q_row, std::size_t a, double eta, double zeta) {
  if (zeta == 0.0) return 1.0;
  return std::pow(softmax_at(q_row, eta, a), zeta);
}

// scale * eta * w * (1[a = demo_action] - softmax_eta(q_row)(a)).
inline double expert_correction_term(std::span<const double> q_row, std::size_t a, std::size_t demo_action,
                                     double eta, double w, double scale = 1.0) {
  return scale * eta * w * ((a == demo_action ? 1.0 : 0.0) - softmax_at(q_row, eta, a));
}

// Adds the correction to the taken action only; softmax at the pre-update row.
inline void expert_correction(std::span<double> q_row, std::size_t a, std::size_t demo_action, double eta,
                              double w, double scale = 1.0) {
  q_row[a] += expert_correction_term(q_row, a, demo_action, eta, w, scale);
}

struct BqfdConfig {
  double eta = 3.0;
  double beta = 2.0;
  double gamma = 1.0;
  double zeta = 0.0;
  double epsilon = 0.0;
  std::size_t episodes = 3000;
  std::uint64_t seed = 0;
  double correction_scale = 1.0;
  // Replay the demonstrations through the update once per episode (the
  // tabular stand-in for sampling expert data from a replay buffer).
  bool demo_replay = true;

  CoreConfig core() const { return {beta, gamma, epsilon, episodes, seed, demo_replay}; }
};

inline void validate(const BqfdConfig& c) {
  validate(c.core());
  if (!(c.eta > 0.0)) throw std::invalid_argument("config: eta must be > 0");
  if (!(c.zeta >= 0.0)) throw std::invalid_argument("config: zeta must be >= 0");
  if (!(c.correction_scale > 0.0)) throw std::invalid_argument("config: correction_scale must be > 0");
}

// Expert term of the BQfD update. Every demo record at the state contributes
// one correction, all evaluated at the same pre-correction row.
struct BqfdExpertRule {
  double eta;
  double beta;
  double zeta;
  double scale;
  std::vector<double> applied;  // cumulative |correction| per pair, s*A + a
  std::size_t num_actions;

  void operator()(std::span<double> row, std::size_t a, std::span<const std::size_t> demo_actions,
                  std::uint64_t n, std::size_t s, const VisitCounts&) {
    const double w = weight_decay(n, beta);
    const double iw = importance_weight(row, a, eta, zeta);
    double delta = 0.0;
    for (std::size_t d : demo_actions) delta += expert_correction_term(row, a, d, eta, w, scale * iw);
    row[a] += delta;
    applied[s * num_actions + a] += std::abs(delta);
  }
};

struct BqfdResult : TrainResult {
  std::vector<double> applied_correction;  // per pair, s*A + a
};

/// Tabular BQfD: greedy rollouts, backward count-based Q-updates, and at
/// demonstrated states the decayed expert correction.
inline BqfdResult bqfd_train(const TabularMdp& mdp, const DemoSet& demos, const BqfdConfig& cfg) {
  validate(cfg);
  BqfdExpertRule rule{cfg.eta, cfg.beta, cfg.zeta, cfg.correction_scale,
                      std::vector<double>(mdp.num_pairs(), 0.0), mdp.num_actions()};
  TrainResult base = run_tabular(mdp, demos, cfg.core(), rule);
  return {std::move(base), std::move(rule.applied)};
}

// ---------------------------------------------------------------------------
// Config files: a flat JSON object; unknown keys are rejected.

namespace detail {
template <class F>
void for_each_key(const nlohmann::json& j, F&& f) {
  if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) f(it.key(), it.value());
}
[[noreturn]] inline void unknown_key(const std::string& k) {
  throw std::invalid_argument("config: unknown key '" + k + "'");
}
}  // namespace detail

inline BqfdConfig bqfd_config_from_json(const nlohmann::json& j, BqfdConfig c = {}) {
  detail::for_each_key(j, [&](const std::string& k, const nlohmann::json& v) {
    if (k == "eta") c.eta = v.get<double>();
    else if (k == "beta") c.beta = v.get<double>();
    else if (k == "gamma") c.gamma = v.get<double>();
    else if (k == "zeta") c.zeta = v.get<double>();
    else if (k == "epsilon") c.epsilon = v.get<double>();
    else if (k == "episodes") c.episodes = v.get<std::size_t>();
    else if (k == "seed") c.seed = v.get<std::uint64_t>();
    else if (k == "correction_scale") c.correction_scale = v.get<double>();
    else if (k == "demo_replay") c.demo_replay = v.get<bool>();
    else detail::unknown_key(k);
  });
  validate(c);
  return c;
}

}  // namespace bqfd
