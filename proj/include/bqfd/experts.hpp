#pragma once

#include <algorithm>
#include <cstddef>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bqfd/mdp.hpp"
#include "bqfd/rng.hpp"
#include "bqfd/softmax.hpp"

namespace bqfd {

struct DemoRecord {
  std::size_t trajectory_id = 0;
  std::size_t h = 0;
  std::size_t s = 0;
  std::size_t a = 0;
  friend bool operator==(const DemoRecord&, const DemoRecord&) = default;
};

enum class DemoSource { kBoltzmann, kScripted };

inline const char* to_string(DemoSource src) {
  return src == DemoSource::kBoltzmann ? "boltzmann" : "scripted";
}

/// Expert demonstrations. Records are stored verbatim: two trajectories that
/// disagree at the same state both keep their records.
struct DemoSet {
  std::vector<DemoRecord> records;
  DemoSource source = DemoSource::kScripted;
  std::optional<double> eta_used;

  bool empty() const noexcept { return records.empty(); }
  friend bool operator==(const DemoSet&, const DemoSet&) = default;
};

// An expert action observed at one state; the unit the learners consume.
struct ExpertAction {
  std::size_t s = 0;
  std::size_t a = 0;
  friend bool operator==(const ExpertAction&, const ExpertAction&) = default;
};

class DemoParseError : public std::runtime_error {
 public:
  DemoParseError(std::size_t line, const std::string& what)
      : std::runtime_error("demo file line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DemoValidationError : public std::runtime_error {
 public:
  DemoValidationError(std::size_t line, const std::string& what)
      : std::runtime_error("demo file line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Bounds a DemoSet is checked against. Zero disables a bound.
struct DemoLimits {
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  std::size_t horizon = 0;

  static DemoLimits of(const TabularMdp& mdp) {
    return {mdp.num_states(), mdp.num_actions(), mdp.horizon()};
  }
};

// Throws DemoValidationError; the reported "line" is the 1-based record index.
inline void validate(const DemoSet& set, const DemoLimits& limits = {}) {
  std::map<std::size_t, std::size_t> next_h;
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    const auto& r = set.records[i];
    if (limits.num_actions && r.a >= limits.num_actions) {
      throw DemoValidationError(i + 1, "action " + std::to_string(r.a) + " out of range");
    }
    if (limits.num_states && r.s >= limits.num_states) {
      throw DemoValidationError(i + 1, "state " + std::to_string(r.s) + " out of range");
    }
    if (limits.horizon && r.h >= limits.horizon) {
      throw DemoValidationError(i + 1, "step " + std::to_string(r.h) + " beyond horizon");
    }
    auto& expect = next_h[r.trajectory_id];
    if (r.h != expect) {
      throw DemoValidationError(i + 1, "trajectory " + std::to_string(r.trajectory_id) +
                                           " expected step " + std::to_string(expect));
    }
    ++expect;
  }
}

/// Samples trajectories from the Boltzmann expert pi(a|s) ∝ exp(eta q*_h(s,a)),
/// starting from rho and running the full horizon.
inline DemoSet boltzmann_expert_sample(const QFunction& q_star, const TabularMdp& mdp, double eta,
                                       std::size_t num_trajectories, Rng& rng) {
  if (!(eta > 0.0)) throw std::invalid_argument("boltzmann_expert_sample: eta must be > 0");
  if (q_star.horizon() != mdp.horizon() || q_star.num_states() != mdp.num_states() ||
      q_star.num_actions() != mdp.num_actions()) {
    throw std::invalid_argument("boltzmann_expert_sample: q_star does not match mdp");
  }
  DemoSet out{{}, DemoSource::kBoltzmann, eta};
  out.records.reserve(num_trajectories * mdp.horizon());
  for (std::size_t id = 0; id < num_trajectories; ++id) {
    std::size_t s = mdp.sample_initial_state(rng);
    for (std::size_t h = 0; h < mdp.horizon(); ++h) {
      const auto p = softmax(q_star.row(h, s), eta);
      const std::size_t a = rng.categorical(p);
      out.records.push_back({id, h, s, a});
      s = mdp.sample_next_state(s, a, rng);
    }
  }
  return out;
}

// One DeepSea trajectory of n right actions; column h at step h.
inline DemoSet scripted_right_expert(std::size_t n) {
  if (n < 2) throw std::invalid_argument("scripted_right_expert: chain length must be >= 2");
  DemoSet out;
  for (std::size_t h = 0; h < n; ++h) out.records.push_back({0, h, h, kRight});
  return out;
}

// Expert actions keyed by state only; conflicting records are all kept.
inline std::map<std::size_t, std::vector<std::size_t>> demos_by_state(const DemoSet& set) {
  std::map<std::size_t, std::vector<std::size_t>> out;
  for (const auto& r : set.records) out[r.s].push_back(r.a);
  return out;
}

inline std::vector<std::vector<ExpertAction>> demos_by_step(const DemoSet& set, std::size_t horizon) {
  std::vector<std::vector<ExpertAction>> out(horizon);
  for (const auto& r : set.records) {
    if (r.h < horizon) out[r.h].push_back({r.s, r.a});
  }
  return out;
}

// Records grouped per trajectory in step order.
inline std::vector<std::vector<DemoRecord>> demo_trajectories(const DemoSet& set) {
  std::map<std::size_t, std::vector<DemoRecord>> grouped;
  for (const auto& r : set.records) grouped[r.trajectory_id].push_back(r);
  std::vector<std::vector<DemoRecord>> out;
  for (auto& [id, recs] : grouped) {
    std::sort(recs.begin(), recs.end(), [](const auto& x, const auto& y) { return x.h < y.h; });
    out.push_back(std::move(recs));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON-lines format: one object per record with keys trajectory_id, h, s, a,
// source and (for Boltzmann sets) eta.

inline void write_demos(std::ostream& out, const DemoSet& set) {
  for (const auto& r : set.records) {
    nlohmann::ordered_json j;
    j["trajectory_id"] = r.trajectory_id;
    j["h"] = r.h;
    j["s"] = r.s;
    j["a"] = r.a;
    j["source"] = to_string(set.source);
    if (set.eta_used) j["eta"] = *set.eta_used;
    out << j.dump() << '\n';
  }
}

inline std::string demos_to_string(const DemoSet& set) {
  std::ostringstream ss;
  write_demos(ss, set);
  return ss.str();
}

inline DemoSet read_demos(std::istream& in, const DemoLimits& limits = {}) {
  DemoSet set;
  bool have_meta = false;
  std::string line;
  std::size_t lineno = 0;
  auto index_field = [&](const nlohmann::json& j, const char* key) -> std::size_t {
    if (!j.contains(key)) throw DemoParseError(lineno, std::string("missing field '") + key + "'");
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw DemoParseError(lineno, std::string("field '") + key + "' must be a non-negative integer");
    }
    return v.get<std::size_t>();
  };
  std::map<std::size_t, std::size_t> next_h;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DemoParseError(lineno, e.what());
    }
    if (!j.is_object()) throw DemoParseError(lineno, "expected a JSON object");
    DemoRecord r{index_field(j, "trajectory_id"), index_field(j, "h"), index_field(j, "s"),
                 index_field(j, "a")};

    DemoSource src = DemoSource::kScripted;
    if (j.contains("source")) {
      const auto name = j.at("source").is_string() ? j.at("source").get<std::string>() : "";
      if (name == "boltzmann") {
        src = DemoSource::kBoltzmann;
      } else if (name != "scripted") {
        throw DemoParseError(lineno, "unknown source '" + name + "'");
      }
    }
    std::optional<double> eta;
    if (j.contains("eta")) {
      if (!j.at("eta").is_number()) throw DemoParseError(lineno, "field 'eta' must be a number");
      eta = j.at("eta").get<double>();
    }
    if (!have_meta) {
      set.source = src;
      set.eta_used = eta;
      have_meta = true;
    } else if (src != set.source || eta != set.eta_used) {
      throw DemoValidationError(lineno, "source/eta differ from earlier records");
    }

    if (limits.num_actions && r.a >= limits.num_actions) {
      throw DemoValidationError(lineno, "action " + std::to_string(r.a) + " out of range");
    }
    if (limits.num_states && r.s >= limits.num_states) {
      throw DemoValidationError(lineno, "state " + std::to_string(r.s) + " out of range");
    }
    if (limits.horizon && r.h >= limits.horizon) {
      throw DemoValidationError(lineno, "step " + std::to_string(r.h) + " beyond horizon");
    }
    auto& expect = next_h[r.trajectory_id];
    if (r.h != expect) {
      throw DemoValidationError(lineno, "trajectory " + std::to_string(r.trajectory_id) +
                                            " expected step " + std::to_string(expect));
    }
    ++expect;
    set.records.push_back(r);
  }
  return set;
}

inline DemoSet demos_from_string(const std::string& text, const DemoLimits& limits = {}) {
  std::istringstream ss(text);
  return read_demos(ss, limits);
}

}  // namespace bqfd
