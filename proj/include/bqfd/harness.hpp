#pragma once

#include <fnmatch.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "bqfd/baselines.hpp"
#include "bqfd/bqfd.hpp"
#include "bqfd/experts.hpp"
#include "bqfd/io.hpp"
#include "bqfd/mdp.hpp"
#include "bqfd/rng.hpp"

namespace bqfd::harness {

namespace fs = std::filesystem;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr const char* kOutputRootEnv = "BQFD_OUTPUT_ROOT";

// ---------------------------------------------------------------------------
// Environments: "deepsea:<n>:<treasure|bomb>" or "random:<S>:<A>:<H>:<seed>".

struct EnvSpec {
  std::string text;
  bool deep_sea = true;
  std::size_t n = 0;
  DeepSeaReward terminal = DeepSeaReward::kTreasure;
  RandomMdpSpec random;
  std::uint64_t random_seed = 0;
};

inline EnvSpec parse_env(const std::string& text) {
  const auto parts = split(text, ':');
  EnvSpec env;
  env.text = text;
  try {
    if (parts.size() == 3 && parts[0] == "deepsea") {
      const auto n = parse_int(parts[1]);
      if (n < 2) throw ConfigError("deepsea length must be >= 2");
      env.n = static_cast<std::size_t>(n);
      if (parts[2] == "treasure") env.terminal = DeepSeaReward::kTreasure;
      else if (parts[2] == "bomb") env.terminal = DeepSeaReward::kBomb;
      else throw ConfigError("deepsea terminal must be 'treasure' or 'bomb'");
      return env;
    }
    if (parts.size() == 5 && parts[0] == "random") {
      env.deep_sea = false;
      const auto S = parse_int(parts[1]), A = parse_int(parts[2]), H = parse_int(parts[3]);
      if (S < 1 || A < 1 || H < 1) throw ConfigError("random env sizes must be >= 1");
      env.random.num_states = static_cast<std::size_t>(S);
      env.random.num_actions = static_cast<std::size_t>(A);
      env.random.horizon = static_cast<std::size_t>(H);
      env.random_seed = static_cast<std::uint64_t>(parse_int(parts[4]));
      return env;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("bad env spec '" + text + "': " + e.what());
  }
  throw ConfigError("bad env spec '" + text + "' (expected deepsea:<n>:<treasure|bomb> or random:<S>:<A>:<H>:<seed>)");
}

inline TabularMdp make_env(const EnvSpec& env) {
  if (env.deep_sea) return make_deep_sea(env.n, env.terminal);
  Rng rng(env.random_seed);
  return random_mdp(env.random, rng);
}

inline std::string sanitize(std::string s) {
  for (char& c : s) {
    if (c == ':' || c == '/' || c == ' ') c = '_';
  }
  return s;
}

// ---------------------------------------------------------------------------
// Algorithms

inline const std::vector<std::string>& known_algos() {
  static const std::vector<std::string> algos{"bqfd", "dqfd", "qlearn"};
  return algos;
}

inline bool is_known_algo(const std::string& a) {
  const auto& k = known_algos();
  return std::find(k.begin(), k.end(), a) != k.end();
}

/// Trains one algorithm. `blob` is the algorithm's flat config object; the
/// episode budget and seed arguments override whatever the blob says.
/// Q-learning ignores demos unless its blob sets "seed_demos": true.
inline TrainResult train_algo(const std::string& algo, const TabularMdp& mdp, const DemoSet& demos,
                              nlohmann::json blob, std::optional<std::size_t> episodes,
                              std::optional<std::uint64_t> seed) {
  if (blob.is_null()) blob = nlohmann::json::object();
  if (episodes) blob["episodes"] = *episodes;
  if (seed) blob["seed"] = *seed;
  if (algo == "bqfd") {
    return bqfd_train(mdp, demos, bqfd_config_from_json(blob));
  }
  if (algo == "dqfd") {
    BaselineConfig defaults;
    defaults.epsilon = 0.0;
    return dqfd_margin_train(mdp, demos, baseline_config_from_json(blob, defaults));
  }
  if (algo == "qlearn") {
    bool use_demos = false;
    if (blob.contains("seed_demos")) {
      use_demos = blob.at("seed_demos").get<bool>();
      blob.erase("seed_demos");
    }
    return q_learning_train(mdp, baseline_config_from_json(blob), use_demos ? &demos : nullptr);
  }
  throw ConfigError("unknown algo '" + algo + "'");
}

// "builtin:right" generates the scripted right-moving DeepSea expert.
inline DemoSet load_demo_source(const std::string& source, const TabularMdp& mdp, const EnvSpec& env) {
  if (source.empty()) return {};
  if (source == "builtin:right") {
    if (!env.deep_sea) throw ConfigError("builtin:right demos need a deepsea env");
    return scripted_right_expert(env.n);
  }
  std::ifstream in(source);
  if (!in) throw ConfigError("cannot open demo file " + source);
  return read_demos(in, DemoLimits::of(mdp));
}

// ---------------------------------------------------------------------------
// Experiments

struct ExperimentConfig {
  std::string env;
  std::vector<std::string> algos;
  std::vector<std::uint64_t> seeds;
  std::uint64_t master_seed = 0;
  std::size_t episodes = 3000;
  std::string demos;  // path, "builtin:right" or empty
  std::map<std::string, nlohmann::json> algo_configs;
  std::string output_dir = "results";
};

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      const auto& v = it.value();
      if (k == "env") c.env = v.get<std::string>();
      else if (k == "algos") c.algos = v.get<std::vector<std::string>>();
      else if (k == "seeds") c.seeds = v.get<std::vector<std::uint64_t>>();
      else if (k == "master_seed") c.master_seed = v.get<std::uint64_t>();
      else if (k == "episodes") c.episodes = v.get<std::size_t>();
      else if (k == "demos") c.demos = v.get<std::string>();
      else if (k == "configs") {
        for (auto a = v.begin(); a != v.end(); ++a) c.algo_configs[a.key()] = a.value();
      } else if (k == "output_dir") c.output_dir = v.get<std::string>();
      else throw ConfigError("unknown experiment key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  return c;
}

/// seed_cell = mix64(master ^ hash("<algo>|<env>|<seed>")), hash = FNV-1a 64
/// finished with the splitmix64 mixer.
inline std::uint64_t cell_seed(std::uint64_t master, const std::string& algo, const std::string& env,
                               std::uint64_t seed) {
  return mix64(master ^ hash_string(algo + "|" + env + "|" + std::to_string(seed)));
}

inline fs::path resolve_output_dir(const std::string& dir) {
  fs::path p(dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv(kOutputRootEnv); root && *root) return fs::path(root) / p;
  }
  return p;
}

inline void validate(const ExperimentConfig& c) {
  (void)parse_env(c.env);
  if (c.algos.empty()) throw ConfigError("experiment needs at least one algo");
  for (const auto& a : c.algos) {
    if (!is_known_algo(a)) throw ConfigError("unknown algo '" + a + "'");
  }
  for (const auto& [a, blob] : c.algo_configs) {
    if (!is_known_algo(a)) throw ConfigError("config given for unknown algo '" + a + "'");
  }
  if (c.seeds.empty()) throw ConfigError("experiment needs at least one seed");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) {
    throw ConfigError("seeds must be distinct");
  }
  if (c.episodes == 0) throw ConfigError("episode budget must be >= 1");
}

inline const char* kRunHeader = "algo,env,seed,episode,train_return,eval_return\n";

/// Runs every (algo, seed) cell and writes one CSV per algo x env. Returns the
/// written paths. All configuration is checked before the first cell runs.
inline std::vector<fs::path> run_experiment(const ExperimentConfig& c) {
  validate(c);
  const EnvSpec env = parse_env(c.env);
  const TabularMdp mdp = make_env(env);
  const DemoSet demos = load_demo_source(c.demos, mdp, env);
  for (const auto& a : c.algos) {
    // Surface config errors before any run starts.
    auto blob = c.algo_configs.count(a) ? c.algo_configs.at(a) : nlohmann::json::object();
    blob.erase("seed_demos");
    blob["episodes"] = c.episodes;
    if (a == "bqfd") (void)bqfd_config_from_json(blob);
    else (void)baseline_config_from_json(blob);
  }

  const fs::path out_dir = resolve_output_dir(c.output_dir);
  std::vector<fs::path> written;
  for (const auto& algo : c.algos) {
    const auto blob = c.algo_configs.count(algo) ? c.algo_configs.at(algo) : nlohmann::json::object();
    std::string csv = kRunHeader;
    for (std::uint64_t seed : c.seeds) {
      const auto res = train_algo(algo, mdp, demos, blob, c.episodes, cell_seed(c.master_seed, algo, c.env, seed));
      for (const auto& row : res.curve.rows) {
        csv += algo + ',' + c.env + ',' + std::to_string(seed) + ',' + std::to_string(row.episode) + ',' +
               format_double(row.train_return) + ',' + format_double(row.eval_return) + '\n';
      }
    }
    const fs::path path = out_dir / (algo + "__" + sanitize(c.env) + ".csv");
    write_file_atomic(path, csv);
    written.push_back(path);
  }
  return written;
}

// CSV for a single training run (the `train` subcommand).
inline std::string train_csv(const TrainResult& res, std::uint64_t seed, const std::string& algo) {
  std::string csv = "episode,train_return,eval_return,seed,algo\n";
  for (const auto& row : res.curve.rows) {
    csv += std::to_string(row.episode) + ',' + format_double(row.train_return) + ',' +
           format_double(row.eval_return) + ',' + std::to_string(seed) + ',' + algo + '\n';
  }
  return csv;
}

// ---------------------------------------------------------------------------
// Aggregation

struct RunRecord {
  std::string algo;
  std::string env;
  std::uint64_t seed = 0;
  std::size_t episode = 0;
  double train_return = 0.0;
  double eval_return = 0.0;
};

/// Reads a run CSV. Columns are located by name, so both the `run` and the
/// `train` layouts are accepted; env may be absent.
inline std::vector<RunRecord> read_run_csv(const std::string& text, const std::string& name) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(name + ": empty file");
  const auto header = split(line, ',');
  auto col = [&](const std::string& c, bool required) -> std::optional<std::size_t> {
    auto it = std::find(header.begin(), header.end(), c);
    if (it == header.end()) {
      if (required) throw std::runtime_error(name + ": missing column '" + c + "'");
      return std::nullopt;
    }
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto c_algo = *col("algo", true), c_seed = *col("seed", true), c_ep = *col("episode", true);
  const auto c_train = *col("train_return", true), c_eval = *col("eval_return", true);
  const auto c_env = col("env", false);

  std::vector<RunRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != header.size()) {
      throw std::runtime_error(name + ":" + std::to_string(lineno) + ": expected " +
                               std::to_string(header.size()) + " fields");
    }
    try {
      out.push_back({f[c_algo], c_env ? f[*c_env] : std::string("-"),
                     static_cast<std::uint64_t>(parse_int(f[c_seed])), static_cast<std::size_t>(parse_int(f[c_ep])),
                     parse_double(f[c_train]), parse_double(f[c_eval])});
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(name + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

struct Stats {
  double mean = 0.0;
  double std = 0.0;  // population
};

// Values must already be in a canonical order for bitwise reproducibility.
inline Stats mean_std(const std::vector<double>& v) {
  Stats s;
  if (v.empty()) return s;
  // Shifted by the first value so identical inputs give exactly (v, 0).
  double shift = 0.0;
  for (double x : v) shift += x - v.front();
  s.mean = v.front() + shift / static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(var / static_cast<double>(v.size()));
  return s;
}

/// Per (algo, env, episode): mean and population std of train and eval
/// returns across seeds. Keys and seeds are sorted before reducing, so the
/// result does not depend on file or row order.
inline std::string aggregate_curves(const std::vector<fs::path>& paths) {
  using Key = std::tuple<std::string, std::string, std::size_t>;
  std::map<Key, std::map<std::uint64_t, std::pair<double, double>>> groups;
  std::optional<std::string> schema;
  for (const auto& p : paths) {
    const std::string text = read_file(p);
    const std::string header = text.substr(0, text.find('\n'));
    if (!schema) {
      schema = header;
    } else if (header != *schema) {
      // Name the first column that differs.
      const auto a = split(*schema, ','), b = split(header, ',');
      std::string bad = "<column count>";
      for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
        if (a[i] != b[i]) {
          bad = b[i];
          break;
        }
      }
      throw std::runtime_error(p.string() + ": schema mismatch at column '" + bad + "'");
    }
    for (const auto& r : read_run_csv(text, p.string())) {
      auto& cell = groups[{r.algo, r.env, r.episode}];
      if (!cell.emplace(r.seed, std::make_pair(r.train_return, r.eval_return)).second) {
        throw std::runtime_error(p.string() + ": duplicate record for algo=" + r.algo + " env=" + r.env +
                                 " seed=" + std::to_string(r.seed) + " episode=" + std::to_string(r.episode));
      }
    }
  }
  std::string out = "algo,env,episode,num_seeds,train_mean,train_std,eval_mean,eval_std\n";
  for (const auto& [key, by_seed] : groups) {
    std::vector<double> tr, ev;
    for (const auto& [seed, v] : by_seed) {
      tr.push_back(v.first);
      ev.push_back(v.second);
    }
    const auto t = mean_std(tr), e = mean_std(ev);
    out += std::get<0>(key) + ',' + std::get<1>(key) + ',' + std::to_string(std::get<2>(key)) + ',' +
           std::to_string(by_seed.size()) + ',' + format_double(t.mean) + ',' + format_double(t.std) + ',' +
           format_double(e.mean) + ',' + format_double(e.std) + '\n';
  }
  return out;
}

// Expands a filename glob (wildcards in the last path component only).
inline std::vector<fs::path> expand_glob(const std::string& pattern) {
  const fs::path p(pattern);
  const fs::path dir = p.has_parent_path() ? p.parent_path() : fs::path(".");
  const std::string name = p.filename().string();
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && fnmatch(name.c_str(), entry.path().filename().c_str(), 0) == 0) {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace bqfd::harness
