// Command-line front end: train, run, aggregate, gekf-check, demo-gen, export-mdp.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "bqfd/baselines.hpp"
#include "bqfd/bqfd.hpp"
#include "bqfd/experts.hpp"
#include "bqfd/harness.hpp"
#include "bqfd/io.hpp"
#include "bqfd/mdp.hpp"
#include "bqfd/oracles.hpp"

namespace fs = std::filesystem;
using namespace bqfd;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;

fs::path output_path(const std::string& p) { return harness::resolve_output_dir(p); }

nlohmann::json load_json(const std::string& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw harness::ConfigError(path + ": " + e.what());
  }
}

// Accepts "deepsea:<n>" as shorthand for a treasure chain (demo-gen only needs
// the geometry).
harness::EnvSpec parse_env_loose(const std::string& text) {
  if (split(text, ':').size() == 2) return harness::parse_env(text + ":treasure");
  return harness::parse_env(text);
}

int cmd_train(const std::string& algo, const std::string& env_text, const std::string& demos_path,
              const std::string& config_path, const std::string& out, std::optional<std::size_t> episodes,
              std::optional<std::uint64_t> seed) {
  if (!harness::is_known_algo(algo)) throw harness::ConfigError("unknown algo '" + algo + "'");
  const auto env = harness::parse_env(env_text);
  const auto mdp = harness::make_env(env);
  nlohmann::json blob = config_path.empty() ? nlohmann::json::object() : load_json(config_path);
  const DemoSet demos = harness::load_demo_source(demos_path, mdp, env);
  const auto res = harness::train_algo(algo, mdp, demos, blob, episodes, seed);
  std::uint64_t used_seed = seed.value_or(blob.value("seed", std::uint64_t{0}));
  write_file_atomic(output_path(out), harness::train_csv(res, used_seed, algo));
  const auto& last = res.curve.rows.back();
  std::cout << algo << " on " << env_text << ": " << res.curve.rows.size() << " episodes, final train "
            << format_double(last.train_return) << ", eval " << format_double(last.eval_return) << '\n';
  return 0;
}

int cmd_run(const std::string& config_path) {
  const auto cfg = harness::experiment_from_json(load_json(config_path));
  for (const auto& p : harness::run_experiment(cfg)) std::cout << "wrote " << p.string() << '\n';
  return 0;
}

int cmd_aggregate(const std::vector<std::string>& globs, const std::string& out) {
  std::vector<fs::path> paths;
  for (const auto& g : globs) {
    auto found = harness::expand_glob(g);
    paths.insert(paths.end(), found.begin(), found.end());
  }
  if (paths.empty()) {
    std::cerr << "aggregate: no files match\n";
    return kExitFailure;
  }
  write_file_atomic(output_path(out), harness::aggregate_curves(paths));
  std::cout << "aggregated " << paths.size() << " file(s) into " << output_path(out).string() << '\n';
  return 0;
}

int cmd_gekf_check(std::size_t instances, std::uint64_t seed, double tol) {
  const auto report = oracle::gekf_check({instances, seed, tol});
  for (const auto& l : report.lines) {
    std::cout << (l.ok() ? "PASS " : "FAIL ") << l.name << ": cases=" << l.cases << " failures=" << l.failures
              << " worst=" << l.worst << " threshold=" << l.threshold << '\n';
  }
  return report.ok() ? 0 : kExitFailure;
}

int cmd_demo_gen(const std::string& env_text, const std::string& style, const std::string& out, double eta,
                 std::size_t count, std::uint64_t seed) {
  const auto env = parse_env_loose(env_text);
  DemoSet demos;
  if (style == "right") {
    if (!env.deep_sea) throw harness::ConfigError("style 'right' needs a deepsea env");
    demos = scripted_right_expert(env.n);
  } else if (style == "boltzmann") {
    const auto mdp = harness::make_env(env);
    Rng rng(seed);
    demos = boltzmann_expert_sample(value_iteration(mdp), mdp, eta, count, rng);
  } else {
    throw harness::ConfigError("unknown demo style '" + style + "'");
  }
  write_file_atomic(output_path(out), demos_to_string(demos));
  std::cout << "wrote " << demos.records.size() << " records to " << output_path(out).string() << '\n';
  return 0;
}

int cmd_export_mdp(const std::string& env_text, const std::string& out) {
  const auto mdp = harness::make_env(harness::parse_env(env_text));
  write_file_atomic(output_path(out), to_json(mdp).dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian Q-learning from demonstrations: tabular lab"};
  app.require_subcommand(1);

  std::string algo, env, demos, config, out;
  std::optional<std::size_t> episodes;
  std::optional<std::uint64_t> seed;
  auto* train = app.add_subcommand("train", "Train one learner and write its learning curve");
  train->add_option("--algo", algo, "bqfd | qlearn | dqfd")->required();
  train->add_option("--env", env, "deepsea:<n>:<treasure|bomb> or random:<S>:<A>:<H>:<seed>")->required();
  train->add_option("--demos", demos, "JSON-lines demo file, or builtin:right");
  train->add_option("--config", config, "flat JSON config");
  train->add_option("--out", out, "output CSV")->required();
  train->add_option("--episodes", episodes, "override the episode budget");
  train->add_option("--seed", seed, "override the seed");

  std::string run_config;
  auto* run = app.add_subcommand("run", "Run an experiment matrix");
  run->add_option("--config", run_config, "experiment JSON")->required();

  std::vector<std::string> globs;
  std::string agg_out;
  auto* aggregate = app.add_subcommand("aggregate", "Mean/std of run CSVs across seeds");
  aggregate->add_option("--glob", globs, "file pattern (repeatable)")->required();
  aggregate->add_option("--out", agg_out, "summary CSV")->required();

  std::size_t instances = 20;
  std::uint64_t check_seed = 0;
  double tol = 1e-5;
  auto* check = app.add_subcommand("gekf-check", "Oracle and property suite for the exact posterior engine");
  check->add_option("--instances", instances, "random instances")->capture_default_str();
  check->add_option("--seed", check_seed, "master seed")->capture_default_str();
  check->add_option("--tol", tol, "Newton vs oracle tolerance")->capture_default_str();

  std::string demo_env, style = "right", demo_out;
  double demo_eta = 3.0;
  std::size_t demo_count = 1;
  std::uint64_t demo_seed = 0;
  auto* demo_gen = app.add_subcommand("demo-gen", "Generate an expert demonstration file");
  demo_gen->add_option("--env", demo_env, "deepsea:<n> or any env spec")->required();
  demo_gen->add_option("--style", style, "right | boltzmann")->capture_default_str();
  demo_gen->add_option("--out", demo_out, "output JSON-lines file")->required();
  demo_gen->add_option("--eta", demo_eta, "Boltzmann expert eta")->capture_default_str();
  demo_gen->add_option("--count", demo_count, "Boltzmann trajectories")->capture_default_str();
  demo_gen->add_option("--seed", demo_seed, "Boltzmann sampling seed")->capture_default_str();

  std::string export_env, export_out;
  auto* export_mdp = app.add_subcommand("export-mdp", "Write an environment as an MDP JSON document");
  export_mdp->add_option("--env", export_env, "env spec")->required();
  export_mdp->add_option("--out", export_out, "output JSON")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(algo, env, demos, config, out, episodes, seed);
    if (*run) return cmd_run(run_config);
    if (*aggregate) return cmd_aggregate(globs, agg_out);
    if (*check) return cmd_gekf_check(instances, check_seed, tol);
    if (*demo_gen) return cmd_demo_gen(demo_env, style, demo_out, demo_eta, demo_count, demo_seed);
    if (*export_mdp) return cmd_export_mdp(export_env, export_out);
  } catch (const harness::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
