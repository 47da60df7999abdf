// Command-line front end: otafl <subcommand> [flags]. Run with --help for the list.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "otafl/harness/experiments.hpp"
#include "otafl/neuralnet.hpp"

namespace {

using namespace otafl;
using namespace otafl::harness;

struct CommonFlags {
  std::string config = "default";
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::optional<std::string> scenario, agent;
  std::optional<int> episodes, horizon;
  std::optional<std::size_t> antennas, clients;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "config file, or 'default'");
  app->add_option("--seed", f.seed, "run a single seed");
  app->add_option("--out", f.out, "output directory");
  app->add_option("--scenario", f.scenario, "fa | fpa")->check(CLI::IsMember({"fa", "fpa"}));
  app->add_option("--agent", f.agent, "rdpg | ddpg | oracle | random")
      ->check(CLI::IsMember({"rdpg", "ddpg", "oracle", "random"}));
  app->add_option("--episodes", f.episodes, "training episodes");
  app->add_option("--horizon", f.horizon, "steps per episode");
  app->add_option("--antennas", f.antennas, "number of antennas N");
  app->add_option("--clients", f.clients, "number of users K");
  app->add_option("--set", f.overrides, "override a config key: key=value (repeatable)");
}

ExperimentConfig resolve(const CommonFlags& f) {
  ExperimentConfig cfg = load_config(f.config);
  for (const auto& kv : f.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.seed) cfg.seeds = {*f.seed};
  if (f.scenario) cfg.env.scenario = parse_scenario(*f.scenario);
  if (f.agent) cfg.agent_kind = *f.agent;
  if (f.episodes) cfg.episodes = *f.episodes;
  if (f.horizon) cfg.horizon = *f.horizon;
  if (f.antennas) cfg.env.n_antennas = *f.antennas;
  if (f.clients) cfg.env.n_users = *f.clients;
  validate(cfg);
  return cfg;
}

int cmd_train(const ExperimentConfig& cfg, const std::string& out) {
  std::vector<TrainingRun> runs;
  const auto files = run_training(cfg, &runs);
  write_outputs(out, files);
  for (const auto& r : runs) {
    std::printf("seed %llu final R_avg %.6g\n", static_cast<unsigned long long>(r.seed), r.final_ravg());
  }
  return 0;
}

int cmd_sweep(const ExperimentConfig& cfg, const std::string& out, const std::string& axis) {
  const SweepAxis a = parse_axis(axis);
  const auto points = sweep_points(cfg, a);
  const std::string stem = a == SweepAxis::antennas ? "sweep_antennas" : "sweep_clients";
  write_outputs(out, {{stem + ".csv", sweep_table(a, points).to_csv()},
                      {stem + ".json", sidecar(cfg, "sweep " + axis, cfg.seeds)}});
  std::cout << sweep_table(a, points).to_csv();
  return 0;
}

int cmd_verify_bound(const ExperimentConfig& cfg, const std::string& out) {
  const BoundReport rep = verify_bound(cfg);
  write_outputs(out, bound_outputs(cfg, rep));
  std::printf("policy %s seeds %zu rounds %d\n", to_string(cfg.bound_policy).c_str(), rep.seeds.size(),
              cfg.fl.rounds);
  std::printf("holds fraction %.6f\n", rep.holds_fraction);
  std::printf("seed-mean holds fraction %.6f\n", rep.mean_holds_fraction);
  std::printf("recursion vs unrolled max diff %.3e\n", rep.max_recursion_gap);
  const std::size_t last = rep.mean_ratio.size() - 1;
  std::printf("mean bound/gap ratio: round 1 %.4g, round %zu %.4g\n", rep.mean_ratio.front(), last + 1,
              rep.mean_ratio[last]);
  if (rep.holds_fraction < 1.0) {
    std::fprintf(stderr, "otafl: bound violated in %.2f%% of rounds\n", 100.0 * (1.0 - rep.holds_fraction));
    return 1;
  }
  return 0;
}

int cmd_grad_check(std::uint64_t seed) {
  Rng rng = derive_rng(seed, 21);
  double worst = 0.0;
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (bool critic : {false, true}) {
    for (std::size_t len = 1; len <= 8; ++len) {
      const auto spec = critic ? critic_spec(AgentKind::rdpg, 6, 9, 8) : actor_spec(AgentKind::rdpg, 6, 9, 8);
      const auto params = nn::NetworkParams::create(spec, rng);
      std::vector<VectorXd> seq(len, VectorXd(6));
      for (auto& x : seq) {
        for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = unit(rng);
      }
      VectorXd side(spec.side_dim);
      for (Eigen::Index i = 0; i < side.size(); ++i) side[i] = unit(rng);
      const double err = nn::grad_check(params, seq, side, 1e-5);
      worst = std::max(worst, err);
      std::printf("%s len %zu max rel err %.3e\n", critic ? "critic" : "actor", len, err);
    }
  }
  std::printf("max relative error %.3e\n", worst);
  if (worst > 1e-4) {
    std::fprintf(stderr, "otafl: gradient check failed (%.3e > 1e-4)\n", worst);
    return 1;
  }
  return 0;
}

int cmd_oracle(const ExperimentConfig& cfg, const std::string& out) {
  const std::uint64_t seed = cfg.seeds.front();
  const auto states = draw_states(cfg.oracle_states, cfg.env.n_users, cfg.env.mobility, seed);
  const auto rewards = oracle_rewards(states, cfg.env, cfg.oracle, seed);
  Table t{{"state", "reward", "scenario", "antennas", "clients", "seed"}, {}};
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    t.rows.push_back({std::to_string(i), csv_number(rewards[i]), to_string(cfg.env.scenario),
                      std::to_string(cfg.env.n_antennas), std::to_string(cfg.env.n_users), std::to_string(seed)});
  }
  const std::string stem = "oracle_" + to_string(cfg.env.scenario);
  write_outputs(out, {{stem + ".csv", t.to_csv()}, {stem + ".json", sidecar(cfg, "oracle", {seed})}});
  std::printf("oracle mean reward %.6g over %zu states\n", mean(rewards), rewards.size());
  return 0;
}

/// Rebuilds the configuration recorded in a sidecar and reruns its command.
int cmd_replay(const std::string& path, const std::string& out) {
  std::ifstream in(path);
  if (!in) throw ConfigError("replay-config: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("replay-config: '" + path + "' is not a sidecar: " + e.what());
  }
  if (!j.contains("command") || !j.contains("config") || !j.contains("seeds")) {
    throw ConfigError("replay-config: '" + path + "' lacks command, config or seeds");
  }
  ExperimentConfig cfg;
  for (const auto& [k, v] : j["config"].items()) set_value(cfg, k, v.get<std::string>());
  cfg.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  const std::string command = j["command"].get<std::string>();
  if (command == "train") {
    validate(cfg);
    return cmd_train(cfg, out);
  }
  if (command == "verify-bound") {
    // Bound runs record every seed; the base seed regenerates them all.
    cfg.fl.bound_seeds = cfg.seeds.size();
    cfg.seeds = {cfg.seeds.front()};
    validate(cfg);
    return cmd_verify_bound(cfg, out);
  }
  if (command == "oracle") {
    validate(cfg);
    return cmd_oracle(cfg, out);
  }
  if (command.rfind("sweep ", 0) == 0) {
    validate(cfg);
    return cmd_sweep(cfg, out, command.substr(6));
  }
  throw ConfigError("replay-config: unknown command '" + command + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Over-the-air federated learning with a fluid antenna array"};
  app.require_subcommand(1);

  CommonFlags train_f, sweep_f, bound_f, oracle_f, show_f;
  std::string axis = "antennas", policy, replay_path, replay_out = "out";
  std::uint64_t grad_seed = 1;

  auto* train_cmd = app.add_subcommand("train", "train an agent; one CSV per seed");
  add_common(train_cmd, train_f);
  auto* sweep_cmd = app.add_subcommand("sweep", "final R_avg across an antenna or client axis");
  add_common(sweep_cmd, sweep_f);
  sweep_cmd->add_option("--axis", axis, "antennas | clients")->check(CLI::IsMember({"antennas", "clients"}));
  auto* bound_cmd = app.add_subcommand("verify-bound", "check the optimality-gap bound along FL runs");
  add_common(bound_cmd, bound_f);
  bound_cmd->add_option("--policy", policy, "matched | oracle | rdpg | ddpg | random")
      ->check(CLI::IsMember({"matched", "oracle", "rdpg", "ddpg", "random"}));
  auto* grad_cmd = app.add_subcommand("grad-check", "finite-difference check of network gradients");
  grad_cmd->add_option("--seed", grad_seed, "network seed");
  auto* oracle_cmd = app.add_subcommand("oracle", "random-search oracle reward on sampled states");
  add_common(oracle_cmd, oracle_f);
  auto* replay_cmd = app.add_subcommand("replay-config", "rerun the command recorded in a sidecar");
  replay_cmd->add_option("sidecar", replay_path, "JSON sidecar written next to a CSV")->required();
  replay_cmd->add_option("--out", replay_out, "output directory");
  auto* show_cmd = app.add_subcommand("show-config", "print the resolved configuration");
  add_common(show_cmd, show_f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*train_cmd) return cmd_train(resolve(train_f), train_f.out);
    if (*sweep_cmd) return cmd_sweep(resolve(sweep_f), sweep_f.out, axis);
    if (*bound_cmd) {
      if (!policy.empty()) bound_f.overrides.push_back("fl.bound_policy=" + policy);
      return cmd_verify_bound(resolve(bound_f), bound_f.out);
    }
    if (*grad_cmd) return cmd_grad_check(grad_seed);
    if (*oracle_cmd) return cmd_oracle(resolve(oracle_f), oracle_f.out);
    if (*replay_cmd) return cmd_replay(replay_path, replay_out);
    if (*show_cmd) {
      std::cout << to_text(resolve(show_f));
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "otafl: %s\n", e.what());
    return 2;
  }
  return 0;
}
