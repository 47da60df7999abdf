#pragma once

// Experiment configuration: one struct holding every module's settings, plus
// a key registry that maps dotted keys (agent.batch, channel.kappa_r, ...) to
// fields for the flat key = value file format and the run sidecars.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "otafl/agents.hpp"
#include "otafl/aircomp.hpp"
#include "otafl/env.hpp"
#include "otafl/errors.hpp"
#include "otafl/fl_core.hpp"

namespace otafl::harness {

enum class BoundPolicy { matched, oracle, rdpg, ddpg, random };

struct FLSettings {
  int rounds = 50;
  Eigen::Index dim = 10;
  Eigen::Index samples = 50;
  double cond_number = 10.0;
  double heterogeneity = 0.0;
  double learn_rate = 0.0;  // 0 -> 1/l
  std::size_t bound_seeds = 20;
};

struct ExperimentConfig {
  EnvConfig env;  // antennas, clients, aperture, spacing, channel, reward, mobility
  AirCompConfig aircomp;
  AgentConfig agent;
  FLSettings fl;
  OracleConfig oracle;
  std::size_t oracle_states = 20;

  std::string agent_kind = "rdpg";  // rdpg | ddpg | oracle | random
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  int episodes = 500;
  int horizon = 50;
  std::vector<std::size_t> sweep_antennas = {2, 4, 6};
  std::vector<std::size_t> sweep_clients = {2, 6, 10};
  std::vector<std::string> sweep_agents = {"rdpg", "ddpg"};
  std::vector<std::string> sweep_scenarios = {"fa", "fpa"};
  BoundPolicy bound_policy = BoundPolicy::matched;
  std::size_t workers = 0;  // 0 -> hardware concurrency
};

// ---- value formatting ----------------------------------------------------------

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("config: '" + key + "' expects a number, got '" + s + "'");
}

inline long long parse_int(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("config: '" + key + "' expects an integer, got '" + s + "'");
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("config: '" + key + "' expects true/false, got '" + s + "'");
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_same_v<T, std::string>) {
      out += v[i];
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

inline Scenario parse_scenario(const std::string& s) {
  if (s == "fa") return Scenario::fa;
  if (s == "fpa") return Scenario::fpa;
  throw ConfigError("config: scenario must be fa or fpa, got '" + s + "'");
}

inline std::string to_string(Scenario s) { return s == Scenario::fa ? "fa" : "fpa"; }

inline AgentKind parse_agent_kind(const std::string& s) {
  if (s == "rdpg") return AgentKind::rdpg;
  if (s == "ddpg") return AgentKind::ddpg;
  if (s == "random") return AgentKind::random;
  throw ConfigError("config: learning agent must be rdpg, ddpg or random, got '" + s + "'");
}

inline void check_agent_name(const std::string& s) {
  if (s != "rdpg" && s != "ddpg" && s != "oracle" && s != "random") {
    throw ConfigError("config: agent must be rdpg, ddpg, oracle or random, got '" + s + "'");
  }
}

inline BoundPolicy parse_bound_policy(const std::string& s) {
  if (s == "matched") return BoundPolicy::matched;
  if (s == "oracle") return BoundPolicy::oracle;
  if (s == "rdpg") return BoundPolicy::rdpg;
  if (s == "ddpg") return BoundPolicy::ddpg;
  if (s == "random") return BoundPolicy::random;
  throw ConfigError("config: bound policy must be matched, oracle, rdpg, ddpg or random");
}

inline std::string to_string(BoundPolicy p) {
  switch (p) {
    case BoundPolicy::matched: return "matched";
    case BoundPolicy::oracle: return "oracle";
    case BoundPolicy::rdpg: return "rdpg";
    case BoundPolicy::ddpg: return "ddpg";
    case BoundPolicy::random: return "random";
  }
  return "?";
}

// ---- key registry ----------------------------------------------------------------

struct ConfigField {
  std::string key;
  std::string doc;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

namespace detail {

template <typename Member>
ConfigField real_field(std::string key, std::string doc, Member member) {
  return {key, std::move(doc),
          [member](const ExperimentConfig& c) { return format_double(member(const_cast<ExperimentConfig&>(c))); },
          [member, key](ExperimentConfig& c, const std::string& v) { member(c) = parse_double(key, v); }};
}

template <typename Member>
ConfigField int_field(std::string key, std::string doc, Member member) {
  return {key, std::move(doc),
          [member](const ExperimentConfig& c) {
            return std::to_string(member(const_cast<ExperimentConfig&>(c)));
          },
          [member, key](ExperimentConfig& c, const std::string& v) {
            const long long x = parse_int(key, v);
            using T = std::remove_reference_t<decltype(member(c))>;
            if constexpr (std::is_unsigned_v<T>) {
              if (x < 0) throw ConfigError("config: '" + key + "' must be >= 0");
            }
            member(c) = static_cast<T>(x);
          }};
}

template <typename Member>
ConfigField bool_field(std::string key, std::string doc, Member member) {
  return {key, std::move(doc),
          [member](const ExperimentConfig& c) {
            return std::string(member(const_cast<ExperimentConfig&>(c)) ? "true" : "false");
          },
          [member, key](ExperimentConfig& c, const std::string& v) { member(c) = parse_bool(key, v); }};
}

}  // namespace detail

/// Every recognized key, in file order.
inline const std::vector<ConfigField>& config_fields() {
  using detail::bool_field;
  using detail::int_field;
  using detail::real_field;
  using C = ExperimentConfig;
  static const std::vector<ConfigField> fields = {
      int_field("array.antennas", "number of antennas N", [](C& c) -> auto& { return c.env.n_antennas; }),
      real_field("array.aperture", "aperture X in wavelengths", [](C& c) -> auto& { return c.env.aperture; }),
      real_field("array.min_spacing", "minimum spacing X0 in wavelengths",
                 [](C& c) -> auto& { return c.env.min_spacing; }),
      int_field("users.clients", "number of users K", [](C& c) -> auto& { return c.env.n_users; }),
      real_field("channel.kappa_r", "Rician factor", [](C& c) -> auto& { return c.env.channel.kappa_r; }),
      real_field("channel.loss_los_db", "LoS reference path loss (dB)",
                 [](C& c) -> auto& { return c.env.channel.loss_los_db; }),
      real_field("channel.loss_nlos_db", "NLoS reference path loss (dB)",
                 [](C& c) -> auto& { return c.env.channel.loss_nlos_db; }),
      real_field("channel.exp_los", "LoS path-loss exponent", [](C& c) -> auto& { return c.env.channel.exp_los; }),
      real_field("channel.exp_nlos", "NLoS path-loss exponent",
                 [](C& c) -> auto& { return c.env.channel.exp_nlos; }),
      real_field("channel.wavelength", "wavelength", [](C& c) -> auto& { return c.env.channel.wavelength; }),
      real_field("aircomp.p_max", "per-user power budget", [](C& c) -> auto& { return c.aircomp.p_max; }),
      real_field("aircomp.sigma2", "receiver noise variance", [](C& c) -> auto& { return c.aircomp.sigma2; }),
      real_field("reward.r1", "reward for a vanishing beam (< 0)", [](C& c) -> auto& { return c.env.reward.r1; }),
      real_field("reward.r2", "scale of the worst-user ratio (< 0)", [](C& c) -> auto& { return c.env.reward.r2; }),
      real_field("reward.tolerance", "beam norm below which the beam is degenerate",
                 [](C& c) -> auto& { return c.env.reward.degeneracy_tolerance; }),
      ConfigField{"mobility.kind", "iid | random_walk",
                  [](const C& c) { return std::string(c.env.mobility.kind == Mobility::iid ? "iid" : "random_walk"); },
                  [](C& c, const std::string& v) {
                    if (v == "iid") c.env.mobility.kind = Mobility::iid;
                    else if (v == "random_walk") c.env.mobility.kind = Mobility::random_walk;
                    else throw ConfigError("config: mobility.kind must be iid or random_walk");
                  }},
      real_field("mobility.d_min", "minimum user distance (m)", [](C& c) -> auto& { return c.env.mobility.d_min; }),
      real_field("mobility.d_max", "maximum user distance (m)", [](C& c) -> auto& { return c.env.mobility.d_max; }),
      real_field("mobility.walk_sigma_distance", "random-walk distance step std (m)",
                 [](C& c) -> auto& { return c.env.mobility.walk_sigma_distance; }),
      real_field("mobility.walk_sigma_aoa", "random-walk angle step std (rad)",
                 [](C& c) -> auto& { return c.env.mobility.walk_sigma_aoa; }),
      real_field("agent.step_size", "Adam step size", [](C& c) -> auto& { return c.agent.step_size; }),
      int_field("agent.capacity", "replay capacity (transitions)", [](C& c) -> auto& { return c.agent.capacity; }),
      int_field("agent.batch", "minibatch size H", [](C& c) -> auto& { return c.agent.batch; }),
      real_field("agent.tau", "soft-update coefficient", [](C& c) -> auto& { return c.agent.tau; }),
      real_field("agent.discount", "discount factor", [](C& c) -> auto& { return c.agent.discount; }),
      real_field("agent.noise_start", "initial exploration std", [](C& c) -> auto& { return c.agent.noise_start; }),
      real_field("agent.noise_end", "final exploration std", [](C& c) -> auto& { return c.agent.noise_end; }),
      real_field("agent.target_noise", "target-policy smoothing std",
                 [](C& c) -> auto& { return c.agent.target_noise; }),
      real_field("agent.target_noise_clip", "target-policy smoothing clip",
                 [](C& c) -> auto& { return c.agent.target_noise_clip; }),
      int_field("agent.window", "trajectory window length", [](C& c) -> auto& { return c.agent.window; }),
      int_field("agent.hidden", "hidden width", [](C& c) -> auto& { return c.agent.hidden; }),
      bool_field("agent.per_step_updates", "update after every step instead of every episode",
                 [](C& c) -> auto& { return c.agent.per_step_updates; }),
      int_field("agent.updates_per_episode", "gradient updates at the end of each episode",
                [](C& c) -> auto& { return c.agent.updates_per_episode; }),
      bool_field("agent.cut_bootstrap_at_horizon", "no bootstrap on the final step of an episode",
                 [](C& c) -> auto& { return c.agent.cut_bootstrap_at_horizon; }),
      bool_field("agent.include_prev_action", "append the previous action to the observation",
                 [](C& c) -> auto& { return c.agent.include_prev_action; }),
      real_field("agent.reward_scale", "multiplier applied to rewards before learning",
                 [](C& c) -> auto& { return c.agent.reward_scale; }),
      int_field("fl.rounds", "federated rounds per bound run", [](C& c) -> auto& { return c.fl.rounds; }),
      int_field("fl.dim", "model dimension d", [](C& c) -> auto& { return c.fl.dim; }),
      int_field("fl.samples", "samples per user D", [](C& c) -> auto& { return c.fl.samples; }),
      real_field("fl.cond_number", "condition number of the synthetic task",
                 [](C& c) -> auto& { return c.fl.cond_number; }),
      real_field("fl.heterogeneity", "std of per-user target shifts",
                 [](C& c) -> auto& { return c.fl.heterogeneity; }),
      real_field("fl.learn_rate", "local step size (0 selects 1/l)", [](C& c) -> auto& { return c.fl.learn_rate; }),
      int_field("fl.bound_seeds", "seeds used by verify-bound", [](C& c) -> auto& { return c.fl.bound_seeds; }),
      ConfigField{"fl.bound_policy", "matched | oracle | rdpg | ddpg | random",
                  [](const C& c) { return to_string(c.bound_policy); },
                  [](C& c, const std::string& v) { c.bound_policy = parse_bound_policy(v); }},
      int_field("oracle.budget", "random-search candidates", [](C& c) -> auto& { return c.oracle.budget; }),
      int_field("oracle.draws", "fading draws per candidate", [](C& c) -> auto& { return c.oracle.draws; }),
      int_field("oracle.eval_draws", "fresh draws for the reported estimate",
                [](C& c) -> auto& { return c.oracle.eval_draws; }),
      real_field("oracle.refine_fraction", "budget share for local perturbation",
                 [](C& c) -> auto& { return c.oracle.refine_fraction; }),
      bool_field("oracle.matched_filter_seeds", "also score matched-filter beams at the FPA layout",
                 [](C& c) -> auto& { return c.oracle.matched_filter_seeds; }),
      int_field("oracle.states", "user states per oracle evaluation", [](C& c) -> auto& { return c.oracle_states; }),
      ConfigField{"experiment.scenario", "fa | fpa", [](const C& c) { return to_string(c.env.scenario); },
                  [](C& c, const std::string& v) { c.env.scenario = parse_scenario(v); }},
      ConfigField{"experiment.agent", "rdpg | ddpg | oracle | random", [](const C& c) { return c.agent_kind; },
                  [](C& c, const std::string& v) {
                    check_agent_name(v);
                    c.agent_kind = v;
                  }},
      ConfigField{"experiment.seeds", "comma-separated seeds", [](const C& c) { return join(c.seeds); },
                  [](C& c, const std::string& v) {
                    c.seeds.clear();
                    for (const auto& s : split_list(v)) {
                      const long long x = parse_int("experiment.seeds", s);
                      if (x < 0) throw ConfigError("config: seeds must be >= 0");
                      c.seeds.push_back(static_cast<std::uint64_t>(x));
                    }
                  }},
      int_field("experiment.episodes", "training episodes E", [](C& c) -> auto& { return c.episodes; }),
      int_field("experiment.horizon", "episode length T", [](C& c) -> auto& { return c.horizon; }),
      ConfigField{"sweep.antennas", "antenna counts for the antenna sweep",
                  [](const C& c) { return join(c.sweep_antennas); },
                  [](C& c, const std::string& v) {
                    c.sweep_antennas.clear();
                    for (const auto& s : split_list(v)) {
                      const long long x = parse_int("sweep.antennas", s);
                      if (x < 1) throw ConfigError("config: sweep.antennas entries must be >= 1");
                      c.sweep_antennas.push_back(static_cast<std::size_t>(x));
                    }
                  }},
      ConfigField{"sweep.clients", "user counts for the client sweep",
                  [](const C& c) { return join(c.sweep_clients); },
                  [](C& c, const std::string& v) {
                    c.sweep_clients.clear();
                    for (const auto& s : split_list(v)) {
                      const long long x = parse_int("sweep.clients", s);
                      if (x < 1) throw ConfigError("config: sweep.clients entries must be >= 1");
                      c.sweep_clients.push_back(static_cast<std::size_t>(x));
                    }
                  }},
      ConfigField{"sweep.agents", "agents compared in sweeps", [](const C& c) { return join(c.sweep_agents); },
                  [](C& c, const std::string& v) {
                    c.sweep_agents = split_list(v);
                    for (const auto& a : c.sweep_agents) check_agent_name(a);
                  }},
      ConfigField{"sweep.scenarios", "scenarios compared in sweeps",
                  [](const C& c) { return join(c.sweep_scenarios); },
                  [](C& c, const std::string& v) {
                    c.sweep_scenarios = split_list(v);
                    for (const auto& s : c.sweep_scenarios) (void)parse_scenario(s);
                  }},
      int_field("experiment.workers", "parallel seed workers (0 = all cores)",
                [](C& c) -> auto& { return c.workers; }),
  };
  return fields;
}

inline const ConfigField& find_field(const std::string& key) {
  for (const auto& f : config_fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

inline void set_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  find_field(key).set(cfg, value);
}

/// Resolved key/value pairs in registry order.
inline std::vector<std::pair<std::string, std::string>> to_pairs(const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : config_fields()) out.emplace_back(f.key, f.get(cfg));
  return out;
}

/// Checks cross-module invariants before any work starts.
inline void validate(const ExperimentConfig& cfg) {
  using otafl::detail::require;
  cfg.env.validate();
  cfg.agent.validate();
  try {
    cfg.aircomp.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  require<ConfigError>(cfg.episodes >= 1 && cfg.horizon >= 1, "config: episodes and horizon must be >= 1");
  require<ConfigError>(!cfg.seeds.empty(), "config: need at least one seed");
  require<ConfigError>(cfg.fl.rounds >= 1 && cfg.fl.dim >= 1 && cfg.fl.samples >= cfg.fl.dim,
                       "config: fl needs rounds >= 1 and samples >= dim >= 1");
  require<ConfigError>(cfg.fl.cond_number >= 1.0, "config: fl.cond_number must be >= 1");
  require<ConfigError>(cfg.oracle.budget >= 1 && cfg.oracle.draws >= 1 && cfg.oracle.eval_draws >= 1,
                       "config: oracle budget and draws must be >= 1");
  require<ConfigError>(cfg.oracle_states >= 1, "config: oracle.states must be >= 1");
  for (std::size_t n : cfg.sweep_antennas) {
    require<ConfigError>(ArrayGeometry::feasible(n, cfg.env.aperture, cfg.env.min_spacing),
                         "config: sweep antenna count " + std::to_string(n) + " infeasible for X and X0");
  }
}

/// Parses `key = value` lines; `#` starts a comment. Unknown keys are errors.
inline void apply_text(ExperimentConfig& cfg, std::istream& in, const std::string& origin) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    try {
      set_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

/// "default" (or empty) yields the built-in defaults; anything else is a file path.
inline ExperimentConfig load_config(const std::string& path) {
  ExperimentConfig cfg;
  if (path.empty() || path == "default") return cfg;
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  apply_text(cfg, in, path);
  return cfg;
}

inline std::string to_text(const ExperimentConfig& cfg) {
  std::ostringstream out;
  for (const auto& f : config_fields()) {
    out << "# " << f.doc << '\n' << f.key << " = " << f.get(cfg) << '\n';
  }
  return out.str();
}

}  // namespace otafl::harness
