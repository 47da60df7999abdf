#pragma once

// Experiment drivers behind the command-line tool: training curves, antenna
// and client sweeps, paired oracle comparisons and bound verification. Every
// driver returns its tables in memory; writing files is left to the caller so
// a failed run never leaves partial output behind.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "otafl/agents.hpp"
#include "otafl/fl_core.hpp"
#include "otafl/harness/config.hpp"

namespace otafl::harness {

// ---- tables -------------------------------------------------------------------

inline std::string csv_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string to_csv() const {
    std::string out;
    auto line = [&out](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += cells[i];
      }
      out += '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
    return out;
  }
};

/// Resolved configuration plus run identity, written next to every CSV.
inline std::string sidecar(const ExperimentConfig& cfg, const std::string& command,
                           const std::vector<std::uint64_t>& seeds) {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["seeds"] = seeds;
  nlohmann::ordered_json c;
  for (const auto& [k, v] : to_pairs(cfg)) c[k] = v;
  j["config"] = c;
  return j.dump(2) + "\n";
}

/// A file to be written: path relative to the output directory, contents.
struct OutputFile {
  std::string name;
  std::string contents;
};

/// Writes all files into `dir`, each through a temporary and a rename.
inline void write_outputs(const std::filesystem::path& dir, const std::vector<OutputFile>& files) {
  std::filesystem::create_directories(dir);
  for (const auto& f : files) {
    const auto target = dir / f.name;
    const auto tmp = dir / (f.name + ".tmp");
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw ConfigError("output: cannot write '" + tmp.string() + "'");
      out << f.contents;
      if (!out) throw ConfigError("output: write failed for '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, target);
  }
}

// ---- parallel map -----------------------------------------------------------------

/// Applies `fn` to 0..n-1 on up to `workers` threads; results keep index order.
template <typename Fn>
auto parallel_map(std::size_t n, std::size_t workers, Fn fn) {
  using R = decltype(fn(std::size_t{0}));
  std::vector<R> out(n);
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::future<void>> jobs;
  for (std::size_t w = 0; w < workers; ++w) {
    jobs.push_back(std::async(std::launch::async, [&] {
      for (std::size_t i = next++; i < n; i = next++) out[i] = fn(i);
    }));
  }
  for (auto& j : jobs) j.get();
  return out;
}

// ---- statistics ---------------------------------------------------------------------

/// Trailing mean over the last `window` values; early entries average what exists.
inline std::vector<double> trailing_mean(const std::vector<double>& x, std::size_t window = 100) {
  std::vector<double> out(x.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sum += x[i];
    if (i >= window) sum -= x[i - window];
    out[i] = sum / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

inline double mean(const std::vector<double>& x) {
  if (x.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Sample standard deviation; 0 for fewer than two values.
inline double stddev(const std::vector<double>& x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size() - 1));
}

// ---- training -----------------------------------------------------------------------

struct TrainingRun {
  std::uint64_t seed = 0;
  std::vector<EpisodeRecord> episodes;
  std::vector<double> ravg;

  double final_ravg() const { return ravg.empty() ? std::numeric_limits<double>::quiet_NaN() : ravg.back(); }
};

namespace detail {

/// Per-episode mean reward of the random-search oracle acting at every step.
inline TrainingLog oracle_log(const ExperimentConfig& cfg, std::uint64_t seed) {
  Rng env_rng = derive_rng(seed, streams::env);
  Rng search = derive_rng(seed, streams::oracle);
  TrainingLog log;
  for (int e = 0; e < cfg.episodes; ++e) {
    EnvState state = reset(cfg.env.n_users, cfg.env.mobility, env_rng);
    double total = 0.0;
    for (int t = 0; t < cfg.horizon; ++t) {
      const OracleResult best = random_search_oracle(state, cfg.env, cfg.oracle, search);
      StepResult res = step(state, best.best, cfg.env, env_rng);
      total += res.reward;
      state = std::move(res.next);
    }
    EpisodeRecord rec;
    rec.episode = e + 1;
    rec.mean_reward = total / static_cast<double>(cfg.horizon);
    log.episodes.push_back(rec);
  }
  return log;
}

}  // namespace detail

inline TrainingRun train_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainingLog log = cfg.agent_kind == "oracle"
                        ? detail::oracle_log(cfg, seed)
                        : train(cfg.env, parse_agent_kind(cfg.agent_kind), cfg.agent, cfg.episodes,
                                cfg.horizon, seed);
  TrainingRun run{seed, std::move(log.episodes), {}};
  std::vector<double> rewards;
  for (const auto& e : run.episodes) rewards.push_back(e.mean_reward);
  run.ravg = trailing_mean(rewards);
  return run;
}

inline Table training_table(const std::vector<TrainingRun>& runs) {
  Table t{{"episode", "mean_reward", "ravg_100", "actor_loss", "critic_loss", "seed"}, {}};
  for (const auto& run : runs) {
    for (std::size_t i = 0; i < run.episodes.size(); ++i) {
      const auto& e = run.episodes[i];
      t.rows.push_back({std::to_string(e.episode), csv_number(e.mean_reward), csv_number(run.ravg[i]),
                        csv_number(e.actor_loss), csv_number(e.critic_loss), std::to_string(run.seed)});
    }
  }
  return t;
}

/// Trains the configured agent once per seed; one CSV and sidecar per seed.
inline std::vector<OutputFile> run_training(const ExperimentConfig& cfg,
                                            std::vector<TrainingRun>* runs_out = nullptr) {
  validate(cfg);
  auto runs = parallel_map(cfg.seeds.size(), cfg.workers,
                           [&](std::size_t i) { return train_seed(cfg, cfg.seeds[i]); });
  std::vector<OutputFile> files;
  const std::string stem = "train_" + to_string(cfg.env.scenario) + "_" + cfg.agent_kind;
  for (const auto& run : runs) {
    const std::string name = stem + "_seed" + std::to_string(run.seed);
    files.push_back({name + ".csv", training_table({run}).to_csv()});
    files.push_back({name + ".json", sidecar(cfg, "train", {run.seed})});
  }
  if (runs_out) *runs_out = std::move(runs);
  return files;
}

// ---- paired oracle comparisons --------------------------------------------------

/// User states shared by every arm of a paired comparison.
inline std::vector<EnvState> draw_states(std::size_t count, std::size_t n_users,
                                         const MobilityConfig& mobility, std::uint64_t seed) {
  Rng rng = derive_rng(seed, streams::env);
  std::vector<EnvState> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(reset(n_users, mobility, rng));
  return out;
}

/// Oracle reward for each state; state i always uses the search stream
/// derive_rng(seed, oracle + 100 (i + 1)) so calls with different N, K or scenario are
/// paired on their fading and candidate draws.
inline std::vector<double> oracle_rewards(const std::vector<EnvState>& states, const EnvConfig& env,
                                          const OracleConfig& oracle, std::uint64_t seed) {
  std::vector<double> out;
  for (std::size_t i = 0; i < states.size(); ++i) {
    Rng rng = derive_rng(seed, streams::oracle + 100 * (i + 1));
    out.push_back(random_search_oracle(states[i], env, oracle, rng).reward);
  }
  return out;
}

struct OracleCell {
  std::size_t axis_value = 0;
  Scenario scenario = Scenario::fa;
  std::vector<double> rewards;  // per state
};

/// Oracle rewards over an antenna axis for both scenarios, same states throughout.
inline std::vector<OracleCell> oracle_antenna_axis(const ExperimentConfig& cfg,
                                                   const std::vector<std::size_t>& antennas,
                                                   std::uint64_t seed) {
  const auto states = draw_states(cfg.oracle_states, cfg.env.n_users, cfg.env.mobility, seed);
  std::vector<OracleCell> cells;
  for (std::size_t n : antennas) {
    for (Scenario s : {Scenario::fa, Scenario::fpa}) {
      EnvConfig env = cfg.env;
      env.n_antennas = n;
      env.scenario = s;
      env.validate();
      cells.push_back({n, s, oracle_rewards(states, env, cfg.oracle, seed)});
    }
  }
  return cells;
}

/// Oracle rewards over a client axis; smaller user sets are prefixes of the largest.
inline std::vector<OracleCell> oracle_client_axis(const ExperimentConfig& cfg,
                                                  const std::vector<std::size_t>& clients,
                                                  std::uint64_t seed) {
  const std::size_t k_max = *std::max_element(clients.begin(), clients.end());
  const auto full = draw_states(cfg.oracle_states, k_max, cfg.env.mobility, seed);
  std::vector<OracleCell> cells;
  for (std::size_t k : clients) {
    std::vector<EnvState> states;
    for (const auto& s : full) states.push_back(s.prefix(k));
    for (Scenario s : {Scenario::fa, Scenario::fpa}) {
      EnvConfig env = cfg.env;
      env.n_users = k;
      env.scenario = s;
      env.validate();
      cells.push_back({k, s, oracle_rewards(states, env, cfg.oracle, seed)});
    }
  }
  return cells;
}

// ---- sweeps -------------------------------------------------------------------------

enum class SweepAxis { antennas, clients };

inline SweepAxis parse_axis(const std::string& s) {
  if (s == "antennas") return SweepAxis::antennas;
  if (s == "clients") return SweepAxis::clients;
  throw ConfigError("sweep: axis must be antennas or clients, got '" + s + "'");
}

struct SweepPoint {
  std::size_t axis_value = 0;
  std::string scenario;
  std::string agent;
  std::vector<double> final_ravg;  // one per seed
};

/// Final R_avg per (axis value, scenario, agent, seed). Learning agents train
/// for the configured episodes; the oracle's score is its mean reward over
/// oracle.states paired states for that seed.
inline std::vector<SweepPoint> sweep_points(const ExperimentConfig& cfg, SweepAxis axis) {
  validate(cfg);
  const auto& values = axis == SweepAxis::antennas ? cfg.sweep_antennas : cfg.sweep_clients;
  struct Job {
    std::size_t point;
    std::uint64_t seed;
  };
  std::vector<SweepPoint> points;
  std::vector<ExperimentConfig> point_cfg;
  for (std::size_t v : values) {
    for (const auto& sc : cfg.sweep_scenarios) {
      for (const auto& ag : cfg.sweep_agents) {
        ExperimentConfig c = cfg;
        (axis == SweepAxis::antennas ? c.env.n_antennas : c.env.n_users) = v;
        c.env.scenario = parse_scenario(sc);
        c.agent_kind = ag;
        validate(c);
        points.push_back({v, sc, ag, {}});
        point_cfg.push_back(std::move(c));
      }
    }
  }
  std::vector<Job> jobs;
  for (std::size_t p = 0; p < points.size(); ++p) {
    for (std::uint64_t s : cfg.seeds) jobs.push_back({p, s});
  }
  const auto scores = parallel_map(jobs.size(), cfg.workers, [&](std::size_t j) {
    const ExperimentConfig& c = point_cfg[jobs[j].point];
    if (c.agent_kind == "oracle") {
      // States are drawn at the largest K so client-axis points are nested.
      const std::size_t k_states =
          axis == SweepAxis::clients ? *std::max_element(values.begin(), values.end()) : c.env.n_users;
      std::vector<EnvState> states;
      for (const auto& s : draw_states(c.oracle_states, k_states, c.env.mobility, jobs[j].seed)) {
        states.push_back(s.prefix(c.env.n_users));
      }
      return mean(oracle_rewards(states, c.env, c.oracle, jobs[j].seed));
    }
    return train_seed(c, jobs[j].seed).final_ravg();
  });
  for (std::size_t j = 0; j < jobs.size(); ++j) points[jobs[j].point].final_ravg.push_back(scores[j]);
  return points;
}

inline Table sweep_table(SweepAxis axis, const std::vector<SweepPoint>& points) {
  Table t{{"axis_name", "axis_value", "scenario", "agent", "final_ravg_mean", "final_ravg_std", "seeds"},
          {}};
  for (const auto& p : points) {
    t.rows.push_back({axis == SweepAxis::antennas ? "antennas" : "clients", std::to_string(p.axis_value),
                      p.scenario, p.agent, csv_number(mean(p.final_ravg)), csv_number(stddev(p.final_ravg)),
                      std::to_string(p.final_ravg.size())});
  }
  return t;
}

inline std::vector<OutputFile> run_sweep(const ExperimentConfig& cfg, SweepAxis axis) {
  const auto points = sweep_points(cfg, axis);
  const std::string stem = axis == SweepAxis::antennas ? "sweep_antennas" : "sweep_clients";
  return {{stem + ".csv", sweep_table(axis, points).to_csv()},
          {stem + ".json", sidecar(cfg, axis == SweepAxis::antennas ? "sweep antennas" : "sweep clients", cfg.seeds)}};
}

// ---- bound verification -------------------------------------------------------------

/// Communication policy for the federated loop: each round draws a fresh
/// user state (or advances it), picks a beam and layout, and samples channels.
class PolicyComm {
 public:
  PolicyComm(const ExperimentConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), env_rng_(derive_rng(seed, streams::env)), search_(derive_rng(seed, streams::oracle)) {
    if (cfg.bound_policy == BoundPolicy::rdpg || cfg.bound_policy == BoundPolicy::ddpg) {
      const AgentKind kind = cfg.bound_policy == BoundPolicy::rdpg ? AgentKind::rdpg : AgentKind::ddpg;
      trainer_ = std::make_shared<Trainer>(cfg.env, kind, cfg.agent, seed);
      trainer_->run(cfg.episodes, cfg.horizon);
    }
    if (cfg.bound_policy == BoundPolicy::random) uniform_.emplace(derive_rng(seed, streams::exploration));
  }

  CommRound operator()(int round, Rng&) {
    state_ = round == 1 || !state_ ? reset(cfg_.env.n_users, cfg_.env.mobility, env_rng_)
                                   : advance_mobility(*state_, cfg_.env.mobility, env_rng_);
    switch (cfg_.bound_policy) {
      case BoundPolicy::matched: return matched();
      case BoundPolicy::oracle: {
        const OracleResult best = random_search_oracle(*state_, cfg_.env, cfg_.oracle, search_);
        return realize(decode_for(cfg_.env, best.best));
      }
      case BoundPolicy::rdpg:
      case BoundPolicy::ddpg: {
        history_.push_back(trainer_->encoder()(*state_, prev_.size() ? &prev_ : nullptr));
        while (history_.size() > trainer_->agent()->window()) history_.erase(history_.begin());
        prev_ = trainer_->greedy(history_);
        return realize(decode_for(cfg_.env, RawAction::from_flat(prev_)));
      }
      case BoundPolicy::random: {
        std::uniform_real_distribution<double> unit(-1.0, 1.0);
        VectorXd a(cfg_.env.action_dim());
        for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = unit(*uniform_);
        return realize(decode_for(cfg_.env, RawAction::from_flat(a)));
      }
    }
    return matched();
  }

 private:
  CommRound realize(DecodedAction dec) {
    ChannelSet ch = sample_channel(cfg_.env.channel, state_->users(), dec.geometry, env_rng_);
    return {std::move(dec.beam), std::move(ch), std::nullopt};
  }

  /// FPA layout; among the users' normalized channels, the one with the
  /// smallest worst-user ratio on the realized fading.
  CommRound matched() {
    const ArrayGeometry fpa = fpa_layout(cfg_.env.n_antennas, cfg_.env.aperture, cfg_.env.min_spacing);
    ChannelSet ch = sample_channel(cfg_.env.channel, state_->users(), fpa, env_rng_);
    Beamformer best{ch.per_user.front().normalized()};
    double best_ratio = std::numeric_limits<double>::infinity();
    for (const auto& h : ch.per_user) {
      Beamformer m{h.normalized()};
      if (m.degenerate(kDegeneracyTolerance)) continue;
      double worst = 0.0;
      for (const auto& g : ch.per_user) {
        const double g2 = std::norm(effective_gain(m, g));
        worst = std::max(worst, g2 > 0.0 ? 1.0 / g2 : std::numeric_limits<double>::infinity());
      }
      if (worst < best_ratio) {
        best_ratio = worst;
        best = m;
      }
    }
    return {std::move(best), std::move(ch), std::nullopt};
  }

  const ExperimentConfig& cfg_;
  Rng env_rng_, search_;
  std::optional<Rng> uniform_;
  std::optional<EnvState> state_;
  std::shared_ptr<Trainer> trainer_;
  History history_;
  VectorXd prev_;
};

struct BoundSeed {
  std::uint64_t seed = 0;
  std::vector<RoundRecord> records;
  double holds_fraction = 1.0;
  double recursion_gap = 0.0;  // |Phi_T (recursion) - unrolled sum|
};

struct BoundReport {
  std::vector<BoundSeed> seeds;
  double holds_fraction = 1.0;           // over all (seed, round) pairs
  double mean_holds_fraction = 1.0;      // rounds with seed-mean gap <= seed-mean Phi_t
  std::vector<double> mean_ratio;        // per round: mean over seeds of Phi_t / gap_t
  double max_recursion_gap = 0.0;
};

inline BoundSeed bound_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  Rng task_rng = derive_rng(seed, 11);
  const TaskSpec task = make_synthetic_task(cfg.env.n_users, cfg.fl.samples, cfg.fl.dim,
                                            cfg.fl.cond_number, task_rng, cfg.fl.heterogeneity);
  FLConfig fl;
  fl.rounds = cfg.fl.rounds;
  fl.learn_rate = cfg.fl.learn_rate;
  fl.n_users = cfg.env.n_users;
  PolicyComm comm(cfg, seed);
  Rng noise = derive_rng(seed, 12);
  const FLResult res = run_fl(
      task, fl, [&comm](int t, Rng& r) { return comm(t, r); }, cfg.aircomp, noise);
  BoundSeed out{seed, res.records(), res.tracker.holds_fraction(), 0.0};
  const double unrolled = bound_phi(res.tracker.initial_gap(), res.tracker.psi(), res.tracker.theta_history());
  out.recursion_gap = std::abs(unrolled - res.tracker.phi());
  return out;
}

/// Runs the federated loop for fl.bound_seeds seeds (seeds[0], seeds[0]+1, ...).
inline BoundReport verify_bound(const ExperimentConfig& cfg) {
  validate(cfg);
  otafl::detail::require<ConfigError>(cfg.fl.bound_seeds >= 1, "verify-bound: need at least one seed");
  const std::uint64_t base = cfg.seeds.front();
  BoundReport rep;
  rep.seeds = parallel_map(cfg.fl.bound_seeds, cfg.workers,
                           [&](std::size_t i) { return bound_seed(cfg, base + i); });
  std::size_t ok = 0, total = 0;
  const auto rounds = static_cast<std::size_t>(cfg.fl.rounds);
  rep.mean_ratio.assign(rounds, 0.0);
  std::vector<double> gap_sum(rounds, 0.0), phi_sum(rounds, 0.0);
  for (const auto& s : rep.seeds) {
    for (std::size_t t = 0; t < s.records.size(); ++t) {
      const auto& r = s.records[t];
      ok += r.measured_gap <= r.phi_bound ? 1 : 0;
      ++total;
      gap_sum[t] += r.measured_gap;
      phi_sum[t] += r.phi_bound;
      rep.mean_ratio[t] += (r.measured_gap > 0.0 ? r.phi_bound / r.measured_gap
                                                 : std::numeric_limits<double>::infinity()) /
                           static_cast<double>(rep.seeds.size());
    }
    rep.max_recursion_gap = std::max(rep.max_recursion_gap, s.recursion_gap);
  }
  rep.holds_fraction = total ? static_cast<double>(ok) / static_cast<double>(total) : 1.0;
  std::size_t mean_ok = 0;
  for (std::size_t t = 0; t < rounds; ++t) mean_ok += gap_sum[t] <= phi_sum[t] ? 1 : 0;
  rep.mean_holds_fraction = static_cast<double>(mean_ok) / static_cast<double>(rounds);
  return rep;
}

inline Table bound_table(const BoundReport& rep) {
  Table t{{"round", "measured_gap", "theta", "phi_bound", "seed"}, {}};
  for (const auto& s : rep.seeds) {
    for (const auto& r : s.records) {
      t.rows.push_back({std::to_string(r.round), csv_number(r.measured_gap), csv_number(r.theta),
                        csv_number(r.phi_bound), std::to_string(s.seed)});
    }
  }
  return t;
}

inline std::vector<OutputFile> bound_outputs(const ExperimentConfig& cfg, const BoundReport& rep) {
  std::vector<std::uint64_t> seeds;
  for (const auto& s : rep.seeds) seeds.push_back(s.seed);
  const std::string stem = "bound_" + to_string(cfg.bound_policy);
  return {{stem + ".csv", bound_table(rep).to_csv()}, {stem + ".json", sidecar(cfg, "verify-bound", seeds)}};
}

}  // namespace otafl::harness
