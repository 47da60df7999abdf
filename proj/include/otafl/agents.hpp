#pragma once

// Recurrent and feedforward deterministic policy-gradient agents that pick the
// receive beam and antenna layout each round, the replay memory they learn
// from, and a random-search oracle used to calibrate solution quality.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "otafl/channel.hpp"
#include "otafl/env.hpp"
#include "otafl/errors.hpp"
#include "otafl/neuralnet.hpp"

namespace otafl {

using Eigen::VectorXd;

enum class AgentKind { rdpg, ddpg, random };

inline const char* to_string(AgentKind k) {
  switch (k) {
    case AgentKind::rdpg: return "rdpg";
    case AgentKind::ddpg: return "ddpg";
    case AgentKind::random: return "random";
  }
  return "?";
}

/// Independent generator for a named sub-stream of one seed.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

struct Transition {
  EnvState state;
  VectorXd action;
  double reward = 0.0;
  EnvState next_state;
  long episode = 0;
  int step = 0;
  bool terminal = false;
};

/// Fixed-capacity FIFO of transitions. Episodes are stored contiguously so
/// trailing windows can be cut out of them.
class ReplayMemory {
 public:
  explicit ReplayMemory(std::size_t capacity) : capacity_(capacity) {
    detail::require<InvalidArgument>(capacity >= 1, "replay: capacity must be >= 1");
    ring_.reserve(std::min<std::size_t>(capacity, 1 << 16));
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return count_; }
  std::size_t cursor() const { return head_; }
  std::uint64_t pushed() const { return pushed_; }

  void push(Transition t) {
    if (ring_.size() < capacity_) {
      ring_.push_back(std::move(t));
      head_ = ring_.size() % capacity_;
      ++count_;
    } else {
      ring_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
    ++pushed_;
  }

  /// Logical index 0 is the oldest stored transition.
  const Transition& at(std::size_t i) const {
    detail::require<InvalidArgument>(i < count_, "replay: index out of range");
    const std::size_t start = count_ < capacity_ ? 0 : head_;
    return ring_[(start + i) % capacity_];
  }

  std::size_t sample_index(Rng& rng) const {
    detail::require<InvalidArgument>(count_ > 0, "replay: sampling from an empty memory");
    return std::uniform_int_distribution<std::size_t>(0, count_ - 1)(rng);
  }

  /// Logical index of the earliest transition of the same episode that is
  /// at most `window - 1` steps before `i` and still stored.
  std::size_t window_start(std::size_t i, std::size_t window) const {
    std::size_t j = i;
    const long ep = at(i).episode;
    while (j > 0 && i - j + 1 < window && at(j - 1).episode == ep) --j;
    return j;
  }

 private:
  std::size_t capacity_;
  std::vector<Transition> ring_;
  std::size_t head_ = 0;
  std::size_t count_ = 0;
  std::uint64_t pushed_ = 0;
};

struct AgentConfig {
  double step_size = 5e-4;
  std::size_t capacity = 10000;
  std::size_t batch = 64;
  double tau = 1e-3;
  double discount = 0.9;
  double noise_start = 0.3;
  double noise_end = 0.05;
  double target_noise = 0.05;
  double target_noise_clip = 0.1;
  std::size_t window = 8;
  Eigen::Index hidden = 64;
  bool per_step_updates = false;
  std::size_t updates_per_episode = 4;
  bool cut_bootstrap_at_horizon = true;
  bool include_prev_action = false;
  double reward_scale = 0.01;

  void validate() const {
    using detail::require;
    require<ConfigError>(step_size > 0.0, "agent: step size must be > 0");
    require<ConfigError>(tau >= 0.0 && tau <= 1.0, "agent: tau must be in [0, 1]");
    require<ConfigError>(discount >= 0.0 && discount < 1.0, "agent: discount must be in [0, 1)");
    require<ConfigError>(batch >= 1 && batch <= capacity, "agent: need 1 <= batch <= capacity");
    require<ConfigError>(window >= 1 && hidden >= 1, "agent: window and hidden must be >= 1");
    require<ConfigError>(noise_start >= 0.0 && noise_end >= 0.0 && target_noise >= 0.0,
                         "agent: noise scales must be >= 0");
    require<ConfigError>(reward_scale > 0.0, "agent: reward scale must be > 0");
  }
};

/// Actor: trunk -> dense(hidden, relu) -> dense(action, tanh).
/// Critic: trunk over states, action joined after the trunk -> dense(hidden,
/// relu) -> dense(1). The two agent kinds differ only in the trunk.
inline nn::NetworkSpec actor_spec(AgentKind kind, Eigen::Index obs_dim, Eigen::Index action_dim,
                                  Eigen::Index hidden) {
  nn::NetworkSpec s;
  s.input_dim = obs_dim;
  s.trunk = kind == AgentKind::rdpg ? nn::TrunkKind::recurrent : nn::TrunkKind::dense;
  s.trunk_units = hidden;
  s.trunk_activation = nn::Activation::relu;
  s.head = {{hidden, nn::Activation::relu}, {action_dim, nn::Activation::tanh}};
  return s;
}

inline nn::NetworkSpec critic_spec(AgentKind kind, Eigen::Index obs_dim, Eigen::Index action_dim,
                                   Eigen::Index hidden) {
  nn::NetworkSpec s = actor_spec(kind, obs_dim, action_dim, hidden);
  s.side_dim = action_dim;
  s.head = {{hidden, nn::Activation::relu}, {1, nn::Activation::identity}};
  return s;
}

using History = std::vector<VectorXd>;

/// One replayed trajectory window with its bootstrap window.
struct WindowSample {
  History history;
  VectorXd action;
  double reward = 0.0;
  History next_history;
  bool terminal = false;
};

/// pi(history) + Gaussian noise, clipped to [-1, 1].
inline VectorXd select_action(const nn::NetworkParams& actor, const History& history,
                              double noise_scale, Rng& rng) {
  VectorXd a = nn::evaluate(actor, history);
  if (noise_scale > 0.0) {
    std::normal_distribution<double> gauss(0.0, noise_scale);
    for (Eigen::Index i = 0; i < a.size(); ++i) a[i] += gauss(rng);
  }
  return a.cwiseMax(-1.0).cwiseMin(1.0);
}

/// Y = r + discount * Q'(s', clip(pi'(s') + clipped noise)); Y = r at a cut terminal.
inline double critic_target(double reward, const History& next_history,
                            const nn::NetworkParams& target_actor,
                            const nn::NetworkParams& target_critic, double discount,
                            double smoothing_noise, double noise_clip, Rng& rng,
                            bool terminal = false) {
  if (terminal || discount == 0.0) return reward;
  VectorXd a = nn::evaluate(target_actor, next_history);
  if (smoothing_noise > 0.0) {
    std::normal_distribution<double> gauss(0.0, smoothing_noise);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      a[i] += std::clamp(gauss(rng), -noise_clip, noise_clip);
    }
  }
  a = a.cwiseMax(-1.0).cwiseMin(1.0);
  return reward + discount * nn::evaluate(target_critic, next_history, a)[0];
}

/// One Adam step on mean (Q(s, a) - Y)^2. Returns the pre-step loss.
inline double update_critic(nn::NetworkParams& critic, nn::AdamState& adam,
                            const std::vector<WindowSample>& batch,
                            const std::vector<double>& targets) {
  detail::require<InvalidArgument>(!batch.empty() && batch.size() == targets.size(),
                                   "update_critic: one target per sample");
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  VectorXd grad = VectorXd::Zero(critic.size());
  double loss = 0.0;
  VectorXd dout(1);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto tr = nn::forward(critic, batch[i].history, batch[i].action);
    const double err = tr.output[0] - targets[i];
    loss += err * err * inv_n;
    dout[0] = 2.0 * err * inv_n;
    grad += nn::backward(critic, tr, dout).params;
  }
  nn::adam_step(critic, grad, adam);
  return loss;
}

/// Composite gradient of mean Q(s, pi(s)) w.r.t. the actor parameters.
inline VectorXd actor_objective_gradient(const nn::NetworkParams& actor,
                                         const nn::NetworkParams& critic,
                                         const std::vector<WindowSample>& batch,
                                         double* objective = nullptr) {
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  VectorXd grad = VectorXd::Zero(actor.size());
  double total = 0.0;
  VectorXd one(1);
  one[0] = 1.0;
  for (const auto& s : batch) {
    const auto at = nn::forward(actor, s.history);
    const auto ct = nn::forward(critic, s.history, at.output);
    total += ct.output[0] * inv_n;
    const VectorXd dq_da = nn::backward(critic, ct, one, false).side;
    grad += nn::backward(actor, at, dq_da * inv_n).params;
  }
  if (objective) *objective = total;
  return grad;
}

/// One Adam ascent step on mean Q(s, pi(s)). Returns the pre-step objective.
inline double update_actor(nn::NetworkParams& actor, nn::AdamState& adam,
                           const nn::NetworkParams& critic,
                           const std::vector<WindowSample>& batch) {
  detail::require<InvalidArgument>(!batch.empty(), "update_actor: empty batch");
  double objective = 0.0;
  const VectorXd grad = actor_objective_gradient(actor, critic, batch, &objective);
  nn::adam_step(actor, -grad, adam);
  return objective;
}

using nn::soft_update;

/// Online and target networks for one deterministic policy-gradient learner.
class ActorCritic {
 public:
  ActorCritic(AgentKind kind, Eigen::Index obs_dim, Eigen::Index action_dim,
              const AgentConfig& cfg, Rng& init_rng)
      : kind_(kind), cfg_(cfg) {
    detail::require<InvalidArgument>(kind != AgentKind::random,
                                     "actor-critic: random agent has no networks");
    actor_ = nn::NetworkParams::create(actor_spec(kind, obs_dim, action_dim, cfg.hidden), init_rng);
    critic_ =
        nn::NetworkParams::create(critic_spec(kind, obs_dim, action_dim, cfg.hidden), init_rng);
    target_actor_ = actor_;
    target_critic_ = critic_;
    actor_adam_ = nn::AdamState::for_params(actor_, cfg.step_size);
    critic_adam_ = nn::AdamState::for_params(critic_, cfg.step_size);
  }

  AgentKind kind() const { return kind_; }
  const AgentConfig& config() const { return cfg_; }
  /// The dense trunk reads only the latest observation.
  std::size_t window() const { return kind_ == AgentKind::rdpg ? cfg_.window : 1; }

  const nn::NetworkParams& actor() const { return actor_; }
  const nn::NetworkParams& critic() const { return critic_; }
  const nn::NetworkParams& target_actor() const { return target_actor_; }
  const nn::NetworkParams& target_critic() const { return target_critic_; }
  nn::NetworkParams& actor() { return actor_; }
  nn::NetworkParams& critic() { return critic_; }
  nn::AdamState& actor_adam() { return actor_adam_; }
  nn::AdamState& critic_adam() { return critic_adam_; }
  nn::NetworkParams& target_actor() { return target_actor_; }
  nn::NetworkParams& target_critic() { return target_critic_; }

  VectorXd act(const History& history, double noise_scale, Rng& rng) const {
    return select_action(actor_, history, noise_scale, rng);
  }

  struct UpdateStats {
    double critic_loss = 0.0;
    double actor_objective = 0.0;
  };

  /// Targets, critic step, actor step, then both soft updates.
  UpdateStats update(const std::vector<WindowSample>& batch, Rng& rng) {
    std::vector<double> targets;
    targets.reserve(batch.size());
    for (const auto& s : batch) {
      targets.push_back(critic_target(s.reward, s.next_history, target_actor_, target_critic_,
                                      cfg_.discount, cfg_.target_noise, cfg_.target_noise_clip,
                                      rng, s.terminal));
    }
    UpdateStats st;
    st.critic_loss = update_critic(critic_, critic_adam_, batch, targets);
    st.actor_objective = update_actor(actor_, actor_adam_, critic_, batch);
    soft_update(target_actor_, actor_, cfg_.tau);
    soft_update(target_critic_, critic_, cfg_.tau);
    return st;
  }

 private:
  AgentKind kind_;
  AgentConfig cfg_;
  nn::NetworkParams actor_, critic_, target_actor_, target_critic_;
  nn::AdamState actor_adam_, critic_adam_;
};

/// Builds network inputs from stored transitions.
class ObservationEncoder {
 public:
  ObservationEncoder(MobilityConfig mobility, bool include_prev_action, Eigen::Index action_dim)
      : mobility_(mobility), prev_action_(include_prev_action), action_dim_(action_dim) {}

  Eigen::Index dim(std::size_t n_users) const {
    return 2 * static_cast<Eigen::Index>(n_users) + (prev_action_ ? action_dim_ : 0);
  }

  VectorXd operator()(const EnvState& s, const VectorXd* prev_action) const {
    VectorXd base = encode_state(s, mobility_);
    if (!prev_action_) return base;
    VectorXd out(base.size() + action_dim_);
    out << base, (prev_action ? *prev_action : VectorXd::Zero(action_dim_));
    return out;
  }

  /// Trailing window ending at logical index i plus the window ending at its successor.
  WindowSample window(const ReplayMemory& memory, std::size_t i, std::size_t window,
                      double reward_scale, bool cut_at_terminal) const {
    const std::size_t start = memory.window_start(i, window);
    WindowSample out;
    for (std::size_t j = start; j <= i; ++j) {
      const Transition& t = memory.at(j);
      const VectorXd* prev =
          j > 0 && memory.at(j - 1).episode == t.episode ? &memory.at(j - 1).action : nullptr;
      out.history.push_back((*this)(t.state, prev));
    }
    const Transition& last = memory.at(i);
    out.next_history.assign(out.history.begin() + (out.history.size() >= window ? 1 : 0),
                            out.history.end());
    out.next_history.push_back((*this)(last.next_state, &last.action));
    out.action = last.action;
    out.reward = reward_scale * last.reward;
    out.terminal = cut_at_terminal && last.terminal;
    return out;
  }

 private:
  MobilityConfig mobility_;
  bool prev_action_;
  Eigen::Index action_dim_;
};

struct EpisodeRecord {
  int episode = 0;
  double mean_reward = 0.0;
  double actor_loss = std::numeric_limits<double>::quiet_NaN();
  double critic_loss = std::numeric_limits<double>::quiet_NaN();
};

struct TrainingLog {
  std::vector<EpisodeRecord> episodes;
};

/// Stream identifiers for derive_rng.
namespace streams {
inline constexpr std::uint64_t env = 1;
inline constexpr std::uint64_t init = 2;
inline constexpr std::uint64_t exploration = 3;
inline constexpr std::uint64_t replay = 4;
inline constexpr std::uint64_t target = 5;
inline constexpr std::uint64_t oracle = 6;
}  // namespace streams

/// Exploration scale, linear from noise_start to noise_end over training.
inline double exploration_scale(const AgentConfig& cfg, int episode, int episodes) {
  if (episodes <= 1) return cfg.noise_start;
  const double frac = static_cast<double>(episode) / static_cast<double>(episodes - 1);
  return cfg.noise_start + (cfg.noise_end - cfg.noise_start) * frac;
}

/// Runs the agent's training loop: act for `horizon` steps per episode,
/// store transitions, then (once the memory holds a batch) sample windows,
/// update critic and actor and track targets. The random kind acts uniformly
/// and never learns.
class Trainer {
 public:
  Trainer(const EnvConfig& env, AgentKind kind, const AgentConfig& cfg, std::uint64_t seed)
      : env_(env), kind_(kind), cfg_(cfg),
        env_rng_(derive_rng(seed, streams::env)),
        noise_rng_(derive_rng(seed, streams::exploration)),
        replay_rng_(derive_rng(seed, streams::replay)),
        target_rng_(derive_rng(seed, streams::target)),
        memory_(cfg.capacity),
        encoder_(env.mobility, cfg.include_prev_action, env.action_dim()) {
    env_.validate();
    cfg_.validate();
    if (kind_ != AgentKind::random) {
      Rng init = derive_rng(seed, streams::init);
      agent_.emplace(kind_, encoder_.dim(env_.n_users), env_.action_dim(), cfg_, init);
    }
  }

  const ReplayMemory& memory() const { return memory_; }
  const std::optional<ActorCritic>& agent() const { return agent_; }
  std::optional<ActorCritic>& agent() { return agent_; }
  const ObservationEncoder& encoder() const { return encoder_; }

  TrainingLog run(int episodes, int horizon) {
    detail::require<ConfigError>(episodes >= 1 && horizon >= 1,
                                 "train: episodes and horizon must be >= 1");
    TrainingLog log;
    for (int e = 0; e < episodes; ++e) {
      log.episodes.push_back(run_episode(e, episodes, horizon));
    }
    return log;
  }

  /// Deterministic policy action (no exploration) for a history of observations.
  VectorXd greedy(const History& history) const {
    if (!agent_) return VectorXd::Zero(env_.action_dim());
    return nn::evaluate(agent_->actor(), history);
  }

 private:
  EpisodeRecord run_episode(int e, int episodes, int horizon) {
    EpisodeRecord rec;
    rec.episode = e + 1;
    const double noise = exploration_scale(cfg_, e, episodes);
    EnvState state = reset(env_.n_users, env_.mobility, env_rng_);
    std::deque<VectorXd> window;
    VectorXd prev_action;
    double reward_sum = 0.0;
    double critic_sum = 0.0, actor_sum = 0.0;
    int updates = 0;
    const std::size_t win = agent_ ? agent_->window() : 1;

    for (int t = 0; t < horizon; ++t) {
      window.push_back(encoder_(state, prev_action.size() ? &prev_action : nullptr));
      while (window.size() > win) window.pop_front();
      VectorXd action;
      if (agent_) {
        action = agent_->act(History(window.begin(), window.end()), noise, noise_rng_);
      } else {
        std::uniform_real_distribution<double> unit(-1.0, 1.0);
        action = VectorXd(env_.action_dim());
        for (Eigen::Index i = 0; i < action.size(); ++i) action[i] = unit(noise_rng_);
      }
      StepResult res = step(state, RawAction::from_flat(action), env_, env_rng_);
      reward_sum += res.reward;
      memory_.push({state, action, res.reward, res.next, e, t, t == horizon - 1});
      prev_action = action;
      state = std::move(res.next);
      if (agent_ && cfg_.per_step_updates && memory_.size() >= cfg_.batch) {
        const auto st = update_once();
        critic_sum += st.critic_loss;
        actor_sum += st.actor_objective;
        ++updates;
      }
    }
    if (agent_ && !cfg_.per_step_updates && memory_.size() >= cfg_.batch) {
      for (std::size_t u = 0; u < cfg_.updates_per_episode; ++u) {
        const auto st = update_once();
        critic_sum += st.critic_loss;
        actor_sum += st.actor_objective;
        ++updates;
      }
    }
    rec.mean_reward = reward_sum / static_cast<double>(horizon);
    if (updates > 0) {
      rec.critic_loss = critic_sum / updates;
      rec.actor_loss = -actor_sum / updates;
    }
    return rec;
  }

  ActorCritic::UpdateStats update_once() {
    std::vector<WindowSample> batch;
    batch.reserve(cfg_.batch);
    for (std::size_t b = 0; b < cfg_.batch; ++b) {
      const std::size_t i = memory_.sample_index(replay_rng_);
      batch.push_back(encoder_.window(memory_, i, agent_->window(), cfg_.reward_scale,
                                      cfg_.cut_bootstrap_at_horizon));
    }
    return agent_->update(batch, target_rng_);
  }

  EnvConfig env_;
  AgentKind kind_;
  AgentConfig cfg_;
  Rng env_rng_, noise_rng_, replay_rng_, target_rng_;
  ReplayMemory memory_;
  ObservationEncoder encoder_;
  std::optional<ActorCritic> agent_;
};

inline TrainingLog train(const EnvConfig& env, AgentKind kind, const AgentConfig& cfg,
                         int episodes, int horizon, std::uint64_t seed) {
  Trainer trainer(env, kind, cfg, seed);
  return trainer.run(episodes, horizon);
}

// ---- Checkpoints ------------------------------------------------------------

inline void save_checkpoint(std::ostream& out, const ActorCritic& agent,
                            const ReplayMemory& memory) {
  out << "otafl-checkpoint v1\n";
  out << "agent " << to_string(agent.kind()) << '\n';
  out << "replay capacity " << memory.capacity() << " size " << memory.size() << " cursor "
      << memory.cursor() << " pushed " << memory.pushed() << '\n';
  nn::save(out, agent.actor());
  nn::save(out, agent.critic());
  nn::save(out, agent.target_actor());
  nn::save(out, agent.target_critic());
  auto& mutable_agent = const_cast<ActorCritic&>(agent);
  nn::save(out, mutable_agent.actor_adam());
  nn::save(out, mutable_agent.critic_adam());
}

struct ReplayCursor {
  std::size_t capacity = 0, size = 0, cursor = 0;
  std::uint64_t pushed = 0;
};

/// Restores networks and optimizer moments into `agent`; returns the stored replay cursor.
inline ReplayCursor load_checkpoint(std::istream& in, ActorCritic& agent) {
  nn::detail::expect(in, "otafl-checkpoint");
  nn::detail::expect(in, "v1");
  std::string kind;
  nn::detail::expect(in, "agent");
  in >> kind;
  detail::require<InvalidArgument>(kind == to_string(agent.kind()),
                                   "checkpoint: agent kind mismatch");
  ReplayCursor rc;
  nn::detail::expect(in, "replay");
  nn::detail::expect(in, "capacity");
  in >> rc.capacity;
  nn::detail::expect(in, "size");
  in >> rc.size;
  nn::detail::expect(in, "cursor");
  in >> rc.cursor;
  nn::detail::expect(in, "pushed");
  in >> rc.pushed;
  auto restore = [&](nn::NetworkParams& dst) {
    nn::NetworkParams p = nn::load(in);
    detail::require<InvalidArgument>(p.same_layout(dst), "checkpoint: architecture mismatch");
    dst = std::move(p);
  };
  restore(agent.actor());
  restore(agent.critic());
  restore(agent.target_actor());
  restore(agent.target_critic());
  agent.actor_adam() = nn::load_adam(in);
  agent.critic_adam() = nn::load_adam(in);
  return rc;
}

// ---- Random-search oracle -----------------------------------------------------

struct OracleConfig {
  std::size_t budget = 2000;
  std::size_t draws = 32;         // fading draws per candidate during search
  std::size_t eval_draws = 256;   // fresh draws for the reported estimate
  double refine_fraction = 0.5;   // share of the budget spent on local perturbation
  bool matched_filter_seeds = true;
};

struct OracleResult {
  RawAction best;
  double reward = 0.0;           // estimate on fresh draws
  double search_estimate = 0.0;  // estimate on the search draws
};

/// Inverse of decode_positions when the layout is representable (all segment
/// weights within the raw range).
inline std::optional<VectorXd> encode_positions(const std::vector<double>& x, double aperture,
                                                double min_spacing) {
  const std::size_t n = x.size();
  const double trailing = aperture - x.back();
  if (n == 0 || trailing <= 0.0) return std::nullopt;
  const double w_tail = 0.5 + kGapFloor;
  VectorXd raw(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const double seg = i == 0 ? x[0] : x[i] - x[i - 1] - min_spacing;
    const double w = seg / trailing * w_tail;
    const double r = 2.0 * (w - kGapFloor) - 1.0;
    if (r < -1.0 - 1e-12 || r > 1.0 + 1e-12) return std::nullopt;
    raw[static_cast<Eigen::Index>(i)] = std::clamp(r, -1.0, 1.0);
  }
  return raw;
}

namespace detail {

/// Mean reward of a candidate over a fixed set of scattered draws.
class RewardEstimator {
 public:
  RewardEstimator(const EnvConfig& env, const EnvState& state, std::size_t draws, Rng& rng)
      : env_(env), users_(state.users()) {
    const auto n = static_cast<Eigen::Index>(env.n_antennas);
    for (std::size_t d = 0; d < draws; ++d) nlos_.push_back(draw_nlos(users_.size(), n, rng));
    for (const auto& u : users_) {
      los_amp_.push_back(env.channel.los_amplitude(u.distance));
      nlos_amp_.push_back(env.channel.nlos_amplitude(u.distance));
    }
  }

  double operator()(const RawAction& raw) const {
    const DecodedAction dec = decode_for(env_, raw);
    if (dec.degenerate) return env_.reward.r1;
    const auto& m = dec.beam.weights;
    const double m2 = m.squaredNorm();
    std::vector<cplx> los_gain(users_.size());
    for (std::size_t k = 0; k < users_.size(); ++k) {
      los_gain[k] = los_amp_[k] * m.dot(los_steering(dec.geometry.positions(), users_[k].aoa,
                                                     env_.channel.wavelength));
    }
    double total = 0.0;
    for (const auto& draw : nlos_) {
      double worst = 0.0;
      for (std::size_t k = 0; k < users_.size(); ++k) {
        const double g2 = std::norm(los_gain[k] + nlos_amp_[k] * m.dot(draw[k]));
        worst = std::max(worst, g2 > 0.0 ? m2 / g2 : std::numeric_limits<double>::infinity());
      }
      total += std::max(env_.reward.r1, env_.reward.r2 * worst);
    }
    return total / static_cast<double>(nlos_.size());
  }

 private:
  const EnvConfig& env_;
  std::vector<UserGeometry> users_;
  std::vector<std::vector<Eigen::VectorXcd>> nlos_;
  std::vector<double> los_amp_, nlos_amp_;
};

}  // namespace detail

/// Best action found by uniform random sampling followed by greedy Gaussian
/// perturbation, scored on common fading draws. Under FPA only the beam is
/// searched. Separate sub-streams for beams, positions and fading keep two
/// calls with equal seeds paired across scenarios.
inline OracleResult random_search_oracle(const EnvState& state, const EnvConfig& env,
                                         const OracleConfig& cfg, Rng& rng) {
  detail::require<InvalidArgument>(cfg.budget >= 1 && cfg.draws >= 1,
                                   "oracle: budget and draws must be >= 1");
  const std::uint64_t base = rng();
  Rng fading = derive_rng(base, 1), beams = derive_rng(base, 2), positions = derive_rng(base, 3),
      perturb = derive_rng(base, 4), fresh = derive_rng(base, 5);
  const bool fa = env.scenario == Scenario::fa;
  const auto n = static_cast<Eigen::Index>(env.n_antennas);
  detail::RewardEstimator estimate(env, state, cfg.draws, fading);

  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  auto random_raw = [&] {
    RawAction a{VectorXd(2 * n), VectorXd(n)};
    for (Eigen::Index i = 0; i < 2 * n; ++i) a.beam_raw[i] = unit(beams);
    for (Eigen::Index i = 0; i < n; ++i) a.pos_raw[i] = fa ? unit(positions) : 0.0;
    return a;
  };

  OracleResult out;
  double best = -std::numeric_limits<double>::infinity();
  auto consider = [&](const RawAction& a) {
    const double r = estimate(a);
    if (r > best) {
      best = r;
      out.best = a;
    }
  };

  if (cfg.matched_filter_seeds) {
    const ArrayGeometry fpa = fpa_layout(env.n_antennas, env.aperture, env.min_spacing);
    const VectorXd fpa_raw =
        encode_positions(fpa.positions(), env.aperture, env.min_spacing).value_or(VectorXd::Zero(n));
    for (const auto& u : state.users()) {
      const Eigen::VectorXcd h = los_steering(fpa.positions(), u.aoa, env.channel.wavelength);
      RawAction a{VectorXd(2 * n), fpa_raw};
      for (Eigen::Index i = 0; i < n; ++i) {
        a.beam_raw[2 * i] = h[i].real();
        a.beam_raw[2 * i + 1] = h[i].imag();
      }
      consider(a);
    }
  }

  const auto refine = static_cast<std::size_t>(cfg.refine_fraction * static_cast<double>(cfg.budget));
  const std::size_t sampled = cfg.budget - std::min(refine, cfg.budget - 1);
  for (std::size_t i = 0; i < sampled; ++i) consider(random_raw());

  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t steps = cfg.budget - sampled;
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = steps > 1 ? static_cast<double>(i) / static_cast<double>(steps - 1) : 0.0;
    const double sigma = 0.3 * std::pow(0.02 / 0.3, frac);
    RawAction a = out.best;
    for (Eigen::Index j = 0; j < 2 * n; ++j) {
      a.beam_raw[j] = std::clamp(a.beam_raw[j] + sigma * gauss(perturb), -1.0, 1.0);
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      const double step = sigma * gauss(perturb);
      if (fa) a.pos_raw[j] = std::clamp(a.pos_raw[j] + step, -1.0, 1.0);
    }
    consider(a);
  }

  out.search_estimate = best;
  detail::RewardEstimator evaluate(env, state, cfg.eval_draws, fresh);
  out.reward = evaluate(out.best);
  return out;
}

}  // namespace otafl
