#pragma once

// One communication round as an MDP step. State is user geometry, the action
// is a raw actor output decoded into a beamformer plus a feasible antenna
// layout, and the reward is the negated worst-user noise amplification.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "otafl/aircomp.hpp"
#include "otafl/channel.hpp"
#include "otafl/errors.hpp"

namespace otafl {

struct EnvState {
  Eigen::VectorXd distances;
  Eigen::VectorXd aoas;

  std::size_t n_users() const { return static_cast<std::size_t>(distances.size()); }

  std::vector<UserGeometry> users() const {
    std::vector<UserGeometry> out(n_users());
    for (std::size_t k = 0; k < out.size(); ++k) {
      out[k] = {distances[static_cast<Eigen::Index>(k)], aoas[static_cast<Eigen::Index>(k)]};
    }
    return out;
  }

  /// First `k` users; nested user sets share geometry.
  EnvState prefix(std::size_t k) const {
    const auto n = static_cast<Eigen::Index>(k);
    return {distances.head(n), aoas.head(n)};
  }
};

/// Raw actor output: 2N beam entries (re, im interleaved) then N position
/// entries, all in [-1, 1].
struct RawAction {
  Eigen::VectorXd beam_raw;
  Eigen::VectorXd pos_raw;

  static Eigen::Index flat_size(std::size_t n_antennas) {
    return 3 * static_cast<Eigen::Index>(n_antennas);
  }

  static RawAction from_flat(const Eigen::VectorXd& flat) {
    detail::require<InvalidArgument>(flat.size() % 3 == 0 && flat.size() > 0,
                                     "raw action: flat length must be 3N");
    const Eigen::Index n = flat.size() / 3;
    return {flat.head(2 * n), flat.tail(n)};
  }

  Eigen::VectorXd flat() const {
    Eigen::VectorXd out(beam_raw.size() + pos_raw.size());
    out << beam_raw, pos_raw;
    return out;
  }
};

enum class Mobility { iid, random_walk };
enum class Scenario { fa, fpa };

struct MobilityConfig {
  Mobility kind = Mobility::iid;
  double d_min = 20.0;
  double d_max = 100.0;
  double aoa_min = -std::numbers::pi / 2.0;
  double aoa_max = std::numbers::pi / 2.0;
  // Random-walk increments (std dev per step), reflected at the range edges.
  double walk_sigma_distance = 4.0;
  double walk_sigma_aoa = 0.08;
};

struct RewardConfig {
  double r1 = -100.0;
  double r2 = -1e-4;
  double degeneracy_tolerance = 1e-6;

  void validate() const {
    detail::require<InvalidArgument>(r1 < 0.0 && r2 < 0.0, "reward: r1 and r2 must be negative");
    detail::require<InvalidArgument>(degeneracy_tolerance >= 0.0,
                                     "reward: tolerance must be >= 0");
  }
};

inline EnvState reset(std::size_t n_users, const MobilityConfig& mobility, Rng& rng) {
  std::uniform_real_distribution<double> dist(mobility.d_min, mobility.d_max);
  std::uniform_real_distribution<double> angle(mobility.aoa_min, mobility.aoa_max);
  EnvState s{Eigen::VectorXd(static_cast<Eigen::Index>(n_users)),
             Eigen::VectorXd(static_cast<Eigen::Index>(n_users))};
  for (Eigen::Index k = 0; k < s.distances.size(); ++k) {
    s.distances[k] = dist(rng);
    s.aoas[k] = angle(rng);
  }
  return s;
}

namespace detail {

inline double reflect_into(double x, double lo, double hi) {
  const double span = hi - lo;
  if (span <= 0.0) return lo;
  double y = std::fmod(x - lo, 2.0 * span);
  if (y < 0.0) y += 2.0 * span;
  return lo + (y <= span ? y : 2.0 * span - y);
}

}  // namespace detail

/// Next user geometry: an independent redraw, or a reflected Gaussian walk.
inline EnvState advance_mobility(const EnvState& state, const MobilityConfig& mobility, Rng& rng) {
  if (mobility.kind == Mobility::iid) return reset(state.n_users(), mobility, rng);
  std::normal_distribution<double> gauss(0.0, 1.0);
  EnvState next = state;
  for (Eigen::Index k = 0; k < next.distances.size(); ++k) {
    next.distances[k] = detail::reflect_into(
        state.distances[k] + mobility.walk_sigma_distance * gauss(rng), mobility.d_min,
        mobility.d_max);
    next.aoas[k] = detail::reflect_into(state.aoas[k] + mobility.walk_sigma_aoa * gauss(rng),
                                        mobility.aoa_min, mobility.aoa_max);
  }
  return next;
}

struct DecodedAction {
  Beamformer beam;
  ArrayGeometry geometry;
  bool degenerate = false;
};

/// Minimum weight given to every spacing segment so gaps stay strictly above X0.
inline constexpr double kGapFloor = 1e-3;

/// Maps positions raw in [-1,1]^N onto a layout satisfying 0 <= x_n <= X and
/// x_n - x_{n-1} > X0. The free length L = X - (N-1) X0 is split across N+1
/// segments: a leading offset (weight from pos_raw[0]), N-1 inner gaps
/// (pos_raw[1..]) and a trailing margin of neutral weight 1/2.
inline std::vector<double> decode_positions(const Eigen::VectorXd& pos_raw, double aperture,
                                            double min_spacing) {
  const auto n = static_cast<std::size_t>(pos_raw.size());
  if (!ArrayGeometry::feasible(n, aperture, min_spacing)) {
    throw ConfigError("decode_action: (N-1)*X0 >= X, no feasible layout");
  }
  const double free_length = aperture - static_cast<double>(n - 1) * min_spacing;
  std::vector<double> weight(n + 1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = std::clamp(pos_raw[static_cast<Eigen::Index>(i)], -1.0, 1.0);
    weight[i] = (1.0 + r) / 2.0 + kGapFloor;
    total += weight[i];
  }
  weight[n] = 0.5 + kGapFloor;
  total += weight[n];

  std::vector<double> x(n);
  double cursor = free_length * weight[0] / total;
  x[0] = cursor;
  for (std::size_t i = 1; i < n; ++i) {
    cursor += min_spacing + free_length * weight[i] / total;
    x[i] = cursor;
  }
  return x;
}

inline Beamformer decode_beam(const Eigen::VectorXd& beam_raw, double tolerance) {
  const Eigen::Index n = beam_raw.size() / 2;
  Beamformer m{Eigen::VectorXcd(n)};
  for (Eigen::Index i = 0; i < n; ++i) m.weights[i] = cplx(beam_raw[2 * i], beam_raw[2 * i + 1]);
  const double norm = m.norm();
  if (norm >= tolerance && norm > 0.0) m.weights /= norm;
  return m;
}

inline DecodedAction decode_action(const RawAction& raw, double aperture, double min_spacing,
                                   double tolerance = 1e-6) {
  detail::require<InvalidArgument>(raw.beam_raw.size() == 2 * raw.pos_raw.size() &&
                                       raw.pos_raw.size() > 0,
                                   "decode_action: expected 2N beam and N position entries");
  Beamformer beam = decode_beam(raw.beam_raw, tolerance);
  const bool degenerate = beam.degenerate(tolerance);
  return {std::move(beam),
          ArrayGeometry(decode_positions(raw.pos_raw, aperture, min_spacing), aperture, min_spacing),
          degenerate};
}

/// Reward: r1 for a vanishing beam, r2 * max_k |m|^2/|m^H h_k|^2
/// otherwise, floored at r1 so near-nulls never score below a zero beam.
inline double reward(const Beamformer& m, const ChannelSet& channels, const RewardConfig& cfg) {
  if (m.degenerate(cfg.degeneracy_tolerance)) return cfg.r1;
  const double m2 = m.weights.squaredNorm();
  double worst = 0.0;
  for (const auto& h : channels.per_user) {
    const double g2 = std::norm(effective_gain(m, h));
    worst = std::max(worst, g2 > 0.0 ? m2 / g2 : std::numeric_limits<double>::infinity());
  }
  return std::max(cfg.r1, cfg.r2 * worst);
}

struct EnvConfig {
  std::size_t n_antennas = 4;
  std::size_t n_users = 4;
  double aperture = 8.0;
  double min_spacing = 0.5;
  Scenario scenario = Scenario::fa;
  RicianParams channel;
  RewardConfig reward;
  MobilityConfig mobility;

  void validate() const {
    detail::require<ConfigError>(n_antennas >= 1 && n_users >= 1,
                                 "env: need at least one antenna and one user");
    detail::require<ConfigError>(ArrayGeometry::feasible(n_antennas, aperture, min_spacing),
                                 "env: (N-1)*X0 must be below X");
    if (scenario == Scenario::fpa) (void)fpa_layout(n_antennas, aperture, min_spacing);
    channel.validate();
    reward.validate();
    detail::require<ConfigError>(mobility.d_min > 0.0 && mobility.d_max >= mobility.d_min,
                                 "env: bad distance range");
  }

  Eigen::Index state_dim() const { return 2 * static_cast<Eigen::Index>(n_users); }
  Eigen::Index action_dim() const { return RawAction::flat_size(n_antennas); }
};

/// Decodes an action under the scenario: FPA ignores the position entries.
inline DecodedAction decode_for(const EnvConfig& cfg, const RawAction& raw) {
  DecodedAction out = decode_action(raw, cfg.aperture, cfg.min_spacing,
                                    cfg.reward.degeneracy_tolerance);
  if (cfg.scenario == Scenario::fpa) {
    out.geometry = fpa_layout(cfg.n_antennas, cfg.aperture, cfg.min_spacing);
  }
  return out;
}

struct StepResult {
  EnvState next;
  double reward = 0.0;
  ChannelSet channels;
  DecodedAction decoded;
};

/// Reward is evaluated on channels drawn for the current state; the mobility
/// model then produces the next state.
inline StepResult step(const EnvState& state, const RawAction& raw, const EnvConfig& cfg,
                       Rng& rng) {
  DecodedAction decoded = decode_for(cfg, raw);
  ChannelSet channels = sample_channel(cfg.channel, state.users(), decoded.geometry, rng);
  const double r = reward(decoded.beam, channels, cfg.reward);
  EnvState next = advance_mobility(state, cfg.mobility, rng);
  return {std::move(next), r, std::move(channels), std::move(decoded)};
}

/// Network input for a state: distances mapped to [-1,1] over [d_min, d_max]
/// and angles scaled by 2/pi.
inline Eigen::VectorXd encode_state(const EnvState& s, const MobilityConfig& mobility) {
  const Eigen::Index k = s.distances.size();
  Eigen::VectorXd out(2 * k);
  const double mid = 0.5 * (mobility.d_min + mobility.d_max);
  const double half = std::max(0.5 * (mobility.d_max - mobility.d_min), 1e-12);
  for (Eigen::Index i = 0; i < k; ++i) {
    out[i] = (s.distances[i] - mid) / half;
    out[k + i] = s.aoas[i] / (std::numbers::pi / 2.0);
  }
  return out;
}

}  // namespace otafl
