#pragma once

// Over-the-air aggregation: zero-forcing transmit scalars, the power-limited
// scaling factor, the post-processed aggregate and the per-round error term
// that enters the convergence bound.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "otafl/channel.hpp"
#include "otafl/errors.hpp"

namespace otafl {

struct AirCompConfig {
  double p_max = 1.0;
  double sigma2 = 1.067e-5;
  double eta = 1.0;

  void validate() const {
    detail::require<InvalidArgument>(p_max > 0.0, "aircomp: p_max must be > 0");
    detail::require<InvalidArgument>(sigma2 >= 0.0, "aircomp: sigma2 must be >= 0");
    detail::require<InvalidArgument>(eta > 0.0, "aircomp: eta must be > 0");
  }
};

/// Receive combining vector m.
struct Beamformer {
  Eigen::VectorXcd weights;

  double norm() const { return weights.norm(); }
  bool degenerate(double tolerance) const { return !(weights.norm() >= tolerance); }
};

using TransmitCoeffs = std::vector<cplx>;

/// Relative guard: |m^H h| < tol * |m| * |h| is treated as a null.
inline constexpr double kDegeneracyTolerance = 1e-6;

/// m^H h
inline cplx effective_gain(const Beamformer& m, const Eigen::VectorXcd& h) {
  return m.weights.dot(h);
}

namespace detail {

inline void check_shapes(const Beamformer& m, const ChannelSet& channels) {
  require<InvalidArgument>(channels.n_users() > 0, "aircomp: no users");
  for (const auto& h : channels.per_user) {
    require<InvalidArgument>(h.size() == m.weights.size(),
                             "aircomp: beamformer / channel length mismatch");
  }
}

inline void check_nondegenerate(const Beamformer& m, const ChannelSet& channels) {
  check_shapes(m, channels);
  const double mnorm = m.norm();
  for (std::size_t k = 0; k < channels.n_users(); ++k) {
    const auto& h = channels.per_user[k];
    const double g = std::abs(effective_gain(m, h));
    if (!(g > kDegeneracyTolerance * mnorm * h.norm()) || g == 0.0) {
      throw DegenerateChannel("aircomp: |m^H h_k| vanishes for user " + std::to_string(k));
    }
  }
}

}  // namespace detail

/// p_k = sqrt(eta) (m^H h_k)^* / |m^H h_k|^2, so that m^H p_k h_k / sqrt(eta) = 1.
inline TransmitCoeffs zf_coeffs(const Beamformer& m, const ChannelSet& channels, double eta) {
  detail::require<InvalidArgument>(eta > 0.0, "zf_coeffs: eta must be > 0");
  detail::check_nondegenerate(m, channels);
  TransmitCoeffs out;
  out.reserve(channels.n_users());
  for (const auto& h : channels.per_user) {
    const cplx g = effective_gain(m, h);
    out.push_back(std::sqrt(eta) * std::conj(g) / std::norm(g));
  }
  return out;
}

/// Largest eta for which every zero-forcing user respects the power budget.
inline double eta_max(const Beamformer& m, const ChannelSet& channels,
                      const std::vector<double>& model_sq_norms, double p_max,
                      Eigen::Index model_dim) {
  detail::check_nondegenerate(m, channels);
  detail::require<InvalidArgument>(model_sq_norms.size() == channels.n_users(),
                                   "eta_max: one squared norm per user expected");
  detail::require<InvalidArgument>(model_dim >= 1, "eta_max: model_dim must be >= 1");
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < channels.n_users(); ++k) {
    detail::require<InvalidArgument>(model_sq_norms[k] > 0.0,
                                     "eta_max: squared norms must be > 0");
    const double g2 = std::norm(effective_gain(m, channels.per_user[k]));
    best = std::min(best, static_cast<double>(model_dim) * p_max * g2 / model_sq_norms[k]);
  }
  return best;
}

/// (1/d) |p|^2 E||w||^2 <= p_max, with a 1e-9 relative slack for rounding.
inline bool power_check(cplx coeff, double model_sq_norm, Eigen::Index model_dim, double p_max) {
  const double used = std::norm(coeff) * model_sq_norm / static_cast<double>(model_dim);
  return used <= p_max * (1.0 + 1e-9);
}

/// Post-processed receive signal m^H y / (K sqrt(eta)) with y = sum_k p_k h_k w_k^T + Z.
///
/// Models ride on the real part of the channel symbols; the returned vector is
/// the full complex estimate so the noise term keeps its CN(0, sigma^2) power.
/// Callers take `.real()` for the model update.
inline Eigen::VectorXcd ota_aggregate(const Beamformer& m, const ChannelSet& channels,
                                      const TransmitCoeffs& coeffs,
                                      const std::vector<Eigen::VectorXd>& local_models,
                                      const AirCompConfig& config, Rng& rng) {
  config.validate();
  detail::check_shapes(m, channels);
  const std::size_t users = channels.n_users();
  detail::require<InvalidArgument>(coeffs.size() == users && local_models.size() == users,
                                   "ota_aggregate: one coefficient and model per user");
  const Eigen::Index dim = local_models.front().size();
  for (const auto& w : local_models) {
    detail::require<InvalidArgument>(w.size() == dim, "ota_aggregate: model length mismatch");
  }
  const double inv_sqrt_eta = 1.0 / std::sqrt(config.eta);
  const double inv_k = 1.0 / static_cast<double>(users);

  Eigen::VectorXcd out = Eigen::VectorXcd::Zero(dim);
  for (std::size_t k = 0; k < users; ++k) {
    const cplx a = inv_sqrt_eta * effective_gain(m, channels.per_user[k]) * coeffs[k];
    out += a * local_models[k].cast<cplx>();
  }
  const Eigen::Index n = m.weights.size();
  for (Eigen::Index j = 0; j < dim; ++j) {
    cplx acc{0.0, 0.0};
    for (Eigen::Index a = 0; a < n; ++a) {
      acc += std::conj(m.weights[a]) * complex_normal(rng, config.sigma2);
    }
    out[j] += acc * inv_sqrt_eta;
  }
  return out * inv_k;
}

/// Sum_k |m^H p_k h_k / sqrt(eta) - 1|^2.
inline double misalignment(const Beamformer& m, const ChannelSet& channels,
                           const TransmitCoeffs& coeffs, double eta) {
  detail::check_shapes(m, channels);
  detail::require<InvalidArgument>(coeffs.size() == channels.n_users(),
                                   "misalignment: one coefficient per user");
  const double inv_sqrt_eta = 1.0 / std::sqrt(eta);
  double total = 0.0;
  for (std::size_t k = 0; k < channels.n_users(); ++k) {
    total += std::norm(inv_sqrt_eta * effective_gain(m, channels.per_user[k]) * coeffs[k] - 1.0);
  }
  return total;
}

/// Per-round bound increment: misalignment weighted by l*Gamma/(2K^2) plus the
/// receiver-noise term l d sigma^2 |m|^2 / (2 K^2 eta).
inline double theta_t(const Beamformer& m, const ChannelSet& channels,
                      const TransmitCoeffs& coeffs, double eta, double smoothness,
                      double gamma_cap, Eigen::Index model_dim, double sigma2,
                      std::size_t n_users) {
  detail::require<InvalidArgument>(eta > 0.0, "theta_t: eta must be > 0");
  detail::require<InvalidArgument>(smoothness > 0.0, "theta_t: smoothness must be > 0");
  const double k2 = static_cast<double>(n_users) * static_cast<double>(n_users);
  const double mis = misalignment(m, channels, coeffs, eta);
  const double noise = smoothness * static_cast<double>(model_dim) * sigma2 *
                       m.weights.squaredNorm() / (2.0 * k2 * eta);
  return smoothness * gamma_cap / (2.0 * k2) * mis + noise;
}

/// max_k |m|^2 / |m^H h_k|^2 -- the part of the objective the beam and layout control.
inline double worst_user_ratio(const Beamformer& m, const ChannelSet& channels) {
  detail::check_nondegenerate(m, channels);
  const double m2 = m.weights.squaredNorm();
  double worst = 0.0;
  for (const auto& h : channels.per_user) {
    worst = std::max(worst, m2 / std::norm(effective_gain(m, h)));
  }
  return worst;
}

/// Theta_t after substituting zero-forcing and the largest feasible eta.
inline double reduced_objective(const Beamformer& m, const ChannelSet& channels,
                                double smoothness, double gamma_cap, double sigma2,
                                double p_max, std::size_t n_users) {
  const double k2 = static_cast<double>(n_users) * static_cast<double>(n_users);
  return smoothness * sigma2 * gamma_cap / (2.0 * k2 * p_max) * worst_user_ratio(m, channels);
}

}  // namespace otafl
