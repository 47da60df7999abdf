#pragma once

// Position-dependent Rician fading between single-antenna users and a
// linear array of movable antennas at the access point.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "otafl/errors.hpp"

namespace otafl {

using cplx = std::complex<double>;
using Rng = std::mt19937_64;

/// Ordered antenna positions on the segment [0, aperture], in wavelengths.
class ArrayGeometry {
 public:
  ArrayGeometry(std::vector<double> positions, double aperture, double min_spacing)
      : positions_(std::move(positions)), aperture_(aperture), min_spacing_(min_spacing) {
    validate();
  }

  const std::vector<double>& positions() const { return positions_; }
  double aperture() const { return aperture_; }
  double min_spacing() const { return min_spacing_; }
  std::size_t size() const { return positions_.size(); }

  /// True when (n - 1) * min_spacing < aperture, i.e. some layout exists.
  static bool feasible(std::size_t n, double aperture, double min_spacing) {
    return n >= 1 && aperture > 0.0 && min_spacing >= 0.0 &&
           static_cast<double>(n - 1) * min_spacing < aperture;
  }

 private:
  void validate() const {
    using detail::require;
    require<InvalidArgument>(!positions_.empty(), "array geometry: no antennas");
    require<InfeasibleLayout>(feasible(positions_.size(), aperture_, min_spacing_),
                              "array geometry: (N-1)*X0 must be below the aperture");
    for (std::size_t n = 0; n < positions_.size(); ++n) {
      const double x = positions_[n];
      require<InfeasibleLayout>(std::isfinite(x) && x >= 0.0 && x <= aperture_,
                                "array geometry: position outside [0, X]");
      if (n > 0) {
        require<InfeasibleLayout>(x - positions_[n - 1] > min_spacing_,
                                  "array geometry: adjacent gap not above X0");
      }
    }
  }

  std::vector<double> positions_;
  double aperture_;
  double min_spacing_;
};

struct RicianParams {
  double kappa_r = 10.0;
  double loss_los_db = -2.14;
  double loss_nlos_db = -2.14;
  double exp_los = 2.09;
  double exp_nlos = 2.09;
  double wavelength = 1.0;

  static double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

  /// Amplitude applied to the steering vector at distance d.
  double los_amplitude(double distance) const {
    return std::sqrt(db_to_linear(loss_los_db) * std::pow(distance, -exp_los) * kappa_r /
                     (kappa_r + 1.0));
  }

  /// Amplitude applied to the unit-variance scattered component at distance d.
  double nlos_amplitude(double distance) const {
    return std::sqrt(db_to_linear(loss_nlos_db) * std::pow(distance, -exp_nlos) /
                     (kappa_r + 1.0));
  }

  void validate() const {
    using detail::require;
    require<InvalidArgument>(kappa_r >= 0.0, "rician: kappa_r must be >= 0");
    require<InvalidArgument>(wavelength > 0.0, "rician: wavelength must be > 0");
    require<InvalidArgument>(exp_los >= 0.0 && exp_nlos >= 0.0,
                             "rician: path-loss exponents must be >= 0");
  }
};

struct UserGeometry {
  double distance = 1.0;  // meters
  double aoa = 0.0;       // radians, [-pi/2, pi/2]
};

struct ChannelSet {
  std::vector<Eigen::VectorXcd> per_user;
  std::vector<UserGeometry> users;
  std::vector<double> positions;

  std::size_t n_users() const { return per_user.size(); }
  Eigen::Index n_antennas() const { return per_user.empty() ? 0 : per_user.front().size(); }
};

/// Unit-modulus plane-wave response exp(j 2pi/lambda x_n cos(aoa)).
inline Eigen::VectorXcd los_steering(const std::vector<double>& positions, double aoa,
                                     double wavelength) {
  detail::require<InvalidArgument>(!positions.empty(), "los_steering: empty positions");
  detail::require<InvalidArgument>(wavelength > 0.0, "los_steering: wavelength must be > 0");
  const double k = 2.0 * std::numbers::pi / wavelength * std::cos(aoa);
  Eigen::VectorXcd out(static_cast<Eigen::Index>(positions.size()));
  for (std::size_t n = 0; n < positions.size(); ++n) {
    out[static_cast<Eigen::Index>(n)] = std::polar(1.0, k * positions[n]);
  }
  return out;
}

/// CN(0, variance): real and imaginary parts each N(0, variance/2).
inline cplx complex_normal(Rng& rng, double variance = 1.0) {
  std::normal_distribution<double> gauss(0.0, std::sqrt(variance / 2.0));
  const double re = gauss(rng);
  const double im = gauss(rng);
  return {re, im};
}

/// Scattered components for every user, one CN(0,1) vector of length N each.
inline std::vector<Eigen::VectorXcd> draw_nlos(std::size_t n_users, Eigen::Index n_antennas,
                                               Rng& rng) {
  std::vector<Eigen::VectorXcd> draws(n_users, Eigen::VectorXcd(n_antennas));
  for (auto& g : draws) {
    for (Eigen::Index n = 0; n < n_antennas; ++n) g[n] = complex_normal(rng);
  }
  return draws;
}

/// Assembles h_k from fixed scattered draws; lets callers reuse the same
/// fading realization across several candidate layouts.
inline ChannelSet compose_channel(const RicianParams& params,
                                  const std::vector<UserGeometry>& users,
                                  const std::vector<double>& positions,
                                  const std::vector<Eigen::VectorXcd>& nlos) {
  detail::require<InvalidArgument>(nlos.size() >= users.size(),
                                   "compose_channel: missing scattered draws");
  ChannelSet out;
  out.users = users;
  out.positions = positions;
  out.per_user.reserve(users.size());
  for (std::size_t k = 0; k < users.size(); ++k) {
    const auto& u = users[k];
    detail::require<InvalidArgument>(nlos[k].size() == static_cast<Eigen::Index>(positions.size()),
                                     "compose_channel: scattered draw length mismatch");
    out.per_user.push_back(params.los_amplitude(u.distance) *
                               los_steering(positions, u.aoa, params.wavelength) +
                           params.nlos_amplitude(u.distance) * nlos[k]);
  }
  return out;
}

inline void validate_users(const std::vector<UserGeometry>& users) {
  detail::require<InvalidArgument>(!users.empty(), "channel: no users");
  for (const auto& u : users) {
    detail::require<InvalidArgument>(u.distance > 0.0, "channel: user distance must be > 0");
    detail::require<InvalidArgument>(std::abs(u.aoa) <= std::numbers::pi / 2.0 + 1e-12,
                                     "channel: aoa outside [-pi/2, pi/2]");
  }
}

inline ChannelSet sample_channel(const RicianParams& params,
                                 const std::vector<UserGeometry>& users,
                                 const ArrayGeometry& geometry, Rng& rng) {
  params.validate();
  validate_users(users);
  const auto nlos =
      draw_nlos(users.size(), static_cast<Eigen::Index>(geometry.size()), rng);
  return compose_channel(params, users, geometry.positions(), nlos);
}

/// Fixed-position baseline: x_n = n X / (N + 1).
inline ArrayGeometry fpa_layout(std::size_t n_antennas, double aperture, double min_spacing) {
  detail::require<InvalidArgument>(n_antennas >= 1, "fpa_layout: need at least one antenna");
  std::vector<double> positions(n_antennas);
  for (std::size_t n = 0; n < n_antennas; ++n) {
    positions[n] = aperture * static_cast<double>(n + 1) / static_cast<double>(n_antennas + 1);
  }
  if (n_antennas > 1 && aperture / static_cast<double>(n_antennas + 1) <= min_spacing) {
    throw InfeasibleLayout("fpa_layout: spacing X/(N+1) = " +
                           std::to_string(aperture / static_cast<double>(n_antennas + 1)) +
                           " does not exceed X0 = " + std::to_string(min_spacing));
  }
  return ArrayGeometry(std::move(positions), aperture, min_spacing);
}

}  // namespace otafl
