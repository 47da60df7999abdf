#pragma once

// Federated gradient descent on a synthetic least-squares task whose
// smoothness and PL constants are known exactly, plus the optimality-gap
// bound tracker that is checked against the measured gap each round.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "otafl/aircomp.hpp"
#include "otafl/channel.hpp"
#include "otafl/errors.hpp"

namespace otafl {

/// Per-user losses F_k(w) = ||A_k w - b_k||^2 / (2D); global loss is their mean.
struct TaskSpec {
  std::vector<Eigen::MatrixXd> features;  // A_k, D x d
  std::vector<Eigen::VectorXd> targets;   // b_k, length D
  Eigen::Index model_dim = 0;
  Eigen::Index samples_per_user = 0;
  double smoothness = 0.0;  // largest Hessian eigenvalue
  double pl_const = 0.0;    // smallest Hessian eigenvalue
  Eigen::VectorXd optimum;
  double optimal_loss = 0.0;

  std::size_t n_users() const { return features.size(); }

  double local_loss(std::size_t k, const Eigen::VectorXd& w) const {
    return (features[k] * w - targets[k]).squaredNorm() /
           (2.0 * static_cast<double>(samples_per_user));
  }

  Eigen::VectorXd local_gradient(std::size_t k, const Eigen::VectorXd& w) const {
    return features[k].transpose() * (features[k] * w - targets[k]) /
           static_cast<double>(samples_per_user);
  }

  double global_loss(const Eigen::VectorXd& w) const {
    double total = 0.0;
    for (std::size_t k = 0; k < n_users(); ++k) total += local_loss(k, w);
    return total / static_cast<double>(n_users());
  }

  Eigen::VectorXd global_gradient(const Eigen::VectorXd& w) const {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(model_dim);
    for (std::size_t k = 0; k < n_users(); ++k) g += local_gradient(k, w);
    return g / static_cast<double>(n_users());
  }

  Eigen::MatrixXd global_hessian() const {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(model_dim, model_dim);
    for (const auto& a : features) h += a.transpose() * a;
    return h / static_cast<double>(n_users() * samples_per_user);
  }

  double gap(const Eigen::VectorXd& w) const { return global_loss(w) - optimal_loss; }
};

/// Completes a task from raw data: exact l, mu from the Hessian spectrum,
/// w* from the normal equations.
inline TaskSpec finalize_task(std::vector<Eigen::MatrixXd> features,
                              std::vector<Eigen::VectorXd> targets) {
  using detail::require;
  require<InvalidArgument>(!features.empty() && features.size() == targets.size(),
                           "task: need matching, nonempty per-user data");
  TaskSpec task;
  task.model_dim = features.front().cols();
  task.samples_per_user = features.front().rows();
  for (std::size_t k = 0; k < features.size(); ++k) {
    require<InvalidArgument>(features[k].cols() == task.model_dim &&
                                 features[k].rows() == task.samples_per_user &&
                                 targets[k].size() == task.samples_per_user,
                             "task: inconsistent per-user shapes");
  }
  task.features = std::move(features);
  task.targets = std::move(targets);

  const Eigen::MatrixXd hessian = task.global_hessian();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(hessian);
  task.pl_const = eig.eigenvalues().minCoeff();
  task.smoothness = eig.eigenvalues().maxCoeff();
  require<InvalidArgument>(task.pl_const > 1e-10 * task.smoothness,
                           "task: global Hessian is rank deficient");

  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(task.model_dim);
  for (std::size_t k = 0; k < task.n_users(); ++k) {
    rhs += task.features[k].transpose() * task.targets[k];
  }
  rhs /= static_cast<double>(task.n_users() * task.samples_per_user);
  task.optimum = hessian.ldlt().solve(rhs);
  // One Newton refinement pulls ||grad F(w*)|| down to rounding level.
  task.optimum -= hessian.ldlt().solve(task.global_gradient(task.optimum));
  task.optimal_loss = task.global_loss(task.optimum);
  return task;
}

/// Least-squares task whose global Hessian has eigenvalues log-spaced on
/// [1, cond_number]. `heterogeneity` shifts each user's targets by an
/// independent offset of that standard deviation.
inline TaskSpec make_synthetic_task(std::size_t n_users, Eigen::Index samples, Eigen::Index dim,
                                    double cond_number, Rng& rng, double heterogeneity = 0.0) {
  using detail::require;
  require<InvalidArgument>(n_users >= 1, "task: need at least one user");
  require<InvalidArgument>(dim >= 1, "task: dim must be >= 1");
  require<InvalidArgument>(samples >= dim, "task: samples must be >= dim");
  require<InvalidArgument>(cond_number >= 1.0, "task: cond_number must be >= 1");

  std::normal_distribution<double> gauss(0.0, 1.0);
  constexpr int kMaxAttempts = 16;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::vector<Eigen::MatrixXd> raw(n_users, Eigen::MatrixXd(samples, dim));
    for (auto& a : raw) {
      for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = gauss(rng);
    }
    Eigen::MatrixXd h0 = Eigen::MatrixXd::Zero(dim, dim);
    for (const auto& a : raw) h0 += a.transpose() * a;
    h0 /= static_cast<double>(n_users * static_cast<std::size_t>(samples));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig0(h0);
    if (eig0.eigenvalues().minCoeff() <= 1e-8 * eig0.eigenvalues().maxCoeff()) continue;

    // Whiten the sample Hessian, then impose the target spectrum along a
    // random orthogonal basis.
    Eigen::MatrixXd basis(dim, dim);
    for (Eigen::Index i = 0; i < basis.size(); ++i) basis.data()[i] = gauss(rng);
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(basis).householderQ();
    Eigen::VectorXd spectrum(dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
      const double frac = dim == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(dim - 1);
      spectrum[i] = std::pow(cond_number, frac);
    }
    const Eigen::MatrixXd transform = eig0.operatorInverseSqrt() * q *
                                      spectrum.cwiseSqrt().asDiagonal() * q.transpose();

    Eigen::VectorXd w_true(dim);
    for (Eigen::Index i = 0; i < dim; ++i) w_true[i] = gauss(rng);
    std::vector<Eigen::MatrixXd> features;
    std::vector<Eigen::VectorXd> targets;
    for (auto& a : raw) {
      features.push_back(a * transform);
      Eigen::VectorXd b = features.back() * w_true;
      const double shift = heterogeneity * gauss(rng);
      for (Eigen::Index i = 0; i < samples; ++i) b[i] += 0.1 * gauss(rng) + shift;
      targets.push_back(std::move(b));
    }
    try {
      return finalize_task(std::move(features), std::move(targets));
    } catch (const InvalidArgument&) {
      continue;
    }
  }
  throw InvalidArgument("task: could not draw a full-rank design");
}

/// One full-batch gradient step on a user's local loss.
inline Eigen::VectorXd local_update(const Eigen::VectorXd& w, const Eigen::MatrixXd& features,
                                    const Eigen::VectorXd& targets, double learn_rate) {
  detail::require<InvalidArgument>(features.cols() == w.size() && features.rows() == targets.size(),
                                   "local_update: dimension mismatch");
  return w - learn_rate * (features.transpose() * (features * w - targets)) /
                 static_cast<double>(features.rows());
}

inline Eigen::VectorXd ideal_aggregate(const std::vector<Eigen::VectorXd>& models) {
  detail::require<InvalidArgument>(!models.empty(), "ideal_aggregate: no models");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(models.front().size());
  for (const auto& w : models) {
    detail::require<InvalidArgument>(w.size() == sum.size(), "ideal_aggregate: length mismatch");
    sum += w;
  }
  return sum / static_cast<double>(models.size());
}

/// psi^T * initial_gap + sum_t psi^(T-t) * theta_t, evaluated as the unrolled sum.
inline double bound_phi(double initial_gap, double psi, const std::vector<double>& thetas) {
  detail::require<InvalidArgument>(psi >= 0.0 && psi < 1.0, "bound_phi: psi must be in [0, 1)");
  const auto rounds = static_cast<int>(thetas.size());
  double total = std::pow(psi, rounds) * initial_gap;
  for (int t = 1; t <= rounds; ++t) {
    total += std::pow(psi, rounds - t) * thetas[static_cast<std::size_t>(t - 1)];
  }
  return total;
}

struct FLConfig {
  double learn_rate = 0.0;  // 0 selects 1/l from the task
  int rounds = 50;
  std::size_t n_users = 4;
};

/// Running optimality-gap bound Phi_t = psi Phi_{t-1} + Theta_t with Phi_0 the
/// initial gap, alongside the measured gap it must dominate.
class BoundTracker {
 public:
  static constexpr double kGammaMargin = 1.25;

  BoundTracker() = default;
  BoundTracker(double psi, double initial_gap, double smoothness, std::size_t n_users)
      : psi_(psi), initial_gap_(initial_gap), phi_(initial_gap), smoothness_(smoothness),
        n_users_(n_users) {
    detail::require<InvalidArgument>(psi >= 0.0 && psi < 1.0, "bound: psi must be in [0, 1)");
  }

  double psi() const { return psi_; }
  double initial_gap() const { return initial_gap_; }
  double phi() const { return phi_; }
  double gamma_cap() const { return gamma_cap_; }
  double max_sq_norm() const { return max_sq_norm_; }
  const std::vector<double>& theta_history() const { return theta_; }
  const std::vector<double>& phi_history() const { return phi_history_; }
  const std::vector<double>& measured_gap() const { return gap_; }
  const std::vector<bool>& degenerate_rounds() const { return degenerate_; }

  /// Folds this round's local-model norms into the running cap.
  void observe_norms(const std::vector<double>& sq_norms) {
    for (double s : sq_norms) max_sq_norm_ = std::max(max_sq_norm_, s);
    gamma_cap_ = kGammaMargin * max_sq_norm_;
  }

  /// Records a round from its two Theta components: misalignment sum (scaled
  /// by l Gamma / 2K^2) and the already-scaled noise term.
  void advance(double misalignment_sum, double noise_term, double measured_gap,
               bool degenerate = false) {
    misalignment_.push_back(misalignment_sum);
    noise_.push_back(noise_term);
    gamma_used_.push_back(gamma_cap_);
    degenerate_.push_back(degenerate);
    const double theta = theta_from_parts(misalignment_sum, noise_term, gamma_cap_);
    theta_.push_back(theta);
    phi_ = psi_ * phi_ + theta;
    phi_history_.push_back(phi_);
    gap_.push_back(measured_gap);
  }

  /// True when some realized ||w_k||^2 exceeded the cap in force when an
  /// earlier Theta was charged.
  bool cap_violated() const {
    return std::any_of(gamma_used_.begin(), gamma_used_.end(),
                       [&](double g) { return g < max_sq_norm_; });
  }

  /// Recharges every round with one cap (the final running cap) and replays
  /// the recursion.
  void rebound_with_final_cap() {
    phi_ = initial_gap_;
    for (std::size_t t = 0; t < theta_.size(); ++t) {
      gamma_used_[t] = gamma_cap_;
      theta_[t] = theta_from_parts(misalignment_[t], noise_[t], gamma_cap_);
      phi_ = psi_ * phi_ + theta_[t];
      phi_history_[t] = phi_;
    }
  }

  /// Fraction of rounds with measured gap <= Phi_t.
  double holds_fraction() const {
    if (gap_.empty()) return 1.0;
    std::size_t ok = 0;
    for (std::size_t t = 0; t < gap_.size(); ++t) ok += gap_[t] <= phi_history_[t] ? 1 : 0;
    return static_cast<double>(ok) / static_cast<double>(gap_.size());
  }

 private:
  double theta_from_parts(double mis, double noise, double gamma) const {
    const double k2 = static_cast<double>(n_users_) * static_cast<double>(n_users_);
    return smoothness_ * gamma / (2.0 * k2) * mis + noise;
  }

  double psi_ = 0.0;
  double initial_gap_ = 0.0;
  double phi_ = 0.0;
  double smoothness_ = 1.0;
  std::size_t n_users_ = 1;
  double gamma_cap_ = 0.0;
  double max_sq_norm_ = 0.0;
  std::vector<double> theta_;
  std::vector<double> phi_history_;
  std::vector<double> gap_;
  std::vector<double> misalignment_;
  std::vector<double> noise_;
  std::vector<double> gamma_used_;
  std::vector<bool> degenerate_;
};

/// What the communication side supplies for one round. When `eta` is empty
/// the largest power-feasible value for this round's models is used.
struct CommRound {
  Beamformer beam;
  ChannelSet channels;
  std::optional<double> eta;
};

using CommProvider = std::function<CommRound(int round, Rng& rng)>;

struct RoundRecord {
  int round = 0;
  double measured_gap = 0.0;
  double theta = 0.0;
  double phi_bound = 0.0;
  bool degenerate = false;
};

struct FLResult {
  std::vector<Eigen::VectorXd> models;  // global model after each round
  BoundTracker tracker;

  std::vector<RoundRecord> records() const {
    std::vector<RoundRecord> out;
    for (std::size_t t = 0; t < tracker.measured_gap().size(); ++t) {
      out.push_back({static_cast<int>(t + 1), tracker.measured_gap()[t], tracker.theta_history()[t],
                     tracker.phi_history()[t], static_cast<bool>(tracker.degenerate_rounds()[t])});
    }
    return out;
  }
};

/// Federated loop: broadcast, local step at every user, over-the-air
/// aggregation, then the bound recursion. A round whose zero-forcing fails is
/// skipped (model unchanged) and charged the all-misaligned Theta.
inline FLResult run_fl(const TaskSpec& task, const FLConfig& fl, const CommProvider& comm,
                       const AirCompConfig& aircomp, Rng& rng,
                       std::optional<Eigen::VectorXd> initial_model = std::nullopt) {
  detail::require<InvalidArgument>(fl.rounds >= 1, "run_fl: rounds must be >= 1");
  detail::require<InvalidArgument>(task.n_users() == fl.n_users, "run_fl: user count mismatch");
  const double learn_rate = fl.learn_rate > 0.0 ? fl.learn_rate : 1.0 / task.smoothness;
  const std::size_t users = task.n_users();
  const Eigen::Index dim = task.model_dim;
  const double k2 = static_cast<double>(users * users);

  Eigen::VectorXd w = initial_model.value_or(Eigen::VectorXd::Zero(dim));
  detail::require<InvalidArgument>(w.size() == dim, "run_fl: initial model length mismatch");

  const double psi = std::max(0.0, 1.0 - task.pl_const / task.smoothness);
  FLResult result;
  result.tracker = BoundTracker(psi, task.gap(w), task.smoothness, users);
  auto& tracker = result.tracker;

  for (int t = 1; t <= fl.rounds; ++t) {
    std::vector<Eigen::VectorXd> locals;
    std::vector<double> sq_norms;
    locals.reserve(users);
    for (std::size_t k = 0; k < users; ++k) {
      locals.push_back(local_update(w, task.features[k], task.targets[k], learn_rate));
      sq_norms.push_back(std::max(locals.back().squaredNorm(), 1e-300));
    }
    tracker.observe_norms(sq_norms);

    CommRound round = comm(t, rng);
    try {
      AirCompConfig cfg = aircomp;
      cfg.eta = round.eta.value_or(0.0);
      if (!round.eta) cfg.eta = eta_max(round.beam, round.channels, sq_norms, aircomp.p_max, dim);
      const TransmitCoeffs coeffs = zf_coeffs(round.beam, round.channels, cfg.eta);
      w = ota_aggregate(round.beam, round.channels, coeffs, locals, cfg, rng).real();
      const double mis = misalignment(round.beam, round.channels, coeffs, cfg.eta);
      const double noise = task.smoothness * static_cast<double>(dim) * cfg.sigma2 *
                           round.beam.weights.squaredNorm() / (2.0 * k2 * cfg.eta);
      tracker.advance(mis, noise, task.gap(w));
    } catch (const DegenerateChannel&) {
      // Every user counted fully misaligned: sum_k |0 - 1|^2 = K.
      tracker.advance(static_cast<double>(users), 0.0, task.gap(w), true);
    }
    result.models.push_back(w);
  }
  if (tracker.cap_violated()) tracker.rebound_with_final_cap();
  return result;
}

}  // namespace otafl
