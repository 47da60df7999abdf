#include <gtest/gtest.h>

#include <cmath>

#include "otafl/aircomp.hpp"

using namespace otafl;

namespace {

ChannelSet scalar_channels(std::vector<cplx> gains) {
  ChannelSet ch;
  for (cplx g : gains) {
    Eigen::VectorXcd h(1);
    h[0] = g;
    ch.per_user.push_back(h);
  }
  return ch;
}

Beamformer scalar_beam(cplx v) {
  Eigen::VectorXcd w(1);
  w[0] = v;
  return {w};
}

Eigen::VectorXcd random_vec(Eigen::Index n, Rng& rng) {
  Eigen::VectorXcd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = complex_normal(rng);
  return v;
}

struct Instance {
  Beamformer m;
  ChannelSet ch;
};

/// Random beam and channels with every |m^H h_k| above `floor`.
Instance random_instance(Eigen::Index n, std::size_t k, Rng& rng, double floor = 0.1) {
  for (;;) {
    Instance in{{random_vec(n, rng)}, {}};
    bool ok = true;
    for (std::size_t u = 0; u < k; ++u) {
      in.ch.per_user.push_back(random_vec(n, rng));
      ok = ok && std::abs(in.m.weights.dot(in.ch.per_user.back())) > floor;
    }
    if (ok) return in;
  }
}

}  // namespace

TEST(ZfCoeffs, RealScalar) {
  const auto p = zf_coeffs(scalar_beam(1.0), scalar_channels({2.0}), 1.0);
  EXPECT_NEAR(std::abs(p[0] - cplx(0.5, 0.0)), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(cplx(1.0) * p[0] * cplx(2.0) - 1.0), 0.0, 1e-15);
}

TEST(ZfCoeffs, PhaseCancellation) {
  const auto p = zf_coeffs(scalar_beam(1.0), scalar_channels({cplx(0, 1)}), 4.0);
  EXPECT_NEAR(std::abs(p[0] - cplx(0.0, -2.0)), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(0.5 * p[0] * cplx(0, 1) - 1.0), 0.0, 1e-15);
}

TEST(ZfCoeffs, AlignmentIdentityRandom) {
  Rng rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto in = random_instance(4, 3, rng);
    const auto p = zf_coeffs(in.m, in.ch, 2.0);
    for (std::size_t k = 0; k < 3; ++k) {
      const cplx a = in.m.weights.dot(in.ch.per_user[k]) * p[k] / std::sqrt(2.0);
      EXPECT_LT(std::abs(a - 1.0), 1e-10);
    }
  }
}

TEST(ZfCoeffs, DegenerateThrows) {
  Eigen::VectorXcd m(2), h(2);
  m << 1.0, 0.0;
  h << 0.0, 1.0;
  ChannelSet ch;
  ch.per_user = {h};
  EXPECT_THROW(zf_coeffs({m}, ch, 1.0), DegenerateChannel);
  EXPECT_THROW(zf_coeffs({Eigen::VectorXcd::Zero(2)}, ch, 1.0), DegenerateChannel);
  EXPECT_THROW(eta_max({m}, ch, {1.0}, 1.0, 1), DegenerateChannel);
}

TEST(EtaMax, WorkedExample) {
  // |g|^2 = [4, 1], d=10, p_max=2, norms [5, 5]: min(10*2*4/5, 10*2*1/5) = 4.
  const auto ch = scalar_channels({2.0, cplx(0, 1)});
  EXPECT_NEAR(eta_max(scalar_beam(1.0), ch, {5.0, 5.0}, 2.0, 10), 4.0, 1e-12);
}

TEST(EtaMax, SingleUserUnit) {
  EXPECT_NEAR(eta_max(scalar_beam(1.0), scalar_channels({1.0}), {1.0}, 1.0, 1), 1.0, 1e-15);
}

TEST(EtaMax, MonotoneInBudgetAndGain) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const auto in = random_instance(3, 4, rng);
    const std::vector<double> norms = {1.0, 2.0, 0.5, 3.0};
    const double base = eta_max(in.m, in.ch, norms, 1.0, 7);
    EXPECT_NEAR(eta_max(in.m, in.ch, norms, 2.0, 7), 2.0 * base, 1e-12 * base);
    ChannelSet stronger = in.ch;
    stronger.per_user[trial % 4] *= 1.5;
    EXPECT_GE(eta_max(in.m, stronger, norms, 1.0, 7), base * (1.0 - 1e-12));
  }
}

TEST(PowerCheck, Boundary) {
  EXPECT_TRUE(power_check(1.0, 10.0 * 2.0, 10, 2.0));
  EXPECT_FALSE(power_check(1.0, 10.0 * 2.0 * (1.0 + 1e-3), 10, 2.0));
}

TEST(PowerCheck, ZfAtEtaMaxAlwaysPasses) {
  Rng rng(9);
  std::uniform_real_distribution<double> u(0.1, 5.0);
  for (int trial = 0; trial < 500; ++trial) {
    const auto in = random_instance(4, 5, rng, 1e-3);
    std::vector<double> norms(5);
    for (auto& v : norms) v = u(rng);
    const double eta = eta_max(in.m, in.ch, norms, 0.7, 12);
    const auto p = zf_coeffs(in.m, in.ch, eta);
    for (std::size_t k = 0; k < 5; ++k) EXPECT_TRUE(power_check(p[k], norms[k], 12, 0.7));
  }
}

TEST(OtaAggregate, NoiselessZfIsExactAverage) {
  Rng rng(12);
  AirCompConfig cfg;
  cfg.sigma2 = 0.0;
  cfg.eta = 3.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto in = random_instance(4, 3, rng);
    std::vector<Eigen::VectorXd> models(3, Eigen::VectorXd(6));
    Eigen::VectorXd avg = Eigen::VectorXd::Zero(6);
    for (auto& w : models) {
      w.setRandom();
      avg += w / 3.0;
    }
    const auto out = ota_aggregate(in.m, in.ch, zf_coeffs(in.m, in.ch, cfg.eta), models, cfg, rng);
    EXPECT_LT((out.real() - avg).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT(out.imag().cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(OtaAggregate, MisalignedScalarDoubles) {
  Rng rng(1);
  AirCompConfig cfg;
  cfg.sigma2 = 0.0;
  Eigen::VectorXd w(3);
  w << 1.0, -2.0, 0.5;
  // m=1, h=1, p=2: received 2 w.
  const auto out = ota_aggregate(scalar_beam(1.0), scalar_channels({1.0}), {cplx(2.0)}, {w}, cfg, rng);
  EXPECT_LT((out.real() - 2.0 * w).norm(), 1e-15);
}

TEST(OtaAggregate, NoisePowerLaw) {
  Rng rng(33);
  const auto in = random_instance(4, 3, rng);
  AirCompConfig cfg;
  cfg.sigma2 = 1.0;
  cfg.eta = 2.5;
  const Eigen::Index d = 5;
  std::vector<Eigen::VectorXd> models(3, Eigen::VectorXd(d));
  Eigen::VectorXd avg = Eigen::VectorXd::Zero(d);
  for (auto& w : models) {
    w.setRandom();
    avg += w / 3.0;
  }
  const auto p = zf_coeffs(in.m, in.ch, cfg.eta);
  const int draws = 10000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < draws; ++i) {
    const double e = (ota_aggregate(in.m, in.ch, p, models, cfg, rng) - avg.cast<cplx>()).squaredNorm();
    sum += e;
    sumsq += e * e;
  }
  const double mean = sum / draws;
  const double se = std::sqrt((sumsq / draws - mean * mean) / draws);
  const double expected = d * cfg.sigma2 * in.m.weights.squaredNorm() / (9.0 * cfg.eta);
  EXPECT_LT(std::abs(mean - expected), 3.0 * se);
}

TEST(OtaAggregate, RejectsShapeMismatch) {
  Rng rng(1);
  AirCompConfig cfg;
  const auto ch = scalar_channels({1.0, 2.0});
  EXPECT_THROW(ota_aggregate(scalar_beam(1.0), ch, {1.0}, {Eigen::VectorXd::Ones(2), Eigen::VectorXd::Ones(2)},
                             cfg, rng),
               InvalidArgument);
  EXPECT_THROW(ota_aggregate(scalar_beam(1.0), ch, {1.0, 1.0},
                             {Eigen::VectorXd::Ones(2), Eigen::VectorXd::Ones(3)}, cfg, rng),
               InvalidArgument);
}

TEST(ThetaT, ZfLeavesOnlyNoise) {
  Rng rng(2);
  const auto in = random_instance(3, 4, rng);
  const double eta = 1.7, ell = 2.0, gamma = 5.0, sigma2 = 0.3;
  const auto p = zf_coeffs(in.m, in.ch, eta);
  const double expected = ell * 8 * sigma2 * in.m.weights.squaredNorm() / (2.0 * 16.0 * eta);
  EXPECT_NEAR(theta_t(in.m, in.ch, p, eta, ell, gamma, 8, sigma2, 4), expected, 1e-14);
  EXPECT_NEAR(theta_t(in.m, in.ch, p, eta, ell, gamma, 8, 0.0, 4), 0.0, 1e-12);
}

TEST(ThetaT, ZeroCoefficientsChargeEveryUser) {
  Rng rng(3);
  const auto in = random_instance(3, 4, rng);
  const TransmitCoeffs zero(4, cplx(0.0));
  // l Gamma / (2 K^2) * K = l Gamma / (2K)
  EXPECT_NEAR(theta_t(in.m, in.ch, zero, 1.0, 2.0, 5.0, 8, 0.0, 4), 2.0 * 5.0 / 8.0, 1e-14);
}

TEST(ThetaT, NonNegative) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto in = random_instance(3, 2, rng);
    TransmitCoeffs p = {complex_normal(rng), complex_normal(rng)};
    EXPECT_GE(theta_t(in.m, in.ch, p, 0.9, 1.0, 1.0, 3, 0.1, 2), 0.0);
  }
}

TEST(ReducedObjective, MatchesThetaAtZfAndEtaMax) {
  Rng rng(7);
  std::uniform_real_distribution<double> u(0.5, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 1 + trial % 5;
    const auto in = random_instance(4, k, rng);
    const double ell = u(rng), gamma = u(rng), sigma2 = 1e-3 * u(rng), pmax = u(rng);
    const Eigen::Index d = 3 + trial % 7;
    const double eta = eta_max(in.m, in.ch, std::vector<double>(k, gamma), pmax, d);
    const double via_theta = theta_t(in.m, in.ch, zf_coeffs(in.m, in.ch, eta), eta, ell, gamma, d, sigma2, k);
    const double reduced = reduced_objective(in.m, in.ch, ell, gamma, sigma2, pmax, k);
    EXPECT_LT(std::abs(via_theta - reduced), 1e-9 * std::max(1.0, reduced));
  }
}

TEST(ReducedObjective, ScaleInvariant) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const auto in = random_instance(4, 3, rng);
    const double base = reduced_objective(in.m, in.ch, 1.0, 1.0, 1.0, 1.0, 3);
    const cplx c = complex_normal(rng) * 3.0;
    const double scaled = reduced_objective({c * in.m.weights}, in.ch, 1.0, 1.0, 1.0, 1.0, 3);
    EXPECT_LT(std::abs(scaled - base), 1e-10 * base);
  }
}

TEST(ReducedObjective, ScalarWorkedExample) {
  // (1/2) * (1/4)
  EXPECT_NEAR(reduced_objective(scalar_beam(1.0), scalar_channels({2.0}), 1.0, 1.0, 1.0, 1.0, 1), 0.125, 1e-15);
}

TEST(ReducedObjective, DegenerateThrows) {
  EXPECT_THROW(reduced_objective(scalar_beam(1.0), scalar_channels({0.0}), 1.0, 1.0, 1.0, 1.0, 1),
               DegenerateChannel);
}
