#include <gtest/gtest.h>

#include <cmath>

#include "otafl/env.hpp"

using namespace otafl;

namespace {

bool satisfies_constraints(const std::vector<double>& x, double aperture, double min_spacing) {
  for (std::size_t n = 0; n < x.size(); ++n) {
    if (!(x[n] >= 0.0 && x[n] <= aperture)) return false;
    if (n > 0 && !(x[n] - x[n - 1] > min_spacing)) return false;
  }
  return true;
}

Eigen::VectorXd uniform_vec(Eigen::Index n, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

}  // namespace

TEST(Reset, Deterministic) {
  MobilityConfig mob;
  Rng a(5), b(5);
  const auto x = reset(6, mob, a), y = reset(6, mob, b);
  EXPECT_EQ(x.distances, y.distances);
  EXPECT_EQ(x.aoas, y.aoas);
}

TEST(Reset, DistanceMeanAndRanges) {
  MobilityConfig mob;
  Rng rng(7);
  const int draws = 100000;
  double sum = 0.0;
  for (int i = 0; i < draws; ++i) {
    const auto s = reset(1, mob, rng);
    sum += s.distances[0];
    ASSERT_GE(s.distances[0], 20.0);
    ASSERT_LE(s.distances[0], 100.0);
    ASSERT_LE(std::abs(s.aoas[0]), std::numbers::pi / 2.0);
  }
  // Uniform on [20, 100]: mean 60, std 80/sqrt(12).
  const double se = 80.0 / std::sqrt(12.0) / std::sqrt(draws);
  EXPECT_LT(std::abs(sum / draws - 60.0), 3.0 * se);
}

TEST(Mobility, RandomWalkStaysInRange) {
  MobilityConfig mob;
  mob.kind = Mobility::random_walk;
  mob.walk_sigma_distance = 30.0;
  mob.walk_sigma_aoa = 1.0;
  Rng rng(8);
  EnvState s = reset(5, mob, rng);
  for (int t = 0; t < 2000; ++t) {
    s = advance_mobility(s, mob, rng);
    for (Eigen::Index k = 0; k < 5; ++k) {
      ASSERT_GE(s.distances[k], mob.d_min);
      ASSERT_LE(s.distances[k], mob.d_max);
      ASSERT_LE(std::abs(s.aoas[k]), std::numbers::pi / 2.0);
    }
  }
}

TEST(Mobility, RandomWalkIsLocal) {
  MobilityConfig mob;
  mob.kind = Mobility::random_walk;
  Rng rng(9);
  const EnvState s = reset(4, mob, rng);
  const EnvState n = advance_mobility(s, mob, rng);
  EXPECT_LT((n.distances - s.distances).cwiseAbs().maxCoeff(), 8.0 * mob.walk_sigma_distance);
}

TEST(EnvStateTest, PrefixIsNested) {
  Rng rng(1);
  const auto s = reset(10, MobilityConfig{}, rng);
  const auto p = s.prefix(6);
  EXPECT_EQ(p.n_users(), 6u);
  EXPECT_EQ(p.distances, s.distances.head(6));
  EXPECT_EQ(p.aoas, s.aoas.head(6));
}

TEST(DecodeAction, EqualRawGivesUniformSpacing) {
  // Equal weights w on N leading/inner segments and 0.5+floor on the tail.
  for (double r : {-1.0, -0.3, 0.0, 0.5, 1.0}) {
    const std::size_t n = 5;
    const auto x = decode_positions(Eigen::VectorXd::Constant(n, r), 8.0, 0.5);
    const double free_len = 8.0 - 4 * 0.5;
    const double w = (1.0 + r) / 2.0 + kGapFloor;
    const double seg = free_len * w / (n * w + 0.5 + kGapFloor);
    EXPECT_NEAR(x[0], seg, 1e-12);
    for (std::size_t i = 1; i < n; ++i) EXPECT_NEAR(x[i] - x[i - 1], 0.5 + seg, 1e-12);
    EXPECT_TRUE(satisfies_constraints(x, 8.0, 0.5));
  }
}

TEST(DecodeAction, FuzzConstraints) {
  Rng rng(10);
  std::size_t violations = 0;
  for (int trial = 0; trial < 100000; ++trial) {
    const std::size_t n = 1 + trial % 12;
    const RawAction raw{uniform_vec(2 * static_cast<Eigen::Index>(n), rng),
                        uniform_vec(static_cast<Eigen::Index>(n), rng)};
    const auto dec = decode_action(raw, 8.0, 0.5);
    violations += satisfies_constraints(dec.geometry.positions(), 8.0, 0.5) ? 0 : 1;
  }
  EXPECT_EQ(violations, 0u);
}

TEST(DecodeAction, TightApertureStillFeasible) {
  Rng rng(11);
  for (int trial = 0; trial < 10000; ++trial) {
    const RawAction raw{uniform_vec(2 * 16, rng), uniform_vec(16, rng)};
    const auto x = decode_positions(raw.pos_raw, 8.0, 0.5);  // (N-1) X0 = 7.5
    EXPECT_TRUE(satisfies_constraints(x, 8.0, 0.5));
  }
}

TEST(DecodeAction, InfeasibleConfiguration) {
  EXPECT_THROW(decode_positions(Eigen::VectorXd::Zero(17), 8.0, 0.5), ConfigError);
}

TEST(DecodeAction, ZeroBeamIsDegenerate) {
  const RawAction raw{Eigen::VectorXd::Zero(8), Eigen::VectorXd::Zero(4)};
  const auto dec = decode_action(raw, 8.0, 0.5);
  EXPECT_TRUE(dec.degenerate);
  Rng rng(1);
  const auto ch = sample_channel(RicianParams{}, {{50, 0.1}}, dec.geometry, rng);
  EXPECT_EQ(reward(dec.beam, ch, RewardConfig{}), RewardConfig{}.r1);
}

TEST(DecodeAction, BeamIsNormalized) {
  Rng rng(2);
  const RawAction raw{uniform_vec(8, rng), uniform_vec(4, rng)};
  const auto dec = decode_action(raw, 8.0, 0.5);
  EXPECT_NEAR(dec.beam.norm(), 1.0, 1e-14);
  EXPECT_NEAR(dec.beam.weights[1].real(), raw.beam_raw[2] / raw.beam_raw.norm(), 1e-14);
  EXPECT_NEAR(dec.beam.weights[1].imag(), raw.beam_raw[3] / raw.beam_raw.norm(), 1e-14);
}

TEST(RawActionTest, FlatRoundTrip) {
  Rng rng(3);
  const Eigen::VectorXd flat = uniform_vec(12, rng);
  EXPECT_EQ(RawAction::from_flat(flat).flat(), flat);
  EXPECT_THROW(RawAction::from_flat(Eigen::VectorXd::Zero(5)), InvalidArgument);
}

TEST(Reward, SingleAntennaIgnoresBeam) {
  Rng rng(4);
  const auto geom = fpa_layout(1, 8.0, 0.5);
  const auto ch = sample_channel(RicianParams{}, {{40, 0.2}, {80, -0.9}}, geom, rng);
  RewardConfig cfg;
  cfg.r1 = -1e300;
  double worst = 0.0;
  for (const auto& h : ch.per_user) worst = std::max(worst, 1.0 / std::norm(h[0]));
  for (cplx v : {cplx(1, 0), cplx(-0.3, 2.0), cplx(0, 1e-3)}) {
    Eigen::VectorXcd w(1);
    w[0] = v;
    EXPECT_NEAR(reward({w}, ch, cfg), cfg.r2 * worst, 1e-12 * std::abs(cfg.r2 * worst));
  }
}

TEST(Reward, ScaleAndPhaseInvariant) {
  Rng rng(5);
  const auto geom = fpa_layout(4, 8.0, 0.5);
  RewardConfig cfg;
  cfg.r1 = -1e300;
  for (int trial = 0; trial < 200; ++trial) {
    const auto ch = sample_channel(RicianParams{}, {{30, 0.3}, {70, -1.1}, {95, 0.8}}, geom, rng);
    Eigen::VectorXcd m(4);
    for (Eigen::Index i = 0; i < 4; ++i) m[i] = complex_normal(rng);
    m.normalize();
    const double base = reward({m}, ch, cfg);
    const cplx c = std::polar(0.01 + 5.0 * std::abs(complex_normal(rng)), 1.3 * trial);
    EXPECT_LT(std::abs(reward({c * m}, ch, cfg) - base), 1e-10 * std::abs(base));
    EXPECT_LE(base, 0.0);
  }
}

TEST(Reward, ProportionalToReducedObjective) {
  Rng rng(6);
  const auto geom = fpa_layout(4, 8.0, 0.5);
  RewardConfig cfg;
  cfg.r1 = -1e300;
  const double ell = 2.0, gamma = 3.0, sigma2 = 1e-3, pmax = 0.5;
  for (int trial = 0; trial < 100; ++trial) {
    const auto ch = sample_channel(RicianParams{}, {{30, 0.3}, {70, -1.1}}, geom, rng);
    Eigen::VectorXcd m(4);
    for (Eigen::Index i = 0; i < 4; ++i) m[i] = complex_normal(rng);
    m.normalize();
    const double obj = reduced_objective({m}, ch, ell, gamma, sigma2, pmax, 2);
    const double expected = cfg.r2 * obj / (ell * sigma2 * gamma / (2.0 * 4.0 * pmax));
    EXPECT_NEAR(reward({m}, ch, cfg), expected, 1e-10 * std::abs(expected));
  }
}

TEST(Reward, FlooredAtR1) {
  Eigen::VectorXcd m(2), h(2);
  m << 1.0, 0.0;
  h << 1e-12, 1.0;
  ChannelSet ch;
  ch.per_user = {h};
  EXPECT_EQ(reward({m}, ch, RewardConfig{}), RewardConfig{}.r1);
}

TEST(Step, ReproducibleAndMovesUsers) {
  EnvConfig cfg;
  Rng seed_rng(1);
  const EnvState s = reset(cfg.n_users, cfg.mobility, seed_rng);
  const RawAction raw{uniform_vec(8, seed_rng), uniform_vec(4, seed_rng)};
  Rng a(77), b(77);
  const auto x = step(s, raw, cfg, a);
  const auto y = step(s, raw, cfg, b);
  EXPECT_EQ(x.reward, y.reward);
  EXPECT_EQ(x.next.distances, y.next.distances);
  EXPECT_NE(x.next.distances, s.distances);
  EXPECT_LE(x.reward, 0.0);
  EXPECT_GE(x.reward, cfg.reward.r1);
}

TEST(Step, FpaIgnoresPositionEntries) {
  EnvConfig cfg;
  cfg.scenario = Scenario::fpa;
  Rng rng(2);
  const EnvState s = reset(cfg.n_users, cfg.mobility, rng);
  const Eigen::VectorXd beam = uniform_vec(8, rng);
  Rng a(3), b(3);
  const auto x = step(s, {beam, uniform_vec(4, rng)}, cfg, a);
  const auto y = step(s, {beam, uniform_vec(4, rng)}, cfg, b);
  EXPECT_EQ(x.reward, y.reward);
  EXPECT_EQ(x.decoded.geometry.positions(), fpa_layout(4, 8.0, 0.5).positions());
}

TEST(EnvConfigTest, Validation) {
  EnvConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.n_antennas = 17;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.n_antennas = 16;
  cfg.scenario = Scenario::fpa;  // 8/17 <= 0.5
  EXPECT_THROW(cfg.validate(), InfeasibleLayout);
  EXPECT_EQ(EnvConfig{}.state_dim(), 8);
  EXPECT_EQ(EnvConfig{}.action_dim(), 12);
}

TEST(EncodeState, Range) {
  Rng rng(12);
  MobilityConfig mob;
  for (int i = 0; i < 1000; ++i) {
    const auto v = encode_state(reset(3, mob, rng), mob);
    EXPECT_LE(v.cwiseAbs().maxCoeff(), 1.0 + 1e-12);
  }
}
