#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"

using namespace nessim;

namespace {

std::vector<double> unit(std::size_t m, std::size_t i, double scale = 1.0) {
  std::vector<double> v(m, 0.0);
  v[i] = scale;
  return v;
}

Model degenerate_chain() {
  ChainParams prm;
  prm.n = 3;
  prm.lambda = 1.0;
  prm.gamma = 1.0;
  prm.t1 = 1.0;
  prm.tn = 1.0;
  PotentialSpec spec;
  spec.one_body = {{1.0, 4}, {0.5, 2}};
  spec.two_body = {{1.0, 4}, {-3.0, 2}};
  return make_model(spec, prm, false);
}

}  // namespace

TEST(LieBracket, ConstantFieldsCommute) {
  const auto f = constant_vector_field("a", {1.0, 2.0, 0.0});
  const auto g = constant_vector_field("b", {0.0, -1.0, 5.0});
  const std::vector<double> x = {0.3, 0.1, -2.0};
  for (double v : lie_bracket(f, g, x)) EXPECT_EQ(v, 0.0);
}

TEST(LieBracket, ReservoirDirectionAgainstDrift) {
  const double lam = 0.7, gam = 1.9;
  const auto m = oracle::quartic_chain(3, 2, lam, gam, 1.0, 1.0);
  const std::size_t size = m.params.state_size();
  Rng rng(1);
  const auto x = oracle::random_state(rng, m.params);
  const auto x0 = drift_vector_field(m);
  for (std::size_t j = 0; j < 2; ++j) {
    const std::size_t r = 12 + j, p = j, q = 6 + j;
    const auto dr = constant_vector_field("dr", unit(size, r));
    const auto once = lie_bracket(dr, x0, x.data());
    auto expect = std::vector<double>(size, 0.0);
    expect[r] = -gam;
    expect[p] = -lam;
    EXPECT_LT(oracle::max_abs_diff(once, expect), 1e-14);
    const auto twice = lie_bracket(bracket_field(dr, x0), x0, x.data());
    expect.assign(size, 0.0);
    expect[r] = gam * gam - lam * lam;
    expect[p] = gam * lam;
    expect[q] = -lam;
    EXPECT_LT(oracle::max_abs_diff(twice, expect), 1e-13);
  }
}

TEST(LieBracket, ExactAgreesWithFiniteDifferences) {
  Rng rng(2);
  const auto m = oracle::quartic_chain(3, 2, 1.0, 1.0, 1.0, 1.0);
  const auto x0 = drift_vector_field(m);
  const auto fields = diffusion_vector_fields(m);
  const auto b1 = bracket_field(fields[0], x0);
  const auto b2 = bracket_field(b1, x0);
  const auto b3 = bracket_field(b2, x0);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = oracle::random_state(rng, m.params);
    for (const auto* f : {&b2, &b3}) {
      const auto exact = lie_bracket(*f, x0, x.data());
      const auto fd = lie_bracket_fd(*f, x0, x.data());
      double scale = 0.0;
      for (double v : exact) scale = std::max(scale, std::abs(v));
      EXPECT_LT(oracle::max_abs_diff(exact, fd), 1e-4 * scale) << f->label;
    }
  }
}

TEST(LieBracket, Antisymmetric) {
  Rng rng(3);
  const auto m = oracle::quartic_chain(4, 1, 1.0, 1.0, 1.0, 1.0);
  const auto x0 = drift_vector_field(m);
  const auto f = bracket_field(bracket_field(diffusion_vector_fields(m)[0], x0), x0);
  const auto x = oracle::random_state(rng, m.params);
  const auto ab = lie_bracket(f, x0, x.data());
  const auto ba = lie_bracket(x0, f, x.data());
  for (std::size_t i = 0; i < ab.size(); ++i) EXPECT_EQ(ab[i], -ba[i]);
}

TEST(LieBracket, RejectsNonFinitePoint) {
  const auto m = oracle::quartic_chain(3, 1, 1.0, 1.0, 1.0, 1.0);
  State x(m.params);
  x.q(1, 0) = NAN;
  const auto x0 = drift_vector_field(m);
  EXPECT_THROW(lie_bracket(x0, x0, x.data()), DomainError);
  EXPECT_THROW(hormander_rank(m, x.data()), DomainError);
}

TEST(HormanderRank, HarmonicChainIsFullRank) {
  Rng rng(4);
  const auto m = oracle::harmonic_chain(3, 1.0, 1.0, 1.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    const auto x = oracle::random_state(rng, m.params, 3.0);
    const auto rep = hormander_rank(m, x.data());
    EXPECT_EQ(rep.full_rank, 8);
    EXPECT_EQ(rep.rank, 8);
    EXPECT_LE(rep.depth_reached, 4);
    EXPECT_EQ(rep.witness.size(), 8u);
  }
}

TEST(HormanderRank, AgreesWithKalmanRankForLinearModels) {
  const auto m = oracle::harmonic_chain(4, 1.0, 1.0, 1.0, 2.0, 1.0, 0.5, 2);
  const auto rep = hormander_rank(m, State(m.params).data(), 6);
  EXPECT_EQ(rep.rank, controllability_rank(linearize(m)));
}

TEST(HormanderRank, NoNoiseNoRank) {
  const auto m = oracle::quartic_chain(3, 1, 1.0, 1.0, 0.0, 0.0);
  const auto rep = hormander_rank(m, State(m.params).data());
  EXPECT_EQ(rep.rank, 0);
  EXPECT_EQ(rep.depth_reached, -1);
  EXPECT_FALSE(rep.full());
}

TEST(HormanderRank, OneColdBathStillSpansWithSymmetricCoupling) {
  Rng rng(5);
  const auto m = oracle::quartic_chain(3, 1, 1.0, 1.0, 1.0, 0.0);
  const auto x = oracle::random_state(rng, m.params);
  EXPECT_EQ(diffusion_vector_fields(m).size(), 1u);
  const auto rep = hormander_rank(m, x.data(), 6);
  EXPECT_LE(rep.rank, rep.full_rank);
  for (std::size_t k = 1; k < rep.rank_by_depth.size(); ++k) EXPECT_LE(rep.rank_by_depth[k - 1], rep.rank_by_depth[k]);
}

TEST(HormanderRank, RankGrowsWithDepthAndQuarticChainIsFull) {
  Rng rng(6);
  const auto m = oracle::quartic_chain(3, 2, 1.0, 1.0, 1.0, 2.0);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = oracle::random_state(rng, m.params);
    const auto rep = hormander_rank(m, x.data(), 4);
    EXPECT_TRUE(rep.full());
    EXPECT_LE(rep.depth_reached, 4);
    EXPECT_EQ(rep.rank_by_depth.size(), static_cast<std::size_t>(rep.depth_reached) + 1);
    for (std::size_t k = 1; k < rep.rank_by_depth.size(); ++k) EXPECT_LE(rep.rank_by_depth[k - 1], rep.rank_by_depth[k]);
  }
}

TEST(HormanderRank, DegenerateCouplingNeedsDeeperBrackets) {
  const auto m = degenerate_chain();
  EXPECT_EQ(infer_m0(m.spec), 1);
  State x(m.params);
  x.q(0, 0) = 1.0 / std::sqrt(2.0);
  x.q(2, 0) = -1.0 / std::sqrt(2.0);
  const auto rep = hormander_rank(m, x.data(), 6);
  EXPECT_TRUE(rep.full());
  EXPECT_GE(rep.depth_reached, 3);
  const auto shallow = hormander_rank(m, x.data(), 2);
  EXPECT_LT(shallow.rank, 8);
  State generic(m.params);
  generic.q(0, 0) = 0.3;
  generic.q(2, 0) = -1.1;
  const auto easy = hormander_rank(m, generic.data(), 6);
  EXPECT_TRUE(easy.full());
  EXPECT_LT(easy.depth_reached, rep.depth_reached);
}

TEST(ControlFlow, ZeroControlIsTheDeterministicFlow) {
  Rng rng(7);
  const auto m = oracle::quartic_chain(3, 1, 1.0, 1.0, 1.0, 1.0);
  const auto x0 = oracle::random_state(rng, m.params, 0.5);
  const State a = control_flow(m, [](double) { return std::vector<double>(2, 0.0); }, x0, 1e-3, 1.0);
  const auto b = deterministic_flow(m, x0, 2e-5, 50000);
  EXPECT_LT(oracle::max_abs_diff(a.data(), b.states.back().data()), 1e-8);
}

TEST(ControlFlow, ConstantControlOnDecoupledReservoir) {
  const auto m = oracle::quartic_chain(3, 1, 0.0, 1.5, 1.0, 1.0);
  State x0(m.params);
  x0.r(0, 0) = 0.4;
  x0.r(1, 0) = -2.0;
  const double t = 2.0;
  const std::vector<double> u = {3.0, -1.0};
  const State xt = control_flow(m, [&](double) { return u; }, x0, 1e-3, t);
  const double e = std::exp(-1.5 * t);
  EXPECT_NEAR(xt.r(0, 0), (1.0 - e) * u[0] / 1.5 + e * 0.4, 1e-10);
  EXPECT_NEAR(xt.r(1, 0), (1.0 - e) * u[1] / 1.5 + e * -2.0, 1e-10);
}

TEST(ControlFlow, LangevinControlsBoundaryMomenta) {
  auto m = oracle::harmonic_chain(2, 0.0, 1.0, 1.0, 1.0, 1.0, 0.5);
  m.params.kind = ReservoirKind::langevin;
  const State x0(m.params);
  const State xt = control_flow(m, [](double) { return std::vector<double>{1.0, 0.0}; }, x0, 1e-3, 1e-3);
  EXPECT_NEAR(xt.p(0, 0), 1e-3, 1e-8);
  EXPECT_LT(std::abs(xt.p(1, 0)), 1e-6 * xt.p(0, 0));
}

TEST(ControlFlow, ReportsBlowUpAndBadInput) {
  const auto m = oracle::quartic_chain(3, 1, 1.0, 1.0, 1.0, 1.0);
  const State x0(m.params);
  EXPECT_THROW(control_flow(m, [](double) { return std::vector<double>{1e9, 0.0}; }, x0, 1e-3, 1.0, 1e6), BlowUp);
  EXPECT_THROW(control_flow(m, [](double) { return std::vector<double>{0.0}; }, x0, 1e-3, 1.0), DomainError);
  EXPECT_THROW(control_flow(m, [](double) { return std::vector<double>(2, 0.0); }, x0, 0.0, 1.0), DomainError);
}
