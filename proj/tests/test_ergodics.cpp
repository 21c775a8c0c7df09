#include <gtest/gtest.h>

#include <cmath>

#include "nessim/ergodics.hpp"
#include "nessim/linear_oracle.hpp"
#include "oracles.hpp"

using namespace nessim;

namespace {

std::vector<double> coordinate_series(const Model& m, std::size_t coord, double dt, std::int64_t burn, std::int64_t steps,
                                      std::int64_t stride, std::uint64_t seed) {
  IntegratorConfig cfg;
  cfg.dt = dt;
  cfg.seed = seed;
  Integrator integ(m, State(m.params), cfg);
  for (std::int64_t k = 0; k < burn; ++k) integ.step();
  std::vector<double> out;
  for (std::int64_t k = 0; k < steps; ++k) {
    integ.step();
    if (k % stride == 0) out.push_back(integ.state().data()[coord]);
  }
  return out;
}

EnsembleConfig ensemble(double dt, std::uint64_t seed) {
  EnsembleConfig e;
  e.dt = dt;
  e.seed = seed;
  return e;
}

}  // namespace

TEST(TimeAverage, ConstantSeries) {
  const std::vector<double> v(1000, 2.5);
  const auto e = time_average(v);
  EXPECT_EQ(e.mean, 2.5);
  EXPECT_EQ(e.stderr_, 0.0);
  EXPECT_EQ(e.n, 1000);
}

TEST(TimeAverage, WhiteNoiseMeanWithinErrorBars) {
  Rng rng(1);
  const auto v = oracle::random_vector(rng, 1000000);
  const auto e = time_average(v);
  EXPECT_LT(std::abs(e.mean), 4.0 * e.stderr_);
  EXPECT_NEAR(e.stderr_, 1e-3, 2e-4);
}

TEST(TimeAverage, AffineEquivariance) {
  Rng rng(2);
  auto v = oracle::random_vector(rng, 5000);
  const auto e = time_average(v, 100);
  for (double& x : v) x = -3.0 * x + 7.0;
  const auto f = time_average(v, 100);
  EXPECT_NEAR(f.mean, -3.0 * e.mean + 7.0, 1e-12);
  EXPECT_NEAR(f.stderr_, 3.0 * e.stderr_, 1e-12);
  EXPECT_EQ(f.burn_in, 100);
}

TEST(TimeAverage, RejectsShortSeries) {
  const std::vector<double> v(150, 1.0);
  EXPECT_THROW(time_average(v, 100), DomainError);
  EXPECT_THROW(time_average(v, 150), DomainError);
}

TEST(BatchAccumulator, AgreesWithTimeAverage) {
  Rng rng(3);
  const auto v = oracle::random_vector(rng, 12345);
  BatchAccumulator acc(static_cast<std::int64_t>(v.size()));
  for (double x : v) acc.add(x);
  const auto a = acc.result();
  const auto b = time_average(v);
  EXPECT_DOUBLE_EQ(a.mean, b.mean);
  EXPECT_DOUBLE_EQ(a.stderr_, b.stderr_);
}

TEST(Autocovariance, LagZeroIsVarianceAndWhiteNoiseIsFlat) {
  Rng rng(4);
  const std::size_t n = 200000;
  const auto v = oracle::random_vector(rng, n);
  const auto acf = autocovariance(v, 10);
  double mean = 0.0, var = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= n;
  EXPECT_NEAR(acf[0], var, 1e-12);
  for (std::size_t k = 1; k <= 10; ++k) EXPECT_LT(std::abs(acf[k] / acf[0]), 3.0 / std::sqrt(double(n)));
  EXPECT_THROW(autocovariance(v, n), DomainError);
}

TEST(Autocovariance, DecoupledReservoirIsOrnsteinUhlenbeck) {
  const auto m = oracle::quartic_chain(3, 1, 0.0, 1.0, 1.3, 1.0);
  const double dt = 0.05;
  const auto series = coordinate_series(m, 6, dt, 1000, 2000000, 1, 5);
  const auto acf = autocovariance(series, 40);
  for (std::size_t k = 0; k <= 40; k += 10)
    EXPECT_NEAR(acf[k], 1.3 * std::exp(-1.0 * dt * static_cast<double>(k)), 0.05 * 1.3 * std::exp(-dt * k)) << "lag " << k;
}

TEST(Autocovariance, HarmonicChainMatchesOracle) {
  const auto m = oracle::harmonic_chain(2, 2.0, 2.0, 1.0, 1.0, 2.25, 0.25);
  const auto lm = linearize(m);
  const auto sigma = stationary_covariance(lm);
  const double dt = 0.05;
  const auto series = coordinate_series(m, 2, dt, 2000, 2000000, 4, 6);
  const double lag_dt = 4 * dt;
  const auto acf = autocovariance(series, 10);
  for (std::size_t k : {0u, 2u, 5u}) {
    const double ref = stationary_autocovariance(lm, sigma, lag_dt * k)(2, 2);
    EXPECT_NEAR(acf[k], ref, 0.1 * std::abs(ref)) << "lag " << k;
  }
}

TEST(FitDecayRate, ExactExponential) {
  std::vector<double> acf;
  for (int k = 0; k < 50; ++k) acf.push_back(3.0 * std::exp(-0.7 * 0.1 * k));
  const auto fit = fit_decay_rate(acf, 0.1, 5, 40);
  EXPECT_NEAR(fit.rate, 0.7, 0.01);
  EXPECT_NEAR(fit.r2, 1.0, 1e-12);
}

TEST(FitDecayRate, OrnsteinUhlenbeckRate) {
  const auto m = oracle::quartic_chain(3, 1, 0.0, 1.0, 1.0, 1.0);
  const double dt = 0.05;
  const auto series = coordinate_series(m, 6, dt, 1000, 2000000, 1, 7);
  const auto acf = autocovariance(series, 40);
  const auto fit = fit_decay_rate(acf, dt, 0, 30);
  EXPECT_NEAR(fit.rate, 1.0, 0.1);
  EXPECT_LE(fit.ci_low, fit.rate);
  EXPECT_GE(fit.ci_high, fit.rate);
}

TEST(FitDecayRate, RejectsNonPositiveWindow) {
  const std::vector<double> acf = {1.0, 0.5, 0.2, -0.1, 0.05};
  EXPECT_THROW(fit_decay_rate(acf, 1.0, 0, 4), DomainError);
  EXPECT_THROW(fit_decay_rate(acf, 1.0, 0, 1), DomainError);
}

TEST(HeatFlux, BoundaryTerms) {
  const auto m = oracle::quartic_chain(3, 2, 0.5, 1.0, 1.0, 1.0);
  State x(m.params);
  x.p(0, 0) = 2.0, x.r(0, 0) = 3.0;
  x.p(2, 1) = -1.0, x.r(1, 1) = 4.0;
  const auto [l, r] = boundary_flux(x, m.params);
  EXPECT_DOUBLE_EQ(l, -0.5 * 6.0);
  EXPECT_DOUBLE_EQ(r, 0.5 * 4.0);
  auto lm = m;
  lm.params.kind = ReservoirKind::langevin;
  EXPECT_THROW(boundary_flux(State(lm.params), lm.params), DomainError);
}

TEST(HeatFlux, SeriesFollowsTrajectory) {
  const auto m = oracle::quartic_chain(3, 1, 1.0, 1.0, 1.0, 2.0);
  IntegratorConfig cfg;
  cfg.steps = 100;
  cfg.seed = 3;
  const auto traj = simulate(m, State(m.params), cfg);
  const auto [left, right] = heat_flux_series(traj, m);
  ASSERT_EQ(left.size(), traj.states.size());
  for (std::size_t i = 0; i < left.size(); ++i) {
    EXPECT_EQ(left[i], boundary_flux(traj.states[i], m.params).first);
    EXPECT_EQ(right[i], boundary_flux(traj.states[i], m.params).second);
  }
}

TEST(HeatFlux, EquilibriumHasNoNetFlux) {
  const auto m = oracle::quartic_chain(3, 1, 2.0, 4.0, 1.0, 1.0);
  IntegratorConfig cfg;
  cfg.dt = 0.03;
  cfg.steps = 400000;
  cfg.seed = 8;
  const auto mom = stationary_second_moments(m, State(m.params), cfg, 20000);
  EXPECT_LT(std::abs(mom.flux_left.mean), 3.0 * mom.flux_left.stderr_);
  EXPECT_LT(std::abs(mom.flux_right.mean), 3.0 * mom.flux_right.stderr_);
}

TEST(HeatFlux, FlowsFromHotToColdAndMirrorsUnderReflection) {
  auto m = oracle::quartic_chain(3, 1, 2.0, 4.0, 2.0, 0.5);
  IntegratorConfig cfg;
  cfg.dt = 0.03;
  cfg.steps = 400000;
  cfg.seed = 9;
  const auto hot_left = stationary_second_moments(m, State(m.params), cfg, 20000);
  EXPECT_GT(hot_left.flux_left.mean, 3.0 * hot_left.flux_left.stderr_);
  EXPECT_LT(hot_left.flux_right.mean, -3.0 * hot_left.flux_right.stderr_);
  EXPECT_LT(std::abs(hot_left.flux_sum.mean), 3.0 * hot_left.flux_sum.stderr_);
  // the chain is symmetric, so swapping the temperatures mirrors the fluxes
  std::swap(m.params.t1, m.params.tn);
  const auto hot_right = stationary_second_moments(m, State(m.params), cfg, 20000);
  const double se = std::hypot(hot_left.flux_left.stderr_, hot_right.flux_right.stderr_);
  EXPECT_NEAR(hot_right.flux_right.mean, hot_left.flux_left.mean, 3.0 * se);
}

TEST(StationaryMoments, PackedIndexing) {
  const auto m = oracle::harmonic_chain(2, 1.0, 1.0, 1.0, 1.0);
  IntegratorConfig cfg;
  cfg.steps = 200;
  const auto mom = stationary_second_moments(m, State(m.params), cfg, 0);
  ASSERT_EQ(mom.second.size(), 6u * 7 / 2);
  EXPECT_EQ(&mom.at(1, 4), &mom.at(4, 1));
  EXPECT_EQ(&mom.at(5, 5), &mom.second.back());
  EXPECT_EQ(&mom.at(0, 1), &mom.second[1]);
  EXPECT_EQ(&mom.at(1, 1), &mom.second[6]);
}

TEST(LiapunovDrift, ZeroTemperatureIsSingleContractingPath) {
  Rng rng(10);
  const auto m = oracle::quartic_chain(3, 1, 2.0, 4.0, 0.0, 0.0);
  const auto x = sample_energy_shell(m.spec, m.params, 50.0, rng, ShellPlacement::full);
  const auto est = liapunov_drift(m, x, 1.0, 0.5, 100, ensemble(2e-3, 1));
  EXPECT_EQ(est.n_samples, 1);
  EXPECT_EQ(est.stderr_, 0.0);
  EXPECT_LE(est.kappa_hat, 1.0);
  const auto flow = deterministic_flow(m, x, 2e-3, 500);
  EXPECT_DOUBLE_EQ(est.kappa_hat, std::exp(0.5 * (flow.energy.back() - flow.energy.front())));
}

TEST(LiapunovDrift, RespectsGrowthBoundAndShortTimeLimit) {
  Rng rng(11);
  const auto m = oracle::quartic_chain(3, 1, 2.0, 4.0, 1.0, 2.0);
  for (double e : {0.5, 5.0}) {
    const auto x = sample_energy_shell(m.spec, m.params, e, rng, ShellPlacement::full);
    const auto est = liapunov_drift(m, x, 1.0, 0.25, 400, ensemble(2e-3, 2));
    EXPECT_LE(est.kappa_hat, est.growth_bound + 2.0 * est.stderr_);
    EXPECT_NEAR(est.growth_bound, std::exp(4.0 * 3.0 * 0.25 * 1.0), 1e-12);
    const auto tiny = liapunov_drift(m, x, 2e-3, 0.25, 400, ensemble(2e-3, 3));
    EXPECT_GE(tiny.kappa_hat, 0.9);
    EXPECT_LE(tiny.kappa_hat, 1.1);
  }
}

TEST(LiapunovDrift, ConfirmedAtHighEnergy) {
  Rng rng(12);
  const auto m = oracle::quartic_chain(3, 1, 2.0, 4.0, 1.0, 2.0);
  const auto x = sample_energy_shell(m.spec, m.params, 100.0, rng, ShellPlacement::full);
  const auto est = liapunov_drift(m, x, 1.0, 0.25, 300, ensemble(2e-3, 4));
  EXPECT_TRUE(est.drift_confirmed()) << est.kappa_hat << " +- " << est.stderr_;
}

TEST(LiapunovDrift, RejectsThetaOutOfRange) {
  const auto m = oracle::quartic_chain(3, 1, 2.0, 4.0, 1.0, 2.0);
  const State x(m.params);
  EXPECT_THROW(liapunov_drift(m, x, 1.0, 0.5, 10, ensemble(1e-2, 1)), DomainError);
  EXPECT_THROW(liapunov_drift(m, x, 1.0, 0.0, 10, ensemble(1e-2, 1)), DomainError);
}

TEST(HittingTimes, StartInsideTargetSet) {
  const auto m = oracle::quartic_chain(3, 1, 2.0, 4.0, 1.0, 2.0);
  const auto rep = hitting_times(m, State(m.params), 1.0, 50, 0.5, 1000, ensemble(1e-2, 1));
  ASSERT_EQ(rep.taus.size(), 50u);
  for (double t : rep.taus) EXPECT_EQ(t, 0.0);
  EXPECT_EQ(rep.censored, 0);
  EXPECT_DOUBLE_EQ(rep.exp_moment, 1.0);
}

TEST(HittingTimes, ZeroTemperatureIsDeterministic) {
  Rng rng(13);
  const auto m = oracle::quartic_chain(3, 1, 2.0, 4.0, 0.0, 0.0);
  const auto x = sample_energy_shell(m.spec, m.params, 50.0, rng, ShellPlacement::full);
  const auto rep = hitting_times(m, x, 5.0, 100, 0.5, 100000, ensemble(2e-3, 1));
  EXPECT_EQ(rep.n_samples, 1);
  ASSERT_EQ(rep.taus.size(), 1u);
  EXPECT_GT(rep.taus[0], 0.0);
}

TEST(HittingTimes, CensoringIsReportedNotDropped) {
  Rng rng(14);
  const auto m = oracle::quartic_chain(3, 1, 2.0, 4.0, 1.0, 2.0);
  const auto x = sample_energy_shell(m.spec, m.params, 100.0, rng, ShellPlacement::full);
  const auto rep = hitting_times(m, x, 1e-3, 20, 0.5, 10, ensemble(2e-3, 1));
  EXPECT_EQ(rep.censored, 20);
  EXPECT_TRUE(rep.inconclusive);
  EXPECT_TRUE(rep.taus.empty());
  EXPECT_DOUBLE_EQ(rep.exp_moment, std::exp(0.5 * 10 * 2e-3));
}

TEST(HittingTimes, MomentBelowClosedFormBound) {
  Rng rng(15);
  const auto m = oracle::quartic_chain(3, 1, 2.0, 4.0, 1.0, 2.0);
  const double e0 = 10.0;
  const auto x = sample_energy_shell(m.spec, m.params, 40.0, rng, ShellPlacement::full);
  const auto rep = hitting_times(m, x, e0, 200, 0.1, 200000, ensemble(2e-3, 5));
  EXPECT_EQ(rep.censored, 0);
  const double bound = hitting_moment_bound(0.1, 0.25, extended_energy(m, x), e0);
  EXPECT_TRUE(std::isfinite(rep.exp_moment));
  EXPECT_LE(rep.exp_moment, bound);
  for (std::size_t i = 1; i < rep.survival.size(); ++i) EXPECT_LT(rep.survival[i].second, rep.survival[i - 1].second);
}

TEST(NoRunaway, HugeMarginAndZeroTemperature) {
  Rng rng(16);
  auto m = oracle::quartic_chain(3, 1, 2.0, 4.0, 1.0, 2.0);
  const auto x = sample_energy_shell(m.spec, m.params, 100.0, rng, ShellPlacement::full);
  const auto big = no_runaway_check(m, x, 1.0, 0.5, 1e6, 200, ensemble(2e-3, 1));
  EXPECT_EQ(big.exceedances, 0);
  EXPECT_TRUE(big.pass);
  m.params.t1 = m.params.tn = 0.0;
  const auto cold = no_runaway_check(m, x, 1.0, 1.0, 0.01, 20, ensemble(2e-3, 1));
  EXPECT_EQ(cold.probability, 0.0);
  EXPECT_TRUE(cold.pass);
}

TEST(NoRunaway, BoundFormulaAndThetaRange) {
  Rng rng(17);
  const auto m = oracle::quartic_chain(3, 1, 2.0, 4.0, 1.0, 2.0);
  const auto x = sample_energy_shell(m.spec, m.params, 10.0, rng, ShellPlacement::full);
  const auto rep = no_runaway_check(m, x, 1.0, 0.5, 0.2, 500, ensemble(2e-3, 2));
  EXPECT_NEAR(rep.bound, std::exp(4.0 * 3.0 * 0.5 * 1.0) * std::exp(-0.2 * 0.5 * rep.energy), 1e-9 * rep.bound);
  EXPECT_TRUE(rep.pass);
  EXPECT_THROW(no_runaway_check(m, x, 1.0, 0.6, 0.2, 10, ensemble(2e-3, 2)), DomainError);
}

TEST(Ensembles, IndependentOfThreadCount) {
  Rng rng(18);
  const auto m = oracle::quartic_chain(3, 1, 2.0, 4.0, 1.0, 2.0);
  const auto x = sample_energy_shell(m.spec, m.params, 20.0, rng, ShellPlacement::full);
  auto ens = ensemble(2e-3, 9);
  const auto a = liapunov_drift(m, x, 0.5, 0.25, 64, ens);
  ens.threads = 4;
  const auto b = liapunov_drift(m, x, 0.5, 0.25, 64, ens);
  EXPECT_EQ(a.kappa_hat, b.kappa_hat);
  EXPECT_EQ(a.stderr_, b.stderr_);
}
