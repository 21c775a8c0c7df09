// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <unistd.h>

#include "oracles.hpp"

using namespace nessim;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string f(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Model chain(int n, int d, double lambda, double gamma, double t1, double tn, PotentialSpec spec) {
  ChainParams prm;
  prm.n = n;
  prm.d = d;
  prm.lambda = lambda;
  prm.gamma = gamma;
  prm.t1 = t1;
  prm.tn = tn;
  return make_model(std::move(spec), prm, false);
}

PotentialSpec harmonic() { return {{{0.5, 2}}, {{0.5, 2}}}; }
PotentialSpec quartic() { return {{{1.0, 4}, {0.5, 2}}, {{1.0, 4}}}; }

// the driven chain used by the drift, runaway and hitting checks
Model strong_quartic() { return chain(3, 1, 2.0, 4.0, 1.0, 2.0, quartic()); }

EnsembleConfig ensemble(double dt, std::uint64_t seed) {
  EnsembleConfig e;
  e.dt = dt;
  e.seed = seed;
  return e;
}

Outcome covariance_check(double t1, double tn, bool with_flux) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto model = chain(3, 1, 1.0, 1.0, t1, tn, harmonic());
  const auto lm = linearize(model);
  const auto sigma = stationary_covariance(lm);
  const Matrix q = lm.b * lm.b.transpose();
  const double resid = (lm.a * sigma + sigma * lm.a.transpose() + q).frobenius();
  IntegratorConfig ic;
  ic.dt = 0.01;
  ic.steps = 2000000;
  ic.seed = 7;
  const auto mom = stationary_second_moments(model, State(model.params), ic, 100000, 100);
  int failures = 0;
  double worst = 0.0;
  for (std::size_t i = 0; i < mom.dim; ++i)
    for (std::size_t j = i; j < mom.dim; ++j) {
      const auto& e = mom.at(i, j);
      const double err = std::abs(e.mean - sigma(i, j));
      const double tol = std::max(0.05 * std::abs(sigma(i, j)), 4.0 * e.stderr_);
      if (!(err <= tol)) ++failures;
      worst = std::max(worst, err / tol);
    }
  const double wall = seconds_since(t0);
  bool pass = failures == 0 && resid <= 1e-10 * q.frobenius() && wall < 120.0;
  std::string detail = std::to_string(failures) + " of " + std::to_string(mom.dim * (mom.dim + 1) / 2) +
                       " entries outside tolerance (worst error/tolerance " + f(worst) + "), " + f(wall, 3) + " s";
  if (with_flux) {
    const auto &l = mom.flux_left, &r = mom.flux_right, &s = mom.flux_sum;
    const bool flux_ok = l.mean > 0.0 && r.mean < 0.0 && std::abs(s.mean) < 3.0 * s.stderr_;
    pass = pass && flux_ok;
    detail += "; flux L " + f(l.mean) + " +- " + f(l.stderr_, 2) + ", R " + f(r.mean) + " +- " + f(r.stderr_, 2) +
              ", L+R " + f(s.mean, 2) + " (3 stderr " + f(3.0 * s.stderr_, 2) + ")";
  }
  return {pass, detail};
}

Outcome equipartition() {
  const auto model = chain(3, 1, 2.0, 4.0, 1.0, 1.0, quartic());
  IntegratorConfig ic;
  ic.dt = 0.03;
  ic.steps = 2000000;
  ic.seed = 11;
  const auto mom = stationary_second_moments(model, State(model.params), ic, 100000, 100);
  double worst = 0.0;
  std::string detail;
  for (std::size_t i = 0; i < 3; ++i) {
    const double v = mom.at(i, i).mean;
    worst = std::max(worst, std::abs(v - 1.0));
    detail += "p" + std::to_string(i + 1) + "^2 " + f(v) + ", ";
  }
  for (std::size_t i = 6; i < 8; ++i) {
    const double v = mom.at(i, i).mean;
    worst = std::max(worst, std::abs(v - 1.0));
    detail += "r" + std::to_string(i - 5) + "^2 " + f(v) + (i == 7 ? "" : ", ");
  }
  return {worst <= 0.03, detail + " (max deviation " + f(100.0 * worst, 3) + "%)"};
}

struct DissipationRun {
  ScalingReport rep;
  double wall = 0.0;
};

const DissipationRun& dissipation_run() {
  static const DissipationRun run = [] {
    const auto t0 = std::chrono::steady_clock::now();
    const auto model = chain(4, 1, 1.0, 1.0, 0.0, 0.0, quartic());
    DissipationScanConfig sc;
    sc.energies = {1e3, 1e4, 1e5, 1e6};
    sc.tau = 1.0;
    sc.samples_per_energy = 8;
    sc.placement = ShellPlacement::interior;
    sc.dt_policy = [](double e) { return suggested_dt(e, 4, 3e-6); };
    sc.seed = 21;
    DissipationRun r{dissipation_scan(model, sc), 0.0};
    r.wall = seconds_since(t0);
    return r;
  }();
  return run;
}

Outcome dissipation_exponent() {
  const auto& run = dissipation_run();
  int ok = 0;
  for (const auto& s : run.rep.samples) ok += s.status == SampleStatus::ok ? 1 : 0;
  const bool pass = run.rep.fitted && ok == 32 && std::abs(run.rep.slope - 0.25) <= 0.10 && run.wall < 300.0;
  return {pass, "slope " + f(run.rep.slope) + " +- " + f(run.rep.slope_stderr, 2) + ", " + std::to_string(ok) +
                    "/32 samples usable, " + f(run.wall, 3) + " s"};
}

Outcome dissipation_balance() {
  const auto& run = dissipation_run();
  double worst_increase = 0.0, worst_balance = 0.0;
  bool pass = !run.rep.samples.empty();
  for (const auto& s : run.rep.samples) {
    if (s.status != SampleStatus::ok || !(s.delta_g > 0.0)) {
      pass = false;
      continue;
    }
    worst_increase = std::max(worst_increase, s.max_increase);
    worst_balance = std::max(worst_balance, std::abs(s.delta_g - s.bath_loss) / s.delta_g);
  }
  pass = pass && worst_increase <= 1e-8 && worst_balance <= 1e-3;
  return {pass, "max relative increase of G " + f(worst_increase, 3) + ", max balance error " + f(worst_balance, 3) + " x dG"};
}

Outcome spectral_gap_fit() {
  const auto model = chain(2, 1, 2.0, 2.0, 1.0, 1.0, {{{2.25, 2}}, {{0.25, 2}}});
  const auto lm = linearize(model);
  const double gap = spectral_gap(lm);
  double top = -INFINITY;
  for (auto z : oracle::poly_roots(oracle::char_poly(lm.a))) top = std::max(top, z.real());
  IntegratorConfig ic;
  ic.dt = 0.05;
  ic.seed = 17;
  Integrator integ(model, State(model.params), ic);
  for (int k = 0; k < 10000; ++k) integ.step();
  std::vector<double> series;
  series.reserve(1000000);
  for (int k = 0; k < 10000000; ++k) {
    integ.step();
    if (k % 10 == 0) series.push_back(integ.state().q(0, 0));
  }
  const double lag_dt = 0.5;
  const auto acf = autocovariance(series, 28);
  const auto fit = fit_decay_rate(acf, lag_dt, 8, 24);
  const double rel = std::abs(fit.rate / gap - 1.0);
  const bool pass = rel <= 0.15 && std::abs(gap + top) < 1e-8;
  return {pass, "fitted rate " + f(fit.rate) + ", gap " + f(gap) + " (characteristic polynomial " + f(-top) + "), error " +
                    f(100.0 * rel, 3) + "%"};
}

Outcome hormander() {
  const auto model = chain(4, 2, 1.0, 1.0, 1.0, 2.0, quartic());
  Rng rng(19);
  int failures = 0, deepest = 0, min_rank = 1 << 30;
  for (int i = 0; i < 100; ++i) {
    const auto x = oracle::random_state(rng, model.params);
    const auto rep = hormander_rank(model, x.data(), 4);
    if (!rep.full() || rep.depth_reached > 4) ++failures;
    deepest = std::max(deepest, rep.depth_reached);
    min_rank = std::min(min_rank, rep.rank);
  }
  const bool pass = failures == 0 && model.params.state_size() == 20;
  return {pass, "min rank " + std::to_string(min_rank) + " of " + std::to_string(model.params.state_size()) +
                    ", deepest bracket level " + std::to_string(deepest) + ", " + std::to_string(failures) + " failures"};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome tracking() {
  const auto model = chain(4, 1, 1.0, 1.0, 1.0, 1.0, quartic());
  const double energies[2] = {1e4, 1e6};
  double mp[2], mq[2];
  for (int e = 0; e < 2; ++e) {
    std::vector<double> rp, rq;
    for (int j = 0; j < 16; ++j) {
      TrackingConfig tc;
      tc.dt_factor = 1e-3;
      tc.seed = derive_seed(5, static_cast<std::uint64_t>(j));
      const auto r = tracking_deviation(model, energies[e], tc);
      rp.push_back(r.dp / r.dr);
      rq.push_back(r.dq / r.dr);
    }
    mp[e] = median(rp);
    mq[e] = median(rq);
  }
  const double pred_p = std::pow(100.0, -0.25), pred_q = std::pow(100.0, -0.5);
  const double obs_p = mp[1] / mp[0], obs_q = mq[1] / mq[0];
  auto within = [](double obs, double pred) { return obs <= 3.0 * pred && obs >= pred / 3.0; };
  return {within(obs_p, pred_p) && within(obs_q, pred_q), "dp/dr ratio " + f(obs_p) + " (expected " + f(pred_p) + "), dq/dr ratio " +
                                                              f(obs_q) + " (expected " + f(pred_q) + ")"};
}

Outcome no_runaway() {
  const auto model = strong_quartic();
  Rng rng(23);
  const State x = sample_energy_shell(model.spec, model.params, 100.0, rng, ShellPlacement::full);
  const double theta = 0.5 / model.params.t_max();
  const auto rep = no_runaway_check(model, x, 1.0, theta, 1.0, 10000, ensemble(2e-3, 23));
  const bool pass = rep.n_samples == 10000 && rep.probability <= rep.bound + 3.0 * rep.stderr_;
  return {pass, "exceedance probability " + f(rep.probability) + " +- " + f(rep.stderr_, 2) + ", bound " + f(rep.bound)};
}

Outcome liapunov() {
  const auto model = strong_quartic();
  const double energy = 50.0 * model.params.t_max();
  int confirmed = 0, bounded = 0;
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    Rng rng(derive_seed(13, static_cast<std::uint64_t>(i)));
    const State x = sample_energy_shell(model.spec, model.params, energy, rng, ShellPlacement::full);
    const auto est = liapunov_drift(model, x, 1.0, 0.25, 1000, ensemble(2e-3, derive_seed(31, i)));
    confirmed += est.kappa_hat + 2.0 * est.stderr_ < 1.0 ? 1 : 0;
    bounded += est.kappa_hat <= std::exp(model.params.gamma * model.params.t_trace() * 0.25 * 1.0) + 2.0 * est.stderr_ ? 1 : 0;
    worst = std::max(worst, est.kappa_hat + 2.0 * est.stderr_);
  }
  return {confirmed == 20 && bounded == 20, std::to_string(confirmed) + "/20 states with kappa + 2 stderr < 1 (largest " + f(worst) +
                                                "), " + std::to_string(bounded) + "/20 within the growth bound"};
}

Outcome hitting() {
  const auto model = strong_quartic();
  IntegratorConfig ic;
  ic.dt = 2e-3;
  const double e0 = detail::pilot_energy_quantile(model, 41, ic, 50000, 500000, 10, 0.99);
  Rng rng(43);
  const State x0 = sample_energy_shell(model.spec, model.params, 10.0 * e0, rng, ShellPlacement::interior);
  const auto rep = hitting_times(model, x0, e0, 1000, 0.5, 1000000, ensemble(2e-3, 47));
  const bool pass = rep.tail_fitted && rep.tail_r2 >= 0.95 && std::isfinite(rep.exp_moment) && !rep.inconclusive &&
                    rep.censored_fraction() < 0.01;
  return {pass, "E0 " + f(e0) + ", tail R^2 " + f(rep.tail_r2) + ", E[exp(0.5 tau)] " + f(rep.exp_moment) + " +- " +
                    f(rep.exp_moment_stderr, 2) + ", censored " + std::to_string(rep.censored) + "/" + std::to_string(rep.n_samples)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / ("nessim_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  int compared = 0, differing = 0;
  bool ran = true;
  for (const char* name : {"tracking", "rank_quartic_2d", "liapunov", "hitting"}) {
    const fs::path cfg = fs::path(NESSIM_SOURCE_DIR) / "configs" / (std::string(name) + ".cfg");
    for (const char* run : {"a", "b"}) {
      const std::string cmd = std::string("\"") + NESSIM_CLI_PATH + "\" run -o \"" + (root / name / run).string() + "\" \"" +
                              cfg.string() + "\" > /dev/null 2>&1";
      const int status = std::system(cmd.c_str());
      ran = ran && WIFEXITED(status) && WEXITSTATUS(status) == 0;
    }
    for (const auto& entry : fs::directory_iterator(root / name / "a")) {
      if (entry.path().extension() != ".csv") continue;
      ++compared;
      const auto other = root / name / "b" / entry.path().filename();
      if (slurp(entry.path()) != slurp(other)) ++differing;
    }
  }
  fs::remove_all(root);
  return {ran && compared > 0 && differing == 0,
          std::to_string(compared) + " CSV files compared across two runs, " + std::to_string(differing) + " differ"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"harmonic equilibrium covariance", [] { return covariance_check(0.5, 0.5, false); }},
      {"harmonic steady state covariance and heat flux", [] { return covariance_check(1.0, 0.2, true); }},
      {"anharmonic equipartition", equipartition},
      {"zero-temperature dissipation exponent", dissipation_exponent},
      {"zero-temperature monotonicity and energy balance", dissipation_balance},
      {"spectral gap from correlation decay", spectral_gap_fit},
      {"bracket rank condition", hormander},
      {"tracking deviation scaling", tracking},
      {"no-runaway probability bound", no_runaway},
      {"Liapunov drift at high energy", liapunov},
      {"exponential moment of hitting times", hitting},
      {"byte-identical reruns", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out{false, ""};
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    if (!out.pass) ++failed;
    std::printf("%s %2zu %s: %s [%.1f s]\n", out.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), out.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
