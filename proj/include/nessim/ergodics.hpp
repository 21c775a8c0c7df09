#pragma once

// Estimators over trajectories and ensembles: batch-means averages,
// autocovariances, exponential rate fits, boundary heat flux, Monte-Carlo
// drift of W = exp(theta G), hitting times of energy sublevel sets and the
// no-runaway exceedance probability.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nessim/chain_model.hpp"
#include "nessim/errors.hpp"
#include "nessim/parallel.hpp"
#include "nessim/random.hpp"
#include "nessim/sde_dynamics.hpp"

namespace nessim {

struct MeanEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::int64_t n = 0;
  std::int64_t burn_in = 0;
};

struct ObservableSeries {
  std::vector<double> times;
  std::vector<double> values;
  std::int64_t burn_in = 0;
  int batches = 100;
};

/// Streaming batch means: sample i of `total` goes to batch min(i / (total / batches), batches - 1).
class BatchAccumulator {
 public:
  explicit BatchAccumulator(std::int64_t total, int batches = 100) : total_(total), sums_(batches, 0.0), counts_(batches, 0) {
    if (batches < 2) throw DomainError("batch means need at least 2 batches");
    if (total < batches) throw DomainError("series too short: " + std::to_string(total) + " samples for " +
                                           std::to_string(batches) + " batches");
    size_ = total / batches;
  }

  void add(double v) {
    const auto b = std::min<std::int64_t>(seen_ / size_, static_cast<std::int64_t>(sums_.size()) - 1);
    sums_[static_cast<std::size_t>(b)] += v;
    ++counts_[static_cast<std::size_t>(b)];
    ++seen_;
  }

  std::int64_t count() const noexcept { return seen_; }

  MeanEstimate result() const {
    MeanEstimate est;
    est.n = seen_;
    double total = 0.0;
    for (double s : sums_) total += s;
    est.mean = seen_ > 0 ? total / static_cast<double>(seen_) : 0.0;
    const auto nb = sums_.size();
    double var = 0.0;
    std::size_t used = 0;
    for (std::size_t b = 0; b < nb; ++b) {
      if (counts_[b] == 0) continue;
      const double dev = sums_[b] / static_cast<double>(counts_[b]) - est.mean;
      var += dev * dev;
      ++used;
    }
    est.stderr_ = used > 1 ? std::sqrt(var / static_cast<double>(used - 1) / static_cast<double>(used)) : 0.0;
    return est;
  }

 private:
  std::int64_t total_;
  std::int64_t size_ = 1;
  std::int64_t seen_ = 0;
  std::vector<double> sums_;
  std::vector<std::int64_t> counts_;
};

/// Batch-means mean and standard error of values[burn_in..].
inline MeanEstimate time_average(std::span<const double> values, std::int64_t burn_in = 0, int batches = 100) {
  if (burn_in < 0 || burn_in >= static_cast<std::int64_t>(values.size()))
    throw DomainError("time_average: burn_in must be < series length");
  const auto n = static_cast<std::int64_t>(values.size()) - burn_in;
  BatchAccumulator acc(n, batches);
  for (auto i = static_cast<std::size_t>(burn_in); i < values.size(); ++i) acc.add(values[i]);
  auto est = acc.result();
  est.burn_in = burn_in;
  return est;
}

inline MeanEstimate time_average(const ObservableSeries& s) { return time_average(s.values, s.burn_in, s.batches); }

/// Biased autocovariance (normalised by N) for lags 0..max_lag.
inline std::vector<double> autocovariance(std::span<const double> values, std::size_t max_lag) {
  const std::size_t n = values.size();
  if (max_lag >= n) throw DomainError("autocovariance: max_lag must be < series length");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);
  std::vector<double> centred(n);
  for (std::size_t i = 0; i < n; ++i) centred[i] = values[i] - mean;
  std::vector<double> acf(max_lag + 1, 0.0);
  for (std::size_t lag = 0; lag <= max_lag; ++lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += centred[i] * centred[i + lag];
    acf[lag] = s / static_cast<double>(n);
  }
  return acf;
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  double r2 = 0.0;
  std::vector<double> residuals;
};

/// Ordinary least squares y = intercept + slope * x.
inline LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw DomainError("fit_line: need at least two points");
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw DomainError("fit_line: abscissae are all equal");
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double sse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - fit.intercept - fit.slope * x[i];
    fit.residuals.push_back(r);
    sse += r * r;
  }
  fit.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
  fit.slope_stderr = x.size() > 2 ? std::sqrt(sse / (n - 2.0) / sxx) : 0.0;
  return fit;
}

struct DecayFit {
  double rate = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double r2 = 0.0;
};

/// Fits acf[lag] ~ C exp(-rate * lag * lag_dt) on lags first..last (inclusive),
/// by least squares on log acf. CI is rate +- 1.96 standard errors.
inline DecayFit fit_decay_rate(std::span<const double> acf, double lag_dt, std::size_t first, std::size_t last) {
  if (last >= acf.size() || last < first + 2) throw DomainError("fit_decay_rate: window needs three lags inside the acf");
  std::vector<double> t, y;
  for (std::size_t k = first; k <= last; ++k) {
    if (!(acf[k] > 0.0)) throw DomainError("fit_decay_rate: non-positive value at lag " + std::to_string(k));
    t.push_back(static_cast<double>(k) * lag_dt);
    y.push_back(std::log(acf[k]));
  }
  const auto fit = fit_line(t, y);
  DecayFit out;
  out.rate = -fit.slope;
  out.ci_low = out.rate - 1.96 * fit.slope_stderr;
  out.ci_high = out.rate + 1.96 * fit.slope_stderr;
  out.r2 = fit.r2;
  return out;
}

/// Energy flow from the baths into the chain: (-lambda r_1 . p_1, -lambda r_n . p_n).
inline std::pair<double, double> boundary_flux(const State& x, const ChainParams& prm) {
  if (!x.has_r()) throw DomainError("heat flux needs the auxiliary r channels");
  const int d = prm.d;
  const int last = prm.n - 1;
  double left = 0.0, right = 0.0;
  const auto p = x.p();
  const auto r = x.r();
  for (int k = 0; k < d; ++k) {
    left += r[static_cast<std::size_t>(k)] * p[static_cast<std::size_t>(k)];
    right += r[static_cast<std::size_t>(d + k)] * p[static_cast<std::size_t>(last * d + k)];
  }
  return {-prm.lambda * left, -prm.lambda * right};
}

inline std::pair<std::vector<double>, std::vector<double>> heat_flux_series(const Trajectory& traj, const Model& model) {
  std::vector<double> left, right;
  left.reserve(traj.states.size());
  right.reserve(traj.states.size());
  for (const auto& x : traj.states) {
    const auto [l, r] = boundary_flux(x, model.params);
    left.push_back(l);
    right.push_back(r);
  }
  return {std::move(left), std::move(right)};
}

struct StationaryMoments {
  std::size_t dim = 0;
  std::vector<MeanEstimate> second;  // E[x_i x_j], i <= j, packed row by row
  bool has_flux = false;
  MeanEstimate flux_left, flux_right, flux_sum;
  std::int64_t burn_in = 0;
  std::int64_t samples = 0;

  const MeanEstimate& at(std::size_t i, std::size_t j) const {
    if (i > j) std::swap(i, j);
    return second[i * dim - i * (i + 1) / 2 + j];
  }
};

/// Time averages of x_i x_j (and of the boundary heat flux when r is present)
/// over `steps` steps after `burn_in` steps, with batch-means errors.
inline StationaryMoments stationary_second_moments(const Model& model, const State& x0, const IntegratorConfig& cfg,
                                                   std::int64_t burn_in, int batches = 100) {
  if (cfg.steps < batches) throw DomainError("stationary_second_moments: fewer steps than batches");
  StationaryMoments out;
  out.dim = x0.size();
  out.burn_in = burn_in;
  out.samples = cfg.steps;
  out.has_flux = x0.has_r();
  Integrator integ(model, x0, cfg);
  for (std::int64_t k = 0; k < burn_in; ++k) integ.step();
  const std::size_t m = out.dim;
  std::vector<BatchAccumulator> acc(m * (m + 1) / 2, BatchAccumulator(cfg.steps, batches));
  std::vector<BatchAccumulator> flux(out.has_flux ? 3 : 0, BatchAccumulator(cfg.steps, batches));
  for (std::int64_t k = 0; k < cfg.steps; ++k) {
    integ.step();
    const auto x = integ.state().data();
    std::size_t idx = 0;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = i; j < m; ++j) acc[idx++].add(x[i] * x[j]);
    if (out.has_flux) {
      const auto [l, r] = boundary_flux(integ.state(), model.params);
      flux[0].add(l);
      flux[1].add(r);
      flux[2].add(l + r);
    }
  }
  for (const auto& a : acc) out.second.push_back(a.result());
  if (out.has_flux) {
    out.flux_left = flux[0].result();
    out.flux_right = flux[1].result();
    out.flux_sum = flux[2].result();
  }
  for (auto& e : out.second) e.burn_in = burn_in;
  out.flux_left.burn_in = out.flux_right.burn_in = out.flux_sum.burn_in = burn_in;
  return out;
}

/// Settings shared by the Monte-Carlo ensembles; path i uses seed derive_seed(seed, i).
struct EnsembleConfig {
  Scheme scheme = Scheme::strang_split;
  double dt = 1e-3;
  std::uint64_t seed = 0;
  int threads = 1;
  double blowup_threshold = 1e12;
};

namespace detail {
inline IntegratorConfig path_config(const EnsembleConfig& ens, std::uint64_t stream) {
  IntegratorConfig cfg;
  cfg.scheme = ens.scheme;
  cfg.dt = ens.dt;
  cfg.seed = derive_seed(ens.seed, stream);
  cfg.blowup_threshold = ens.blowup_threshold;
  return cfg;
}

inline std::int64_t steps_for(double t, double dt) { return static_cast<std::int64_t>(std::llround(t / dt)); }

inline bool zero_temperature(const ChainParams& p) { return p.t1 == 0.0 && p.tn == 0.0; }

// Mean and standard error of independent samples; batch means when there are enough of them.
inline MeanEstimate sample_mean(std::span<const double> v) {
  if (v.size() >= 200) return time_average(v, 0, 100);
  MeanEstimate est;
  est.n = static_cast<std::int64_t>(v.size());
  for (double x : v) est.mean += x;
  est.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double s = 0.0;
    for (double x : v) s += (x - est.mean) * (x - est.mean);
    est.stderr_ = std::sqrt(s / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return est;
}
}  // namespace detail

struct DriftEstimate {
  State x;
  double s = 0.0;
  double theta = 0.0;
  double kappa_hat = 0.0;
  double stderr_ = 0.0;
  std::int64_t n_samples = 0;
  double growth_bound = 0.0;  // exp(rate * Tr(T) * theta * s)
  bool drift_confirmed() const noexcept { return kappa_hat + 2.0 * stderr_ < 1.0; }
};

/// Monte-Carlo estimate of E_x[exp(theta (G(X_s) - G(x)))].
inline DriftEstimate liapunov_drift(const Model& model, const State& x, double s, double theta, std::int64_t n_samples,
                                    const EnsembleConfig& ens) {
  const auto& prm = model.params;
  if (!(theta > 0.0)) throw DomainError("liapunov_drift: theta must be > 0");
  if (prm.t_max() > 0.0 && !(theta * prm.t_max() < 1.0))
    throw DomainError("liapunov_drift: theta must satisfy theta < 1 / max(T1, Tn)");
  if (!(s > 0.0) || n_samples < 1) throw DomainError("liapunov_drift: need s > 0 and n_samples >= 1");
  const bool cold = detail::zero_temperature(prm);
  const std::int64_t paths = cold ? 1 : n_samples;
  const double g0 = extended_energy(model, x);
  const auto steps = std::max<std::int64_t>(1, detail::steps_for(s, ens.dt));
  std::vector<double> w(static_cast<std::size_t>(paths));
  parallel_for(w.size(), ens.threads, [&](std::size_t i) {
    Integrator integ(model, x, detail::path_config(ens, i));
    for (std::int64_t k = 0; k < steps; ++k) integ.step();
    w[i] = std::exp(theta * (integ.energy() - g0));
  });
  const auto est = detail::sample_mean(w);
  DriftEstimate out;
  out.x = x;
  out.s = s;
  out.theta = theta;
  out.kappa_hat = est.mean;
  out.stderr_ = est.stderr_;
  out.n_samples = paths;
  out.growth_bound = std::exp(prm.bath_rate() * prm.t_trace() * theta * s);
  return out;
}

struct HittingReport {
  double e0 = 0.0;
  double a = 0.0;
  double dt = 0.0;
  std::int64_t n_samples = 0;
  std::vector<double> taus;  // uncensored hitting times, sorted
  std::int64_t censored = 0;
  double t_max = 0.0;
  // E[exp(a tau)], censored samples counted at t_max (a lower bound when censoring occurs)
  double exp_moment = 0.0;
  double exp_moment_stderr = 0.0;
  bool inconclusive = false;  // every sample censored
  // log-linear fit of the survival function between the median and the 99th percentile
  double tail_rate = 0.0;
  double tail_r2 = 0.0;
  bool tail_fitted = false;
  std::vector<std::pair<double, double>> survival;  // (t, P(tau > t)) at the distinct sample times
  double censored_fraction() const noexcept {
    return n_samples > 0 ? static_cast<double>(censored) / static_cast<double>(n_samples) : 0.0;
  }
};

/// exp(a) + (exp(a) - 1) exp(theta (G(x0) - E0)).
inline double hitting_moment_bound(double a, double theta, double g0, double e0) {
  return std::exp(a) + std::expm1(a) * std::exp(theta * (g0 - e0));
}

/// First grid times with G <= e0, censored after max_steps.
inline HittingReport hitting_times(const Model& model, const State& x0, double e0, std::int64_t n_samples, double a,
                                   std::int64_t max_steps, const EnsembleConfig& ens) {
  if (!(a > 0.0)) throw DomainError("hitting_times: a must be > 0");
  if (n_samples < 1 || max_steps < 1) throw DomainError("hitting_times: need n_samples >= 1 and max_steps >= 1");
  HittingReport rep;
  rep.e0 = e0;
  rep.a = a;
  rep.dt = ens.dt;
  rep.t_max = static_cast<double>(max_steps) * ens.dt;
  const double g0 = extended_energy(model, x0);
  const bool cold = detail::zero_temperature(model.params);
  const std::int64_t paths = cold ? 1 : n_samples;
  rep.n_samples = paths;
  std::vector<double> tau(static_cast<std::size_t>(paths), 0.0);
  std::vector<char> cens(static_cast<std::size_t>(paths), 0);
  if (g0 > e0) {
    parallel_for(tau.size(), ens.threads, [&](std::size_t i) {
      Integrator integ(model, x0, detail::path_config(ens, i));
      for (std::int64_t k = 1; k <= max_steps; ++k) {
        integ.step();
        if (integ.energy() <= e0) {
          tau[i] = integ.time();
          return;
        }
      }
      tau[i] = rep.t_max;
      cens[i] = 1;
    });
  }
  std::vector<double> moments;
  for (std::size_t i = 0; i < tau.size(); ++i) {
    moments.push_back(std::exp(a * tau[i]));
    if (cens[i]) ++rep.censored;
    else rep.taus.push_back(tau[i]);
  }
  std::sort(rep.taus.begin(), rep.taus.end());
  rep.inconclusive = rep.censored == paths;
  const auto mom = detail::sample_mean(moments);
  rep.exp_moment = mom.mean;
  rep.exp_moment_stderr = mom.stderr_;

  // survival curve over all samples (censored ones survive past every sample time)
  const auto total = static_cast<double>(paths);
  for (std::size_t i = 0; i < rep.taus.size(); ++i) {
    if (i + 1 < rep.taus.size() && rep.taus[i + 1] == rep.taus[i]) continue;
    rep.survival.emplace_back(rep.taus[i], (total - static_cast<double>(i + 1)) / total);
  }
  std::vector<double> ts, ys;
  if (!rep.taus.empty()) {
    const auto quantile = [&](double q) {
      const auto idx = static_cast<std::size_t>(std::ceil(q * total)) - 1;
      return idx < rep.taus.size() ? rep.taus[idx] : rep.t_max;
    };
    const double lo = quantile(0.5);
    const double hi = quantile(0.99);
    for (const auto& [t, surv] : rep.survival)
      if (t >= lo && t <= hi && surv > 0.0) {
        ts.push_back(t);
        ys.push_back(std::log(surv));
      }
  }
  if (ts.size() >= 3 && ts.front() < ts.back()) {
    const auto fit = fit_line(ts, ys);
    rep.tail_rate = -fit.slope;
    rep.tail_r2 = fit.r2;
    rep.tail_fitted = true;
  }
  return rep;
}

struct NoRunawayReport {
  double energy = 0.0;
  double t = 0.0;
  double theta = 0.0;
  double delta = 0.0;
  std::int64_t n_samples = 0;
  std::int64_t exceedances = 0;
  double probability = 0.0;
  double stderr_ = 0.0;
  double bound = 0.0;  // exp(rate Tr(T) theta t) exp(-delta theta E)
  bool pass = false;
};

/// Empirical P(sup_{s <= t} G(X_s) >= (1 + delta) G(x)) against its exponential bound.
inline NoRunawayReport no_runaway_check(const Model& model, const State& x, double t, double theta, double delta,
                                        std::int64_t n_samples, const EnsembleConfig& ens) {
  const auto& prm = model.params;
  if (!(theta > 0.0)) throw DomainError("no_runaway_check: theta must be > 0");
  if (prm.t_max() > 0.0 && theta * prm.t_max() > 1.0)
    throw DomainError("no_runaway_check: theta must satisfy theta <= 1 / max(T1, Tn)");
  if (n_samples < 1 || !(t > 0.0)) throw DomainError("no_runaway_check: need t > 0 and n_samples >= 1");
  NoRunawayReport rep;
  rep.energy = extended_energy(model, x);
  rep.t = t;
  rep.theta = theta;
  rep.delta = delta;
  rep.n_samples = n_samples;
  const double level = (1.0 + delta) * rep.energy;
  const auto steps = std::max<std::int64_t>(1, detail::steps_for(t, ens.dt));
  std::vector<char> hit(static_cast<std::size_t>(n_samples), 0);
  parallel_for(hit.size(), ens.threads, [&](std::size_t i) {
    Integrator integ(model, x, detail::path_config(ens, i));
    for (std::int64_t k = 0; k < steps; ++k) {
      integ.step();
      if (integ.energy() >= level) {
        hit[i] = 1;
        return;
      }
    }
  });
  for (char h : hit) rep.exceedances += h;
  const auto n = static_cast<double>(n_samples);
  rep.probability = static_cast<double>(rep.exceedances) / n;
  rep.stderr_ = std::sqrt(rep.probability * (1.0 - rep.probability) / n);
  rep.bound = std::exp(prm.bath_rate() * prm.t_trace() * theta * t - delta * theta * rep.energy);
  rep.pass = rep.probability <= rep.bound + 3.0 * rep.stderr_;
  return rep;
}

}  // namespace nessim
