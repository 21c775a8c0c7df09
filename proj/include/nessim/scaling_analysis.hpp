#pragma once

// High-energy scaling: p~ = E^{-1/2} p, q~ = E^{-1/k2} q, r~ = E^{-1/k2} r,
// time in units of E^{1/k2 - 1/2}. Zero-temperature dissipation scans and
// pathwise tracking of the noisy dynamics by the deterministic one.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nessim/chain_model.hpp"
#include "nessim/ergodics.hpp"
#include "nessim/errors.hpp"
#include "nessim/linalg.hpp"
#include "nessim/parallel.hpp"
#include "nessim/random.hpp"
#include "nessim/sde_dynamics.hpp"

namespace nessim {

namespace detail {
inline void require_energy(double e, const char* what) {
  if (!(e > 0.0) || !std::isfinite(e)) throw DomainError(std::string(what) + ": E must be > 0");
}
}  // namespace detail

inline State rescale(const State& x, double energy, int k2) {
  detail::require_energy(energy, "rescale");
  State y = x;
  const double sp = std::pow(energy, -0.5);
  const double sq = std::pow(energy, -1.0 / k2);
  for (double& v : y.p()) v *= sp;
  for (double& v : y.q()) v *= sq;
  for (double& v : y.r()) v *= sq;
  for (double& v : y.s()) v *= sq;
  return y;
}

inline State unscale(const State& y, double energy, int k2) {
  detail::require_energy(energy, "unscale");
  State x = y;
  const double sp = std::sqrt(energy);
  const double sq = std::pow(energy, 1.0 / k2);
  for (double& v : x.p()) v *= sp;
  for (double& v : x.q()) v *= sq;
  for (double& v : x.r()) v *= sq;
  for (double& v : x.s()) v *= sq;
  return x;
}

/// Natural time scale E^{1/k2 - 1/2}.
inline double natural_time(double energy, int k2) { return std::pow(energy, 1.0 / k2 - 0.5); }

/// G~_E(x~) = |p~|^2/2 + sum_i a_k E^{k/k2 - 1} |.|^k over the potential terms
/// - lambda^2 E^{2/k2 - 1} (|q~_1|^2 + |q~_n|^2)/2 + E^{2/k2 - 1} (|r~|^2 + |s~|^2)/2.
inline double rescaled_energy(const PotentialSpec& spec, const ChainParams& params, const State& y, double energy) {
  detail::require_energy(energy, "rescaled_energy");
  const int k2 = detail::leading_exponent(spec.two_body);
  if (k2 < 2) throw DomainError("rescaled_energy: two-body potential has no leading term");
  auto scaled = [&](const std::vector<PotentialTerm>& terms) {
    std::vector<PotentialTerm> out(terms);
    for (auto& t : out) t.coefficient *= std::pow(energy, static_cast<double>(t.exponent) / k2 - 1.0);
    return out;
  };
  const PotentialSpec tilde{scaled(spec.one_body), scaled(spec.two_body)};
  const double aux_factor = std::pow(energy, 2.0 / k2 - 1.0);
  ChainParams prm = params;
  prm.lambda = params.lambda * std::sqrt(aux_factor);
  double aux = 0.0;
  for (double v : y.r()) aux += v * v;
  for (double v : y.s()) aux += v * v;
  return kinetic_energy(y) + potential_energy(tilde, prm, y.q()) + 0.5 * aux_factor * aux;
}

enum class SampleStatus { ok, no_dissipation, blowup };

inline const char* to_string(SampleStatus s) {
  switch (s) {
    case SampleStatus::ok: return "ok";
    case SampleStatus::no_dissipation: return "no_dissipation";
    case SampleStatus::blowup: return "blowup";
  }
  return "?";
}

struct DissipationSample {
  double energy = 0.0;
  int sample = 0;
  double g0 = 0.0;        // G at the sampled initial state
  double delta_g = 0.0;   // G(x(0)) - G(x(t_E))
  double t_e = 0.0;
  double dt = 0.0;
  std::int64_t steps = 0;
  double bath_loss = 0.0;        // gamma int r^2 dt, accumulated in the exact reservoir sub-steps
  double balance_error = 0.0;    // |delta_g - bath_loss|
  double max_increase = 0.0;     // max_k (G_{k+1} - G_k) / (1 + G_k)
  SampleStatus status = SampleStatus::ok;
  std::string message;
};

struct ScalingReport {
  std::vector<double> energies;
  std::vector<double> delta_g;  // geometric mean of delta G over the accepted samples at each E
  std::vector<DissipationSample> samples;
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  std::vector<double> residuals;
  double predicted_slope = 0.0;  // 3/k2 - 1/2
  int k2 = 0;
  bool fitted = false;
};

struct DissipationScanConfig {
  std::vector<double> energies;
  double tau = 1.0;
  int samples_per_energy = 8;
  ShellPlacement placement = ShellPlacement::interior;
  // dt at energy E before adjustment so that steps * dt = t_E exactly
  std::function<double(double)> dt_policy;
  std::uint64_t seed = 0;
  int threads = 1;
  Scheme scheme = Scheme::strang_split;
};

/// Zero-temperature runs of length t_E = tau E^{1/k2 - 1/2} from states with G = E.
/// Sample j uses the same random stream at every energy.
inline ScalingReport dissipation_scan(const Model& model, const DissipationScanConfig& cfg) {
  if (cfg.energies.empty()) throw DomainError("dissipation_scan: empty energy grid");
  if (!std::is_sorted(cfg.energies.begin(), cfg.energies.end()) ||
      std::adjacent_find(cfg.energies.begin(), cfg.energies.end()) != cfg.energies.end())
    throw DomainError("dissipation_scan: energies must be strictly increasing");
  if (!(cfg.tau > 0.0) || cfg.samples_per_energy < 1) throw DomainError("dissipation_scan: need tau > 0 and samples >= 1");
  ScalingReport rep;
  rep.k2 = detail::leading_exponent(model.spec.two_body);
  rep.predicted_slope = 3.0 / rep.k2 - 0.5;
  rep.energies = cfg.energies;
  Model cold = model;
  cold.params.t1 = 0.0;
  cold.params.tn = 0.0;
  const auto per_e = static_cast<std::size_t>(cfg.samples_per_energy);
  rep.samples.resize(cfg.energies.size() * per_e);
  auto policy = cfg.dt_policy ? cfg.dt_policy : [k2 = rep.k2](double e) { return suggested_dt(e, k2); };

  parallel_for(rep.samples.size(), cfg.threads, [&](std::size_t idx) {
    const std::size_t ei = idx / per_e;
    const std::size_t j = idx % per_e;
    auto& s = rep.samples[idx];
    s.energy = cfg.energies[ei];
    s.sample = static_cast<int>(j);
    Rng rng(derive_seed(cfg.seed, j));
    const State x0 = sample_energy_shell(cold.spec, cold.params, s.energy, rng, cfg.placement);
    s.t_e = cfg.tau * natural_time(s.energy, rep.k2);
    s.steps = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(s.t_e / policy(s.energy))));
    s.dt = s.t_e / static_cast<double>(s.steps);
    IntegratorConfig ic;
    ic.scheme = cfg.scheme;
    ic.dt = s.dt;
    try {
      Integrator integ(cold, x0, ic);
      s.g0 = integ.energy();
      double prev = s.g0;
      for (std::int64_t k = 0; k < s.steps; ++k) {
        integ.step();
        s.max_increase = std::max(s.max_increase, (integ.energy() - prev) / (1.0 + prev));
        prev = integ.energy();
      }
      s.delta_g = s.g0 - prev;
      s.bath_loss = -integ.bath_energy_change();
      s.balance_error = std::abs(s.delta_g - s.bath_loss);
      // energy not absorbed by the reservoirs is integration error, not dissipation
      if (!(s.delta_g > 0.0) || !(s.bath_loss > 1e-14 * s.g0)) {
        s.status = SampleStatus::no_dissipation;
        s.message = "no energy dissipated (initial state at or near a fixed point); excluded from the fit";
      }
    } catch (const BlowUp& e) {
      s.status = SampleStatus::blowup;
      s.message = e.what();
    }
  });

  std::vector<double> lx, ly;
  for (std::size_t ei = 0; ei < cfg.energies.size(); ++ei) {
    double logsum = 0.0;
    int count = 0;
    for (std::size_t j = 0; j < per_e; ++j) {
      const auto& s = rep.samples[ei * per_e + j];
      if (s.status != SampleStatus::ok) continue;
      lx.push_back(std::log(s.energy));
      ly.push_back(std::log(s.delta_g));
      logsum += std::log(s.delta_g);
      ++count;
    }
    rep.delta_g.push_back(count > 0 ? std::exp(logsum / count) : std::nan(""));
  }
  if (lx.size() >= 2 && lx.front() != lx.back()) {
    const auto fit = fit_line(lx, ly);
    rep.slope = fit.slope;
    rep.intercept = fit.intercept;
    rep.slope_stderr = fit.slope_stderr;
    rep.residuals = fit.residuals;
    rep.fitted = true;
  }
  return rep;
}

struct TrackingReport {
  double energy = 0.0;
  double t_e = 0.0;
  double dt = 0.0;
  double dq = 0.0;  // sup_t |q(t) - q0(t)|
  double dp = 0.0;
  double dr = 0.0;
  double omega_max = 0.0;  // sup_t |sqrt(2 gamma T) w(t)|
  double omega_threshold = 0.0;  // E^{1/(2 k2)}
  bool good_noise = false;       // omega_max <= omega_threshold
  bool in_shell = false;         // sup_t G(x(t)) < 2E along the noisy path
  // predicted scale factors of (dq, dp, dr)
  double scale_q = 0.0, scale_p = 0.0, scale_r = 1.0;
};

struct TrackingConfig {
  double tau = 1.0;
  double dt_factor = 1e-3;  // dt = dt_factor * E^{1/k2 - 1/2} before adjustment to t_E
  ShellPlacement placement = ShellPlacement::interior;
  Scheme scheme = Scheme::strang_split;
  // Seed of the initial state; the noise uses derive_seed(seed, 1).
  std::uint64_t seed = 0;
};

/// Runs the noisy and the zero-temperature dynamics from the same x0 with the
/// same dt and records the sup-norm deviations over [0, t_E].
inline TrackingReport tracking_deviation(const Model& model, double energy, const TrackingConfig& cfg) {
  detail::require_energy(energy, "tracking_deviation");
  TrackingReport rep;
  const int k2 = detail::leading_exponent(model.spec.two_body);
  rep.energy = energy;
  rep.t_e = cfg.tau * natural_time(energy, k2);
  rep.scale_q = std::pow(energy, 2.0 / k2 - 1.0);
  rep.scale_p = natural_time(energy, k2);
  rep.omega_threshold = std::pow(energy, 0.5 / k2);
  const auto steps = std::max<std::int64_t>(
      1, static_cast<std::int64_t>(std::ceil(rep.t_e / (cfg.dt_factor * natural_time(energy, k2)))));
  rep.dt = rep.t_e / static_cast<double>(steps);

  Rng rng(derive_seed(cfg.seed, 0));
  const State x0 = sample_energy_shell(model.spec, model.params, energy, rng, cfg.placement);
  Model cold = model;
  cold.params.t1 = 0.0;
  cold.params.tn = 0.0;
  IntegratorConfig noisy_cfg;
  noisy_cfg.scheme = cfg.scheme;
  noisy_cfg.dt = rep.dt;
  noisy_cfg.seed = derive_seed(cfg.seed, 1);
  IntegratorConfig cold_cfg = noisy_cfg;
  Integrator noisy(model, x0, noisy_cfg);
  Integrator det(cold, x0, cold_cfg);
  const auto& prm = model.params;
  const auto d = static_cast<std::size_t>(prm.d);
  auto sup_diff = [](std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
  };
  double sup_g = noisy.energy();
  for (std::int64_t k = 0; k < steps; ++k) {
    noisy.step();
    det.step();
    const auto& a = noisy.state();
    const auto& b = det.state();
    rep.dq = std::max(rep.dq, sup_diff(a.q(), b.q()));
    rep.dp = std::max(rep.dp, sup_diff(a.p(), b.p()));
    rep.dr = std::max(rep.dr, sup_diff(a.r(), b.r()));
    sup_g = std::max(sup_g, noisy.energy());
    const auto w = noisy.brownian();
    double om = 0.0;
    for (std::size_t c = 0; c < w.size(); ++c) {
      const double v = noisy.noise_amplitude(c < d ? 0 : 1) * w[c];
      om += v * v;
    }
    rep.omega_max = std::max(rep.omega_max, std::sqrt(om));
  }
  rep.good_noise = rep.omega_max <= rep.omega_threshold;
  rep.in_shell = sup_g < 2.0 * energy;
  return rep;
}

struct BoundMatrixRow {
  double t = 0.0;
  double value[3] = {0, 0, 0};  // e^{tM} (0,0,1)^T
  double bound[3] = {0, 0, 0};
  bool holds = false;
};

struct BoundMatrixReport {
  double rho = 0.0, lambda = 0.0, gamma = 0.0, alpha = 0.0;
  std::vector<BoundMatrixRow> rows;
  bool pass = false;
};

/// Componentwise check of e^{tM}(0,0,1)^T <= (1/2 (at)^2 e^{2 sqrt(rho) at}, at e^{2 sqrt(rho) at},
/// 1 + at + 1/2 (at)^2 e^{2 sqrt(rho) at}) with M = [[0,1,0],[rho,0,lambda],[0,lambda,gamma]]
/// and a = max(1, gamma + lambda).
inline BoundMatrixReport bound_matrix_check(double rho, double lambda, double gamma, std::span<const double> t_grid) {
  if (!(rho > 0.0) || !(lambda > 0.0) || !(gamma > 0.0)) throw DomainError("bound_matrix_check: rho, lambda, gamma must be > 0");
  BoundMatrixReport rep;
  rep.rho = rho;
  rep.lambda = lambda;
  rep.gamma = gamma;
  rep.alpha = std::max(1.0, gamma + lambda);
  Matrix m(3, 3);
  m(0, 1) = 1.0;
  m(1, 0) = rho;
  m(1, 2) = lambda;
  m(2, 1) = lambda;
  m(2, 2) = gamma;
  rep.pass = true;
  for (double t : t_grid) {
    if (!(t >= 0.0)) throw DomainError("bound_matrix_check: times must be >= 0");
    BoundMatrixRow row;
    row.t = t;
    const Matrix e = expm(m * t);
    const double at = rep.alpha * t;
    const double growth = std::exp(2.0 * std::sqrt(rho) * at);
    row.bound[0] = 0.5 * at * at * growth;
    row.bound[1] = at * growth;
    row.bound[2] = 1.0 + at + 0.5 * at * at * growth;
    row.holds = true;
    for (int i = 0; i < 3; ++i) {
      row.value[i] = e(static_cast<std::size_t>(i), 2);
      if (row.value[i] > row.bound[i] * (1.0 + 1e-12) + 1e-15) row.holds = false;
    }
    rep.pass = rep.pass && row.holds;
    rep.rows.push_back(row);
  }
  return rep;
}

}  // namespace nessim
