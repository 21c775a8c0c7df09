#pragma once

// Experiment dispatch for the command-line runner: resolves a configuration
// file, runs one experiment, writes CSV artifacts and summary.json.
//
// Random streams: with S the [run] seed, the experiment uses
//   derive_seed(S, 1)  integrator noise of single-trajectory experiments
//   derive_seed(S, 2)  initial states (one sub-stream per state/sample)
//   derive_seed(S, 3)  ensemble paths (one sub-stream per state)
//   derive_seed(S, 4)  pilot runs

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "nessim/chain_model.hpp"
#include "nessim/config.hpp"
#include "nessim/ergodics.hpp"
#include "nessim/errors.hpp"
#include "nessim/hypoellipticity.hpp"
#include "nessim/linear_oracle.hpp"
#include "nessim/parallel.hpp"
#include "nessim/scaling_analysis.hpp"
#include "nessim/sde_dynamics.hpp"

namespace nessim {

inline constexpr const char* kVersion = "0.1.0";

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {"equilibrium", "ness",    "dissipation-scaling",
                                                 "tracking",    "liapunov", "hitting",
                                                 "rank",        "oracle-compare", "correlation"};
  return names;
}

namespace stream {
inline constexpr std::uint64_t noise = 1;
inline constexpr std::uint64_t initial = 2;
inline constexpr std::uint64_t ensemble = 3;
inline constexpr std::uint64_t pilot = 4;
}  // namespace stream

struct ExperimentConfig {
  std::string experiment;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string output_dir = "out";
  Model model;
  bool check_growth = true;
  IntegratorConfig integrator;
  std::int64_t burn_in = 0;
  // experiment section, resolved values in file order
  std::vector<std::pair<std::string, std::string>> options;
  std::string resolved_ini;
  nlohmann::ordered_json resolved_json;
  std::vector<std::string> warnings;

  // typed views of the experiment options, filled by load_config
  struct {
    int batches = 100;
    bool trajectory_csv = false;
    double rel_tol = 0.05;
    double sigma_tol = 4.0;
  } stationary;
  struct {
    std::vector<double> energies;
    double tau = 1.0;
    int samples = 8;
    ShellPlacement placement = ShellPlacement::interior;
    double dt_factor = 1e-2;
    double slope_tolerance = 0.1;
    double balance_tolerance = 1e-3;
    double monotone_tolerance = 1e-8;
  } dissipation;
  struct {
    std::vector<double> energies;
    int paths = 16;
    double tau = 1.0;
    double dt_factor = 1e-3;
    ShellPlacement placement = ShellPlacement::interior;
    double factor = 3.0;
  } tracking;
  struct {
    int states = 20;
    double energy = 0.0;
    double s = 1.0;
    double theta = 0.25;
    std::int64_t samples = 1000;
    ShellPlacement placement = ShellPlacement::full;
    double runaway_energy = 100.0;
    double runaway_delta = 1.0;
    double runaway_t = 1.0;
    double runaway_theta = 0.0;
    std::int64_t runaway_samples = 0;
  } liapunov;
  struct {
    double e0 = 0.0;  // 0: from a pilot run
    std::int64_t pilot_steps = 500000;
    std::int64_t pilot_burn_in = 50000;
    std::int64_t pilot_stride = 10;
    double quantile = 0.99;
    double start_factor = 10.0;
    std::int64_t samples = 1000;
    double a = 0.5;
    std::int64_t max_steps = 1000000;
    double theta = 0.25;
    ShellPlacement placement = ShellPlacement::interior;
  } hitting;
  struct {
    int points = 100;
    int depth = -1;
    double scale = 1.0;
  } rank;
  struct {
    int probes = 10;
    double flow_time = 1.0;
    double horizon = 1.0;
    double control_dt = 1e-3;
  } oracle;
  struct {
    std::string observable = "q_1_1";
    std::int64_t stride = 10;
    double max_lag = 14.0;
    double fit_start = 4.0;
    double fit_end = 12.0;
  } correlation;
};

namespace detail {

inline ShellPlacement placement_of(const std::string& s) {
  return s == "full" ? ShellPlacement::full : ShellPlacement::interior;
}

inline void emit_section(std::ostringstream& ini, nlohmann::ordered_json& js, const std::string& name,
                         const std::vector<std::pair<std::string, std::string>>& values) {
  ini << '[' << name << "]\n";
  auto& obj = js[name];
  obj = nlohmann::ordered_json::object();
  for (const auto& [k, v] : values) {
    ini << k << " = " << v << '\n';
    obj[k] = v;
  }
  ini << '\n';
}

inline void read_model(SectionReader& sec, ExperimentConfig& cfg) {
  auto& prm = cfg.model.params;
  prm.n = static_cast<int>(sec.integer("n", std::nullopt));
  if (prm.n < 2) sec.fail("n", "chain length must be >= 2");
  prm.d = static_cast<int>(sec.integer("d", 1));
  if (prm.d < 1) sec.fail("d", "space dimension must be >= 1");
  prm.max_dof = static_cast<int>(sec.integer("max_dof", 64));
  if (prm.n * prm.d > prm.max_dof) sec.fail("n", "n*d exceeds max_dof = " + std::to_string(prm.max_dof));
  prm.lambda = sec.real("lambda", std::nullopt);
  if (!(prm.lambda >= 0.0)) sec.fail("lambda", "coupling must be >= 0 (positivity invariant)");
  prm.gamma = sec.real("gamma", std::nullopt);
  if (!(prm.gamma > 0.0)) sec.fail("gamma", "relaxation rate must be > 0 (positivity invariant)");
  const std::string kind = sec.word("reservoir", std::string("ou1"), {"ou1", "ou2", "langevin"});
  prm.kind = kind == "ou2" ? ReservoirKind::ou2 : kind == "langevin" ? ReservoirKind::langevin : ReservoirKind::ou1;
  prm.sigma = sec.real("sigma", 0.0);
  if (!(prm.sigma >= 0.0)) sec.fail("sigma", "reservoir frequency must be >= 0 (positivity invariant)");
  if (prm.kind == ReservoirKind::ou2 && !(prm.sigma > 0.0)) sec.fail("sigma", "reservoir ou2 requires sigma > 0");
  prm.t1 = sec.real("t1", std::nullopt);
  if (!(prm.t1 >= 0.0)) sec.fail("t1", "temperature must be >= 0 (positivity invariant)");
  prm.tn = sec.real("tn", std::nullopt);
  if (!(prm.tn >= 0.0)) sec.fail("tn", "temperature must be >= 0 (positivity invariant)");
  cfg.model.spec.one_body = sec.potential("one_body");
  cfg.model.spec.two_body = sec.potential("two_body");
  cfg.check_growth = sec.boolean("check_growth", true);
}

inline void read_integrator(SectionReader& sec, ExperimentConfig& cfg) {
  auto& ic = cfg.integrator;
  const std::string scheme = sec.word("scheme", std::string("strang_split"), {"strang_split", "euler_maruyama"});
  ic.scheme = scheme == "euler_maruyama" ? Scheme::euler_maruyama : Scheme::strang_split;
  ic.dt = sec.real("dt", 0.01);
  if (!(ic.dt > 0.0)) sec.fail("dt", "must be > 0");
  ic.steps = sec.integer("steps", 100000);
  if (ic.steps < 0) sec.fail("steps", "must be >= 0");
  cfg.burn_in = sec.integer("burn_in", 0);
  if (cfg.burn_in < 0) sec.fail("burn_in", "must be >= 0");
  ic.thin = sec.integer("thin", 1);
  if (ic.thin < 1) sec.fail("thin", "must be >= 1");
  ic.blowup_threshold = sec.real("blowup_threshold", 1e12);
  if (ic.scheme == Scheme::euler_maruyama && ic.dt * cfg.model.params.bath_rate() >= 1.0)
    cfg.warnings.push_back("euler_maruyama with dt * gamma >= 1 is unstable for the bath variables");
}

inline void read_experiment(SectionReader& sec, ExperimentConfig& cfg) {
  const auto& e = cfg.experiment;
  const std::vector<std::string> placements = {"interior", "full"};
  auto positive = [&](const char* key, double v) {
    if (!(v > 0.0)) sec.fail(key, "must be > 0");
  };
  auto at_least = [&](const char* key, std::int64_t v, std::int64_t lo) {
    if (v < lo) sec.fail(key, "must be >= " + std::to_string(lo));
  };
  if (e == "equilibrium" || e == "ness") {
    auto& o = cfg.stationary;
    o.batches = static_cast<int>(sec.integer("batches", 100));
    at_least("batches", o.batches, 2);
    o.trajectory_csv = sec.boolean("trajectory_csv", false);
    o.rel_tol = sec.real("rel_tol", 0.05);
    o.sigma_tol = sec.real("sigma_tol", 4.0);
    if (cfg.integrator.steps < o.batches) throw ConfigError("[integrator] steps must be >= [" + e + "] batches");
  } else if (e == "dissipation-scaling") {
    auto& o = cfg.dissipation;
    o.energies = sec.real_list("energies", std::vector<double>{1e3, 1e4, 1e5, 1e6});
    for (double v : o.energies) positive("energies", v);
    if (!std::is_sorted(o.energies.begin(), o.energies.end()) ||
        std::adjacent_find(o.energies.begin(), o.energies.end()) != o.energies.end())
      sec.fail("energies", "must be strictly increasing");
    o.tau = sec.real("tau", 1.0);
    positive("tau", o.tau);
    o.samples = static_cast<int>(sec.integer("samples", 8));
    at_least("samples", o.samples, 1);
    o.placement = placement_of(sec.word("placement", std::string("interior"), placements));
    o.dt_factor = sec.real("dt_factor", 1e-2);
    positive("dt_factor", o.dt_factor);
    o.slope_tolerance = sec.real("slope_tolerance", 0.1);
    o.balance_tolerance = sec.real("balance_tolerance", 1e-3);
    o.monotone_tolerance = sec.real("monotone_tolerance", 1e-8);
  } else if (e == "tracking") {
    auto& o = cfg.tracking;
    o.energies = sec.real_list("energies", std::vector<double>{1e4, 1e6});
    for (double v : o.energies) positive("energies", v);
    o.paths = static_cast<int>(sec.integer("paths", 16));
    at_least("paths", o.paths, 1);
    o.tau = sec.real("tau", 1.0);
    positive("tau", o.tau);
    o.dt_factor = sec.real("dt_factor", 1e-3);
    positive("dt_factor", o.dt_factor);
    o.placement = placement_of(sec.word("placement", std::string("interior"), placements));
    o.factor = sec.real("factor", 3.0);
  } else if (e == "liapunov") {
    auto& o = cfg.liapunov;
    const double tmax = cfg.model.params.t_max();
    o.states = static_cast<int>(sec.integer("states", 20));
    at_least("states", o.states, 1);
    o.energy = sec.real("energy", 50.0 * (tmax > 0.0 ? tmax : 1.0));
    positive("energy", o.energy);
    o.s = sec.real("s", 1.0);
    positive("s", o.s);
    o.theta = sec.real("theta", 0.25);
    positive("theta", o.theta);
    if (tmax > 0.0 && !(o.theta * tmax < 1.0)) sec.fail("theta", "must satisfy theta < 1 / max(t1, tn)");
    o.samples = sec.integer("samples", 1000);
    at_least("samples", o.samples, 1);
    o.placement = placement_of(sec.word("placement", std::string("full"), placements));
    o.runaway_samples = sec.integer("runaway_samples", 0);
    at_least("runaway_samples", o.runaway_samples, 0);
    o.runaway_energy = sec.real("runaway_energy", 100.0);
    positive("runaway_energy", o.runaway_energy);
    o.runaway_delta = sec.real("runaway_delta", 1.0);
    positive("runaway_delta", o.runaway_delta);
    o.runaway_t = sec.real("runaway_t", 1.0);
    positive("runaway_t", o.runaway_t);
    o.runaway_theta = sec.real("runaway_theta", 0.5 / (tmax > 0.0 ? tmax : 1.0));
    positive("runaway_theta", o.runaway_theta);
    if (tmax > 0.0 && o.runaway_theta * tmax > 1.0) sec.fail("runaway_theta", "must satisfy theta <= 1 / max(t1, tn)");
  } else if (e == "hitting") {
    auto& o = cfg.hitting;
    o.e0 = sec.real("e0", 0.0);
    if (o.e0 < 0.0) sec.fail("e0", "must be >= 0 (0 selects a pilot run)");
    o.pilot_steps = sec.integer("pilot_steps", 500000);
    o.pilot_burn_in = sec.integer("pilot_burn_in", 50000);
    o.pilot_stride = sec.integer("pilot_stride", 10);
    at_least("pilot_stride", o.pilot_stride, 1);
    at_least("pilot_steps", o.pilot_steps, 1);
    o.quantile = sec.real("quantile", 0.99);
    if (!(o.quantile > 0.0 && o.quantile < 1.0)) sec.fail("quantile", "must lie in (0, 1)");
    o.start_factor = sec.real("start_factor", 10.0);
    if (!(o.start_factor > 1.0)) sec.fail("start_factor", "must be > 1");
    o.samples = sec.integer("samples", 1000);
    at_least("samples", o.samples, 1);
    o.a = sec.real("a", 0.5);
    positive("a", o.a);
    o.max_steps = sec.integer("max_steps", 1000000);
    at_least("max_steps", o.max_steps, 1);
    o.theta = sec.real("theta", 0.25);
    positive("theta", o.theta);
    o.placement = placement_of(sec.word("placement", std::string("interior"), placements));
  } else if (e == "rank") {
    auto& o = cfg.rank;
    o.points = static_cast<int>(sec.integer("points", 100));
    at_least("points", o.points, 1);
    o.depth = static_cast<int>(sec.integer("depth", infer_m0(cfg.model.spec) + 3));
    if (o.depth < 2 || o.depth > Jet::kMaxOrder) sec.fail("depth", "must lie in [2, 6]");
    o.scale = sec.real("scale", 1.0);
    positive("scale", o.scale);
  } else if (e == "oracle-compare") {
    auto& o = cfg.oracle;
    o.probes = static_cast<int>(sec.integer("probes", 10));
    at_least("probes", o.probes, 1);
    o.flow_time = sec.real("flow_time", 1.0);
    positive("flow_time", o.flow_time);
    o.horizon = sec.real("horizon", 1.0);
    positive("horizon", o.horizon);
    o.control_dt = sec.real("control_dt", 1e-3);
    positive("control_dt", o.control_dt);
  } else if (e == "correlation") {
    auto& o = cfg.correlation;
    o.observable = sec.word("observable", std::string("q_1_1"));
    const auto labels = state_labels(cfg.model.params);
    if (std::find(labels.begin(), labels.end(), o.observable) == labels.end())
      sec.fail("observable", "'" + o.observable + "' is not a state coordinate label");
    o.stride = sec.integer("stride", 10);
    at_least("stride", o.stride, 1);
    o.max_lag = sec.real("max_lag", 14.0);
    positive("max_lag", o.max_lag);
    o.fit_start = sec.real("fit_start", 4.0);
    o.fit_end = sec.real("fit_end", 12.0);
    if (!(o.fit_start >= 0.0 && o.fit_end > o.fit_start && o.fit_end <= o.max_lag))
      sec.fail("fit_end", "need 0 <= fit_start < fit_end <= max_lag");
  }
  cfg.options = sec.resolved();
}

}  // namespace detail

struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> output_dir;
};

/// Parses and validates a configuration document; throws ConfigError (or
/// DomainError for failed model assumptions).
inline ExperimentConfig load_config(const IniDocument& doc, const ConfigOverrides& over = {}) {
  ExperimentConfig cfg;
  SectionReader run(doc, "run");
  if (!run.present()) throw ConfigError("missing section [run]");
  cfg.experiment = run.word("experiment", std::nullopt, experiment_names());
  cfg.seed = run.unsigned_integer("seed", 0);
  cfg.threads = static_cast<int>(run.integer("threads", 1));
  if (cfg.threads < 1) run.fail("threads", "must be >= 1");
  cfg.output_dir = run.word("output_dir", std::string("out"));
  run.reject_unknown();

  for (const auto& s : doc.sections) {
    const bool known = s.name == "run" || s.name == "model" || s.name == "integrator" || s.name == cfg.experiment;
    if (!known) throw ConfigError("unknown section [" + s.name + "] for experiment " + cfg.experiment, s.line, 1);
  }

  SectionReader model(doc, "model");
  if (!model.present()) throw ConfigError("missing section [model]");
  detail::read_model(model, cfg);
  model.reject_unknown();

  SectionReader integ(doc, "integrator");
  detail::read_integrator(integ, cfg);
  integ.reject_unknown();

  SectionReader exp(doc, cfg.experiment);
  detail::read_experiment(exp, cfg);
  exp.reject_unknown();

  if (over.seed) cfg.seed = *over.seed;
  if (over.threads) cfg.threads = *over.threads;
  if (over.output_dir) cfg.output_dir = *over.output_dir;

  validate_params(cfg.model.params);
  if ((cfg.experiment == "oracle-compare") && !is_quadratic(cfg.model.spec))
    throw ConfigError("oracle-compare requires quadratic potentials (every exponent equal to 2)");
  const auto growth = validate_growth(cfg.model.spec, cfg.model.params);
  for (const auto& w : growth.warnings) cfg.warnings.push_back(w);
  if (cfg.check_growth && !growth.pass)
    throw ConfigError("growth assumption H1 fails: " + growth.reasons.front() +
                      " (set check_growth = false in [model] to override)");

  // resolved configuration, with overrides applied
  auto run_values = run.resolved();
  for (auto& [k, v] : run_values) {
    if (k == "seed") v = std::to_string(cfg.seed);
    if (k == "threads") v = std::to_string(cfg.threads);
    if (k == "output_dir") v = cfg.output_dir;
  }
  std::ostringstream ini;
  detail::emit_section(ini, cfg.resolved_json, "run", run_values);
  detail::emit_section(ini, cfg.resolved_json, "model", model.resolved());
  detail::emit_section(ini, cfg.resolved_json, "integrator", integ.resolved());
  detail::emit_section(ini, cfg.resolved_json, cfg.experiment, cfg.options);
  cfg.resolved_ini = ini.str();
  return cfg;
}

inline ExperimentConfig load_config_file(const std::string& path, const ConfigOverrides& over = {}) {
  return load_config(parse_ini_file(path), over);
}

namespace detail {

inline std::ofstream open_output(const std::filesystem::path& dir, const std::string& name) {
  std::ofstream out(dir / name, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
  return out;
}

inline std::string fmt(double v) { return format_double(v); }

inline nlohmann::ordered_json estimate_json(const MeanEstimate& e) {
  return {{"mean", e.mean}, {"stderr", e.stderr_}, {"n", e.n}, {"burn_in", e.burn_in}};
}

inline IntegratorConfig noise_config(const ExperimentConfig& cfg) {
  IntegratorConfig ic = cfg.integrator;
  ic.seed = derive_seed(cfg.seed, stream::noise);
  return ic;
}

inline EnsembleConfig ensemble_config(const ExperimentConfig& cfg, std::uint64_t sub) {
  EnsembleConfig ens;
  ens.scheme = cfg.integrator.scheme;
  ens.dt = cfg.integrator.dt;
  ens.seed = derive_seed(derive_seed(cfg.seed, stream::ensemble), sub);
  ens.threads = cfg.threads;
  ens.blowup_threshold = cfg.integrator.blowup_threshold;
  return ens;
}

inline nlohmann::ordered_json run_stationary(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  const auto& model = cfg.model;
  const auto& prm = model.params;
  const auto& o = cfg.stationary;
  const State x0(prm);
  const auto ic = noise_config(cfg);
  const auto mom = stationary_second_moments(model, x0, ic, cfg.burn_in, o.batches);
  const auto labels = state_labels(prm);
  const std::size_t m = mom.dim;

  std::optional<Matrix> oracle;
  if (is_quadratic(model.spec)) oracle = stationary_covariance(linearize(model));

  nlohmann::ordered_json res;
  std::size_t failures = 0;
  double worst_rel = 0.0;
  {
    auto out = open_output(dir, "moments.csv");
    out << "i,j,label_i,label_j,empirical,stderr,oracle,abs_error,tolerance,pass\n";
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = i; j < m; ++j) {
        const auto& e = mom.at(i, j);
        out << i << ',' << j << ',' << labels[i] << ',' << labels[j] << ',' << fmt(e.mean) << ',' << fmt(e.stderr_);
        if (oracle) {
          const double ref = (*oracle)(i, j);
          const double err = std::abs(e.mean - ref);
          const double tol = std::max(o.rel_tol * std::abs(ref), o.sigma_tol * e.stderr_);
          const bool ok = err <= tol;
          if (!ok) ++failures;
          if (ref != 0.0) worst_rel = std::max(worst_rel, err / std::abs(ref));
          out << ',' << fmt(ref) << ',' << fmt(err) << ',' << fmt(tol) << ',' << (ok ? "true" : "false");
        } else {
          out << ",,,,";
        }
        out << '\n';
      }
  }
  if (oracle) {
    res["covariance_comparison"] = {{"entries", m * (m + 1) / 2},
                                    {"failures", failures},
                                    {"rel_tol", o.rel_tol},
                                    {"sigma_tol", o.sigma_tol},
                                    {"pass", failures == 0}};
  }
  // kinetic and bath temperatures
  nlohmann::ordered_json temps = nlohmann::ordered_json::array();
  const auto nd = static_cast<std::size_t>(prm.n * prm.d);
  for (std::size_t i = 0; i < m; ++i) {
    if (i >= nd && i < 2 * nd) continue;
    temps.push_back({{"coordinate", labels[i]}, {"second_moment", estimate_json(mom.at(i, i))}});
  }
  res["temperatures"] = temps;
  if (mom.has_flux) {
    res["heat_flux"] = {{"left", estimate_json(mom.flux_left)},
                        {"right", estimate_json(mom.flux_right)},
                        {"sum", estimate_json(mom.flux_sum)},
                        {"balance_within_3_stderr", std::abs(mom.flux_sum.mean) < 3.0 * mom.flux_sum.stderr_}};
  }
  if (o.trajectory_csv) {
    const auto traj = simulate(model, x0, ic);
    auto out = open_output(dir, "trajectory.csv");
    write_trajectory_csv(out, traj, prm);
  }
  return res;
}

inline nlohmann::ordered_json run_dissipation(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  const auto& o = cfg.dissipation;
  DissipationScanConfig sc;
  sc.energies = o.energies;
  sc.tau = o.tau;
  sc.samples_per_energy = o.samples;
  sc.placement = o.placement;
  const int k2 = detail::leading_exponent(cfg.model.spec.two_body);
  sc.dt_policy = [c = o.dt_factor, k2](double e) { return suggested_dt(e, k2, c); };
  sc.seed = derive_seed(cfg.seed, stream::initial);
  sc.threads = cfg.threads;
  sc.scheme = cfg.integrator.scheme;
  const auto rep = dissipation_scan(cfg.model, sc);
  double worst_balance = 0.0;
  double worst_increase = 0.0;
  {
    auto out = open_output(dir, "dissipation.csv");
    out << "E,sample,dG,t_E,dt,steps,bath_loss,balance_rel,max_increase,status\n";
    for (const auto& s : rep.samples) {
      const double rel = s.delta_g > 0.0 ? s.balance_error / s.delta_g : 0.0;
      if (s.status == SampleStatus::ok) {
        worst_balance = std::max(worst_balance, rel);
        worst_increase = std::max(worst_increase, s.max_increase);
      }
      out << fmt(s.energy) << ',' << s.sample << ',' << fmt(s.delta_g) << ',' << fmt(s.t_e) << ',' << fmt(s.dt) << ','
          << s.steps << ',' << fmt(s.bath_loss) << ',' << fmt(rel) << ',' << fmt(s.max_increase) << ','
          << to_string(s.status) << '\n';
    }
  }
  nlohmann::ordered_json res;
  res["k2"] = rep.k2;
  res["predicted_slope"] = rep.predicted_slope;
  res["fitted"] = rep.fitted;
  res["slope"] = rep.slope;
  res["slope_stderr"] = rep.slope_stderr;
  res["intercept"] = rep.intercept;
  res["slope_pass"] = rep.fitted && std::abs(rep.slope - rep.predicted_slope) <= o.slope_tolerance;
  res["max_balance_rel_error"] = worst_balance;
  res["balance_pass"] = worst_balance <= o.balance_tolerance;
  res["max_relative_increase"] = worst_increase;
  res["monotone_pass"] = worst_increase <= o.monotone_tolerance;
  nlohmann::ordered_json diag = nlohmann::ordered_json::array();
  for (const auto& s : rep.samples)
    if (s.status != SampleStatus::ok) diag.push_back({{"E", s.energy}, {"sample", s.sample}, {"status", to_string(s.status)}, {"message", s.message}});
  res["excluded"] = diag;
  nlohmann::ordered_json per_e = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < rep.energies.size(); ++i) per_e.push_back({{"E", rep.energies[i]}, {"dG_geometric_mean", rep.delta_g[i]}});
  res["per_energy"] = per_e;
  return res;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline nlohmann::ordered_json run_tracking(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  const auto& o = cfg.tracking;
  const auto ne = o.energies.size();
  const auto np = static_cast<std::size_t>(o.paths);
  std::vector<TrackingReport> reps(ne * np);
  parallel_for(reps.size(), cfg.threads, [&](std::size_t idx) {
    TrackingConfig tc;
    tc.tau = o.tau;
    tc.dt_factor = o.dt_factor;
    tc.placement = o.placement;
    tc.scheme = cfg.integrator.scheme;
    tc.seed = derive_seed(derive_seed(cfg.seed, stream::initial), idx % np);
    reps[idx] = tracking_deviation(cfg.model, o.energies[idx / np], tc);
  });
  {
    auto out = open_output(dir, "tracking.csv");
    out << "E,path,dq,dp,dr,omega_max,good_noise,in_shell\n";
    for (std::size_t idx = 0; idx < reps.size(); ++idx) {
      const auto& r = reps[idx];
      out << fmt(r.energy) << ',' << idx % np << ',' << fmt(r.dq) << ',' << fmt(r.dp) << ',' << fmt(r.dr) << ','
          << fmt(r.omega_max) << ',' << (r.good_noise ? "true" : "false") << ',' << (r.in_shell ? "true" : "false") << '\n';
    }
  }
  nlohmann::ordered_json res;
  std::vector<double> mp, mq;
  nlohmann::ordered_json per_e = nlohmann::ordered_json::array();
  for (std::size_t e = 0; e < ne; ++e) {
    std::vector<double> rp, rq;
    int good = 0;
    for (std::size_t j = 0; j < np; ++j) {
      const auto& r = reps[e * np + j];
      rp.push_back(r.dp / r.dr);
      rq.push_back(r.dq / r.dr);
      good += r.in_shell ? 1 : 0;
    }
    mp.push_back(median(rp));
    mq.push_back(median(rq));
    per_e.push_back({{"E", o.energies[e]}, {"median_dp_over_dr", mp.back()}, {"median_dq_over_dr", mq.back()}, {"paths_in_shell", good}});
  }
  res["per_energy"] = per_e;
  const int k2 = detail::leading_exponent(cfg.model.spec.two_body);
  nlohmann::ordered_json pairs = nlohmann::ordered_json::array();
  bool pass = true;
  for (std::size_t e = 0; e + 1 < ne; ++e) {
    const double ratio_e = o.energies[e + 1] / o.energies[e];
    const double pred_p = std::pow(ratio_e, 1.0 / k2 - 0.5);
    const double pred_q = std::pow(ratio_e, 2.0 / k2 - 1.0);
    const double obs_p = mp[e + 1] / mp[e];
    const double obs_q = mq[e + 1] / mq[e];
    auto within = [&](double obs, double pred) { return obs <= pred * o.factor && obs >= pred / o.factor; };
    const bool ok = within(obs_p, pred_p) && within(obs_q, pred_q);
    pass = pass && ok;
    pairs.push_back({{"E_low", o.energies[e]}, {"E_high", o.energies[e + 1]}, {"dp_ratio", obs_p}, {"dp_predicted", pred_p},
                     {"dq_ratio", obs_q}, {"dq_predicted", pred_q}, {"within_factor", ok}});
  }
  res["scaling"] = pairs;
  res["pass"] = pass;
  return res;
}

inline nlohmann::ordered_json run_liapunov(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  const auto& o = cfg.liapunov;
  const auto& model = cfg.model;
  std::vector<DriftEstimate> est;
  for (int i = 0; i < o.states; ++i) {
    Rng rng(derive_seed(derive_seed(cfg.seed, stream::initial), static_cast<std::uint64_t>(i)));
    const State x = sample_energy_shell(model.spec, model.params, o.energy, rng, o.placement);
    est.push_back(liapunov_drift(model, x, o.s, o.theta, o.samples, ensemble_config(cfg, static_cast<std::uint64_t>(i))));
  }
  int confirmed = 0;
  int bound_ok = 0;
  {
    auto out = open_output(dir, "liapunov.csv");
    out << "state,G,kappa,stderr,growth_bound,confirmed\n";
    for (std::size_t i = 0; i < est.size(); ++i) {
      const auto& e = est[i];
      confirmed += e.drift_confirmed() ? 1 : 0;
      bound_ok += e.kappa_hat <= e.growth_bound + 2.0 * e.stderr_ ? 1 : 0;
      out << i << ',' << fmt(extended_energy(model, e.x)) << ',' << fmt(e.kappa_hat) << ',' << fmt(e.stderr_) << ','
          << fmt(e.growth_bound) << ',' << (e.drift_confirmed() ? "true" : "false") << '\n';
    }
  }
  nlohmann::ordered_json res;
  res["states"] = o.states;
  res["drift_confirmed"] = confirmed;
  res["growth_bound_respected"] = bound_ok;
  res["pass"] = confirmed == o.states && bound_ok == o.states;
  if (o.runaway_samples > 0) {
    Rng rng(derive_seed(derive_seed(cfg.seed, stream::initial), static_cast<std::uint64_t>(o.states)));
    const State x = sample_energy_shell(model.spec, model.params, o.runaway_energy, rng, o.placement);
    const auto nr = no_runaway_check(model, x, o.runaway_t, o.runaway_theta, o.runaway_delta, o.runaway_samples,
                                     ensemble_config(cfg, static_cast<std::uint64_t>(o.states)));
    res["no_runaway"] = {{"E", nr.energy}, {"delta", nr.delta}, {"t", nr.t}, {"theta", nr.theta},
                         {"samples", nr.n_samples}, {"exceedances", nr.exceedances}, {"probability", nr.probability},
                         {"stderr", nr.stderr_}, {"bound", nr.bound}, {"pass", nr.pass}};
  }
  return res;
}

/// q-quantile (nearest rank) of stationary G sampled every stride steps after burn_in.
inline double pilot_energy_quantile(const Model& model, std::uint64_t seed, const IntegratorConfig& base,
                                    std::int64_t burn_in, std::int64_t steps, std::int64_t stride, double q) {
  IntegratorConfig ic = base;
  ic.seed = seed;
  Integrator integ(model, State(model.params), ic);
  for (std::int64_t k = 0; k < burn_in; ++k) integ.step();
  std::vector<double> g;
  g.reserve(static_cast<std::size_t>(steps / stride + 1));
  for (std::int64_t k = 1; k <= steps; ++k) {
    integ.step();
    if (k % stride == 0) g.push_back(integ.energy());
  }
  if (g.empty()) throw DomainError("pilot run recorded no samples");
  std::sort(g.begin(), g.end());
  const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(g.size()))) - 1;
  return g[std::min(idx, g.size() - 1)];
}

inline nlohmann::ordered_json run_hitting(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  const auto& o = cfg.hitting;
  const auto& model = cfg.model;
  double e0 = o.e0;
  const bool pilot = e0 <= 0.0;
  if (pilot)
    e0 = pilot_energy_quantile(model, derive_seed(cfg.seed, stream::pilot), cfg.integrator, o.pilot_burn_in, o.pilot_steps,
                               o.pilot_stride, o.quantile);
  if (!(e0 > 0.0)) throw DomainError("hitting: threshold E0 must be > 0 (got " + fmt(e0) + ")");
  Rng rng(derive_seed(cfg.seed, stream::initial));
  const State x0 = sample_energy_shell(model.spec, model.params, o.start_factor * e0, rng, o.placement);
  const auto rep = hitting_times(model, x0, e0, o.samples, o.a, o.max_steps, ensemble_config(cfg, 0));
  {
    auto out = open_output(dir, "hitting.csv");
    out << "tau\n";
    for (double t : rep.taus) out << fmt(t) << '\n';
    auto surv = open_output(dir, "survival.csv");
    surv << "t,survival\n";
    for (const auto& [t, s] : rep.survival) surv << fmt(t) << ',' << fmt(s) << '\n';
  }
  const double g0 = extended_energy(model, x0);
  nlohmann::ordered_json res;
  res["E0"] = e0;
  res["E0_from_pilot"] = pilot;
  res["G_x0"] = g0;
  res["samples"] = rep.n_samples;
  res["censored"] = rep.censored;
  res["censored_fraction"] = rep.censored_fraction();
  res["inconclusive"] = rep.inconclusive;
  res["a"] = rep.a;
  res["exp_moment"] = rep.exp_moment;
  res["exp_moment_stderr"] = rep.exp_moment_stderr;
  res["exp_moment_bound"] = hitting_moment_bound(rep.a, o.theta, g0, e0);
  res["tail_fitted"] = rep.tail_fitted;
  res["tail_rate"] = rep.tail_rate;
  res["tail_r2"] = rep.tail_r2;
  if (!rep.taus.empty()) res["median_tau"] = median(rep.taus);
  return res;
}

inline nlohmann::ordered_json run_rank(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  const auto& o = cfg.rank;
  const auto& model = cfg.model;
  const auto np = static_cast<std::size_t>(o.points);
  std::vector<HormanderReport> reps(np);
  parallel_for(np, cfg.threads, [&](std::size_t i) {
    Rng rng(derive_seed(derive_seed(cfg.seed, stream::initial), i));
    State x(model.params);
    for (double& v : x.data()) v = o.scale * rng.normal();
    reps[i] = hormander_rank(model, x.data(), o.depth);
  });
  int min_rank = std::numeric_limits<int>::max();
  int failures = 0;
  int max_depth = 0;
  {
    auto out = open_output(dir, "rank.csv");
    out << "point,rank,depth\n";
    for (std::size_t i = 0; i < np; ++i) {
      const auto& r = reps[i];
      min_rank = std::min(min_rank, r.rank);
      if (!r.full()) ++failures;
      max_depth = std::max(max_depth, r.depth_reached);
      out << i << ',' << r.rank << ',' << r.depth_reached << '\n';
    }
  }
  nlohmann::ordered_json res;
  res["full_rank"] = model.params.state_size();
  res["min_rank"] = min_rank;
  res["failures"] = failures;
  res["max_depth_needed"] = max_depth;
  res["depth_cap"] = o.depth;
  if (!reps.empty()) res["witness_point_0"] = reps.front().witness;
  res["pass"] = failures == 0;
  return res;
}

inline nlohmann::ordered_json run_oracle_compare(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  const auto& o = cfg.oracle;
  const auto& model = cfg.model;
  const auto lm = linearize(model);
  const std::size_t m = lm.dim();
  nlohmann::ordered_json res;
  {
    auto out = open_output(dir, "drift_matrix.csv");
    write_matrix_csv(out, lm.a);
    auto outb = open_output(dir, "noise_matrix.csv");
    write_matrix_csv(outb, lm.b);
  }
  nlohmann::ordered_json eig = nlohmann::ordered_json::array();
  for (auto z : eigenvalues(lm.a)) eig.push_back({z.real(), z.imag()});
  res["eigenvalues"] = eig;
  res["controllability_rank"] = controllability_rank(lm);
  res["dimension"] = m;

  Rng rng(derive_seed(cfg.seed, stream::initial));
  double drift_err = 0.0;
  for (int k = 0; k < o.probes; ++k) {
    State x(model.params);
    for (double& v : x.data()) v = rng.normal();
    const auto f = drift_field(model, x);
    const auto ax = lm.a.apply(x.data());
    for (std::size_t i = 0; i < m; ++i) drift_err = std::max(drift_err, std::abs(f.data()[i] - ax[i]));
  }
  res["drift_identity_max_error"] = drift_err;

  State x0(model.params);
  for (double& v : x0.data()) v = rng.normal();
  const auto steps = static_cast<std::int64_t>(std::llround(o.flow_time / cfg.integrator.dt));
  const auto flow = deterministic_flow(model, x0, cfg.integrator.dt, steps, cfg.integrator.scheme, std::max<std::int64_t>(steps, 1));
  Model cold = model;
  cold.params.t1 = cold.params.tn = 0.0;
  const auto exact = expm(linearize(cold).a * (static_cast<double>(steps) * cfg.integrator.dt)).apply(x0.data());
  double flow_err = 0.0;
  for (std::size_t i = 0; i < m; ++i) flow_err = std::max(flow_err, std::abs(flow.states.back().data()[i] - exact[i]));
  res["flow_time"] = static_cast<double>(steps) * cfg.integrator.dt;
  res["flow_max_error"] = flow_err;

  try {
    const double gap = spectral_gap(lm);
    res["spectral_gap"] = gap;
    const Matrix sigma = stationary_covariance(lm);
    const Matrix q = lm.b * lm.b.transpose();
    res["lyapunov_residual"] = detail::lyapunov_residual(lm.a, sigma, q);
    res["lyapunov_residual_scale"] = q.frobenius();
    auto out = open_output(dir, "covariance.csv");
    write_matrix_csv(out, sigma);
  } catch (const NotHurwitz& e) {
    res["spectral_gap"] = nullptr;
    res["not_hurwitz"] = e.what();
  }

  if (controllability_rank(lm.a, control_input_matrix(lm)) == static_cast<int>(m)) {
    const SteeringControl u(lm, x0.data(), o.horizon);
    const State xt = control_flow(cold, [&u](double t) { return u(t); }, x0, o.control_dt, o.horizon);
    double norm = 0.0;
    for (double v : xt.data()) norm = std::max(norm, std::abs(v));
    res["steering_final_max_abs"] = norm;
  }
  return res;
}

inline nlohmann::ordered_json run_correlation(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  const auto& o = cfg.correlation;
  const auto& model = cfg.model;
  const auto labels = state_labels(model.params);
  const auto coord = static_cast<std::size_t>(std::find(labels.begin(), labels.end(), o.observable) - labels.begin());
  const auto ic = noise_config(cfg);
  Integrator integ(model, State(model.params), ic);
  for (std::int64_t k = 0; k < cfg.burn_in; ++k) integ.step();
  std::vector<double> series;
  series.reserve(static_cast<std::size_t>(ic.steps / o.stride + 1));
  for (std::int64_t k = 0; k < ic.steps; ++k) {
    integ.step();
    if (k % o.stride == 0) series.push_back(integ.state().data()[coord]);
  }
  const double lag_dt = ic.dt * static_cast<double>(o.stride);
  const auto max_lag = static_cast<std::size_t>(std::llround(o.max_lag / lag_dt));
  if (max_lag >= series.size()) throw ConfigError("[correlation] max_lag exceeds the recorded series");
  const auto acf = autocovariance(series, max_lag);
  std::optional<LinearModel> lm;
  std::optional<Matrix> sigma;
  if (is_quadratic(model.spec)) {
    lm = linearize(model);
    sigma = stationary_covariance(*lm);
  }
  {
    auto out = open_output(dir, "acf.csv");
    out << "lag_time,acf" << (lm ? ",oracle" : "") << '\n';
    for (std::size_t k = 0; k <= max_lag; ++k) {
      out << fmt(static_cast<double>(k) * lag_dt) << ',' << fmt(acf[k]);
      if (lm) out << ',' << fmt(stationary_autocovariance(*lm, *sigma, static_cast<double>(k) * lag_dt)(coord, coord));
      out << '\n';
    }
  }
  nlohmann::ordered_json res;
  res["observable"] = o.observable;
  res["samples"] = series.size();
  res["lag_spacing"] = lag_dt;
  const auto first = static_cast<std::size_t>(std::llround(o.fit_start / lag_dt));
  const auto last = static_cast<std::size_t>(std::llround(o.fit_end / lag_dt));
  try {
    const auto fit = fit_decay_rate(acf, lag_dt, first, last);
    res["rate"] = fit.rate;
    res["rate_ci"] = {fit.ci_low, fit.ci_high};
    res["fit_r2"] = fit.r2;
    if (lm) {
      const double gap = spectral_gap(*lm);
      res["spectral_gap"] = gap;
      res["relative_error"] = fit.rate / gap - 1.0;
    }
  } catch (const DomainError& e) {
    res["fit_error"] = e.what();
  }
  return res;
}

}  // namespace detail

/// Runs the configured experiment and writes its artifacts into cfg.output_dir.
inline nlohmann::ordered_json run_experiment(const ExperimentConfig& cfg) {
  const std::filesystem::path dir(cfg.output_dir);
  std::filesystem::create_directories(dir);
  const auto start = std::chrono::steady_clock::now();
  nlohmann::ordered_json results;
  const auto& e = cfg.experiment;
  if (e == "equilibrium" || e == "ness") results = detail::run_stationary(cfg, dir);
  else if (e == "dissipation-scaling") results = detail::run_dissipation(cfg, dir);
  else if (e == "tracking") results = detail::run_tracking(cfg, dir);
  else if (e == "liapunov") results = detail::run_liapunov(cfg, dir);
  else if (e == "hitting") results = detail::run_hitting(cfg, dir);
  else if (e == "rank") results = detail::run_rank(cfg, dir);
  else if (e == "oracle-compare") results = detail::run_oracle_compare(cfg, dir);
  else if (e == "correlation") results = detail::run_correlation(cfg, dir);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  nlohmann::ordered_json summary;
  summary["experiment"] = e;
  summary["version"] = kVersion;
  summary["seed"] = cfg.seed;
  summary["parameters"] = cfg.resolved_json;
  summary["config_ini"] = cfg.resolved_ini;
  summary["results"] = results;
  summary["warnings"] = cfg.warnings;
  summary["wall_time_seconds"] = wall;
  auto out = detail::open_output(dir, "summary.json");
  out << summary.dump(2) << '\n';
  return summary;
}

}  // namespace nessim
