#pragma once

// Time integration of the chain + reservoir system
//
//   dq = p dt
//   dp = (-grad V(q) - Lambda^T r) dt
//   dr = (-gamma r + Lambda p) dt + sqrt(2 gamma T) dW
//
// and its oscillatory (extra auxiliary s) and Langevin variants.
//
// strang_split advances one step as
//   half exact OU step on the bath variables
//   -> velocity Verlet on (p, q) with r following dr = Lambda p at the half-step momentum
//   -> half exact OU step.
// The middle sub-flow conserves G in continuous time (r - Lambda q is
// invariant along it), so at zero temperature all energy loss happens in
// the OU sub-steps, where it is accounted exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <functional>
#include <ostream>
#include <span>
#include <type_traits>
#include <string>
#include <vector>

#include "nessim/chain_model.hpp"
#include "nessim/errors.hpp"
#include "nessim/random.hpp"

namespace nessim {

struct Model {
  PotentialSpec spec;
  ChainParams params;
};

/// Builds a model, throwing DomainError unless the parameters are valid and
/// (unless check_growth is false) the growth assumption holds.
inline Model make_model(PotentialSpec spec, ChainParams params, bool check_growth = true) {
  validate_params(params);
  if (check_growth) {
    const auto rep = validate_growth(spec, params);
    if (!rep.pass) throw DomainError("growth assumption H1 fails: " + rep.reasons.front());
  }
  return Model{std::move(spec), params};
}

inline double extended_energy(const Model& m, const State& x) { return extended_energy(m.spec, m.params, x); }

enum class Scheme { euler_maruyama, strang_split };

inline const char* to_string(Scheme s) { return s == Scheme::strang_split ? "strang_split" : "euler_maruyama"; }

struct IntegratorConfig {
  Scheme scheme = Scheme::strang_split;
  double dt = 0.01;
  std::int64_t steps = 0;
  std::uint64_t seed = 0;
  std::int64_t thin = 1;
  double blowup_threshold = 1e12;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<State> states;
  std::vector<double> energy;       // G at each recorded state
  std::vector<double> bath_energy;  // cumulative energy change in the reservoir sub-steps
  std::uint64_t seed = 0;
  double dt = 0.0;
  std::int64_t thin = 1;
  Scheme scheme = Scheme::strang_split;
  std::vector<std::string> warnings;
};

/// Drift vector field, generic in the scalar type. out has the state layout.
template <class T>
void drift_into(const Model& model, std::span<const T> x, std::span<T> out) {
  const auto& prm = model.params;
  const auto nd = static_cast<std::size_t>(prm.n * prm.d);
  const auto d = static_cast<std::size_t>(prm.d);
  const auto last = static_cast<std::size_t>(prm.n - 1) * d;
  auto p = x.subspan(0, nd);
  auto q = x.subspan(nd, nd);
  auto pdot = out.subspan(0, nd);
  auto qdot = out.subspan(nd, nd);

  potential_gradient_into<T>(model.spec, prm, q, pdot);
  for (std::size_t k = 0; k < nd; ++k) {
    pdot[k] = -pdot[k];
    qdot[k] = p[k];
  }
  const double lam = prm.lambda;
  if (prm.kind == ReservoirKind::langevin) {
    const double eta2 = lam * lam;
    for (std::size_t k = 0; k < d; ++k) {
      pdot[k] = pdot[k] - p[k] * eta2;
      pdot[last + k] = pdot[last + k] - p[last + k] * eta2;
    }
    return;
  }
  auto r = x.subspan(2 * nd, 2 * d);
  auto rdot = out.subspan(2 * nd, 2 * d);
  for (std::size_t k = 0; k < d; ++k) {
    pdot[k] = pdot[k] - r[k] * lam;
    pdot[last + k] = pdot[last + k] - r[d + k] * lam;
    rdot[k] = p[k] * lam - r[k] * prm.gamma;
    rdot[d + k] = p[last + k] * lam - r[d + k] * prm.gamma;
  }
  if (prm.kind == ReservoirKind::ou2) {
    auto s = x.subspan(2 * nd + 2 * d, 2 * d);
    auto sdot = out.subspan(2 * nd + 2 * d, 2 * d);
    for (std::size_t k = 0; k < 2 * d; ++k) {
      rdot[k] = rdot[k] - s[k] * prm.sigma;
      sdot[k] = r[k] * prm.sigma - s[k] * prm.gamma;
    }
  }
}

/// Noise-free right-hand side at x, returned in state layout.
inline State drift_field(const Model& model, const State& x) {
  if (x.size() != model.params.state_size()) throw DomainError("drift_field: state shape does not match the reservoir kind");
  State out(model.params);
  drift_into<double>(model, x.data(), out.data());
  return out;
}

/// Exact Ornstein-Uhlenbeck update of the 2 x d bath variables over a time h:
/// r' = e^{-gamma h} r + sqrt(T_i (1 - e^{-2 gamma h})) * noise, row 0 with T1, row 1 with Tn.
inline std::vector<double> ou_exact_step(std::span<const double> r, double gamma, double t1, double tn, double h,
                                         std::span<const double> noise) {
  if (!(h > 0.0)) throw DomainError("ou_exact_step: h must be > 0");
  if (r.size() != noise.size() || r.size() % 2 != 0) throw DomainError("ou_exact_step: shape mismatch");
  const std::size_t d = r.size() / 2;
  const double decay = std::exp(-gamma * h);
  const double spread = -std::expm1(-2.0 * gamma * h);
  const double a1 = std::sqrt(t1 * spread);
  const double an = std::sqrt(tn * spread);
  std::vector<double> out(r.size());
  for (std::size_t k = 0; k < d; ++k) {
    out[k] = decay * r[k] + a1 * noise[k];
    out[d + k] = decay * r[d + k] + an * noise[d + k];
  }
  return out;
}

/// dt = c * min(1, E^{1/k2 - 1/2}), the natural oscillation time scale at energy E.
inline double suggested_dt(double energy, int k2, double c = 1e-2) {
  if (!(energy > 0.0)) return c;
  return c * std::min(1.0, std::pow(energy, 1.0 / k2 - 0.5));
}

/// Step-by-step integrator; simulate() and the ensemble experiments drive it.
class Integrator {
 public:
  Integrator(const Model& model, State x0, const IntegratorConfig& cfg)
      : model_(&model), cfg_(cfg), x_(std::move(x0)), rng_(cfg.seed) {
    const auto& prm = model.params;
    if (x_.size() != prm.state_size()) throw DomainError("initial state shape does not match the model");
    if (!x_.finite()) throw DomainError("initial state is not finite");
    if (!(cfg.dt > 0.0) || !std::isfinite(cfg.dt)) throw DomainError("dt must be > 0");
    nd_ = static_cast<std::size_t>(prm.n * prm.d);
    d_ = static_cast<std::size_t>(prm.d);
    last_ = static_cast<std::size_t>(prm.n - 1) * d_;
    grad_.assign(nd_, 0.0);
    drift_.assign(x_.size(), 0.0);
    noise_.assign(2 * d_, 0.0);
    brownian_.assign(2 * d_, 0.0);
    const double rate = prm.bath_rate();
    amplitude_[0] = std::sqrt(2.0 * rate * prm.t1);
    amplitude_[1] = std::sqrt(2.0 * rate * prm.tn);
    noisy_ = prm.t1 > 0.0 || prm.tn > 0.0;
    prepare_half_step(0.5 * cfg.dt);
    refresh_gradient();
    energy_ = extended_energy(model, x_);
  }

  const State& state() const noexcept { return x_; }
  double time() const noexcept { return static_cast<double>(steps_) * cfg_.dt; }
  std::int64_t steps_taken() const noexcept { return steps_; }
  double energy() const noexcept { return energy_; }
  double bath_energy_change() const noexcept { return bath_energy_; }
  /// Accumulated standard Brownian increments per noise channel (2*d channels).
  std::span<const double> brownian() const noexcept { return brownian_; }
  /// sqrt(2 * rate * T_i) for the left (0) and right (1) bath.
  double noise_amplitude(int bath) const noexcept { return amplitude_[bath]; }

  void step() {
    if (cfg_.scheme == Scheme::strang_split) strang_step();
    else euler_step();
    ++steps_;
    energy_ = extended_energy(model_->spec, model_->params, x_);
    if (!std::isfinite(energy_) || energy_ > cfg_.blowup_threshold) throw BlowUp(steps_, energy_);
  }

 private:
  struct HalfStep {
    double decay = 1.0;
    double amp[2] = {0.0, 0.0};
    // ou2: rotation and 2x2 Cholesky factor of the (r, s) noise covariance per bath
    double cos_rot = 1.0, sin_rot = 0.0;
    double chol[2][3] = {{0, 0, 0}, {0, 0, 0}};
  };

  void prepare_half_step(double h) {
    const auto& prm = model_->params;
    const double rate = prm.bath_rate();
    half_.decay = std::exp(-rate * h);
    const double spread = -std::expm1(-2.0 * rate * h);
    const double temps[2] = {prm.t1, prm.tn};
    for (int b = 0; b < 2; ++b) half_.amp[b] = std::sqrt(temps[b] * spread);
    if (prm.kind == ReservoirKind::ou2) {
      const double g = prm.gamma;
      const double w = prm.sigma;
      half_.cos_rot = std::cos(w * h);
      half_.sin_rot = std::sin(w * h);
      const double e2 = std::exp(-2.0 * g * h);
      const double denom = 4.0 * (g * g + w * w);
      const double i0 = spread / (2.0 * g);
      const double ic = (e2 * (-2.0 * g * std::cos(2 * w * h) + 2.0 * w * std::sin(2 * w * h)) + 2.0 * g) / denom;
      const double is = (e2 * (-2.0 * g * std::sin(2 * w * h) - 2.0 * w * std::cos(2 * w * h)) + 2.0 * w) / denom;
      for (int b = 0; b < 2; ++b) {
        const double qrr = temps[b] * g * (i0 + ic);
        const double qss = temps[b] * g * (i0 - ic);
        const double qrs = temps[b] * g * is;
        const double l11 = std::sqrt(std::max(qrr, 0.0));
        const double l21 = l11 > 0.0 ? qrs / l11 : 0.0;
        const double l22 = std::sqrt(std::max(qss - l21 * l21, 0.0));
        half_.chol[b][0] = l11;
        half_.chol[b][1] = l21;
        half_.chol[b][2] = l22;
      }
    }
  }

  void refresh_gradient() { potential_gradient_into<double>(model_->spec, model_->params, x_.q(), grad_); }

  double bath_norm2() const {
    double e = 0.0;
    if (model_->params.kind == ReservoirKind::langevin) {
      for (std::size_t k = 0; k < d_; ++k) {
        const double a = x_.p()[k];
        const double b = x_.p()[last_ + k];
        e += a * a + b * b;
      }
      return e;
    }
    for (double v : x_.r()) e += v * v;
    for (double v : x_.s()) e += v * v;
    return e;
  }

  void ou_half_step() {
    const auto& prm = model_->params;
    const double before = bath_norm2();
    const double h = 0.5 * cfg_.dt;
    if (noisy_) {
      rng_.fill_normal(noise_);
      const double sq = std::sqrt(h);
      for (std::size_t k = 0; k < noise_.size(); ++k) brownian_[k] += sq * noise_[k];
    }
    if (prm.kind == ReservoirKind::ou2) {
      auto r = x_.r();
      auto s = x_.s();
      for (std::size_t k = 0; k < 2 * d_; ++k) {
        const int b = k < d_ ? 0 : 1;
        const double rr = half_.decay * (half_.cos_rot * r[k] - half_.sin_rot * s[k]);
        const double ss = half_.decay * (half_.sin_rot * r[k] + half_.cos_rot * s[k]);
        r[k] = rr;
        s[k] = ss;
        if (noisy_) {
          const double extra = rng_.normal();
          r[k] += half_.chol[b][0] * noise_[k];
          s[k] += half_.chol[b][1] * noise_[k] + half_.chol[b][2] * extra;
        }
      }
    } else {
      double* left = prm.kind == ReservoirKind::langevin ? x_.p().data() : x_.r().data();
      double* right = prm.kind == ReservoirKind::langevin ? x_.p().data() + last_ : x_.r().data() + d_;
      for (std::size_t k = 0; k < d_; ++k) {
        left[k] *= half_.decay;
        right[k] *= half_.decay;
        if (noisy_) {
          left[k] += half_.amp[0] * noise_[k];
          right[k] += half_.amp[1] * noise_[d_ + k];
        }
      }
    }
    bath_energy_ += 0.5 * (bath_norm2() - before);
  }

  // Velocity Verlet on (p, q) with r following dr = Lambda p at the half-step momentum.
  void hamiltonian_step() {
    const auto& prm = model_->params;
    const double h = cfg_.dt;
    const double lam = prm.lambda;
    const bool coupled = prm.kind != ReservoirKind::langevin;
    auto p = x_.p();
    auto q = x_.q();
    auto kick = [&] {
      for (std::size_t k = 0; k < nd_; ++k) p[k] -= 0.5 * h * grad_[k];
      if (coupled) {
        auto r = x_.r();
        for (std::size_t k = 0; k < d_; ++k) {
          p[k] -= 0.5 * h * lam * r[k];
          p[last_ + k] -= 0.5 * h * lam * r[d_ + k];
        }
      }
    };
    kick();
    for (std::size_t k = 0; k < nd_; ++k) q[k] += h * p[k];
    if (coupled) {
      auto r = x_.r();
      for (std::size_t k = 0; k < d_; ++k) {
        r[k] += h * lam * p[k];
        r[d_ + k] += h * lam * p[last_ + k];
      }
    }
    refresh_gradient();
    kick();
  }

  void strang_step() {
    ou_half_step();
    hamiltonian_step();
    ou_half_step();
  }

  void euler_step() {
    const auto& prm = model_->params;
    const double h = cfg_.dt;
    drift_into<double>(*model_, x_.data(), drift_);
    bath_energy_ -= h * prm.bath_rate() * bath_norm2();
    auto x = x_.data();
    for (std::size_t k = 0; k < x.size(); ++k) x[k] += h * drift_[k];
    if (noisy_) {
      rng_.fill_normal(noise_);
      const double sq = std::sqrt(h);
      for (std::size_t k = 0; k < noise_.size(); ++k) brownian_[k] += sq * noise_[k];
      double* left = prm.kind == ReservoirKind::langevin ? x_.p().data() : x_.r().data();
      double* right = prm.kind == ReservoirKind::langevin ? x_.p().data() + last_ : x_.r().data() + d_;
      for (std::size_t k = 0; k < d_; ++k) {
        left[k] += amplitude_[0] * sq * noise_[k];
        right[k] += amplitude_[1] * sq * noise_[d_ + k];
      }
    }
    refresh_gradient();
  }

  const Model* model_;
  IntegratorConfig cfg_;
  State x_;
  Rng rng_;
  std::size_t nd_ = 0, d_ = 0, last_ = 0;
  std::vector<double> grad_, drift_, noise_, brownian_;
  double amplitude_[2] = {0.0, 0.0};
  bool noisy_ = false;
  HalfStep half_;
  std::int64_t steps_ = 0;
  double energy_ = 0.0;
  double bath_energy_ = 0.0;
};

namespace detail {
inline void check_config(const IntegratorConfig& cfg) {
  if (!(cfg.dt > 0.0) || !std::isfinite(cfg.dt)) throw DomainError("integrator: dt must be > 0");
  if (cfg.steps < 0) throw DomainError("integrator: steps must be >= 0");
  if (cfg.thin < 1) throw DomainError("integrator: thin must be >= 1");
}
}  // namespace detail

/// Integrates cfg.steps steps from x0, recording every thin-th state (and x0).
inline Trajectory simulate(const Model& model, const State& x0, const IntegratorConfig& cfg) {
  detail::check_config(cfg);
  Trajectory traj;
  traj.seed = cfg.seed;
  traj.dt = cfg.dt;
  traj.thin = cfg.thin;
  traj.scheme = cfg.scheme;
  if (cfg.scheme == Scheme::euler_maruyama && cfg.dt * model.params.bath_rate() >= 1.0)
    traj.warnings.push_back("euler_maruyama with dt * gamma >= 1 is unstable for the bath variables");
  Integrator integ(model, x0, cfg);
  const auto records = static_cast<std::size_t>(cfg.steps / cfg.thin + 1);
  traj.times.reserve(records);
  traj.states.reserve(records);
  traj.energy.reserve(records);
  traj.bath_energy.reserve(records);
  auto record = [&] {
    traj.times.push_back(integ.time());
    traj.states.push_back(integ.state());
    traj.energy.push_back(integ.energy());
    traj.bath_energy.push_back(integ.bath_energy_change());
  };
  record();
  for (std::int64_t k = 1; k <= cfg.steps; ++k) {
    integ.step();
    if (k % cfg.thin == 0) record();
  }
  return traj;
}

/// Zero-temperature flow: the same integrator with both reservoirs at T = 0.
inline Trajectory deterministic_flow(const Model& model, const State& x0, double dt, std::int64_t steps,
                                     Scheme scheme = Scheme::strang_split, std::int64_t thin = 1,
                                     double blowup_threshold = 1e12) {
  Model cold = model;
  cold.params.t1 = 0.0;
  cold.params.tn = 0.0;
  IntegratorConfig cfg;
  cfg.scheme = scheme;
  cfg.dt = dt;
  cfg.steps = steps;
  cfg.thin = thin;
  cfg.blowup_threshold = blowup_threshold;
  return simulate(cold, x0, cfg);
}

/// Column labels in state layout: p_<site>_<k>, q_<site>_<k>, r_<site>_<k>, s_<site>_<k> (1-based).
inline std::vector<std::string> state_labels(const ChainParams& prm) {
  std::vector<std::string> labels;
  auto add_block = [&](const char* name, int sites, bool bath) {
    for (int i = 0; i < sites; ++i)
      for (int k = 0; k < prm.d; ++k) {
        const int site = bath ? (i == 0 ? 1 : prm.n) : i + 1;
        labels.push_back(std::string(name) + "_" + std::to_string(site) + "_" + std::to_string(k + 1));
      }
  };
  add_block("p", prm.n, false);
  add_block("q", prm.n, false);
  if (prm.kind != ReservoirKind::langevin) add_block("r", 2, true);
  if (prm.kind == ReservoirKind::ou2) add_block("s", 2, true);
  return labels;
}

/// Formats a double with 17 significant digits, '.' decimal point.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// CSV with header t,<state labels>,G and LF line endings.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj, const ChainParams& prm) {
  os << "t";
  for (const auto& l : state_labels(prm)) os << ',' << l;
  os << ",G\n";
  for (std::size_t i = 0; i < traj.states.size(); ++i) {
    os << format_double(traj.times[i]);
    for (double v : traj.states[i].data()) os << ',' << format_double(v);
    os << ',' << format_double(traj.energy[i]) << '\n';
  }
}

/// Binary dump, little-endian:
///   8 bytes  magic "NESSTRJ\0"
///   u32      version (1)
///   u32      n, u32 d, u32 reservoir kind (0 ou1, 1 ou2, 2 langevin)
///   u64      record count, u64 state size m
///   f64      dt, u64 seed, u64 thin
///   records: f64 t, m * f64 state, f64 G
inline void write_trajectory_binary(std::ostream& os, const Trajectory& traj, const ChainParams& prm) {
  auto put = [&os](auto value) {
    unsigned char bytes[sizeof value];
    std::uint64_t bits = 0;
    if constexpr (std::is_floating_point_v<decltype(value)>) {
      static_assert(sizeof value == 8);
      std::memcpy(&bits, &value, 8);
    } else {
      bits = static_cast<std::uint64_t>(value);
    }
    for (std::size_t i = 0; i < sizeof value; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(bytes), sizeof value);
  };
  os.write("NESSTRJ\0", 8);
  put(std::uint32_t{1});
  put(static_cast<std::uint32_t>(prm.n));
  put(static_cast<std::uint32_t>(prm.d));
  put(static_cast<std::uint32_t>(prm.kind));
  put(static_cast<std::uint64_t>(traj.states.size()));
  put(static_cast<std::uint64_t>(prm.state_size()));
  put(traj.dt);
  put(static_cast<std::uint64_t>(traj.seed));
  put(static_cast<std::uint64_t>(traj.thin));
  for (std::size_t i = 0; i < traj.states.size(); ++i) {
    put(traj.times[i]);
    for (double v : traj.states[i].data()) put(v);
    put(traj.energy[i]);
  }
}

}  // namespace nessim
