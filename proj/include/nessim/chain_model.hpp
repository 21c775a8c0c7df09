#pragma once

// Oscillator chain coupled at both ends to Markovian reservoirs.
//
// Potential energy (with the boundary correction from integrating out the
// reservoirs applied here, never by callers):
//
//   V(q) = sum_i U1(q_i) + sum_i U2(q_i - q_{i+1}) - lambda^2 |q_1|^2 / 2 - lambda^2 |q_n|^2 / 2
//
// with U(x) = sum_k a_k |x|^k over even k >= 2. Phase points are stored flat
// as [p (n*d) | q (n*d) | r (2*d) | s (2*d)], r absent for the Langevin
// reservoir and s present only for the oscillatory (ou2) reservoir.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nessim/errors.hpp"
#include "nessim/linalg.hpp"
#include "nessim/random.hpp"

namespace nessim {

struct PotentialTerm {
  double coefficient = 0.0;
  int exponent = 2;
};

struct PotentialSpec {
  std::vector<PotentialTerm> one_body;
  std::vector<PotentialTerm> two_body;
};

enum class ReservoirKind { ou1, ou2, langevin };

inline const char* to_string(ReservoirKind kind) {
  switch (kind) {
    case ReservoirKind::ou1: return "ou1";
    case ReservoirKind::ou2: return "ou2";
    case ReservoirKind::langevin: return "langevin";
  }
  return "?";
}

struct ChainParams {
  int n = 2;
  int d = 1;
  double lambda = 1.0;
  double gamma = 1.0;
  double sigma = 0.0;
  double t1 = 0.0;
  double tn = 0.0;
  ReservoirKind kind = ReservoirKind::ou1;
  int max_dof = 64;  // cap on n*d keeping the dense oracle solves small

  double t_max() const noexcept { return std::max(t1, tn); }
  /// Trace of the temperature map on R^{2d}.
  double t_trace() const noexcept { return d * (t1 + tn); }
  /// Relaxation rate multiplying the bath noise: gamma, or eta^2 = lambda^2 for Langevin.
  double bath_rate() const noexcept { return kind == ReservoirKind::langevin ? lambda * lambda : gamma; }
  std::size_t aux_size() const noexcept { return kind == ReservoirKind::langevin ? 0 : static_cast<std::size_t>(2 * d); }
  bool has_s() const noexcept { return kind == ReservoirKind::ou2; }
  std::size_t state_size() const noexcept {
    return static_cast<std::size_t>(2 * n * d) + aux_size() + (has_s() ? static_cast<std::size_t>(2 * d) : 0);
  }
};

/// Throws DomainError when a positivity or shape invariant is violated.
inline void validate_params(const ChainParams& p) {
  if (p.n < 2) throw DomainError("chain length n must be >= 2");
  if (p.d < 1) throw DomainError("space dimension d must be >= 1");
  if (p.n * p.d > p.max_dof) throw DomainError("n*d exceeds the configured cap of " + std::to_string(p.max_dof));
  if (!(p.lambda >= 0.0) || !std::isfinite(p.lambda)) throw DomainError("coupling lambda must be >= 0");
  if (!(p.gamma > 0.0) || !std::isfinite(p.gamma)) throw DomainError("relaxation gamma must be > 0");
  if (!(p.sigma >= 0.0) || !std::isfinite(p.sigma)) throw DomainError("reservoir frequency sigma must be >= 0");
  if (p.kind == ReservoirKind::ou2 && !(p.sigma > 0.0)) throw DomainError("reservoir ou2 requires sigma > 0");
  if (!(p.t1 >= 0.0) || !(p.tn >= 0.0) || !std::isfinite(p.t1) || !std::isfinite(p.tn))
    throw DomainError("temperatures must be >= 0");
}

class State {
 public:
  State() = default;
  explicit State(const ChainParams& params)
      : n_(params.n), d_(params.d), aux_(params.aux_size()), has_s_(params.has_s()), data_(params.state_size(), 0.0) {}

  int sites() const noexcept { return n_; }
  int dim() const noexcept { return d_; }
  bool has_r() const noexcept { return aux_ > 0; }
  bool has_s() const noexcept { return has_s_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  std::span<double> p() noexcept { return {data_.data(), chain()}; }
  std::span<const double> p() const noexcept { return {data_.data(), chain()}; }
  std::span<double> q() noexcept { return {data_.data() + chain(), chain()}; }
  std::span<const double> q() const noexcept { return {data_.data() + chain(), chain()}; }
  std::span<double> r() noexcept { return {data_.data() + 2 * chain(), aux_}; }
  std::span<const double> r() const noexcept { return {data_.data() + 2 * chain(), aux_}; }
  std::span<double> s() noexcept { return {data_.data() + 2 * chain() + aux_, has_s_ ? aux_ : 0}; }
  std::span<const double> s() const noexcept { return {data_.data() + 2 * chain() + aux_, has_s_ ? aux_ : 0}; }

  // Site and bath indices are 0-based; bath 0 is the left end, bath 1 the right end.
  double& p(int site, int k) noexcept { return data_[static_cast<std::size_t>(site * d_ + k)]; }
  double& q(int site, int k) noexcept { return data_[chain() + static_cast<std::size_t>(site * d_ + k)]; }
  double& r(int bath, int k) noexcept { return data_[2 * chain() + static_cast<std::size_t>(bath * d_ + k)]; }
  double p(int site, int k) const noexcept { return data_[static_cast<std::size_t>(site * d_ + k)]; }
  double q(int site, int k) const noexcept { return data_[chain() + static_cast<std::size_t>(site * d_ + k)]; }
  double r(int bath, int k) const noexcept { return data_[2 * chain() + static_cast<std::size_t>(bath * d_ + k)]; }

  bool finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const State&, const State&) = default;

 private:
  std::size_t chain() const noexcept { return static_cast<std::size_t>(n_ * d_); }

  int n_ = 0;
  int d_ = 0;
  std::size_t aux_ = 0;
  bool has_s_ = false;
  std::vector<double> data_;
};

namespace detail {

template <class T>
T ipow(T base, int e) {
  T result(1.0);
  while (e > 0) {
    if (e & 1) result = result * base;
    base = base * base;
    e >>= 1;
  }
  return result;
}

inline void require_finite(std::span<const double> v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw DomainError(std::string(what) + ": non-finite input");
}

inline void require_shape(const ChainParams& params, std::size_t got, const char* what) {
  if (got != static_cast<std::size_t>(params.n * params.d))
    throw DomainError(std::string(what) + ": expected " + std::to_string(params.n * params.d) + " coordinates");
}

/// Value of sum_k a_k |x|^k for x in R^d.
inline double term_sum(const std::vector<PotentialTerm>& terms, std::span<const double> x) {
  double sq = 0.0;
  for (double v : x) sq += v * v;
  double total = 0.0;
  for (const auto& t : terms) total += t.coefficient * ipow(sq, t.exponent / 2);
  return total;
}

/// out += sign * grad (sum_k a_k |x|^k).
template <class T>
void add_term_gradient(const std::vector<PotentialTerm>& terms, std::span<const T> x, std::span<T> out, double sign) {
  T sq(0.0);
  for (const T& v : x) sq = sq + v * v;
  for (const auto& t : terms) {
    const T factor = ipow(sq, t.exponent / 2 - 1) * (sign * t.coefficient * t.exponent);
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = out[k] + factor * x[k];
  }
}

/// Hessian of sum_k a_k |x|^k, d x d row-major, added into out with the given sign.
inline void add_term_hessian(const std::vector<PotentialTerm>& terms, std::span<const double> x, Matrix& out,
                             std::size_t row0, std::size_t col0, double sign) {
  const std::size_t d = x.size();
  double sq = 0.0;
  for (double v : x) sq += v * v;
  for (const auto& t : terms) {
    const int k = t.exponent;
    const double radial = t.coefficient * k * ipow(sq, k / 2 - 1);
    const double outer = k >= 4 ? t.coefficient * k * (k - 2) * ipow(sq, k / 2 - 2) : 0.0;
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) {
        double h = outer * x[a] * x[b];
        if (a == b) h += radial;
        out(row0 + a, col0 + b) += sign * h;
      }
  }
}

inline int leading_exponent(const std::vector<PotentialTerm>& terms) {
  int k = 0;
  for (const auto& t : terms)
    if (t.coefficient != 0.0) k = std::max(k, t.exponent);
  return k;
}

inline double coefficient_of(const std::vector<PotentialTerm>& terms, int exponent) {
  double c = 0.0;
  for (const auto& t : terms)
    if (t.exponent == exponent) c += t.coefficient;
  return c;
}

}  // namespace detail

/// V_eff(q) for q of shape n x d (row-major by site).
inline double potential_energy(const PotentialSpec& spec, const ChainParams& params, std::span<const double> q) {
  detail::require_shape(params, q.size(), "potential_energy");
  detail::require_finite(q, "potential_energy");
  const auto n = static_cast<std::size_t>(params.n);
  const auto d = static_cast<std::size_t>(params.d);
  double v = 0.0;
  std::vector<double> diff(d);
  for (std::size_t i = 0; i < n; ++i) {
    v += detail::term_sum(spec.one_body, q.subspan(i * d, d));
    if (i + 1 < n) {
      for (std::size_t k = 0; k < d; ++k) diff[k] = q[i * d + k] - q[(i + 1) * d + k];
      v += detail::term_sum(spec.two_body, diff);
    }
  }
  double edge = 0.0;
  for (std::size_t k = 0; k < d; ++k) edge += q[k] * q[k] + q[(n - 1) * d + k] * q[(n - 1) * d + k];
  return v - 0.5 * params.lambda * params.lambda * edge;
}

/// grad V_eff, generic in the scalar type so that the exact-derivative jets of
/// the bracket computations can flow through it. Writes into grad.
template <class T>
void potential_gradient_into(const PotentialSpec& spec, const ChainParams& params, std::span<const T> q,
                             std::span<T> grad) {
  const auto n = static_cast<std::size_t>(params.n);
  const auto d = static_cast<std::size_t>(params.d);
  for (auto& g : grad) g = T(0.0);
  std::vector<T> diff(d);
  for (std::size_t i = 0; i < n; ++i) {
    detail::add_term_gradient<T>(spec.one_body, q.subspan(i * d, d), grad.subspan(i * d, d), 1.0);
    if (i + 1 < n) {
      for (std::size_t k = 0; k < d; ++k) diff[k] = q[i * d + k] - q[(i + 1) * d + k];
      detail::add_term_gradient<T>(spec.two_body, std::span<const T>(diff), grad.subspan(i * d, d), 1.0);
      detail::add_term_gradient<T>(spec.two_body, std::span<const T>(diff), grad.subspan((i + 1) * d, d), -1.0);
    }
  }
  const double l2 = params.lambda * params.lambda;
  for (std::size_t k = 0; k < d; ++k) {
    grad[k] = grad[k] - q[k] * l2;
    grad[(n - 1) * d + k] = grad[(n - 1) * d + k] - q[(n - 1) * d + k] * l2;
  }
}

inline std::vector<double> potential_gradient(const PotentialSpec& spec, const ChainParams& params,
                                              std::span<const double> q) {
  detail::require_shape(params, q.size(), "potential_gradient");
  detail::require_finite(q, "potential_gradient");
  std::vector<double> g(q.size());
  potential_gradient_into<double>(spec, params, q, g);
  return g;
}

/// (nd) x (nd) Hessian of V_eff; block-tridiagonal in the site index.
inline Matrix potential_hessian(const PotentialSpec& spec, const ChainParams& params, std::span<const double> q) {
  detail::require_shape(params, q.size(), "potential_hessian");
  detail::require_finite(q, "potential_hessian");
  const auto n = static_cast<std::size_t>(params.n);
  const auto d = static_cast<std::size_t>(params.d);
  Matrix h(n * d, n * d);
  std::vector<double> diff(d);
  for (std::size_t i = 0; i < n; ++i) {
    detail::add_term_hessian(spec.one_body, q.subspan(i * d, d), h, i * d, i * d, 1.0);
    if (i + 1 < n) {
      for (std::size_t k = 0; k < d; ++k) diff[k] = q[i * d + k] - q[(i + 1) * d + k];
      const std::size_t j = i + 1;
      detail::add_term_hessian(spec.two_body, diff, h, i * d, i * d, 1.0);
      detail::add_term_hessian(spec.two_body, diff, h, j * d, j * d, 1.0);
      detail::add_term_hessian(spec.two_body, diff, h, i * d, j * d, -1.0);
      detail::add_term_hessian(spec.two_body, diff, h, j * d, i * d, -1.0);
    }
  }
  const double l2 = params.lambda * params.lambda;
  for (std::size_t k = 0; k < d; ++k) {
    h(k, k) -= l2;
    h((n - 1) * d + k, (n - 1) * d + k) -= l2;
  }
  return h;
}

inline double kinetic_energy(const State& x) {
  double e = 0.0;
  for (double v : x.p()) e += v * v;
  return 0.5 * e;
}

/// G = |p|^2/2 + V_eff(q) + |r|^2/2 (+ |s|^2/2 for the ou2 reservoir).
inline double extended_energy(const PotentialSpec& spec, const ChainParams& params, const State& x) {
  if (x.size() != params.state_size()) throw DomainError("extended_energy: state shape does not match parameters");
  detail::require_finite(x.data(), "extended_energy");
  double aux = 0.0;
  for (double v : x.r()) aux += v * v;
  for (double v : x.s()) aux += v * v;
  return kinetic_energy(x) + potential_energy(spec, params, x.q()) + 0.5 * aux;
}

struct GrowthReport {
  int k1 = 0;
  int k2 = 0;
  bool pass = false;
  std::vector<std::string> reasons;   // why it fails
  std::vector<std::string> warnings;  // non-fatal observations
  // Empirical constants sup ||d^2 U|| / (C + U)^(1 - 2/k) on the radius grid, one per potential.
  double hessian_bound_one_body = 0.0;
  double hessian_bound_two_body = 0.0;
  bool hessian_bound_stable = true;
};

namespace detail {

// Spectral norm of a symmetric matrix by power iteration.
inline double spectral_norm(const Matrix& h, int iterations = 200) {
  const std::size_t n = h.rows();
  if (n == 0) return 0.0;
  std::vector<double> v(n);
  Rng rng(0x5eedULL);
  for (auto& x : v) x = rng.normal();
  double estimate = 0.0;
  for (int it = 0; it < iterations; ++it) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    for (auto& x : v) x /= norm;
    auto w = h.apply(v);
    double wn = 0.0;
    for (double x : w) wn += x * x;
    wn = std::sqrt(wn);
    if (std::abs(wn - estimate) <= 1e-13 * wn) {
      estimate = wn;
      break;
    }
    estimate = wn;
    v = std::move(w);
  }
  return estimate;
}

// sup over a log-spaced radius grid in [1, 1e4] of ||d^2U(x)|| / (C + U(x))^(1 - 2/k),
// evaluated along random directions. Also reports whether the ratio over the
// last decade stays within a factor 2 of the ratio over the first decades.
inline std::pair<double, bool> hessian_growth_constant(const std::vector<PotentialTerm>& terms, int k, int d) {
  if (terms.empty() || k < 2) return {0.0, true};
  Rng rng(0x4831ULL);
  constexpr int radii = 41;
  std::vector<double> ratios;
  ratios.reserve(radii);
  std::vector<double> dir(static_cast<std::size_t>(d));
  for (int trial = 0; trial < 4; ++trial) {
    double norm = 0.0;
    for (auto& x : dir) {
      x = rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : dir) x /= norm;
    double floor_c = 1.0;
    for (int i = 0; i < radii; ++i) {
      const double rad = std::pow(10.0, 4.0 * i / (radii - 1));
      std::vector<double> x(dir);
      for (auto& v : x) v *= rad;
      floor_c = std::max(floor_c, 1.0 - term_sum(terms, x));
    }
    double early = 0.0;
    double late = 0.0;
    for (int i = 0; i < radii; ++i) {
      const double rad = std::pow(10.0, 4.0 * i / (radii - 1));
      std::vector<double> x(dir);
      for (auto& v : x) v *= rad;
      Matrix h(static_cast<std::size_t>(d), static_cast<std::size_t>(d));
      add_term_hessian(terms, x, h, 0, 0, 1.0);
      const double base = floor_c + term_sum(terms, x);
      const double ratio = spectral_norm(h) / std::pow(base, 1.0 - 2.0 / k);
      ratios.push_back(ratio);
      if (i < radii - 10) early = std::max(early, ratio);
      else late = std::max(late, ratio);
    }
    if (late > 2.0 * std::max(early, 1e-300)) return {*std::max_element(ratios.begin(), ratios.end()), false};
  }
  return {*std::max_element(ratios.begin(), ratios.end()), true};
}

}  // namespace detail

/// Checks the growth assumption: leading exponents k2 >= k1 >= 2, positive
/// leading coefficients, even exponents, and the Hessian growth bound.
inline GrowthReport validate_growth(const PotentialSpec& spec, const ChainParams& params) {
  GrowthReport rep;
  auto check_terms = [&](const std::vector<PotentialTerm>& terms, const char* name) {
    for (const auto& t : terms) {
      if (t.exponent < 2 || t.exponent % 2 != 0)
        rep.reasons.push_back(std::string(name) + " exponent " + std::to_string(t.exponent) + " is not even and >= 2");
      if (!std::isfinite(t.coefficient)) rep.reasons.push_back(std::string(name) + " coefficient is not finite");
    }
  };
  check_terms(spec.one_body, "one-body");
  check_terms(spec.two_body, "two-body");

  rep.k1 = detail::leading_exponent(spec.one_body);
  rep.k2 = detail::leading_exponent(spec.two_body);
  if (rep.k1 == 0) rep.reasons.push_back("one-body potential U1 has no non-zero term");
  if (rep.k2 == 0) rep.reasons.push_back("two-body potential U2 has no non-zero term");
  if (rep.k1 != 0 && rep.k2 != 0 && rep.k2 < rep.k1)
    rep.reasons.push_back("k2 < k1: H1 requires k2 >= k1 >= 2 (got k1 = " + std::to_string(rep.k1) +
                          ", k2 = " + std::to_string(rep.k2) + ")");
  if (rep.k1 != 0 && detail::coefficient_of(spec.one_body, rep.k1) <= 0.0)
    rep.reasons.push_back("leading one-body coefficient must be > 0 (potential unbounded below)");
  if (rep.k2 != 0 && detail::coefficient_of(spec.two_body, rep.k2) <= 0.0)
    rep.reasons.push_back("leading two-body coefficient must be > 0 (potential unbounded below)");

  if (rep.reasons.empty()) {
    auto [c1, ok1] = detail::hessian_growth_constant(spec.one_body, rep.k1, params.d);
    auto [c2, ok2] = detail::hessian_growth_constant(spec.two_body, rep.k2, params.d);
    rep.hessian_bound_one_body = c1;
    rep.hessian_bound_two_body = c2;
    rep.hessian_bound_stable = ok1 && ok2;
    if (!rep.hessian_bound_stable) rep.reasons.push_back("Hessian growth bound ||d^2U|| <= (C + D U)^(1-2/k) violated");
  }

  const double boundary_quadratic = detail::coefficient_of(spec.one_body, 2) - 0.5 * params.lambda * params.lambda;
  if (boundary_quadratic <= 0.0 && params.lambda > 0.0)
    rep.warnings.push_back("effective boundary one-body quadratic coefficient " + std::to_string(boundary_quadratic) +
                           " <= 0: the -lambda^2 q^2/2 correction makes the boundary quadratic part non-confining");
  rep.pass = rep.reasons.empty();
  return rep;
}

/// Random state on the energy shell {G = energy}. Interior placement puts all
/// of the energy into q_2..q_{n-1} (all of q when n == 2), everything else at
/// rest; full placement uses a random direction in the whole phase space.
enum class ShellPlacement { interior, full };

inline State sample_energy_shell(const PotentialSpec& spec, const ChainParams& params, double energy, Rng& rng,
                                 ShellPlacement placement = ShellPlacement::interior) {
  if (!(energy > 0.0) || !std::isfinite(energy)) throw DomainError("sample_energy_shell: energy must be > 0");
  State dir(params);
  const int d = params.d;
  if (placement == ShellPlacement::interior) {
    const int first = params.n > 2 ? 1 : 0;
    const int last = params.n > 2 ? params.n - 2 : params.n - 1;
    for (int i = first; i <= last; ++i)
      for (int k = 0; k < d; ++k) dir.q(i, k) = rng.normal();
  } else {
    for (double& v : dir.data()) v = rng.normal();
  }
  double norm = 0.0;
  for (double v : dir.data()) norm += v * v;
  norm = std::sqrt(norm);
  for (double& v : dir.data()) v /= norm;

  auto energy_at = [&](double scale) {
    State x = dir;
    for (double& v : x.data()) v *= scale;
    return std::pair{extended_energy(spec, params, x), x};
  };
  double lo = 0.0;
  double hi = 1.0;
  while (energy_at(hi).first < energy) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e154) throw DomainError("sample_energy_shell: energy level not reachable");
  }
  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    auto [g, x] = energy_at(mid);
    if (std::abs(g - energy) <= 1e-10 * energy) return x;
    (g < energy ? lo : hi) = mid;
  }
  auto [g, x] = energy_at(0.5 * (lo + hi));
  if (std::abs(g - energy) > 1e-10 * energy) throw DomainError("sample_energy_shell: bisection did not converge");
  return x;
}

}  // namespace nessim
