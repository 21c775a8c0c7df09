#pragma once

// Lie brackets of the drift and diffusion vector fields, the Hormander rank
// test, and the control system obtained by replacing the noise with a control.
//
// Derivatives are exact: fields are evaluated on Jet scalars, truncated
// polynomials in nilpotent infinitesimals e_1..e_K (e_i^2 = 0), one
// infinitesimal per nesting level of the bracket. Coefficients are indexed by
// subsets of {1..K}; the product is a subset convolution.

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "nessim/chain_model.hpp"
#include "nessim/errors.hpp"
#include "nessim/linalg.hpp"
#include "nessim/sde_dynamics.hpp"

namespace nessim {

class Jet {
 public:
  static constexpr int kMaxOrder = 6;
  static constexpr int kSize = 1 << kMaxOrder;

  Jet() = default;
  Jet(double value) { c_[0] = value; }  // NOLINT(google-explicit-constructor)

  int order() const noexcept { return order_; }
  double value() const noexcept { return c_[0]; }
  double operator[](unsigned mask) const noexcept { return c_[mask]; }
  double& operator[](unsigned mask) noexcept { return c_[mask]; }
  void set_order(int k) {
    if (k > kMaxOrder) throw DomainError("Jet: bracket nesting deeper than " + std::to_string(kMaxOrder));
    order_ = k;
  }

  friend Jet operator+(const Jet& a, const Jet& b) {
    Jet out;
    out.order_ = std::max(a.order_, b.order_);
    const unsigned n = 1u << out.order_;
    for (unsigned s = 0; s < n; ++s) out.c_[s] = a.c_[s] + b.c_[s];
    return out;
  }
  friend Jet operator-(const Jet& a, const Jet& b) {
    Jet out;
    out.order_ = std::max(a.order_, b.order_);
    const unsigned n = 1u << out.order_;
    for (unsigned s = 0; s < n; ++s) out.c_[s] = a.c_[s] - b.c_[s];
    return out;
  }
  friend Jet operator-(const Jet& a) {
    Jet out;
    out.order_ = a.order_;
    const unsigned n = 1u << out.order_;
    for (unsigned s = 0; s < n; ++s) out.c_[s] = -a.c_[s];
    return out;
  }
  friend Jet operator*(const Jet& a, double k) {
    Jet out;
    out.order_ = a.order_;
    const unsigned n = 1u << out.order_;
    for (unsigned s = 0; s < n; ++s) out.c_[s] = a.c_[s] * k;
    return out;
  }
  friend Jet operator*(double k, const Jet& a) { return a * k; }
  friend Jet operator*(const Jet& a, const Jet& b) {
    if (a.order_ == 0) return b * a.c_[0];
    if (b.order_ == 0) return a * b.c_[0];
    Jet out;
    out.order_ = std::max(a.order_, b.order_);
    const unsigned n = 1u << out.order_;
    for (unsigned s = 0; s < n; ++s) {
      double acc = 0.0;
      // all subsets t of s
      for (unsigned t = s;; t = (t - 1) & s) {
        acc += a.c_[t] * b.c_[s ^ t];
        if (t == 0) break;
      }
      out.c_[s] = acc;
    }
    return out;
  }

 private:
  std::array<double, kSize> c_{};
  int order_ = 0;
};

using JetVector = std::vector<Jet>;

struct VectorField {
  std::string label;
  bool constant = false;
  std::function<JetVector(const JetVector&)> eval;
};

namespace detail {

inline int jet_order(const JetVector& v) {
  int k = 0;
  for (const auto& j : v) k = std::max(k, j.order());
  return k;
}

// x + e_{k+1} * dir, where k is the order of x.
inline JetVector push_direction(const JetVector& x, const JetVector& dir, int k) {
  const unsigned bit = 1u << k;
  JetVector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    Jet j = x[i];
    j.set_order(k + 1);
    for (unsigned s = 0; s < bit; ++s) j[s | bit] = dir[i][s];
    out[i] = j;
  }
  return out;
}

// Coefficient of e_{k+1}, as a jet of order k.
inline JetVector pull_direction(const JetVector& y, int k) {
  const unsigned bit = 1u << k;
  JetVector out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    Jet j;
    j.set_order(k);
    if (y[i].order() > k)
      for (unsigned s = 0; s < bit; ++s) j[s] = y[i][s | bit];
    out[i] = j;
  }
  return out;
}

inline JetVector to_jets(std::span<const double> x) { return JetVector(x.begin(), x.end()); }

inline std::vector<double> values(const JetVector& v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i].value();
  return out;
}

inline double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace detail

/// Directional derivative DG(x) . v, exact on jets.
inline JetVector directional_derivative(const VectorField& g, const JetVector& x, const JetVector& v) {
  const int k = std::max(detail::jet_order(x), detail::jet_order(v));
  return detail::pull_direction(g.eval(detail::push_direction(x, v, k)), k);
}

/// The field [F, G] = DG . F - DF . G.
inline VectorField bracket_field(const VectorField& f, const VectorField& g) {
  VectorField out;
  out.label = "[" + f.label + "," + g.label + "]";
  out.constant = f.constant && g.constant;
  if (out.constant) {
    out.eval = [](const JetVector& x) { return JetVector(x.size(), Jet(0.0)); };
    return out;
  }
  auto fp = std::make_shared<VectorField>(f);
  auto gp = std::make_shared<VectorField>(g);
  out.eval = [fp, gp](const JetVector& x) {
    JetVector res(x.size(), Jet(0.0));
    if (!gp->constant) {
      const JetVector dg_f = directional_derivative(*gp, x, fp->eval(x));
      for (std::size_t i = 0; i < x.size(); ++i) res[i] = res[i] + dg_f[i];
    }
    if (!fp->constant) {
      const JetVector df_g = directional_derivative(*fp, x, gp->eval(x));
      for (std::size_t i = 0; i < x.size(); ++i) res[i] = res[i] - df_g[i];
    }
    return res;
  };
  return out;
}

/// [F, G](x) with exact Jacobians.
inline std::vector<double> lie_bracket(const VectorField& f, const VectorField& g, std::span<const double> x) {
  detail::require_finite(x, "lie_bracket");
  return detail::values(bracket_field(f, g).eval(detail::to_jets(x)));
}

/// [F, G](x) with central differences along normalised directions, step h = 1e-5 (1 + |x|).
inline std::vector<double> lie_bracket_fd(const VectorField& f, const VectorField& g, std::span<const double> x) {
  detail::require_finite(x, "lie_bracket_fd");
  const double h = 1e-5 * (1.0 + detail::norm(x));
  auto at = [](const VectorField& field, std::span<const double> y) { return detail::values(field.eval(detail::to_jets(y))); };
  auto derivative = [&](const VectorField& field, const std::vector<double>& dir) {
    const double len = detail::norm(dir);
    std::vector<double> out(x.size(), 0.0);
    if (len == 0.0) return out;
    std::vector<double> plus(x.begin(), x.end()), minus(x.begin(), x.end());
    for (std::size_t i = 0; i < x.size(); ++i) {
      plus[i] += h * dir[i] / len;
      minus[i] -= h * dir[i] / len;
    }
    const auto a = at(field, plus);
    const auto b = at(field, minus);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (a[i] - b[i]) / (2.0 * h) * len;
    return out;
  };
  const auto fx = at(f, x);
  const auto gx = at(g, x);
  const auto dg_f = derivative(g, fx);
  const auto df_g = derivative(f, gx);
  std::vector<double> res(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) res[i] = dg_f[i] - df_g[i];
  return res;
}

inline VectorField drift_vector_field(const Model& model) {
  auto m = std::make_shared<Model>(model);
  return VectorField{"X0", false, [m](const JetVector& x) {
                       JetVector out(x.size());
                       drift_into<Jet>(*m, std::span<const Jet>(x), std::span<Jet>(out));
                       return out;
                     }};
}

inline VectorField constant_vector_field(std::string label, std::vector<double> v) {
  return VectorField{std::move(label), true, [v = std::move(v)](const JetVector&) {
                       return JetVector(v.begin(), v.end());
                     }};
}

/// Diffusion fields sqrt(rate T_i) d/d r_i^{(j)} (boundary momenta for Langevin);
/// fields of a bath at zero temperature are omitted.
inline std::vector<VectorField> diffusion_vector_fields(const Model& model) {
  const auto& prm = model.params;
  const auto d = static_cast<std::size_t>(prm.d);
  const auto nd = static_cast<std::size_t>(prm.n * prm.d);
  const std::size_t m = prm.state_size();
  const bool langevin = prm.kind == ReservoirKind::langevin;
  std::vector<VectorField> out;
  const double temps[2] = {prm.t1, prm.tn};
  for (int b = 0; b < 2; ++b) {
    if (temps[b] <= 0.0) continue;
    const double amp = std::sqrt(prm.bath_rate() * temps[b]);
    for (std::size_t k = 0; k < d; ++k) {
      std::vector<double> v(m, 0.0);
      std::size_t row = 0;
      if (langevin) row = (b == 0 ? 0 : static_cast<std::size_t>(prm.n - 1) * d) + k;
      else row = 2 * nd + static_cast<std::size_t>(b) * d + k;
      v[row] = amp;
      const std::string site = b == 0 ? "1" : std::to_string(prm.n);
      out.push_back(constant_vector_field("X_" + site + "_" + std::to_string(k + 1), std::move(v)));
    }
  }
  return out;
}

/// Smallest power of the two-body potential minus one: the order of the
/// first derivative of grad U2 that does not vanish at the origin.
inline int infer_m0(const PotentialSpec& spec) {
  int kmin = 0;
  for (const auto& t : spec.two_body)
    if (t.coefficient != 0.0 && (kmin == 0 || t.exponent < kmin)) kmin = t.exponent;
  return std::max(1, kmin - 1);
}

inline bool is_quadratic(const PotentialSpec& spec) {
  for (const auto* terms : {&spec.one_body, &spec.two_body})
    for (const auto& t : *terms)
      if (t.exponent > 2 && t.coefficient != 0.0) return false;
  return true;
}

struct HormanderReport {
  int rank = 0;
  int full_rank = 0;
  int depth_reached = -1;        // first depth at which the rank is full, -1 if never
  std::vector<int> rank_by_depth;
  std::vector<std::string> witness;  // labels of an independent subset
  bool truncated = false;            // generation size cap hit
  bool full() const noexcept { return rank == full_rank; }
};

/// Rank of {X_i} and their iterated brackets (with X0 and among themselves) at x.
/// Depth 0 is the diffusion fields alone; depth g adds [Y, X0] and [Y, Z] for Y
/// created at depth g-1 and Z created earlier. Stops at full rank.
inline HormanderReport hormander_rank(const Model& model, std::span<const double> x, int max_depth = -1,
                                      std::size_t generation_cap = 4000) {
  if (max_depth < 0) max_depth = infer_m0(model.spec) + 3;
  if (max_depth > Jet::kMaxOrder) max_depth = Jet::kMaxOrder;
  detail::require_finite(x, "hormander_rank");
  const auto& prm = model.params;
  const std::size_t m = prm.state_size();
  const auto nd = static_cast<std::size_t>(prm.n * prm.d);
  HormanderReport rep;
  rep.full_rank = static_cast<int>(m);

  const VectorField x0 = drift_vector_field(model);
  const bool quadratic = is_quadratic(model.spec);
  const JetVector point = detail::to_jets(x);

  struct Member {
    VectorField field;
    std::vector<double> value;
  };
  std::vector<std::vector<Member>> gens;
  std::vector<std::vector<double>> basis;  // orthonormal, for the greedy witness
  std::vector<std::vector<double>> normalized;

  auto admit = [&](const VectorField& f) {
    auto v = detail::values(f.eval(point));
    const double len = detail::norm(v);
    if (len > 0.0) {
      std::vector<double> u(v);
      for (double& c : u) c /= len;
      normalized.push_back(u);
      std::vector<double> w(u);
      for (const auto& b : basis) {
        double dot = 0.0;
        for (std::size_t i = 0; i < m; ++i) dot += w[i] * b[i];
        for (std::size_t i = 0; i < m; ++i) w[i] -= dot * b[i];
      }
      const double rest = detail::norm(w);
      if (rest > 1e-9) {
        for (double& c : w) c /= rest;
        basis.push_back(std::move(w));
        rep.witness.push_back(f.label);
      }
    }
    return Member{f, std::move(v)};
  };
  auto current_rank = [&] {
    if (normalized.empty()) return 0;
    Matrix mat(normalized.size(), m);
    for (std::size_t i = 0; i < normalized.size(); ++i)
      for (std::size_t j = 0; j < m; ++j) mat(i, j) = normalized[i][j];
    return numerical_rank(mat, 1e-9);
  };

  std::vector<Member> gen0;
  for (const auto& f : diffusion_vector_fields(model)) gen0.push_back(admit(f));
  gens.push_back(std::move(gen0));
  rep.rank = current_rank();
  rep.rank_by_depth.push_back(rep.rank);
  if (rep.full()) rep.depth_reached = 0;

  for (int depth = 1; depth <= max_depth && !rep.full(); ++depth) {
    std::vector<Member> next;
    const auto& prev = gens.back();
    for (const auto& y : prev) {
      VectorField br = bracket_field(y.field, x0);
      bool q_free = true;
      for (std::size_t i = nd; i < 2 * nd; ++i)
        if (y.value[i] != 0.0) q_free = false;
      br.constant = y.field.constant && (quadratic || q_free);
      next.push_back(admit(br));
    }
    for (std::size_t yi = 0; yi < prev.size(); ++yi) {
      const auto& y = prev[yi];
      for (std::size_t g = 0; g < gens.size(); ++g) {
        const std::size_t limit = g + 1 == gens.size() ? yi : gens[g].size();
        for (std::size_t zi = 0; zi < limit; ++zi) {
          const auto& z = gens[g][zi];
          if (y.field.constant && z.field.constant) continue;
          if (next.size() >= generation_cap) {
            rep.truncated = true;
            break;
          }
          VectorField br = bracket_field(y.field, z.field);
          next.push_back(admit(br));
        }
      }
    }
    gens.push_back(std::move(next));
    rep.rank = current_rank();
    rep.rank_by_depth.push_back(rep.rank);
    if (rep.full()) rep.depth_reached = depth;
  }
  return rep;
}

/// Integrates the control system (drift plus control u(t) on the forcing
/// rows: r, or the boundary momenta for Langevin) with classical RK4.
inline State control_flow(const Model& model, const std::function<std::vector<double>(double)>& u, const State& x0,
                          double dt, double horizon, double blowup_threshold = 1e12) {
  const auto& prm = model.params;
  if (x0.size() != prm.state_size()) throw DomainError("control_flow: state shape does not match the model");
  if (!x0.finite()) throw DomainError("control_flow: initial state is not finite");
  if (!(dt > 0.0) || !(horizon >= 0.0)) throw DomainError("control_flow: dt must be > 0 and horizon >= 0");
  const auto d = static_cast<std::size_t>(prm.d);
  const auto nd = static_cast<std::size_t>(prm.n * prm.d);
  std::vector<std::size_t> rows;
  if (prm.kind == ReservoirKind::langevin) {
    for (std::size_t k = 0; k < d; ++k) rows.push_back(k);
    for (std::size_t k = 0; k < d; ++k) rows.push_back(static_cast<std::size_t>(prm.n - 1) * d + k);
  } else {
    for (std::size_t k = 0; k < 2 * d; ++k) rows.push_back(2 * nd + k);
  }
  const std::size_t m = x0.size();
  auto rhs = [&](double t, const std::vector<double>& y, std::vector<double>& out) {
    drift_into<double>(model, y, out);
    const auto c = u(t);
    if (c.size() != rows.size()) throw DomainError("control_flow: control must have 2*d channels");
    for (std::size_t j = 0; j < rows.size(); ++j) out[rows[j]] += c[j];
  };
  std::vector<double> y(x0.data().begin(), x0.data().end());
  std::vector<double> k1(m), k2(m), k3(m), k4(m), tmp(m);
  const auto steps = static_cast<std::int64_t>(std::llround(horizon / dt));
  const double h = steps > 0 ? horizon / static_cast<double>(steps) : 0.0;
  State x = x0;
  for (std::int64_t s = 0; s < steps; ++s) {
    const double t = static_cast<double>(s) * h;
    rhs(t, y, k1);
    for (std::size_t i = 0; i < m; ++i) tmp[i] = y[i] + 0.5 * h * k1[i];
    rhs(t + 0.5 * h, tmp, k2);
    for (std::size_t i = 0; i < m; ++i) tmp[i] = y[i] + 0.5 * h * k2[i];
    rhs(t + 0.5 * h, tmp, k3);
    for (std::size_t i = 0; i < m; ++i) tmp[i] = y[i] + h * k3[i];
    rhs(t + h, tmp, k4);
    for (std::size_t i = 0; i < m; ++i) y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    std::copy(y.begin(), y.end(), x.data().begin());
    bool finite = x.finite();
    const double g = finite ? extended_energy(model, x) : INFINITY;
    if (!finite || g > blowup_threshold) throw BlowUp(s + 1, g);
  }
  return x;
}

}  // namespace nessim
