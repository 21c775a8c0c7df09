#pragma once

// Exact linear-Gaussian solution of the harmonic chain: dx = A x dt + B dW.

#include <algorithm>
#include <cmath>
#include <complex>
#include <ostream>
#include <vector>

#include "nessim/chain_model.hpp"
#include "nessim/errors.hpp"
#include "nessim/linalg.hpp"
#include "nessim/sde_dynamics.hpp"

namespace nessim {

struct LinearModel {
  Matrix a;  // m x m drift
  Matrix b;  // m x 2d noise, one column per bath coordinate
  ChainParams params;
  // Offsets of the p, q, r, s blocks in the state vector (r, s equal m when absent).
  std::size_t p_offset = 0, q_offset = 0, r_offset = 0, s_offset = 0;

  std::size_t dim() const noexcept { return a.rows(); }
  /// Rows where external forcing enters: r for the OU reservoirs, boundary momenta for Langevin.
  std::vector<std::size_t> forcing_rows() const {
    std::vector<std::size_t> rows;
    const auto d = static_cast<std::size_t>(params.d);
    if (params.kind == ReservoirKind::langevin) {
      const auto last = static_cast<std::size_t>(params.n - 1) * d;
      for (std::size_t k = 0; k < d; ++k) rows.push_back(p_offset + k);
      for (std::size_t k = 0; k < d; ++k) rows.push_back(p_offset + last + k);
    } else {
      for (std::size_t k = 0; k < 2 * d; ++k) rows.push_back(r_offset + k);
    }
    return rows;
  }
};

inline LinearModel linearize(const Model& model) {
  for (const auto* terms : {&model.spec.one_body, &model.spec.two_body})
    for (const auto& t : *terms)
      if (t.exponent > 2 && t.coefficient != 0.0)
        throw NonQuadratic("linearize: potential term of exponent " + std::to_string(t.exponent) + " is not quadratic");
  const auto& prm = model.params;
  validate_params(prm);
  const auto nd = static_cast<std::size_t>(prm.n * prm.d);
  const auto d = static_cast<std::size_t>(prm.d);
  const auto last = static_cast<std::size_t>(prm.n - 1) * d;
  const std::size_t m = prm.state_size();

  LinearModel lm;
  lm.params = prm;
  lm.p_offset = 0;
  lm.q_offset = nd;
  lm.r_offset = prm.kind == ReservoirKind::langevin ? m : 2 * nd;
  lm.s_offset = prm.has_s() ? 2 * nd + 2 * d : m;
  lm.a = Matrix(m, m);
  lm.b = Matrix(m, 2 * d);

  const std::vector<double> origin(nd, 0.0);
  const Matrix h = potential_hessian(model.spec, prm, origin);
  auto& a = lm.a;
  for (std::size_t i = 0; i < nd; ++i) {
    a(lm.q_offset + i, lm.p_offset + i) = 1.0;
    for (std::size_t j = 0; j < nd; ++j) a(lm.p_offset + i, lm.q_offset + j) = -h(i, j);
  }
  const double lam = prm.lambda;
  const double temps[2] = {prm.t1, prm.tn};
  if (prm.kind == ReservoirKind::langevin) {
    const double eta2 = lam * lam;
    for (std::size_t k = 0; k < d; ++k) {
      a(k, k) -= eta2;
      a(last + k, last + k) -= eta2;
      lm.b(k, k) = std::sqrt(2.0 * eta2 * temps[0]);
      lm.b(last + k, d + k) = std::sqrt(2.0 * eta2 * temps[1]);
    }
    return lm;
  }
  for (std::size_t k = 0; k < d; ++k) {
    const std::size_t r1 = lm.r_offset + k;
    const std::size_t rn = lm.r_offset + d + k;
    a(k, r1) = -lam;
    a(last + k, rn) = -lam;
    a(r1, k) = lam;
    a(rn, last + k) = lam;
    a(r1, r1) = -prm.gamma;
    a(rn, rn) = -prm.gamma;
    lm.b(r1, k) = std::sqrt(2.0 * prm.gamma * temps[0]);
    lm.b(rn, d + k) = std::sqrt(2.0 * prm.gamma * temps[1]);
  }
  if (prm.has_s()) {
    for (std::size_t k = 0; k < 2 * d; ++k) {
      const std::size_t r = lm.r_offset + k;
      const std::size_t s = lm.s_offset + k;
      a(r, s) = -prm.sigma;
      a(s, r) = prm.sigma;
      a(s, s) = -prm.gamma;
    }
  }
  return lm;
}

inline double max_real_eigenvalue(const Matrix& a) {
  double best = -std::numeric_limits<double>::infinity();
  for (auto z : eigenvalues(a)) best = std::max(best, z.real());
  return best;
}

/// -max Re eig(A).
inline double spectral_gap(const LinearModel& lm) {
  const double top = max_real_eigenvalue(lm.a);
  if (!(top < 0.0)) throw NotHurwitz("drift matrix is not Hurwitz (max Re eig = " + std::to_string(top) + ")");
  return -top;
}

namespace detail {
inline double lyapunov_residual(const Matrix& a, const Matrix& sigma, const Matrix& q) {
  return (a * sigma + sigma * a.transpose() + q).frobenius();
}
}  // namespace detail

/// Solves A S + S A^T + Q = 0 by Kronecker vectorisation (I (x) A + A (x) I) vec S = -vec Q.
inline Matrix solve_lyapunov(const Matrix& a, const Matrix& q) {
  const std::size_t m = a.rows();
  const std::size_t mm = m * m;
  Matrix k(mm, mm);
  // vec index of S(i, j) is i * m + j; (A S)(i, j) = sum_l A(i, l) S(l, j), (S A^T)(i, j) = sum_l S(i, l) A(j, l)
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t row = i * m + j;
      for (std::size_t l = 0; l < m; ++l) {
        k(row, l * m + j) += a(i, l);
        k(row, i * m + l) += a(j, l);
      }
    }
  std::vector<double> rhs(mm);
  for (std::size_t i = 0; i < mm; ++i) rhs[i] = -q.data()[i];
  LuDecomposition lu(std::move(k));
  auto x = lu.solve(rhs);
  Matrix s(m, m);
  std::copy(x.begin(), x.end(), s.data().begin());
  // one step of iterative refinement
  const Matrix resid = a * s + s * a.transpose() + q;
  std::vector<double> r(mm);
  for (std::size_t i = 0; i < mm; ++i) r[i] = -resid.data()[i];
  const auto dx = lu.solve(r);
  for (std::size_t i = 0; i < mm; ++i) s.data()[i] += dx[i];
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      const double avg = 0.5 * (s(i, j) + s(j, i));
      s(i, j) = avg;
      s(j, i) = avg;
    }
  return s;
}

/// Stationary covariance: A S + S A^T + B B^T = 0.
inline Matrix stationary_covariance(const LinearModel& lm) {
  spectral_gap(lm);
  const Matrix q = lm.b * lm.b.transpose();
  return solve_lyapunov(lm.a, q);
}

/// E[x(t) x(0)^T] in the stationary state: e^{tA} S.
inline Matrix stationary_autocovariance(const LinearModel& lm, const Matrix& sigma, double t) {
  if (!(t >= 0.0)) throw DomainError("stationary_autocovariance: t must be >= 0");
  return expm(lm.a * t) * sigma;
}

/// Rank of [B, AB, ..., A^{m-1} B]; each block is scaled to unit max-entry before the SVD.
inline int controllability_rank(const Matrix& a, const Matrix& b, double rel_tol = 1e-9) {
  const std::size_t m = a.rows();
  const std::size_t w = b.cols();
  if (b.max_abs() == 0.0) return 0;
  Matrix kalman(m, m * w);
  Matrix block = b;
  for (std::size_t k = 0; k < m; ++k) {
    const double scale = block.max_abs();
    if (scale == 0.0) break;
    block *= 1.0 / scale;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) kalman(i, k * w + j) = block(i, j);
    block = a * block;
  }
  return numerical_rank(kalman, rel_tol);
}

inline int controllability_rank(const LinearModel& lm) { return controllability_rank(lm.a, lm.b); }

/// Unit input matrix on the forcing rows: the control channels of control_flow.
inline Matrix control_input_matrix(const LinearModel& lm) {
  const auto rows = lm.forcing_rows();
  Matrix bu(lm.dim(), rows.size());
  for (std::size_t j = 0; j < rows.size(); ++j) bu(rows[j], j) = 1.0;
  return bu;
}

/// W(T) = int_0^T e^{As} Bu Bu^T e^{A^T s} ds through the block exponential
/// exp(T [[-A, Bu Bu^T], [0, A^T]]) = [[F11, F12], [0, F22]], W = F22^T F12.
inline Matrix controllability_gramian(const Matrix& a, const Matrix& bu, double horizon) {
  const std::size_t m = a.rows();
  const Matrix q = bu * bu.transpose();
  Matrix c(2 * m, 2 * m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      c(i, j) = -a(i, j) * horizon;
      c(i, m + j) = q(i, j) * horizon;
      c(m + i, m + j) = a(j, i) * horizon;
    }
  const Matrix f = expm(c);
  Matrix f12(m, m), f22(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      f12(i, j) = f(i, m + j);
      f22(i, j) = f(m + i, m + j);
    }
  return f22.transpose() * f12;
}

/// Minimum-energy open-loop control steering x0 to 0 at the horizon:
/// u(t) = -Bu^T e^{A^T (T - t)} W^{-1} e^{A T} x0.
class SteeringControl {
 public:
  SteeringControl(const LinearModel& lm, std::span<const double> x0, double horizon)
      : a_(lm.a), bu_(control_input_matrix(lm)), horizon_(horizon) {
    if (!(horizon > 0.0)) throw DomainError("steering horizon must be > 0");
    const Matrix w = controllability_gramian(a_, bu_, horizon);
    const auto target = expm(a_ * horizon).apply(x0);
    lambda_ = LuDecomposition(w).solve(target);
  }

  std::size_t channels() const noexcept { return bu_.cols(); }

  std::vector<double> operator()(double t) const {
    const auto v = expm(a_.transpose() * (horizon_ - t)).apply(lambda_);
    std::vector<double> u(bu_.cols(), 0.0);
    for (std::size_t j = 0; j < bu_.cols(); ++j)
      for (std::size_t i = 0; i < bu_.rows(); ++i) u[j] -= bu_(i, j) * v[i];
    return u;
  }

 private:
  Matrix a_;
  Matrix bu_;
  double horizon_;
  std::vector<double> lambda_;
};

/// Matrix as CSV, 17 significant digits.
inline void write_matrix_csv(std::ostream& os, const Matrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j) os << ',';
      os << format_double(m(i, j));
    }
    os << '\n';
  }
}

}  // namespace nessim
