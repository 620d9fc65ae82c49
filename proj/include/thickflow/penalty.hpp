#pragma once

#include "thickflow/grid.hpp"

#include <cmath>

namespace thick {

/// Parameters of the exponential penalty. q must satisfy q > max{d+1,4}
/// with (q-1)/2 a natural number other than 1; q = 5 is the d = 2 default.
struct PenaltyParams {
  double eps = 0.1;
  int q = 5;
  double cap = 1e30;

  PenaltyParams() = default;
  PenaltyParams(double eps_, int q_ = 5) : eps(eps_), q(q_) {
    if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("PenaltyParams: eps in (0,1)");
    if (q <= 4 || (q - 1) % 2 != 0 || (q - 1) / 2 == 1)
      throw std::invalid_argument("PenaltyParams: need q > 4 with (q-1)/2 integer != 1");
    // e^{1/eps^2} overflows double for eps below ~0.0377; keep the clamp.
    const double e = 1.0 / (eps * eps);
    cap = (e < 690.0) ? std::exp(e) - 1.0 : 1e30;
  }
};

/// k_eps(s): 0 for s<=0, e^{s/eps}-1 for 0<s<1/eps, e^{1/eps^2}-1 beyond,
/// clamped at cap. Continuous and nondecreasing.
inline double k_eps(double s, const PenaltyParams& p) {
  if (s <= 0.0) return 0.0;
  if (s >= 1.0 / p.eps) return p.cap;
  const double v = std::expm1(s / p.eps);
  return std::min(v, p.cap);
}

/// Antiderivative of the clamped k_eps with m_eps(0) = 0 (exact closed form;
/// in particular m_eps = 0 on s <= 0).
inline double m_eps(double s, const PenaltyParams& p) {
  if (s <= 0.0) return 0.0;
  const double seps = 1.0 / p.eps;
  // where the exponential branch saturates against the cap
  const double s_cap = (p.cap >= std::expm1(seps / p.eps))
                           ? seps
                           : p.eps * std::log1p(p.cap);
  auto branch = [&](double t) {  // integral of e^{tau/eps}-1 on (0,t)
    return p.eps * std::expm1(t / p.eps) - t;
  };
  if (s <= s_cap) return branch(s);
  return branch(s_cap) + p.cap * (s - s_cap);
}

/// Derivative of the clamped k_eps (zero on the flat branches).
inline double k_eps_prime(double s, const PenaltyParams& p) {
  if (s <= 0.0 || s >= 1.0 / p.eps) return 0.0;
  const double v = std::exp(s / p.eps) / p.eps;
  return (std::expm1(s / p.eps) >= p.cap) ? 0.0 : v;
}

/// Penalized viscosity field k_eps(|Du|^2 - psi^2) per cell; this is
/// simultaneously the discrete multiplier candidate.
inline ScalarField penalty_viscosity(const ScalarField& du_norm, const ScalarField& psi,
                                     const PenaltyParams& p) {
  ScalarField r(du_norm.dom);
  for (int j = 0; j < r.dom.ny; ++j)
    for (int i = 0; i < r.dom.nx; ++i)
      r.c(i, j) = k_eps(du_norm.c(i, j) * du_norm.c(i, j) - psi.c(i, j) * psi.c(i, j), p);
  return r;
}

/// Power-term viscosity eps * |Du|^{q-2} per cell.
inline ScalarField q_viscosity(const ScalarField& du_norm, const PenaltyParams& p) {
  ScalarField r(du_norm.dom);
  r.c = p.eps * du_norm.c.pow(p.q - 2);
  return r;
}

}  // namespace thick
