#include "thickflow/qvi.hpp"

#include <cmath>
#include <iostream>

namespace thick {

double rectangle_kappa(double lx, double ly) {
  const double pi = std::acos(-1.0);
  return pi * pi * (1.0 / (lx * lx) + 1.0 / (ly * ly));
}

GammaModel norm_gamma_model(const NormFunctional& n, double phi_star, double phi_upper) {
  GammaModel g;
  const double a = n.alpha, b = n.beta;
  g.eta = [a](double) { return a; };
  g.rho = [a, b](double R) { return a + b * R * R; };
  g.gamma = [b](double R) { return 2.0 * b * R; };
  g.phi_star = phi_star;
  g.phi_upper = phi_upper;
  return g;
}

GammaModel constant_gamma_model(double value, double phi_star, double phi_upper) {
  GammaModel g;
  g.eta = [value](double) { return value; };
  g.rho = [value](double) { return value; };
  g.gamma = [](double) { return 0.0; };
  g.phi_star = phi_star;
  g.phi_upper = phi_upper;
  return g;
}

double measured_sup_norm(const Trajectory& traj) {
  double m = 0.0;
  for (const auto& [st, dg] : traj) m = std::max(m, linf_norm(st.u));
  return m;
}

ContractionBudget compute_budget(const QviData& data, const GammaModel& gamma, const MBound& m) {
  if (!(data.nu > 0.0)) throw std::invalid_argument("compute_budget: nu > 0 required");
  if (!(data.kappa > 0.0)) throw std::invalid_argument("compute_budget: kappa > 0 required");
  if (m.mode == MBound::Mode::unset)
    throw MissingKorn("compute_budget: choose pilot measurement or a user Korn constant K_p");

  ContractionBudget b;
  b.d = data.d;
  b.T = data.T;
  b.nu = data.nu;
  b.omega_area = data.omega_area;
  b.f_l2 = data.f_l2;
  b.u0_l2 = data.u0_l2;

  const double nu = data.nu, T = data.T, om = data.omega_area;
  const double f2 = data.f_l2 * data.f_l2, u02 = data.u0_l2 * data.u0_l2;

  // Radii first: they only use the raw data.
  b.R1 = std::sqrt((1.0 + T * std::exp(T)) / (2.0 * nu) * (f2 + u02));
  b.R2 = std::sqrt(2.0 * f2 / (nu * nu * data.kappa) + u02 / nu);
  b.R_star = std::min(b.R1, b.R2);

  // Gamma data at R_*, then the threshold range.
  b.eta_star = gamma.eta(b.R_star);
  b.rho_star = gamma.rho(b.R_star);
  b.gamma_star = gamma.gamma(b.R_star);
  b.psi_star = b.eta_star * gamma.phi_star;
  b.psi_upper = b.rho_star * gamma.phi_upper;
  if (!(b.psi_star > 0.0)) throw std::invalid_argument("compute_budget: psi_* must be positive");

  if (m.mode == MBound::Mode::pilot) {
    b.M = 1.2 * m.value;
  } else {
    b.M = m.value * b.psi_upper * std::pow(om, 1.0 / m.p);
  }
  const double M = b.M, dd = static_cast<double>(data.d);

  b.C3 = dd * M * M / 2.0;
  b.C1 = (1.0 / b.psi_star) *
         (2.0 * M * M * om + 2.0 * nu * dd * T * om * b.psi_upper * b.psi_upper +
          M * std::sqrt(T * om) * (data.f_l2 + data.f_l2));
  b.C2 = 2.0 * dd * M * std::sqrt(2.0) * om * T * b.psi_upper / b.psi_star;
  b.C_star = 2.0 * (b.C1 + b.C2);
  b.C_nu = 1.0 + 2.0 * b.C3 / nu;

  b.A = f2 + 4.0 * dd * dd * std::pow(M, 4) * b.rho_star * b.rho_star * T * om /
                 (nu * b.eta_star * b.eta_star);
  b.B = 1.0 + 4.0 * dd * M * M / nu;

  b.lhs = (b.gamma_star / (b.eta_star * std::sqrt(nu))) *
          (std::sqrt(nu) * b.R_star +
           std::sqrt((std::exp(b.B * T) - 1.0) * (b.A + u02) + b.A));
  return b;
}

ContractionCheck contraction_holds(const ContractionBudget& b) {
  return {b.lhs < 1.0, 1.0 - b.lhs};
}

FixedPointHistory fixed_point(const Trajectory& v0, const ThresholdProvider& functional,
                              const VelocityField& u0, const ForcingProvider& f,
                              const SolverConfig& cfg, double tol, int maxiter,
                              double ball_radius) {
  if (!(cfg.nu > 0.0)) throw std::invalid_argument("fixed_point: nu > 0 required");
  if (ball_radius > 0.0 && v2_norm(v0) > ball_radius)
    std::cerr << "fixed_point: warning, v0 outside the a priori ball (||v0||_V2 = " << v2_norm(v0)
              << " > " << ball_radius << ")\n";

  FixedPointHistory hist;
  Trajectory vprev = v0;
  for (int n = 0; n < maxiter; ++n) {
    PsiProvider psi = functional.bind(&vprev);
    Trajectory vn = run(u0, psi, f, cfg, &vprev);
    const double dist = v2_distance(vn, vprev);
    if (!hist.distances.empty())
      hist.ratios.push_back(dist / std::max(hist.distances.back(), 1e-300));
    hist.distances.push_back(dist);
    vprev = std::move(vn);
    if (dist < tol) {
      hist.converged = true;
      hist.trajectory = std::move(vprev);
      return hist;
    }
  }
  hist.trajectory = std::move(vprev);
  throw NotConverged("fixed_point: no convergence in " + std::to_string(maxiter) + " iterations",
                     std::move(hist));
}

DependenceBound dependence_bound(const DependenceDelta& delta, const ContractionBudget& b) {
  const double base = delta.df_l2 * delta.df_l2 + delta.du0_l2 * delta.du0_l2 +
                      b.C_star * delta.dpsi_inf;
  DependenceBound out;
  out.rhs_linf_l2 = std::exp(b.C_nu * b.T) * base;
  out.rhs_v2 = (1.0 + b.C_nu * b.T * std::exp(b.C_nu * b.T)) * base;
  return out;
}

}  // namespace thick
