#include "thickflow/multiplier.hpp"

#include <cmath>

namespace thick {

ScalarField extract(const ScalarField& du_norm, const ScalarField& psi, const PenaltyParams& p) {
  return penalty_viscosity(du_norm, psi, p);
}

MultiplierField extract(const Trajectory& traj, const PsiProvider& psi, const PenaltyParams& p) {
  MultiplierField m;
  m.lambda.reserve(traj.size());
  for (const auto& [st, dg] : traj) {
    const ScalarField du_norm = tensor_norm(sym_gradient(st.u));
    m.lambda.push_back(extract(du_norm, psi(st.t), p));
  }
  return m;
}

double complementarity_residual(const MultiplierField& lam, const Trajectory& traj,
                                const PsiProvider& psi) {
  double num = 0.0, den = 0.0;
  double t_last = 0.0;
  for (size_t k = 0; k < traj.size(); ++k) {
    const auto& st = traj[k].first;
    const double dt = st.t - t_last;
    t_last = st.t;
    const ScalarField du_norm = tensor_norm(sym_gradient(st.u));
    const ScalarField p = psi(st.t);
    ScalarField slack(st.u.dom);
    slack.c = lam.lambda[k].c * (p.c - du_norm.c).max(0.0);
    num += dt * integral(slack);
    den += dt * integral(lam.lambda[k]);
  }
  return num / std::max(den, 1e-30);
}

double multiplier_concentration(const MultiplierField& lam, const Trajectory& traj,
                                const PsiProvider& psi, double margin) {
  double on = 0.0, total = 0.0;
  double t_last = 0.0;
  for (size_t k = 0; k < traj.size(); ++k) {
    const auto& st = traj[k].first;
    const double dt = st.t - t_last;
    t_last = st.t;
    const ScalarField du_norm = tensor_norm(sym_gradient(st.u));
    const ScalarField p = psi(st.t);
    const Domain& d = st.u.dom;
    for (int j = 0; j < d.ny; ++j)
      for (int i = 0; i < d.nx; ++i) {
        const double mass = dt * lam.lambda[k].c(i, j);
        total += mass;
        if (du_norm.c(i, j) >= p.c(i, j) - margin) on += mass;
      }
  }
  return (total > 0.0) ? on / total : 1.0;
}

std::vector<VelocityField> test_battery(const Domain& d) {
  const std::pair<int, int> modes[] = {{1, 1}, {1, 2}, {2, 1}, {2, 2},
                                       {1, 3}, {3, 1}, {2, 3}, {3, 2}};
  std::vector<VelocityField> out;
  out.reserve(8);
  const double pi = std::acos(-1.0);
  for (auto [a, b] : modes) {
    // stream function at nodes, zero on the boundary with zero gradient
    ArrayXXd chi(d.nx + 1, d.ny + 1);
    for (int j = 0; j <= d.ny; ++j)
      for (int i = 0; i <= d.nx; ++i) {
        const double sx = std::sin(a * pi * (i * d.h) / d.lx);
        const double sy = std::sin(b * pi * (j * d.h) / d.ly);
        chi(i, j) = sx * sx * sy * sy;
      }
    VelocityField v(d);  // discrete curl: exactly divergence-free
    for (int j = 0; j < d.ny; ++j)
      for (int i = 0; i <= d.nx; ++i) v.ux(i, j) = (chi(i, j + 1) - chi(i, j)) / d.h;
    for (int j = 0; j <= d.ny; ++j)
      for (int i = 0; i < d.nx; ++i) v.uy(i, j) = -(chi(i + 1, j) - chi(i, j)) / d.h;
    v.enforce_boundary();
    out.push_back(std::move(v));
  }
  return out;
}

namespace {

// cell-centered velocity components
void cell_velocity(const VelocityField& u, ArrayXXd& ucx, ArrayXXd& ucy) {
  const Domain& d = u.dom;
  ucx = 0.5 * (u.ux.topRows(d.nx) + u.ux.bottomRows(d.nx));
  ucy = 0.5 * (u.uy.leftCols(d.ny) + u.uy.rightCols(d.ny));
}

}  // namespace

double momentum_residual(const Trajectory& traj, const MultiplierField& lam,
                         const PsiProvider& psi, const ForcingProvider& f,
                         const VelocityField& u0, const SolverConfig& cfg) {
  (void)psi;
  const Domain& d = u0.dom;
  const double h2 = d.h * d.h;
  const auto battery = test_battery(d);

  double worst = 0.0;
  for (const VelocityField& v : battery) {
    const TensorField Dv = sym_gradient(v);
    ScalarField ones(d, 1.0);
    const double vnorm = std::sqrt(inner(v, v) + visc_form(ones, v, v));

    double res = 0.0;
    const VelocityField* u_prev = &u0;
    double t_last = 0.0;
    for (size_t k = 0; k < traj.size(); ++k) {
      const auto& st = traj[k].first;
      const double dt = st.t - t_last;
      t_last = st.t;
      const VelocityField& u = st.u;

      // time term
      double term = inner(u - *u_prev, v);

      // viscosity pairing: (nu + lambda + eps|Du|^{q-2}) Du:Dv, cell quadrature
      const TensorField Du = sym_gradient(u);
      const ScalarField du_norm = tensor_norm(Du);
      const ScalarField qv = q_viscosity(du_norm, cfg.penalty);
      ArrayXXd coeff = cfg.nu + lam.lambda[k].c + qv.c;
      ArrayXXd pair = coeff * (Du.d11 * Dv.d11 + Du.d22 * Dv.d22 + 2.0 * Du.d12 * Dv.d12);
      term += dt * h2 * pair.sum();

      // convection pairing: (u (x) u) : Dv (symmetric contraction)
      ArrayXXd ucx, ucy;
      cell_velocity(u, ucx, ucy);
      ArrayXXd conv = ucx.square() * Dv.d11 + 2.0 * ucx * ucy * Dv.d12 + ucy.square() * Dv.d22;
      term -= dt * h2 * conv.sum();

      term -= dt * inner(f(st.t), v);
      res += term;
      u_prev = &u;
    }
    worst = std::max(worst, std::abs(res) / vnorm);
  }
  return worst;
}

}  // namespace thick
