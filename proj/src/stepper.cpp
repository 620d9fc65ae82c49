#include "thickflow/stepper.hpp"
#include <cstdio>
#include <cstdlib>

#include <cmath>
#include <limits>

namespace thick {

namespace {

// Diagonal of u -> -viscous_divergence(eta, u), for Jacobi preconditioning.
VelocityField viscous_diagonal(const ScalarField& eta, const Domain& d) {
  const double h2 = d.h * d.h;
  // eta averaged to nodes, same rule as the operator
  ArrayXXd en = ArrayXXd::Zero(d.nx + 1, d.ny + 1);
  for (int j = 0; j <= d.ny; ++j)
    for (int i = 0; i <= d.nx; ++i) {
      double s = 0.0;
      int n = 0;
      for (int dj = -1; dj <= 0; ++dj)
        for (int di = -1; di <= 0; ++di) {
          const int ci = i + di, cj = j + dj;
          if (ci >= 0 && ci < d.nx && cj >= 0 && cj < d.ny) {
            s += eta.c(ci, cj);
            ++n;
          }
        }
      en(i, j) = s / n;
    }
  VelocityField diag(d);
  for (int j = 0; j < d.ny; ++j)
    for (int i = 1; i < d.nx; ++i) {
      double v = (eta.c(i, j) + eta.c(i - 1, j)) / h2;
      const double cb = (j == 0) ? 2.0 : 0.5;
      const double ct = (j == d.ny - 1) ? 2.0 : 0.5;
      v += (cb * en(i, j) + ct * en(i, j + 1)) / h2;
      diag.ux(i, j) = v;
    }
  for (int j = 1; j < d.ny; ++j)
    for (int i = 0; i < d.nx; ++i) {
      double v = (eta.c(i, j) + eta.c(i, j - 1)) / h2;
      const double cl = (i == 0) ? 2.0 : 0.5;
      const double cr = (i == d.nx - 1) ? 2.0 : 0.5;
      v += (cl * en(i, j) + cr * en(i + 1, j)) / h2;
      diag.uy(i, j) = v;
    }
  return diag;
}

// Preconditioned CG for (1/dt - div(eta D.) - gamma grad div) x = b on
// no-slip fields; the grad-div term is SPD and pushes the solution toward
// the divergence-free subspace so the later Leray projection barely moves it.
VelocityField momentum_solve(const ScalarField& eta, double inv_dt, const VelocityField& b,
                             const VelocityField& x0, double rel_tol, int max_iters,
                             double gamma = 0.0) {
  const Domain& d = b.dom;
  auto apply = [&](const VelocityField& v) {
    VelocityField r = viscous_divergence(eta, v);
    r.ux = inv_dt * v.ux - r.ux;
    r.uy = inv_dt * v.uy - r.uy;
    if (gamma > 0.0) {
      const VelocityField gd = gradient(divergence(v));
      r.ux -= gamma * gd.ux;
      r.uy -= gamma * gd.uy;
    }
    r.enforce_boundary();
    return r;
  };
  VelocityField diag = viscous_diagonal(eta, d);
  diag.ux += inv_dt + 2.0 * gamma / (d.h * d.h);
  diag.uy += inv_dt + 2.0 * gamma / (d.h * d.h);
  auto precond = [&](const VelocityField& v) {
    VelocityField r = v;
    r.ux /= diag.ux;
    r.uy /= diag.uy;
    r.enforce_boundary();
    return r;
  };

  VelocityField x = x0;
  x.enforce_boundary();
  VelocityField r = b - apply(x);
  r.enforce_boundary();
  VelocityField z = precond(r);
  VelocityField p = z;
  double rz = inner(r, z);
  const double bnorm = l2_norm(b);
  const double tol = rel_tol * std::max(bnorm, 1e-300);
  for (int it = 0; it < max_iters; ++it) {
    if (l2_norm(r) <= tol) return x;
    VelocityField Ap = apply(p);
    const double alpha = rz / inner(p, Ap);
    axpy(alpha, p, x);
    axpy(-alpha, Ap, r);
    z = precond(r);
    const double rz_new = inner(r, z);
    p = z + (rz_new / rz) * p;
    rz = rz_new;
  }
  if (l2_norm(r) > 1e-6 * std::max(bnorm, 1e-300))
    throw SolverFailure("momentum_solve: CG residual " + std::to_string(l2_norm(r)));
  return x;
}

// Projected PCG for (1/dt - div(eta D.)) x = b restricted to the discretely
// divergence-free subspace. Iterates, residuals, and directions all live in
// the subspace (the Leray projector is applied to the preconditioned
// residual), so the returned field needs no further projection. The pressure
// associated with the constrained solve is recovered separately.
// Projected PCG for H x = b restricted to the discrete div-free subspace,
// with the energy Hessian H v = inv_dt v - div(eta Dv + w (Du:Dv) Du).
// Du is the symmetric gradient of the current iterate and w >= 0 the
// second-derivative weight of the penalty + power terms, so H is SPD.
VelocityField momentum_solve_divfree(const ScalarField& eta, const TensorField& Du,
                                     const ScalarField& w, double inv_dt,
                                     const VelocityField& b, const VelocityField& x0,
                                     double rel_tol, int max_iters) {
  const Domain& d = b.dom;
  const double ptol = 1e-11;
  auto apply = [&](const VelocityField& v) {
    const TensorField Dv = sym_gradient(v);
    TensorField S(d);
    const ArrayXXd c =
        w.c * (Du.d11 * Dv.d11 + Du.d22 * Dv.d22 + 2.0 * Du.d12 * Dv.d12);
    S.d11 = eta.c * Dv.d11 + c * Du.d11;
    S.d22 = eta.c * Dv.d22 + c * Du.d22;
    S.d12 = eta.c * Dv.d12 + c * Du.d12;
    VelocityField r = tensor_divergence(S);
    r.ux = inv_dt * v.ux - r.ux;
    r.uy = inv_dt * v.uy - r.uy;
    r.enforce_boundary();
    return r;
  };
  ScalarField eta_diag(d);
  eta_diag.c = eta.c + w.c * (Du.d11.square() + Du.d22.square() + 2.0 * Du.d12.square());
  VelocityField diag = viscous_diagonal(eta_diag, d);
  diag.ux += inv_dt;
  diag.uy += inv_dt;
  auto precond = [&](const VelocityField& v) {
    VelocityField r = v;
    r.ux /= diag.ux;
    r.uy /= diag.uy;
    r.enforce_boundary();
    return project(r, 1.0, ptol).u;
  };

  VelocityField x = project(x0, 1.0, ptol).u;
  VelocityField r = project(b - apply(x), 1.0, ptol).u;
  VelocityField z = precond(r);
  VelocityField p = z;
  double rz = inner(r, z);
  const double bnorm = l2_norm(project(b, 1.0, ptol).u);
  // the inner Poisson tolerance caps the achievable residual
  const double tol = std::max(rel_tol, 100.0 * ptol) * std::max(bnorm, 1e-300);
  double rnorm = l2_norm(r);
  double best = rnorm;
  VelocityField xbest = x;
  int stall = 0, restarts = 0, cg_iters_done = 0;
  // The plain residual norm of PCG is not monotone (only the A-norm error
  // is), so divergence must not be inferred from transient growth: restart
  // only on a genuine breakdown (indefinite curvature or preconditioner
  // failure, both roundoff artifacts here), and stop after a long stretch
  // without a new best residual. The caller's line search only needs a
  // descent direction, so the best iterate is always a valid hand-back.
  for (int it = 0; it < max_iters && rnorm > tol && stall < 300; ++it) {
    VelocityField Ap = project(apply(p), 1.0, ptol).u;
    const double pAp = inner(p, Ap);
    if (!(pAp > 0.0)) {
      if (++restarts > 4) break;
      x = xbest;
      r = project(b - apply(x), 1.0, ptol).u;
      rnorm = l2_norm(r);
      z = precond(r);
      p = z;
      rz = inner(r, z);
      continue;
    }
    const double alpha = rz / pAp;
    axpy(alpha, p, x);
    axpy(-alpha, Ap, r);
    rnorm = l2_norm(r);
    if (rnorm < 0.999 * best) {
      best = rnorm;
      xbest = x;
      stall = 0;
    } else {
      if (rnorm < best) {
        best = rnorm;
        xbest = x;
      }
      ++stall;
    }
    z = precond(r);
    const double rz_new = inner(r, z);
    if (!(rz_new > 0.0)) break;
    p = z + (rz_new / rz) * p;
    rz = rz_new;
    ++cg_iters_done;
  }
  if (std::getenv("THICKFLOW_DEBUG_CG"))
    std::fprintf(stderr, "      cg its=%d rnorm=%.3e best=%.3e bnorm=%.3e restarts=%d |x|=%.3e\n",
                 cg_iters_done, rnorm, best, bnorm, restarts, l2_norm(xbest));
  return xbest;
}

// Convex per-step energy with convection and pressure frozen into f_eff:
//   ||u||²/(2 dt) + int [ (nu/2)|Du|² + ½ m_eps(|Du|²-psi²) + (eps/q)|Du|^q ]
//   - <u^n/dt + f_eff, u>.
// Its gradient is u/dt - div(eta(u) Du) - (u^n/dt + f_eff) with exactly the
// Picard viscosity eta(u) = nu + k_eps + eps|Du|^{q-2}, so the lagged SPD
// solve is an SPD-preconditioned Newton-type direction and a backtracking
// line search on this energy keeps the inner iteration globally convergent
// (plain lagging flip-flops: the penalty is shear-thickening).
double step_energy(const VelocityField& u, const ScalarField& psi, const VelocityField& rhs,
                   const SolverConfig& cfg) {
  const Domain& d = u.dom;
  const TensorField Du = sym_gradient(u);
  double bulk = 0.0;
  const PenaltyParams& p = cfg.penalty;
  for (int j = 0; j < d.ny; ++j)
    for (int i = 0; i < d.nx; ++i) {
      const double dn2 = Du.d11(i, j) * Du.d11(i, j) + Du.d22(i, j) * Du.d22(i, j) +
                         2.0 * Du.d12(i, j) * Du.d12(i, j);
      bulk += 0.5 * cfg.nu * dn2 + 0.5 * m_eps(dn2 - psi.c(i, j) * psi.c(i, j), p) +
              (p.eps / p.q) * std::pow(dn2, 0.5 * p.q);
    }
  bulk *= d.h * d.h;
  return 0.5 * inner(u, u) / cfg.dt + bulk - inner(rhs, u);
}

std::pair<FlowState, StepDiagnostics> step_with_relax(const FlowState& state,
                                                      const ScalarField& psi,
                                                      const VelocityField& f,
                                                      const SolverConfig& cfg, double relax,
                                                      const VelocityField* guess) {
  const Domain& d = state.u.dom;
  const double dt = cfg.dt;
  const int cg_max = 10 * d.nx * d.ny;

  FlowState next(d);
  next.t = state.t + dt;
  VelocityField uk = guess ? *guess : state.u;  // Picard iterate
  uk.enforce_boundary();
  ScalarField pi = state.pressure;
  VelocityField conv_base = state.u;  // transporting field u^n

  VelocityField base_rhs(d);
  base_rhs.ux = state.u.ux / dt + f.ux;
  base_rhs.uy = state.u.uy / dt + f.uy;

  double prev_update = -1.0;
  double lm = 1.0;  // proximal damping on the model solve
  int grow_count = 0;
  int iters = 0;
  double update = 0.0;
  bool converged = false;
  ScalarField lambda(d);

  for (iters = 1; iters <= cfg.picard_max; ++iters) {
    const TensorField Duk = sym_gradient(uk);
    const ScalarField du_norm = tensor_norm(Duk);
    lambda = penalty_viscosity(du_norm, psi, cfg.penalty);
    const ScalarField qv = q_viscosity(du_norm, cfg.penalty);
    ScalarField eta(d);
    eta.c = cfg.nu + lambda.c + qv.c;
    // Second-derivative weight of the bulk energy: its exact Hessian stress
    // is eta Dv + w (Du:Dv) Du with w = 2 k' + (q-2) eps |Du|^{q-4}, SPD
    // since the per-step energy is convex. Transiently infeasible iterates
    // can push the penalty toward its cap; clamping keeps the CG solve well
    // conditioned while the Armijo test on the true energy controls steps.
    ScalarField eta_h(d);
    eta_h.c = eta.c.min(3e3);
    ScalarField w(d);
    for (int j = 0; j < d.ny; ++j)
      for (int i = 0; i < d.nx; ++i) {
        const double dn2 = du_norm.c(i, j) * du_norm.c(i, j);
        double wv = 2.0 * k_eps_prime(dn2 - psi.c(i, j) * psi.c(i, j), cfg.penalty) +
                    (cfg.penalty.q - 2) * cfg.penalty.eps *
                        std::pow(dn2, 0.5 * (cfg.penalty.q - 4));
        if (wv * dn2 > 3e3) wv = 3e3 / dn2;
        w.c(i, j) = wv;
      }

    VelocityField rhs = base_rhs - convection(conv_base, uk);
    rhs.enforce_boundary();
    VelocityField gradE = viscous_divergence(eta, uk);
    gradE.ux = uk.ux / dt - gradE.ux - rhs.ux;
    gradE.uy = uk.uy / dt - gradE.uy - rhs.uy;
    gradE.enforce_boundary();

    // Newton-type direction: H_model dir = -gradE in the div-free subspace,
    // with the curvature-majorizing viscosity as Hessian model and a
    // Levenberg-Marquardt mass term lm/dt that grows whenever the line
    // search keeps rejecting (the quadratic model is unreliable far out).
    // Using the true gradient makes the direction a guaranteed descent
    // direction for any SPD model.
    VelocityField zero_guess(d);
    VelocityField dir = momentum_solve_divfree(eta_h, Duk, w, lm / dt, -1.0 * gradE, zero_guess,
                                               cfg.cg_tol, cg_max);
    double slope = inner(gradE, dir);
    if (!(slope < 0.0)) {  // fall back to projected steepest descent
      dir = project(-1.0 * gradE, dt, 1e-12, cg_max).u;
      slope = inner(gradE, dir);
    }
    const double e0 = step_energy(uk, psi, rhs, cfg);
    // Roundoff slack keeps the test meaningful near stationarity, where
    // candidate energies differ by less than the floating-point noise of e0.
    const double slack = 64.0 * std::numeric_limits<double>::epsilon() * std::abs(e0);
    double tstep = relax;
    VelocityField ucand = uk + tstep * dir;
    for (int bt = 0; bt < 40; ++bt) {
      const double ec = step_energy(ucand, psi, rhs, cfg);
      if (std::getenv("THICKFLOW_DEBUG_LS"))
        std::fprintf(stderr, "    bt=%d t=%.3e de=%.6e thr=%.6e\n", bt, tstep, ec - e0,
                     1e-4 * tstep * slope);
      if (ec <= e0 + 1e-4 * tstep * slope + slack) break;
      tstep *= 0.5;
      ucand = uk + tstep * dir;
    }
    if (tstep < 0.25 * relax)
      lm = std::min(lm * 4.0, 1e8);
    else if (tstep >= relax)
      lm = std::max(1.0, lm * 0.25);

    update = l2_norm(ucand - uk) / std::max(l2_norm(ucand), 1e-300);
    if (std::getenv("THICKFLOW_DEBUG_PICARD")) {
      double smax = -1e300;
      for (int j = 0; j < d.ny; ++j)
        for (int i = 0; i < d.nx; ++i)
          smax = std::max(smax, du_norm.c(i, j) * du_norm.c(i, j) - psi.c(i, j) * psi.c(i, j));
      std::fprintf(stderr,
                   "  it=%d upd=%.3e tstep=%.3e lm=%.1e slope=%.3e e0=%.9e |dir|=%.3e smax=%.3f\n",
                   iters, update, tstep, lm, slope, e0, l2_norm(dir), smax);
    }
    uk = ucand;
    // A small update is necessary but not sufficient (a collapsed line
    // search also yields one); confirm stationarity with the projected
    // gradient before accepting convergence.
    if (update < 1e-6) {
      const ScalarField dn = tensor_norm(sym_gradient(uk));
      ScalarField eta_new(d);
      eta_new.c = cfg.nu + penalty_viscosity(dn, psi, cfg.penalty).c + q_viscosity(dn, cfg.penalty).c;
      VelocityField rhs_new = base_rhs - convection(conv_base, uk);
      rhs_new.enforce_boundary();
      VelocityField g = viscous_divergence(eta_new, uk);
      g.ux = uk.ux / dt - g.ux - rhs_new.ux;
      g.uy = uk.uy / dt - g.uy - rhs_new.uy;
      g.enforce_boundary();
      const double gnorm = l2_norm(project(g, dt, 1e-12, cg_max).u);
      const double gscale = l2_norm(rhs_new) + l2_norm(uk) / dt;
      if (std::getenv("THICKFLOW_DEBUG_PICARD"))
        std::fprintf(stderr, "    gcheck it=%d gnorm=%.3e gscale=%.3e rel=%.3e\n", iters, gnorm,
                     gscale, gnorm / std::max(gscale, 1e-300));
      if (gnorm <= std::max(1e3 * cfg.picard_tol, 1e-7) * std::max(gscale, 1e-300)) {
        converged = true;
        break;
      }
    }
    if (prev_update >= 0.0 && update > 1.2 * prev_update) {
      if (++grow_count >= 12)
        throw PicardDiverged("step: inner iteration kept growing at t=" + std::to_string(next.t));
    } else {
      grow_count = 0;
    }
    prev_update = update;
  }
  // Returning an unverified iterate would silently propagate a wrong state;
  // the caller recovers by halving the time step instead.
  if (!converged)
    throw PicardDiverged("step: no stationary point within picard_max at t=" +
                         std::to_string(next.t));

  // Recover the pressure as the curl-free part of the final momentum
  // residual: rhs - u/dt + div(eta(u) Du) = grad(pi) up to the CG tolerance.
  {
    const ScalarField dn = tensor_norm(sym_gradient(uk));
    ScalarField eta_fin(d);
    eta_fin.c =
        cfg.nu + penalty_viscosity(dn, psi, cfg.penalty).c + q_viscosity(dn, cfg.penalty).c;
    VelocityField rmom = base_rhs - convection(conv_base, uk);
    const VelocityField hv = viscous_divergence(eta_fin, uk);
    rmom.ux -= uk.ux / dt - hv.ux;
    rmom.uy -= uk.uy / dt - hv.uy;
    rmom.enforce_boundary();
    pi = project(dt * rmom, dt, 1e-12, cg_max).pressure;
  }

  next.u = uk;
  next.pressure = pi;
  const TensorField Du = sym_gradient(uk);
  const ScalarField du_norm = tensor_norm(Du);
  next.lambda = penalty_viscosity(du_norm, psi, cfg.penalty);

  StepDiagnostics diag;
  diag.t = next.t;
  diag.energy = 0.5 * inner(uk, uk);
  ScalarField nu_field(d, cfg.nu);
  diag.dissipation = visc_form(nu_field, uk, uk);
  diag.constraint_excess = (du_norm.c - psi.c).max(0.0).maxCoeff();
  diag.picard_iters = std::min(iters, cfg.picard_max);
  diag.multiplier_mass = integral(next.lambda);
  ScalarField slack(d);
  slack.c = next.lambda.c * (psi.c - du_norm.c).max(0.0);
  diag.complementarity = integral(slack) / std::max(diag.multiplier_mass, 1e-30);
  diag.div_residual = divergence(uk).c.abs().maxCoeff();
  diag.forcing_work = inner(f, uk);
  diag.picard_update = update;
  return {std::move(next), diag};
}

}  // namespace

namespace {

// Backward-Euler substepping: a step whose Picard iteration stalls (deeply
// infeasible start, near-singular penalty curvature) is replaced by two
// half steps, recursively. Each substep starts much closer to its own
// stationary point, and the composition is still a consistent backward
// Euler advance to t + dt. psi and f stay frozen at the step endpoint,
// an O(dt) perturbation of the same order as the time discretization.
std::pair<FlowState, StepDiagnostics> step_adaptive(const FlowState& state, const ScalarField& psi,
                                                    const VelocityField& f, const SolverConfig& cfg,
                                                    const VelocityField* guess, int depth) {
  try {
    return step_with_relax(state, psi, f, cfg, cfg.relax, guess);
  } catch (const PicardDiverged&) {
    if (depth >= 6) throw;
    SolverConfig half = cfg;
    half.dt = 0.5 * cfg.dt;
    auto first = step_adaptive(state, psi, f, half, guess, depth + 1);
    auto second = step_adaptive(first.first, psi, f, half, nullptr, depth + 1);
    second.second.picard_iters += first.second.picard_iters;
    return second;
  }
}

}  // namespace

std::pair<FlowState, StepDiagnostics> step(const FlowState& state, const ScalarField& psi,
                                           const VelocityField& f, const SolverConfig& cfg,
                                           const VelocityField* guess) {
  cfg.validate();
  return step_adaptive(state, psi, f, cfg, guess, 0);
}

Trajectory run(const VelocityField& u0, const PsiProvider& psi, const ForcingProvider& f,
               const SolverConfig& cfg, const Trajectory* warm) {
  cfg.validate();
  const Domain& d = u0.dom;
  {
    const ScalarField du0 = tensor_norm(sym_gradient(u0));
    const ScalarField psi0 = psi(0.0);
    if (((du0.c - psi0.c) > 1e-12).any())
      throw InitialConstraintViolated("run: |Du0| exceeds psi(.,0)");
  }
  FlowState state(d);
  state.u = u0;
  Trajectory traj;
  const int n = cfg.steps();
  traj.reserve(n);
  for (int k = 0; k < n; ++k) {
    const double tn1 = (k + 1) * cfg.dt;
    const VelocityField* guess =
        (warm && k < static_cast<int>(warm->size())) ? &(*warm)[k].first.u : nullptr;
    auto [next, diag] = step(state, psi(tn1), f(tn1), cfg, guess);
    state = next;
    traj.emplace_back(std::move(next), diag);
  }
  return traj;
}

EnergyReport energy_report(const Trajectory& traj, double u0_energy) {
  EnergyReport rep;
  rep.residual.reserve(traj.size());
  double cum_diss = 0.0, cum_work = 0.0;
  rep.worst = -1e300;
  rep.energy_scale = u0_energy;
  double dt_prev = 0.0;
  double t_last = 0.0;
  for (const auto& [st, dg] : traj) {
    const double dt = st.t - t_last;
    t_last = st.t;
    (void)dt_prev;
    cum_diss += dt * dg.dissipation;
    cum_work += dt * dg.forcing_work;
    const double res = dg.energy + cum_diss - cum_work - u0_energy;
    rep.residual.push_back(res);
    rep.worst = std::max(rep.worst, res);
    rep.energy_scale = std::max(rep.energy_scale, dg.energy);
  }
  return rep;
}

double v2_norm(const Trajectory& a) {
  double s = 0.0;
  double t_last = 0.0;
  for (const auto& [st, dg] : a) {
    const double dt = st.t - t_last;
    t_last = st.t;
    const ScalarField n = tensor_norm(sym_gradient(st.u));
    s += dt * inner(n, n);
  }
  return std::sqrt(s);
}

double v2_distance(const Trajectory& a, const Trajectory& b) {
  if (a.size() != b.size()) throw std::invalid_argument("v2_distance: trajectory size mismatch");
  double s = 0.0;
  double t_last = 0.0;
  for (size_t k = 0; k < a.size(); ++k) {
    const double dt = a[k].first.t - t_last;
    t_last = a[k].first.t;
    const ScalarField n = tensor_norm(sym_gradient(a[k].first.u - b[k].first.u));
    s += dt * inner(n, n);
  }
  return std::sqrt(s);
}

double l2qt_distance(const Trajectory& a, const Trajectory& b) {
  if (a.size() != b.size()) throw std::invalid_argument("l2qt_distance: size mismatch");
  double s = 0.0;
  double t_last = 0.0;
  for (size_t k = 0; k < a.size(); ++k) {
    const double dt = a[k].first.t - t_last;
    t_last = a[k].first.t;
    const VelocityField dv = a[k].first.u - b[k].first.u;
    s += dt * inner(dv, dv);
  }
  return std::sqrt(s);
}

double linf_l2(const Trajectory& a) {
  double m = 0.0;
  for (const auto& [st, dg] : a) m = std::max(m, std::sqrt(2.0 * dg.energy));
  return m;
}

}  // namespace thick
