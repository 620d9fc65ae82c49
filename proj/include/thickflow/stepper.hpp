#pragma once

#include "thickflow/grid.hpp"
#include "thickflow/penalty.hpp"

#include <functional>
#include <vector>

namespace thick {

struct SolverConfig {
  double nu = 0.1;
  double dt = 0.01;
  double t_end = 0.5;
  double picard_tol = 1e-10;
  int picard_max = 300;
  double relax = 1.0;  // initial line-search step
  PenaltyParams penalty;
  double div_tol_factor = 1e-10;  // div_tol = factor * max(1, |u|_inf) / h
  double cg_tol = 1e-12;

  int steps() const { return static_cast<int>(std::llround(t_end / dt)); }
  void validate() const {
    if (!(dt > 0.0) || t_end < dt) throw std::invalid_argument("SolverConfig: need 0 < dt <= t_end");
    if (!(picard_tol > 0.0 && picard_tol < 1.0))
      throw std::invalid_argument("SolverConfig: picard_tol in (0,1)");
    if (nu < 0.0) throw std::invalid_argument("SolverConfig: nu >= 0");
    if (!(relax > 0.0 && relax <= 1.0)) throw std::invalid_argument("SolverConfig: relax in (0,1]");
  }
};

struct FlowState {
  double t = 0.0;
  VelocityField u;
  ScalarField pressure;
  ScalarField lambda;  // last multiplier candidate k_eps(|Du|^2 - psi^2)

  FlowState() = default;
  explicit FlowState(const Domain& d) : u(d), pressure(d), lambda(d) {}
};

struct StepDiagnostics {
  double t = 0.0;
  double energy = 0.0;           // ½||u||²
  double dissipation = 0.0;      // nu * discrete int |Du|² at this step
  double constraint_excess = 0.0;  // max cell (|Du| - psi)+
  int picard_iters = 0;
  double complementarity = 0.0;  // int lambda (psi-|Du|)+ / max(int lambda, tiny)
  double multiplier_mass = 0.0;  // int lambda
  double div_residual = 0.0;
  double forcing_work = 0.0;     // <f, u^{n+1}>
  double picard_update = 0.0;
};

struct PicardDiverged : SolverFailure {
  using SolverFailure::SolverFailure;
};
struct InitialConstraintViolated : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One backward-Euler step of the penalized system. psi is sampled at the
/// new time level; f likewise. The nonlinear viscosity is Picard-lagged so
/// each inner solve is SPD; the inner loop under-relaxes by cfg.relax and
/// stops when the relative velocity update drops below cfg.picard_tol.
/// An optional guess seeds the Picard iteration (e.g. the matching step of a
/// previous outer iterate); by default it starts from u^n.
std::pair<FlowState, StepDiagnostics> step(const FlowState& state, const ScalarField& psi,
                                           const VelocityField& f, const SolverConfig& cfg,
                                           const VelocityField* guess = nullptr);

using Trajectory = std::vector<std::pair<FlowState, StepDiagnostics>>;

using PsiProvider = std::function<ScalarField(double t)>;
using ForcingProvider = std::function<VelocityField(double t)>;

/// Integrate from u0 to t_end, recording every step. u0 must satisfy
/// |Du0| <= psi(0) cellwise. On PicardDiverged a step is retried once with
/// halved under-relaxation.
Trajectory run(const VelocityField& u0, const PsiProvider& psi, const ForcingProvider& f,
               const SolverConfig& cfg, const Trajectory* warm = nullptr);

struct EnergyReport {
  std::vector<double> residual;  // per step: LHS - RHS of the energy inequality
  double worst = 0.0;            // max residual (should be <= ~0 up to slack)
  double energy_scale = 0.0;
};

/// Discrete energy-balance check: ½||u(t)||² + nu Σ dt |Du|²_h - Σ dt <f,u> - ½||u0||².
EnergyReport energy_report(const Trajectory& traj, double u0_energy);

/// Discrete V2 distance (Σ_steps Σ_cells |D(u-v)|² h² dt)^{1/2} between two
/// trajectories on the same grid and timeline.
double v2_distance(const Trajectory& a, const Trajectory& b);
double v2_norm(const Trajectory& a);

/// L²(Q_T) distance of the velocity fields.
double l2qt_distance(const Trajectory& a, const Trajectory& b);

/// max over steps of ||u||_{L²}.
double linf_l2(const Trajectory& a);

}  // namespace thick
