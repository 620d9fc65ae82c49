#pragma once

#include "thickflow/stepper.hpp"

namespace thick {

/// Time-indexed nonnegative multiplier field lambda_eps = k_eps(|Du|²-psi²).
struct MultiplierField {
  std::vector<ScalarField> lambda;  // one per step
};

/// Cellwise multiplier extraction (re-export of penalty_viscosity as the
/// dual object).
ScalarField extract(const ScalarField& du_norm, const ScalarField& psi, const PenaltyParams& p);
MultiplierField extract(const Trajectory& traj, const PsiProvider& psi, const PenaltyParams& p);

/// Normalized complementarity residual over the whole trajectory:
/// sum lambda (psi-|Du|)+ h² dt / max(sum lambda h² dt, 1e-30).
double complementarity_residual(const MultiplierField& lam, const Trajectory& traj,
                                const PsiProvider& psi);

/// Fraction of multiplier mass on cells with |Du| >= psi - margin.
double multiplier_concentration(const MultiplierField& lam, const Trajectory& traj,
                                const PsiProvider& psi, double margin);

/// Battery of discretely divergence-free smooth test fields: discrete curls
/// of products of squared sine bumps, indexed by mode pairs.
std::vector<VelocityField> test_battery(const Domain& d);

/// Max over the battery of the normalized discrete weak-form residual of the
/// multiplier problem, assembled with cell-centered quadrature independent
/// of the stepper's operators.
double momentum_residual(const Trajectory& traj, const MultiplierField& lam,
                         const PsiProvider& psi, const ForcingProvider& f,
                         const VelocityField& u0, const SolverConfig& cfg);

}  // namespace thick
