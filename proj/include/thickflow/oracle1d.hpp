#pragma once

#include "thickflow/grid.hpp"
#include "thickflow/penalty.hpp"

#include <Eigen/Dense>
#include <vector>

namespace thick {

/// Scalar gradient-constrained diffusion on [0, length] with w = 0 at both
/// ends: the small exactly-projectable analogue of the 2D constraint set.
struct Oracle1DProblem {
  int n = 64;          // grid points (nodes), n - 1 edges
  double length = 1.0;
  double nu = 0.1;
  double dt = 0.01;
  double t_end = 0.5;
  Eigen::VectorXd psi;  // per-edge threshold, size n - 1, uniformly positive
  Eigen::VectorXd f;    // per-node forcing, size n
  Eigen::VectorXd w0;   // initial state, size n, zero at both ends

  double h() const { return length / (n - 1); }
  int steps() const { return static_cast<int>(std::llround(t_end / dt)); }
  void validate() const;
};

using Trajectory1D = std::vector<Eigen::VectorXd>;  // states at t = dt, 2dt, ...

struct ProjectionStalled : SolverFailure {
  using SolverFailure::SolverFailure;
};

/// Reference solver: each backward-Euler step minimizes
///   ||w - w^n||² / (2 dt) + (nu/2) ||w_x||² - <f, w>
/// over {|w_x| <= psi per edge} by projected gradient descent in edge-gradient
/// variables. Feasibility (gradient box) and the two-sided boundary condition
/// (zero-sum of gradients) are reconciled by Dykstra alternating projections.
Trajectory1D solve_projected(const Oracle1DProblem& p);

/// Penalized twin of the 2D stepper in 1D: Picard-lagged viscosity
/// nu + k_eps(w_x² - psi²) + eps |w_x|^{q-2}, tridiagonal solves.
Trajectory1D solve_penalized_1d(const Oracle1DProblem& p, const PenaltyParams& pen);

/// Discrete L²(Q_T) distance (trapezoidal in space, step-weighted in time).
double compare(const Trajectory1D& a, const Trajectory1D& b, const Oracle1DProblem& p);
double l2qt_norm_1d(const Trajectory1D& a, const Oracle1DProblem& p);

/// Exact projection onto {|g_e| <= psi_e} ∩ {sum g = 0} via Dykstra.
Eigen::VectorXd project_feasible(const Eigen::VectorXd& g, const Eigen::VectorXd& psi);

}  // namespace thick
