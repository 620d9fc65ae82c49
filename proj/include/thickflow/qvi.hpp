#pragma once

#include "thickflow/constraints.hpp"
#include "thickflow/stepper.hpp"

#include <functional>
#include <vector>

namespace thick {

/// Problem data entering the constant calculator. Norms are the continuous
/// ones: f in L²(Q_T), u⁰ in L²(Ω).
struct QviData {
  double nu = 0.1;
  double T = 0.5;
  double omega_area = 1.0;
  double kappa = 0.0;  // first Dirichlet Laplacian eigenvalue of the box
  double f_l2 = 0.0;
  double u0_l2 = 0.0;
  int d = 2;
};

/// kappa for a (0,lx)x(0,ly) rectangle: pi^2 (1/lx^2 + 1/ly^2).
double rectangle_kappa(double lx, double ly);

/// Gamma data of a solution-dependent threshold Psi[v] = Gamma(v) phi:
/// lower/upper bounds eta(R) <= Gamma <= rho(R) over the ball of radius R and
/// the Lipschitz modulus gamma(R), plus the range of phi.
struct GammaModel {
  std::function<double(double)> eta, rho, gamma;
  double phi_star = 1.0;
  double phi_upper = 1.0;
};

/// Gamma(v) = alpha + beta ||Dv||² gives eta = alpha, rho(R) = alpha + beta R²,
/// gamma(R) = 2 beta R.
GammaModel norm_gamma_model(const NormFunctional& n, double phi_star, double phi_upper);

/// A constant Gamma (threshold independent of v): gamma = 0, contraction
/// trivially holds.
GammaModel constant_gamma_model(double value, double phi_star, double phi_upper);

/// How the sup-norm bound M is obtained: a pilot-run measurement of max|u|
/// with a 1.2 safety factor, or the analytic M = K_p psi^* |Omega|^{1/p}.
struct MBound {
  enum class Mode { unset, pilot, user_kp } mode = Mode::unset;
  double value = 0.0;  // pilot: measured sup-norm; user_kp: K_p
  double p = 4.0;      // exponent in |Omega|^{1/p} for user_kp
};

struct MissingKorn : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ContractionBudget {
  double M = 0.0;
  double psi_star = 0.0, psi_upper = 0.0;
  double C1 = 0.0, C2 = 0.0, C3 = 0.0, C_star = 0.0, C_nu = 0.0;
  double R1 = 0.0, R2 = 0.0, R_star = 0.0;
  double A = 0.0, B = 0.0;
  double gamma_star = 0.0, eta_star = 0.0, rho_star = 0.0;
  int d = 2;
  double T = 0.0, nu = 0.0, omega_area = 0.0;
  double f_l2 = 0.0, u0_l2 = 0.0;
  double lhs = 0.0;  // left side of the contraction condition
};

ContractionBudget compute_budget(const QviData& data, const GammaModel& gamma, const MBound& m);

struct ContractionCheck {
  bool holds = false;
  double margin = 0.0;  // 1 - lhs
};
ContractionCheck contraction_holds(const ContractionBudget& b);

/// Largest |u| over a trajectory, for the pilot M measurement.
double measured_sup_norm(const Trajectory& traj);

struct FixedPointHistory {
  std::vector<double> distances;  // ||v_{n+1} - v_n|| in discrete V2
  std::vector<double> ratios;     // successive quotients
  bool converged = false;
  Trajectory trajectory;          // final iterate
};

struct NotConverged : std::runtime_error {
  FixedPointHistory history;
  NotConverged(std::string msg, FixedPointHistory h)
      : std::runtime_error(std::move(msg)), history(std::move(h)) {}
};

/// Iterate v_{n+1} = S(f, u⁰, Psi[v_n]) from the trajectory v0, measuring
/// successive distances in the discrete V2 norm. Each solve warm-starts its
/// Picard loops from the previous iterate. Throws NotConverged (history
/// attached) after maxiter corrections above tol.
FixedPointHistory fixed_point(const Trajectory& v0, const ThresholdProvider& functional,
                              const VelocityField& u0, const ForcingProvider& f,
                              const SolverConfig& cfg, double tol, int maxiter,
                              double ball_radius = 0.0);

/// Perturbation sizes of a data pair for the continuous-dependence bounds.
struct DependenceDelta {
  double df_l2 = 0.0;    // ||f1 - f2||_{L²(Q_T)}
  double du0_l2 = 0.0;   // ||u⁰1 - u⁰2||
  double dpsi_inf = 0.0;  // ||psi1 - psi2||_inf
};

struct DependenceBound {
  double rhs_linf_l2 = 0.0;  // bounds ||u1-u2||²_{L∞(0,T;L²)}
  double rhs_v2 = 0.0;       // bounds the same plus nu ||D(u1-u2)||²
};

DependenceBound dependence_bound(const DependenceDelta& delta, const ContractionBudget& b);

}  // namespace thick
