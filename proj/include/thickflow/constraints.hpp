#pragma once

#include "thickflow/expr.hpp"
#include "thickflow/stepper.hpp"

#include <functional>
#include <memory>
#include <variant>
#include <vector>

namespace thick {

struct ThresholdBounds {
  double psi_star = 0.0;
  double psi_upper = 0.0;
  ThresholdBounds() = default;
  ThresholdBounds(double lo, double hi) : psi_star(lo), psi_upper(hi) {
    if (!(0.0 < lo && lo <= hi)) throw std::invalid_argument("ThresholdBounds: need 0 < lo <= hi");
  }
};

struct BoundsViolated : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using SpaceTimeFn = std::function<double(double x, double y, double t)>;

/// Nonlocal integral threshold: zeta(v)(x,t) = int_0^t int_Omega v K dy ds,
/// fed componentwise into the outer function phi(x, y, t, zx, zy).
struct KernelFunctional {
  // K(x1, x2, t, y1, y2, s)
  std::function<double(double, double, double, double, double, double)> kernel;
  // phi(x, y, t, zeta_x, zeta_y), valued in [psi_*, psi^*]
  std::function<double(double, double, double, double, double)> phi;
};

/// Psi[w](x,t) = phi(x,t) (alpha + beta int_{Q_T} |Dw|^2).
struct NormFunctional {
  double alpha = 1.0;
  double beta = 0.0;
  SpaceTimeFn phi = [](double, double, double) { return 1.0; };
};

/// Threshold through a convective parabolic scalar equation
///   dt zeta - div(A grad zeta) + v . grad zeta = rho,  zeta = 0 on the wall.
/// The five-point diffusion stencil supports diagonal A = diag(a11, a22).
struct ParabolicCoupling {
  SpaceTimeFn a11, a22;  // diagonal diffusivity entries, uniformly positive
  SpaceTimeFn rho;
  ScalarField zeta0;
  // psi(x, y, t, zeta, dzeta_dx, dzeta_dy), valued in [psi_*, psi^*]
  std::function<double(double, double, double, double, double, double)> psi_outer;
  double ellipticity_floor = 1e-12;
};

struct ParabolicSolution {
  std::vector<ScalarField> zeta;                       // per step
  std::vector<std::pair<ScalarField, ScalarField>> grad;  // (dzdx, dzdy) per step
};

/// Backward-Euler, upwinded solve of the coupled parabolic equation along a
/// divergence-free velocity trajectory.
ParabolicSolution solve_coupled_parabolic(const Trajectory& v, const ParabolicCoupling& pc,
                                          const SolverConfig& cfg);

/// Source of the threshold psi(x,t); functional variants need a velocity
/// trajectory at eval time.
class ThresholdProvider {
 public:
  static ThresholdProvider constant(const Domain& d, double c, ThresholdBounds b);
  static ThresholdProvider analytic(const Domain& d, Expr e, ThresholdBounds b);
  static ThresholdProvider analytic(const Domain& d, SpaceTimeFn f, ThresholdBounds b);
  static ThresholdProvider tabulated(const Domain& d, std::vector<double> times,
                                     std::vector<ScalarField> fields, ThresholdBounds b);
  static ThresholdProvider kernel(const Domain& d, KernelFunctional k, ThresholdBounds b);
  static ThresholdProvider norm_functional(const Domain& d, NormFunctional n, ThresholdBounds b);
  static ThresholdProvider parabolic(const Domain& d, ParabolicCoupling pc, const SolverConfig& cfg,
                                     ThresholdBounds b);

  /// Cellwise threshold at time t. Values outside [psi_*, psi^*] raise
  /// BoundsViolated (a misconfigured functional, never clamped).
  ScalarField eval(const Trajectory* traj, double t) const;

  bool is_functional() const;
  const ThresholdBounds& bounds() const { return bounds_; }
  const Domain& domain() const { return dom_; }

  /// Bind a trajectory, yielding a plain psi(t) for the stepper. Parabolic
  /// couplings presolve zeta here.
  PsiProvider bind(const Trajectory* traj) const;

 private:
  struct Constant {
    double c;
  };
  struct Analytic {
    SpaceTimeFn f;
  };
  struct Tabulated {
    std::vector<double> times;
    std::vector<ScalarField> fields;
  };
  struct Kernel {
    KernelFunctional k;
  };
  struct Norm {
    NormFunctional n;
  };
  struct Parabolic {
    ParabolicCoupling pc;
    SolverConfig cfg;
  };
  using Variant = std::variant<Constant, Analytic, Tabulated, Kernel, Norm, Parabolic>;

  Domain dom_;
  ThresholdBounds bounds_;
  std::shared_ptr<const Variant> v_;

  ScalarField check(ScalarField s) const;
};

/// Time-mollified provider: the relaxation ODE psi_n + (1/n) dt psi_n = psi
/// with psi_n(0) = psi(0), integrated exactly per cell against a piecewise
/// linear sampling of the base at the given times. Constant thresholds are
/// fixed points; bounds are preserved.
ThresholdProvider mollify(const ThresholdProvider& base, int n, const std::vector<double>& times);

/// zeta(v)(x,t) by tensor-product midpoint quadrature, then phi(x,t,zeta).
ScalarField eval_kernel(const Trajectory& v, const KernelFunctional& k, double t, const Domain& d);

}  // namespace thick
