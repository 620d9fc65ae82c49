#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace thick {

using Eigen::ArrayXXd;

/// Rectangular domain [0,lx] x [0,ly] split into nx x ny square cells.
struct Domain {
  double lx = 1.0, ly = 1.0;
  int nx = 0, ny = 0;
  double h = 0.0;

  Domain() = default;
  Domain(double lx_, double ly_, int nx_, int ny_);

  double area() const { return lx * ly; }
  // cell-center coordinates
  double xc(int i) const { return (i + 0.5) * h; }
  double yc(int j) const { return (j + 0.5) * h; }

  bool operator==(const Domain& o) const {
    return nx == o.nx && ny == o.ny && lx == o.lx && ly == o.ly;
  }
};

/// Cell-centered scalar lattice, nx x ny.
struct ScalarField {
  Domain dom;
  ArrayXXd c;  // (nx, ny)

  ScalarField() = default;
  explicit ScalarField(const Domain& d) : dom(d), c(ArrayXXd::Zero(d.nx, d.ny)) {}
  ScalarField(const Domain& d, double v) : dom(d), c(ArrayXXd::Constant(d.nx, d.ny, v)) {}

  double max() const { return c.maxCoeff(); }
  double min() const { return c.minCoeff(); }
  bool all_finite() const { return c.allFinite(); }
};

/// MAC staggered velocity: ux on vertical faces (nx+1, ny),
/// uy on horizontal faces (nx, ny+1). No-slip: boundary faces zero.
struct VelocityField {
  Domain dom;
  ArrayXXd ux;  // (nx+1, ny)
  ArrayXXd uy;  // (nx, ny+1)

  VelocityField() = default;
  explicit VelocityField(const Domain& d)
      : dom(d), ux(ArrayXXd::Zero(d.nx + 1, d.ny)), uy(ArrayXXd::Zero(d.nx, d.ny + 1)) {}

  void enforce_boundary();  // zero the wall-normal boundary faces
  bool all_finite() const { return ux.allFinite() && uy.allFinite(); }
};

/// Cell-centered symmetric 2x2 tensor (three independent entries).
struct TensorField {
  Domain dom;
  ArrayXXd d11, d22, d12;  // each (nx, ny)

  TensorField() = default;
  explicit TensorField(const Domain& d)
      : dom(d),
        d11(ArrayXXd::Zero(d.nx, d.ny)),
        d22(ArrayXXd::Zero(d.nx, d.ny)),
        d12(ArrayXXd::Zero(d.nx, d.ny)) {}
};

// ---- field algebra -------------------------------------------------------

VelocityField operator+(const VelocityField& a, const VelocityField& b);
VelocityField operator-(const VelocityField& a, const VelocityField& b);
VelocityField operator*(double s, const VelocityField& a);
void axpy(double a, const VelocityField& x, VelocityField& y);  // y += a*x

// ---- discrete operators --------------------------------------------------

/// Symmetric gradient ½(grad u + grad^T u) at cell centers. Off-diagonal
/// entries are built at grid nodes (with no-slip ghost reflection of the
/// tangential velocity) and averaged to centers.
TensorField sym_gradient(const VelocityField& u);

/// Frobenius norm per cell, sqrt(d11²+d22²+2 d12²).
ScalarField tensor_norm(const TensorField& T);

/// Exact face-flux divergence per cell.
ScalarField divergence(const VelocityField& u);

/// Skew-symmetric (energy-neutral) convection; transporting field w,
/// transported field u. <convect(w,u), u>_h = 0 exactly, any w.
VelocityField convection(const VelocityField& w, const VelocityField& u);
inline VelocityField convection(const VelocityField& u) { return convection(u, u); }

/// Discrete divergence of a cell-centered symmetric stress: the exact
/// negative gradient of u -> sum_c S_c : Du(u)_c h^2, so for any stress S
/// <div S, v>_h = -sum_c S_c : Dv_c h^2.
VelocityField tensor_divergence(const TensorField& S);

/// Discrete div(eta D u) with eta at cell centers. Self-adjoint and
/// negative-semidefinite by construction:
/// <V(eta)u, v>_h = -visc_form(eta,u,v) exactly.
VelocityField viscous_divergence(const ScalarField& eta, const VelocityField& u);

/// The bilinear form behind viscous_divergence: discrete int eta Du:Dv.
double visc_form(const ScalarField& eta, const VelocityField& u, const VelocityField& v);

/// Gradient of a cell scalar on interior faces (boundary faces zero).
VelocityField gradient(const ScalarField& phi);

struct ProjectionResult {
  VelocityField u;       // divergence-free part
  ScalarField pressure;  // phi/dt
  int cg_iters = 0;
  double residual = 0.0;
};

struct SolverFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Leray projection: subtract grad(phi) with div grad phi = div u
/// (homogeneous Neumann, mean-zero phi), solved by CG.
ProjectionResult project(const VelocityField& u, double dt = 1.0, double rel_tol = 1e-10,
                         int max_iters = -1);

// ---- inner products and norms -------------------------------------------

double inner(const VelocityField& u, const VelocityField& v);
double inner(const ScalarField& a, const ScalarField& b);
double l2_norm(const VelocityField& u);
double linf_norm(const VelocityField& u);
double integral(const ScalarField& a);  // h² sum

}  // namespace thick
