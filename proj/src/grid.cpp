#include "thickflow/grid.hpp"

#include <cmath>
#include <map>
#include <mutex>

namespace thick {

Domain::Domain(double lx_, double ly_, int nx_, int ny_) : lx(lx_), ly(ly_), nx(nx_), ny(ny_) {
  if (nx < 4 || ny < 4) throw std::invalid_argument("Domain: nx, ny must be >= 4");
  const double hx = lx / nx, hy = ly / ny;
  if (std::abs(hx - hy) > 1e-12 * std::max(hx, hy))
    throw std::invalid_argument("Domain: spacing must be uniform (lx/nx == ly/ny)");
  h = hx;
}

void VelocityField::enforce_boundary() {
  ux.row(0).setZero();
  ux.row(dom.nx).setZero();
  uy.col(0).setZero();
  uy.col(dom.ny).setZero();
}

VelocityField operator+(const VelocityField& a, const VelocityField& b) {
  VelocityField r = a;
  r.ux += b.ux;
  r.uy += b.uy;
  return r;
}

VelocityField operator-(const VelocityField& a, const VelocityField& b) {
  VelocityField r = a;
  r.ux -= b.ux;
  r.uy -= b.uy;
  return r;
}

VelocityField operator*(double s, const VelocityField& a) {
  VelocityField r = a;
  r.ux *= s;
  r.uy *= s;
  return r;
}

void axpy(double a, const VelocityField& x, VelocityField& y) {
  y.ux += a * x.ux;
  y.uy += a * x.uy;
}

namespace {

// Shear rate ½(du/dy + dv/dx) at grid nodes, (nx+1) x (ny+1).
// Tangential velocity reflects through the wall (no-slip ghost).
ArrayXXd node_shear(const VelocityField& u) {
  const Domain& d = u.dom;
  const double h = d.h;
  ArrayXXd g = ArrayXXd::Zero(d.nx + 1, d.ny + 1);
  for (int j = 0; j <= d.ny; ++j) {
    for (int i = 0; i <= d.nx; ++i) {
      const double ux_hi = (j < d.ny) ? u.ux(i, j) : -u.ux(i, d.ny - 1);
      const double ux_lo = (j > 0) ? u.ux(i, j - 1) : -u.ux(i, 0);
      const double uy_hi = (i < d.nx) ? u.uy(i, j) : -u.uy(d.nx - 1, j);
      const double uy_lo = (i > 0) ? u.uy(i - 1, j) : -u.uy(0, j);
      g(i, j) = 0.5 * ((ux_hi - ux_lo) / h + (uy_hi - uy_lo) / h);
    }
  }
  return g;
}

// Cell viscosity averaged to nodes (partial averages at walls/corners).
ArrayXXd eta_to_nodes(const ScalarField& eta) {
  const Domain& d = eta.dom;
  ArrayXXd en = ArrayXXd::Zero(d.nx + 1, d.ny + 1);
  for (int j = 0; j <= d.ny; ++j) {
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
  }
  return en;
}

}  // namespace

TensorField sym_gradient(const VelocityField& u) {
  const Domain& d = u.dom;
  const double h = d.h;
  TensorField T(d);
  T.d11 = (u.ux.bottomRows(d.nx) - u.ux.topRows(d.nx)) / h;
  T.d22 = (u.uy.rightCols(d.ny) - u.uy.leftCols(d.ny)) / h;
  const ArrayXXd g = node_shear(u);
  T.d12 = 0.25 * (g.block(0, 0, d.nx, d.ny) + g.block(1, 0, d.nx, d.ny) +
                  g.block(0, 1, d.nx, d.ny) + g.block(1, 1, d.nx, d.ny));
  return T;
}

ScalarField tensor_norm(const TensorField& T) {
  ScalarField s(T.dom);
  s.c = (T.d11.square() + T.d22.square() + 2.0 * T.d12.square()).sqrt();
  return s;
}

ScalarField divergence(const VelocityField& u) {
  const Domain& d = u.dom;
  ScalarField s(d);
  s.c = (u.ux.bottomRows(d.nx) - u.ux.topRows(d.nx) + u.uy.rightCols(d.ny) -
         u.uy.leftCols(d.ny)) /
        d.h;
  return s;
}

namespace {

// 1D skew transport of a no-slip lattice line: ½(divergence + advective
// form) with centered fluxes and zero extension beyond the lattice. The two
// forms are exact adjoints, so <C u, u> telescopes to zero for any advecting
// speeds wm (midpoints between consecutive lattice slots).
//
// Slot k of the output receives, for midpoint speeds wm(k-½)=wlo, wm(k+½)=whi:
//   ½ [ whi (u(k+1)+u(k))/2 - wlo (u(k)+u(k-1))/2 ] / h        (div form)
// + ½ [ whi (u(k+1)-u(k)) + wlo (u(k)-u(k-1)) ] / (2h)          (adv form)
// = [ whi u(k+1) - wlo u(k-1) ] / (2h)  + u(k) (whi - wlo) ... expanded below.

inline double skew1d(double wlo, double whi, double ulo, double uc, double uhi, double h) {
  const double div = (whi * 0.5 * (uhi + uc) - wlo * 0.5 * (uc + ulo)) / h;
  const double adv = (whi * (uhi - uc) + wlo * (uc - ulo)) / (2.0 * h);
  return 0.5 * (div + adv);
}

}  // namespace

VelocityField convection(const VelocityField& w, const VelocityField& u) {
  const Domain& d = u.dom;
  const double h = d.h;
  VelocityField c(d);

  // x-momentum: lattice (nx+1, ny), interior faces i=1..nx-1
  for (int j = 0; j < d.ny; ++j) {
    for (int i = 1; i < d.nx; ++i) {
      // x-transport: advecting wx at cell centers i-1, i
      const double wxl = 0.5 * (w.ux(i - 1, j) + w.ux(i, j));
      const double wxr = 0.5 * (w.ux(i, j) + w.ux(i + 1, j));
      const double cx = skew1d(wxl, wxr, u.ux(i - 1, j), u.ux(i, j), u.ux(i + 1, j), h);
      // y-transport: advecting wy at nodes (i,j), (i,j+1)
      const double wyl = 0.5 * (w.uy(i - 1, j) + w.uy(i, j));
      const double wyr = 0.5 * (w.uy(i - 1, j + 1) + w.uy(i, j + 1));
      const double ulo = (j > 0) ? u.ux(i, j - 1) : 0.0;
      const double uhi = (j < d.ny - 1) ? u.ux(i, j + 1) : 0.0;
      const double cy = skew1d(wyl, wyr, ulo, u.ux(i, j), uhi, h);
      c.ux(i, j) = cx + cy;
    }
  }

  // y-momentum: lattice (nx, ny+1), interior faces j=1..ny-1
  for (int j = 1; j < d.ny; ++j) {
    for (int i = 0; i < d.nx; ++i) {
      const double wyb = 0.5 * (w.uy(i, j - 1) + w.uy(i, j));
      const double wyt = 0.5 * (w.uy(i, j) + w.uy(i, j + 1));
      const double cy = skew1d(wyb, wyt, u.uy(i, j - 1), u.uy(i, j), u.uy(i, j + 1), h);
      const double wxl = 0.5 * (w.ux(i, j - 1) + w.ux(i, j));
      const double wxr = 0.5 * (w.ux(i + 1, j - 1) + w.ux(i + 1, j));
      const double ulo = (i > 0) ? u.uy(i - 1, j) : 0.0;
      const double uhi = (i < d.nx - 1) ? u.uy(i + 1, j) : 0.0;
      const double cx = skew1d(wxl, wxr, ulo, u.uy(i, j), uhi, h);
      c.uy(i, j) = cy + cx;
    }
  }
  return c;
}

double visc_form(const ScalarField& eta, const VelocityField& u, const VelocityField& v) {
  const Domain& d = u.dom;
  const double h = d.h;
  const TensorField Tu = sym_gradient(u), Tv = sym_gradient(v);
  const double s =
      (eta.c * (Tu.d11 * Tv.d11 + Tu.d22 * Tv.d22 + 2.0 * Tu.d12 * Tv.d12)).sum();
  return s * h * h;
}

VelocityField tensor_divergence(const TensorField& S) {
  const Domain& d = S.dom;
  const double h = d.h;

  const ArrayXXd& s11 = S.d11;  // (nx, ny) cells
  const ArrayXXd& s22 = S.d22;
  // Shear stress at nodes as the exact adjoint of the cell-averaged d12:
  // each cell spreads s12 back to its four corner nodes with weight 1/4,
  // so div is the exact negative gradient of the cell form
  // Σ_c S_c : Du_c h² used by the stepper energy and visc_form.
  const ArrayXXd& s12 = S.d12;
  ArrayXXd sn = ArrayXXd::Zero(d.nx + 1, d.ny + 1);
  for (int j = 0; j < d.ny; ++j)
    for (int i = 0; i < d.nx; ++i) {
      const double q = 0.25 * s12(i, j);
      sn(i, j) += q;
      sn(i + 1, j) += q;
      sn(i, j + 1) += q;
      sn(i + 1, j + 1) += q;
    }

  VelocityField r(d);

  // x-momentum, interior faces i=1..nx-1:
  //   d/dx(eta d11) + d/dy(eta d12), with the node term's ghost reflection
  //   folded back (tangential no-slip): near-wall rows pick the wall node
  //   coefficient twice.
  for (int j = 0; j < d.ny; ++j) {
    for (int i = 1; i < d.nx; ++i) {
      double val = (s11(i, j) - s11(i - 1, j)) / h;
      double top = sn(i, j + 1), bot = sn(i, j);
      // ghost fold: node row 0 (resp. ny) also differentiates -ux(i,0)
      // (resp. -ux(i,ny-1)); the adjoint doubles those couplings.
      if (j == 0) bot *= 2.0;
      if (j == d.ny - 1) top *= 2.0;
      val += (top - bot) / h;
      r.ux(i, j) = val;
    }
  }

  // y-momentum, interior faces j=1..ny-1
  for (int j = 1; j < d.ny; ++j) {
    for (int i = 0; i < d.nx; ++i) {
      double val = (s22(i, j) - s22(i, j - 1)) / h;
      double rgt = sn(i + 1, j), lft = sn(i, j);
      if (i == 0) lft *= 2.0;
      if (i == d.nx - 1) rgt *= 2.0;
      val += (rgt - lft) / h;
      r.uy(i, j) = val;
    }
  }
  return r;
}

VelocityField viscous_divergence(const ScalarField& eta, const VelocityField& u) {
  const TensorField T = sym_gradient(u);
  TensorField S(u.dom);
  S.d11 = eta.c * T.d11;
  S.d22 = eta.c * T.d22;
  S.d12 = eta.c * T.d12;
  return tensor_divergence(S);
}

VelocityField gradient(const ScalarField& phi) {
  const Domain& d = phi.dom;
  const double h = d.h;
  VelocityField g(d);
  for (int j = 0; j < d.ny; ++j)
    for (int i = 1; i < d.nx; ++i) g.ux(i, j) = (phi.c(i, j) - phi.c(i - 1, j)) / h;
  for (int j = 1; j < d.ny; ++j)
    for (int i = 0; i < d.nx; ++i) g.uy(i, j) = (phi.c(i, j) - phi.c(i, j - 1)) / h;
  return g;
}

namespace {

// Neumann 5-point Laplacian on cells: div(gradient(phi)).
ArrayXXd neumann_laplacian(const Domain& d, const ArrayXXd& p) {
  const double h2 = d.h * d.h;
  ArrayXXd r = ArrayXXd::Zero(d.nx, d.ny);
  for (int j = 0; j < d.ny; ++j) {
    for (int i = 0; i < d.nx; ++i) {
      double v = 0.0;
      if (i > 0) v += p(i - 1, j) - p(i, j);
      if (i < d.nx - 1) v += p(i + 1, j) - p(i, j);
      if (j > 0) v += p(i, j - 1) - p(i, j);
      if (j < d.ny - 1) v += p(i, j + 1) - p(i, j);
      r(i, j) = v / h2;
    }
  }
  return r;
}

// The cell-centered Neumann Laplacian is diagonal in the DCT-II basis
// cos(pi k (i+1/2)/n) with 1D eigenvalues (2 cos(pi k/n) - 2)/h^2, so the
// Poisson solve reduces to two small dense cosine-matrix products per axis
// (exact to roundoff; n is desk-scale).
struct DctPlan {
  Eigen::MatrixXd fwd;  // (k,i) = cos(pi k (i+1/2)/n)
  Eigen::MatrixXd inv;  // (i,k) = w_k cos(pi k (i+1/2)/n), w_0=1/n, w_k=2/n
  Eigen::ArrayXd eig;   // 2 cos(pi k/n) - 2
};

const DctPlan& dct_plan(int n) {
  static std::mutex mu;
  static std::map<int, DctPlan> cache;
  std::lock_guard<std::mutex> lk(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  DctPlan p;
  p.fwd.resize(n, n);
  p.inv.resize(n, n);
  p.eig.resize(n);
  for (int k = 0; k < n; ++k) {
    p.eig(k) = 2.0 * std::cos(M_PI * k / n) - 2.0;
    const double w = (k == 0 ? 1.0 : 2.0) / n;
    for (int i = 0; i < n; ++i) {
      const double c = std::cos(M_PI * k * (i + 0.5) / n);
      p.fwd(k, i) = c;
      p.inv(i, k) = w * c;
    }
  }
  return cache.emplace(n, std::move(p)).first->second;
}

// Solve neumann_laplacian(phi) = b for mean-zero b; returns the mean-zero
// solution.
ArrayXXd neumann_poisson(const Domain& d, const ArrayXXd& b) {
  const DctPlan& px = dct_plan(d.nx);
  const DctPlan& py = dct_plan(d.ny);
  Eigen::MatrixXd bh = px.fwd * b.matrix() * py.fwd.transpose();
  const double ih2 = 1.0 / (d.h * d.h);
  for (int l = 0; l < d.ny; ++l)
    for (int k = 0; k < d.nx; ++k)
      bh(k, l) = (k == 0 && l == 0) ? 0.0 : bh(k, l) / ((px.eig(k) + py.eig(l)) * ih2);
  return (px.inv * bh * py.inv.transpose()).array();
}

}  // namespace

ProjectionResult project(const VelocityField& u, double dt, double rel_tol, int max_iters) {
  const Domain& d = u.dom;
  if (max_iters < 0) max_iters = 10 * d.nx * d.ny;
  const int n = d.nx * d.ny;

  ArrayXXd b = divergence(u).c;
  b -= b.sum() / n;  // compatibility (exactly satisfied for no-slip u up to rounding)

  ArrayXXd phi = neumann_poisson(d, b);
  const double resid = std::sqrt((neumann_laplacian(d, phi) - b).square().sum());
  const double b2 = std::sqrt((b * b).sum());
  if (resid > std::max(rel_tol, 1e-10) * std::max(b2, 1e-300))
    throw SolverFailure("project: Poisson residual " + std::to_string(resid));
  (void)max_iters;

  ProjectionResult res;
  ScalarField phif(d);
  phif.c = phi;
  res.u = u - gradient(phif);
  res.u.enforce_boundary();
  res.pressure = ScalarField(d);
  res.pressure.c = phi / dt;
  res.cg_iters = 0;
  res.residual = resid;
  return res;
}

double inner(const VelocityField& u, const VelocityField& v) {
  const double h2 = u.dom.h * u.dom.h;
  return h2 * ((u.ux * v.ux).sum() + (u.uy * v.uy).sum());
}

double inner(const ScalarField& a, const ScalarField& b) {
  return a.dom.h * a.dom.h * (a.c * b.c).sum();
}

double l2_norm(const VelocityField& u) { return std::sqrt(inner(u, u)); }

double linf_norm(const VelocityField& u) {
  return std::max(u.ux.abs().maxCoeff(), u.uy.abs().maxCoeff());
}

double integral(const ScalarField& a) { return a.dom.h * a.dom.h * a.c.sum(); }

}  // namespace thick
