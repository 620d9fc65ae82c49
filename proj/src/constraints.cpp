#include "thickflow/constraints.hpp"

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include <cmath>
#include <sstream>

namespace thick {

namespace {

ScalarField map_cells(const Domain& d, const SpaceTimeFn& f, double t) {
  ScalarField s(d);
  for (int j = 0; j < d.ny; ++j)
    for (int i = 0; i < d.nx; ++i) s.c(i, j) = f((i + 0.5) * d.h, (j + 0.5) * d.h, t);
  return s;
}

// Cell-centered components of a MAC velocity.
void cell_velocity(const VelocityField& u, Eigen::ArrayXXd& cx, Eigen::ArrayXXd& cy) {
  const Domain& d = u.dom;
  cx.resize(d.nx, d.ny);
  cy.resize(d.nx, d.ny);
  for (int j = 0; j < d.ny; ++j)
    for (int i = 0; i < d.nx; ++i) {
      cx(i, j) = 0.5 * (u.ux(i, j) + u.ux(i + 1, j));
      cy(i, j) = 0.5 * (u.uy(i, j) + u.uy(i, j + 1));
    }
}

}  // namespace

ScalarField eval_kernel(const Trajectory& v, const KernelFunctional& k, double t, const Domain& d) {
  ScalarField out(d);
  if (v.empty()) {
    for (int j = 0; j < d.ny; ++j)
      for (int i = 0; i < d.nx; ++i)
        out.c(i, j) = k.phi((i + 0.5) * d.h, (j + 0.5) * d.h, t, 0.0, 0.0);
    return out;
  }
  const double h2 = d.h * d.h;
  // Accumulate the time quadrature first: steps contribute weight
  // min(dt, t - t_prev) evaluated at the step state.
  struct Slab {
    double w, s;
    Eigen::ArrayXXd cx, cy;
  };
  std::vector<Slab> slabs;
  double t_prev = 0.0;
  for (const auto& [state, diag] : v) {
    if (t_prev >= t - 1e-14) break;
    Slab sl;
    sl.w = std::min(state.t, t) - t_prev;
    sl.s = 0.5 * (t_prev + std::min(state.t, t));  // slab midpoint in time
    cell_velocity(state.u, sl.cx, sl.cy);
    slabs.push_back(std::move(sl));
    t_prev = state.t;
  }
  for (int j = 0; j < d.ny; ++j)
    for (int i = 0; i < d.nx; ++i) {
      const double x1 = (i + 0.5) * d.h, x2 = (j + 0.5) * d.h;
      double zx = 0.0, zy = 0.0;
      for (const auto& sl : slabs)
        for (int jy = 0; jy < d.ny; ++jy)
          for (int ix = 0; ix < d.nx; ++ix) {
            const double y1 = (ix + 0.5) * d.h, y2 = (jy + 0.5) * d.h;
            const double kk = k.kernel(x1, x2, t, y1, y2, sl.s);
            zx += sl.w * h2 * sl.cx(ix, jy) * kk;
            zy += sl.w * h2 * sl.cy(ix, jy) * kk;
          }
      out.c(i, j) = k.phi(x1, x2, t, zx, zy);
    }
  return out;
}

ParabolicSolution solve_coupled_parabolic(const Trajectory& v, const ParabolicCoupling& pc,
                                          const SolverConfig& cfg) {
  const Domain& d = pc.zeta0.dom;
  const double h = d.h, dt = cfg.dt;
  const int n = d.nx * d.ny;
  auto idx = [&](int i, int j) { return i + d.nx * j; };

  ParabolicSolution sol;
  auto push = [&](const ScalarField& z) {
    ScalarField gx(d), gy(d);
    for (int j = 0; j < d.ny; ++j)
      for (int i = 0; i < d.nx; ++i) {
        const double zl = (i > 0) ? z.c(i - 1, j) : -z.c(i, j);
        const double zr = (i < d.nx - 1) ? z.c(i + 1, j) : -z.c(i, j);
        const double zb = (j > 0) ? z.c(i, j - 1) : -z.c(i, j);
        const double zt = (j < d.ny - 1) ? z.c(i, j + 1) : -z.c(i, j);
        gx.c(i, j) = (zr - zl) / (2.0 * h);
        gy.c(i, j) = (zt - zb) / (2.0 * h);
      }
    sol.zeta.push_back(z);
    sol.grad.push_back({std::move(gx), std::move(gy)});
  };
  push(pc.zeta0);

  ScalarField z = pc.zeta0;
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  for (const auto& [state, diag] : v) {
    const double t = state.t;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(5 * n);
    Eigen::VectorXd rhs(n);
    for (int j = 0; j < d.ny; ++j)
      for (int i = 0; i < d.nx; ++i) {
        const double xc = (i + 0.5) * h, yc = (j + 0.5) * h;
        double diagv = 1.0 / dt;
        rhs(idx(i, j)) = z.c(i, j) / dt + pc.rho(xc, yc, t);
        auto a_floor = [&](double a) {
          if (a < pc.ellipticity_floor)
            throw std::invalid_argument("ParabolicCoupling: diffusivity below ellipticity floor");
          return a;
        };
        // Diffusion: face-sampled diagonal diffusivity; homogeneous Dirichlet
        // at walls enters through the half-cell flux.
        const double al = a_floor(pc.a11(i * h, yc, t));
        const double ar = a_floor(pc.a11((i + 1) * h, yc, t));
        const double ab = a_floor(pc.a22(xc, j * h, t));
        const double at = a_floor(pc.a22(xc, (j + 1) * h, t));
        if (i > 0) {
          diagv += al / (h * h);
          trip.push_back({idx(i, j), idx(i - 1, j), -al / (h * h)});
        } else {
          diagv += 2.0 * al / (h * h);
        }
        if (i < d.nx - 1) {
          diagv += ar / (h * h);
          trip.push_back({idx(i, j), idx(i + 1, j), -ar / (h * h)});
        } else {
          diagv += 2.0 * ar / (h * h);
        }
        if (j > 0) {
          diagv += ab / (h * h);
          trip.push_back({idx(i, j), idx(i, j - 1), -ab / (h * h)});
        } else {
          diagv += 2.0 * ab / (h * h);
        }
        if (j < d.ny - 1) {
          diagv += at / (h * h);
          trip.push_back({idx(i, j), idx(i, j + 1), -at / (h * h)});
        } else {
          diagv += 2.0 * at / (h * h);
        }
        // Upwind convection on the same faces; wall faces carry zero normal
        // velocity, so the Dirichlet value never enters the flux.
        const double ul = state.u.ux(i, j), ur = state.u.ux(i + 1, j);
        const double vb = state.u.uy(i, j), vt = state.u.uy(i, j + 1);
        diagv += (std::max(ur, 0.0) - std::min(ul, 0.0) + std::max(vt, 0.0) - std::min(vb, 0.0)) / h;
        if (i > 0) trip.push_back({idx(i, j), idx(i - 1, j), -std::max(ul, 0.0) / h});
        if (i < d.nx - 1) trip.push_back({idx(i, j), idx(i + 1, j), std::min(ur, 0.0) / h});
        if (j > 0) trip.push_back({idx(i, j), idx(i, j - 1), -std::max(vb, 0.0) / h});
        if (j < d.ny - 1) trip.push_back({idx(i, j), idx(i, j + 1), std::min(vt, 0.0) / h});
        trip.push_back({idx(i, j), idx(i, j), diagv});
      }
    Eigen::SparseMatrix<double> A(n, n);
    A.setFromTriplets(trip.begin(), trip.end());
    lu.compute(A);
    if (lu.info() != Eigen::Success)
      throw SolverFailure("coupled parabolic solve: factorization failed");
    Eigen::VectorXd zv = lu.solve(rhs);
    for (int j = 0; j < d.ny; ++j)
      for (int i = 0; i < d.nx; ++i) z.c(i, j) = zv(idx(i, j));
    push(z);
  }
  return sol;
}

ScalarField ThresholdProvider::check(ScalarField s) const {
  const double lo = bounds_.psi_star, hi = bounds_.psi_upper;
  const double tol = 1e-12 * std::max(1.0, hi);
  if ((s.c < lo - tol).any() || (s.c > hi + tol).any()) {
    std::ostringstream os;
    os << "threshold left [" << lo << ", " << hi << "]: range [" << s.c.minCoeff() << ", "
       << s.c.maxCoeff() << "]";
    throw BoundsViolated(os.str());
  }
  return s;
}

ThresholdProvider ThresholdProvider::constant(const Domain& d, double c, ThresholdBounds b) {
  ThresholdProvider p;
  p.dom_ = d;
  p.bounds_ = b;
  p.v_ = std::make_shared<Variant>(Constant{c});
  return p;
}

ThresholdProvider ThresholdProvider::analytic(const Domain& d, Expr e, ThresholdBounds b) {
  return analytic(
      d, [e = std::move(e)](double x, double y, double t) { return e(x, y, t); }, b);
}

ThresholdProvider ThresholdProvider::analytic(const Domain& d, SpaceTimeFn f, ThresholdBounds b) {
  ThresholdProvider p;
  p.dom_ = d;
  p.bounds_ = b;
  p.v_ = std::make_shared<Variant>(Analytic{std::move(f)});
  return p;
}

ThresholdProvider ThresholdProvider::tabulated(const Domain& d, std::vector<double> times,
                                               std::vector<ScalarField> fields, ThresholdBounds b) {
  if (times.size() != fields.size() || times.empty())
    throw std::invalid_argument("tabulated threshold: times/fields mismatch");
  for (size_t k = 1; k < times.size(); ++k)
    if (!(times[k] > times[k - 1])) throw std::invalid_argument("tabulated threshold: times not increasing");
  ThresholdProvider p;
  p.dom_ = d;
  p.bounds_ = b;
  p.v_ = std::make_shared<Variant>(Tabulated{std::move(times), std::move(fields)});
  return p;
}

ThresholdProvider ThresholdProvider::kernel(const Domain& d, KernelFunctional k, ThresholdBounds b) {
  ThresholdProvider p;
  p.dom_ = d;
  p.bounds_ = b;
  p.v_ = std::make_shared<Variant>(Kernel{std::move(k)});
  return p;
}

ThresholdProvider ThresholdProvider::norm_functional(const Domain& d, NormFunctional n,
                                                     ThresholdBounds b) {
  ThresholdProvider p;
  p.dom_ = d;
  p.bounds_ = b;
  p.v_ = std::make_shared<Variant>(Norm{std::move(n)});
  return p;
}

ThresholdProvider ThresholdProvider::parabolic(const Domain& d, ParabolicCoupling pc,
                                               const SolverConfig& cfg, ThresholdBounds b) {
  ThresholdProvider p;
  p.dom_ = d;
  p.bounds_ = b;
  p.v_ = std::make_shared<Variant>(Parabolic{std::move(pc), cfg});
  return p;
}

bool ThresholdProvider::is_functional() const {
  return std::holds_alternative<Kernel>(*v_) || std::holds_alternative<Norm>(*v_) ||
         std::holds_alternative<Parabolic>(*v_);
}

namespace {

ScalarField interp_table(const Domain& d, const std::vector<double>& times,
                         const std::vector<ScalarField>& fields, double t) {
  if (t <= times.front()) return fields.front();
  if (t >= times.back()) return fields.back();
  auto it = std::upper_bound(times.begin(), times.end(), t);
  size_t k = static_cast<size_t>(it - times.begin());
  const double w = (t - times[k - 1]) / (times[k] - times[k - 1]);
  ScalarField out(d);
  out.c = (1.0 - w) * fields[k - 1].c + w * fields[k].c;
  return out;
}

}  // namespace

ScalarField ThresholdProvider::eval(const Trajectory* traj, double t) const {
  if (is_functional() && traj == nullptr)
    throw std::invalid_argument("functional threshold needs a velocity trajectory");
  ScalarField out(dom_);
  if (auto* c = std::get_if<Constant>(v_.get())) {
    out.c.setConstant(c->c);
  } else if (auto* a = std::get_if<Analytic>(v_.get())) {
    out = map_cells(dom_, a->f, t);
  } else if (auto* tb = std::get_if<Tabulated>(v_.get())) {
    out = interp_table(dom_, tb->times, tb->fields, t);
  } else if (auto* k = std::get_if<Kernel>(v_.get())) {
    out = eval_kernel(*traj, k->k, t, dom_);
  } else if (auto* nf = std::get_if<Norm>(v_.get())) {
    const double gamma = nf->n.alpha + nf->n.beta * std::pow(v2_norm(*traj), 2);
    out = map_cells(dom_, nf->n.phi, t);
    out.c *= gamma;
  } else if (auto* pb = std::get_if<Parabolic>(v_.get())) {
    ParabolicSolution sol = solve_coupled_parabolic(*traj, pb->pc, pb->cfg);
    size_t k = static_cast<size_t>(std::lround(t / pb->cfg.dt));
    k = std::min(k, sol.zeta.size() - 1);
    for (int j = 0; j < dom_.ny; ++j)
      for (int i = 0; i < dom_.nx; ++i)
        out.c(i, j) = pb->pc.psi_outer((i + 0.5) * dom_.h, (j + 0.5) * dom_.h, t,
                                       sol.zeta[k].c(i, j), sol.grad[k].first.c(i, j),
                                       sol.grad[k].second.c(i, j));
  }
  return check(std::move(out));
}

PsiProvider ThresholdProvider::bind(const Trajectory* traj) const {
  if (auto* pb = std::get_if<Parabolic>(v_.get())) {
    // Presolve zeta once; each psi(t) lookup is then a cellwise map.
    auto sol = std::make_shared<ParabolicSolution>(solve_coupled_parabolic(*traj, pb->pc, pb->cfg));
    ThresholdProvider self = *this;
    double dt = pb->cfg.dt;
    auto outer = pb->pc.psi_outer;
    Domain d = dom_;
    return [self, sol, dt, outer, d](double t) {
      size_t k = static_cast<size_t>(std::lround(t / dt));
      k = std::min(k, sol->zeta.size() - 1);
      ScalarField out(d);
      for (int j = 0; j < d.ny; ++j)
        for (int i = 0; i < d.nx; ++i)
          out.c(i, j) = outer((i + 0.5) * d.h, (j + 0.5) * d.h, t, sol->zeta[k].c(i, j),
                              sol->grad[k].first.c(i, j), sol->grad[k].second.c(i, j));
      return self.check(std::move(out));
    };
  }
  if (auto* nf = std::get_if<Norm>(v_.get())) {
    // The norm factor depends on the whole trajectory but not on t.
    const double gamma = nf->n.alpha + nf->n.beta * std::pow(v2_norm(*traj), 2);
    ThresholdProvider self = *this;
    auto phi = nf->n.phi;
    Domain d = dom_;
    return [self, gamma, phi, d](double t) {
      ScalarField out = map_cells(d, phi, t);
      out.c *= gamma;
      return self.check(std::move(out));
    };
  }
  ThresholdProvider self = *this;
  return [self, traj](double t) { return self.eval(traj, t); };
}

ThresholdProvider mollify(const ThresholdProvider& base, int n, const std::vector<double>& times) {
  if (n < 1) throw std::invalid_argument("mollify: n >= 1");
  if (times.size() < 2 || times.front() != 0.0)
    throw std::invalid_argument("mollify: need sample times starting at 0");
  if (base.is_functional())
    throw std::invalid_argument("mollify: functional thresholds are mollified after binding");
  const Domain& d = base.domain();
  std::vector<ScalarField> out;
  ScalarField y = base.eval(nullptr, 0.0);
  out.push_back(y);
  for (size_t k = 1; k < times.size(); ++k) {
    const double delta = times[k] - times[k - 1];
    ScalarField gk = base.eval(nullptr, times[k - 1]);
    ScalarField gk1 = base.eval(nullptr, times[k]);
    // Exact relaxation over one slab with the base taken linear in time:
    //   y' = n (g - y),  g(t) linear  =>  y_+ = g_+ - m/n + e^{-n delta}(y - g + m/n)
    ScalarField m(d);
    m.c = (gk1.c - gk.c) / delta;
    const double decay = std::exp(-static_cast<double>(n) * delta);
    ScalarField ynew(d);
    ynew.c = gk1.c - m.c / n + decay * (y.c - gk.c + m.c / n);
    out.push_back(ynew);
    y = ynew;
  }
  return ThresholdProvider::tabulated(d, times, std::move(out), base.bounds());
}

}  // namespace thick
