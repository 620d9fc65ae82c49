#include "thickflow/oracle1d.hpp"

#include <cmath>

namespace thick {

void Oracle1DProblem::validate() const {
  if (n < 8) throw std::invalid_argument("Oracle1DProblem: n >= 8");
  if (!(length > 0.0 && dt > 0.0 && t_end >= dt && nu >= 0.0))
    throw std::invalid_argument("Oracle1DProblem: bad length/dt/t_end/nu");
  if (psi.size() != n - 1 || f.size() != n || w0.size() != n)
    throw std::invalid_argument("Oracle1DProblem: psi/f/w0 size mismatch");
  if ((psi.array() <= 0.0).any()) throw std::invalid_argument("Oracle1DProblem: psi > 0 required");
  if (std::abs(w0(0)) > 1e-14 || std::abs(w0(n - 1)) > 1e-14)
    throw std::invalid_argument("Oracle1DProblem: w0 must vanish at both ends");
  const double hh = h();
  for (int e = 0; e < n - 1; ++e)
    if (std::abs(w0(e + 1) - w0(e)) / hh > psi(e) + 1e-12)
      throw std::invalid_argument("Oracle1DProblem: |dx w0| exceeds psi");
}

Eigen::VectorXd project_feasible(const Eigen::VectorXd& g, const Eigen::VectorXd& psi) {
  Eigen::VectorXd x = g, p = Eigen::VectorXd::Zero(g.size()), q = p;
  for (int it = 0; it < 20000; ++it) {
    const Eigen::VectorXd y = (x + p).cwiseMin(psi).cwiseMax(-psi);
    p = x + p - y;
    Eigen::VectorXd z = y + q;
    const Eigen::VectorXd xn = z.array() - z.mean();
    q = z - xn;
    const double change = (xn - x).norm();
    x = xn;
    if (change < 1e-14 * std::max(1.0, g.norm())) break;
  }
  return x;
}

namespace {

// Reconstruct node values from edge gradients, anchored at w(0) = 0.
Eigen::VectorXd reconstruct(const Eigen::VectorXd& g, double h) {
  Eigen::VectorXd w(g.size() + 1);
  w(0) = 0.0;
  for (int i = 0; i < g.size(); ++i) w(i + 1) = w(i) + h * g(i);
  return w;
}

double step_energy(const Eigen::VectorXd& g, const Eigen::VectorXd& wn, const Eigen::VectorXd& f,
                   double h, double dt, double nu) {
  const Eigen::VectorXd w = reconstruct(g, h);
  const int n = static_cast<int>(w.size());
  double e = 0.5 * nu * h * g.squaredNorm();
  for (int i = 1; i < n - 1; ++i) {
    const double dw = w(i) - wn(i);
    e += h * (dw * dw / (2.0 * dt) - f(i) * w(i));
  }
  return e;
}

Eigen::VectorXd step_gradient(const Eigen::VectorXd& g, const Eigen::VectorXd& wn,
                              const Eigen::VectorXd& f, double h, double dt, double nu) {
  const Eigen::VectorXd w = reconstruct(g, h);
  const int n = static_cast<int>(w.size());
  Eigen::VectorXd dEdw = Eigen::VectorXd::Zero(n);
  for (int i = 1; i < n - 1; ++i) dEdw(i) = h * ((w(i) - wn(i)) / dt - f(i));
  // Chain rule through the cumulative sum: suffix sums of node sensitivities.
  Eigen::VectorXd grad(n - 1);
  double suffix = 0.0;
  for (int e = n - 2; e >= 0; --e) {
    suffix += dEdw(e + 1);
    grad(e) = nu * h * g(e) + h * suffix;
  }
  return grad;
}

}  // namespace

Trajectory1D solve_projected(const Oracle1DProblem& p) {
  p.validate();
  const double h = p.h(), dt = p.dt, nu = p.nu;
  const int n = p.n;

  Eigen::VectorXd wn = p.w0;
  Eigen::VectorXd g(n - 1);
  for (int e = 0; e < n - 1; ++e) g(e) = (wn(e + 1) - wn(e)) / h;
  g = project_feasible(g, p.psi);

  // Conservative Lipschitz estimate for the initial step size.
  const double lip = nu * h + h * h * h * n * n / dt;
  Trajectory1D traj;
  traj.reserve(p.steps());
  for (int k = 0; k < p.steps(); ++k) {
    double energy = step_energy(g, wn, p.f, h, dt, nu);
    const double stat_tol = 1e-10 * std::max(1.0, std::abs(energy));
    double tau = 1.0 / lip;
    int stall = 0;
    bool done = false;
    for (int it = 0; it < 200000 && !done; ++it) {
      const Eigen::VectorXd grad = step_gradient(g, wn, p.f, h, dt, nu);
      double decrease = -1.0;
      Eigen::VectorXd gtry;
      double etry = energy;
      for (int bt = 0; bt < 60; ++bt) {
        gtry = project_feasible(g - tau * grad, p.psi);
        etry = step_energy(gtry, wn, p.f, h, dt, nu);
        if (etry <= energy) {
          decrease = energy - etry;
          break;
        }
        tau *= 0.5;
      }
      if (decrease < 0.0) {
        if (++stall >= 100)
          throw ProjectionStalled("solve_projected: no energy decrease at step " +
                                  std::to_string(k + 1));
        continue;
      }
      g = gtry;
      if (decrease <= stat_tol && (g - project_feasible(g - tau * step_gradient(g, wn, p.f, h, dt, nu),
                                                        p.psi)).norm() <= 1e-8 * std::max(1.0, g.norm())) {
        done = true;
        break;
      }
      if (decrease < 1e-14) {
        if (++stall >= 100)
          throw ProjectionStalled("solve_projected: energy stalled at step " + std::to_string(k + 1));
      } else {
        stall = 0;
      }
      energy = etry;
      tau *= 1.3;
    }
    if (!done) throw ProjectionStalled("solve_projected: iteration cap at step " + std::to_string(k + 1));
    wn = reconstruct(g, h);
    traj.push_back(wn);
  }
  return traj;
}

Trajectory1D solve_penalized_1d(const Oracle1DProblem& p, const PenaltyParams& pen) {
  p.validate();
  const double h = p.h(), dt = p.dt;
  const int n = p.n;
  Eigen::VectorXd wn = p.w0;
  Trajectory1D traj;
  traj.reserve(p.steps());
  for (int k = 0; k < p.steps(); ++k) {
    Eigen::VectorXd wk = wn;
    for (int pic = 0; pic < 200; ++pic) {
      Eigen::VectorXd eta(n - 1);
      for (int e = 0; e < n - 1; ++e) {
        const double gr = (wk(e + 1) - wk(e)) / h;
        eta(e) = p.nu + k_eps(gr * gr - p.psi(e) * p.psi(e), pen) +
                 pen.eps * std::pow(std::abs(gr), pen.q - 2.0);
      }
      // Thomas solve of (1/dt) w - d/dx(eta dw/dx) = wn/dt + f, w(0)=w(L)=0.
      const int m = n - 2;
      Eigen::VectorXd a(m), b(m), c(m), r(m);
      for (int i = 1; i <= m; ++i) {
        a(i - 1) = -eta(i - 1) / (h * h);
        c(i - 1) = -eta(i) / (h * h);
        b(i - 1) = 1.0 / dt + (eta(i - 1) + eta(i)) / (h * h);
        r(i - 1) = wn(i) / dt + p.f(i);
      }
      for (int i = 1; i < m; ++i) {
        const double w = a(i) / b(i - 1);
        b(i) -= w * c(i - 1);
        r(i) -= w * r(i - 1);
      }
      Eigen::VectorXd sol(m);
      sol(m - 1) = r(m - 1) / b(m - 1);
      for (int i = m - 2; i >= 0; --i) sol(i) = (r(i) - c(i) * sol(i + 1)) / b(i);
      Eigen::VectorXd wnew = Eigen::VectorXd::Zero(n);
      wnew.segment(1, m) = sol;
      const double relax = 0.7;
      wnew = relax * wnew + (1.0 - relax) * wk;
      const double upd = (wnew - wk).norm() / std::max(wnew.norm(), 1e-300);
      wk = wnew;
      if (upd < 1e-12) break;
    }
    wn = wk;
    traj.push_back(wn);
  }
  return traj;
}

double compare(const Trajectory1D& a, const Trajectory1D& b, const Oracle1DProblem& p) {
  if (a.size() != b.size()) throw std::invalid_argument("compare: trajectory size mismatch");
  const double h = p.h();
  double s = 0.0;
  for (size_t k = 0; k < a.size(); ++k) {
    if (a[k].size() != b[k].size()) throw std::invalid_argument("compare: field size mismatch");
    const Eigen::VectorXd d = a[k] - b[k];
    double sp = 0.0;
    for (int i = 0; i < d.size(); ++i)
      sp += ((i == 0 || i == d.size() - 1) ? 0.5 * h : h) * d(i) * d(i);
    s += p.dt * sp;
  }
  return std::sqrt(s);
}

double l2qt_norm_1d(const Trajectory1D& a, const Oracle1DProblem& p) {
  Trajectory1D zero(a.size(), Eigen::VectorXd::Zero(a.empty() ? 0 : a.front().size()));
  return compare(a, zero, p);
}

}  // namespace thick
