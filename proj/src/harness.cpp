#include "thickflow/harness.hpp"

#include "thickflow/multiplier.hpp"

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#ifndef THICKFLOW_SOURCE_DIR
#define THICKFLOW_SOURCE_DIR "."
#endif

namespace thick {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Config Config::parse(const std::string& text) {
  Config cfg;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    if (s.front() == '[') {
      if (s.back() != ']')
        throw ConfigError("line " + std::to_string(lineno) + ": unterminated section header");
      section = trim(s.substr(1, s.size() - 2));
      if (section.empty())
        throw ConfigError("line " + std::to_string(lineno) + ": empty section name");
      cfg.sections_[section];
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value, got '" + s + "'");
    if (section.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": key outside any [section]");
    const std::string key = trim(s.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    cfg.sections_[section][key] = trim(s.substr(eq + 1));
  }
  return cfg;
}

Config Config::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return parse(os.str());
}

bool Config::has(const std::string& section, const std::string& key) const {
  auto it = sections_.find(section);
  return it != sections_.end() && it->second.count(key) > 0;
}

std::string Config::get(const std::string& section, const std::string& key) const {
  if (!has(section, key)) throw ConfigError("missing config field [" + section + "] " + key);
  return sections_.at(section).at(key);
}

std::string Config::get_or(const std::string& section, const std::string& key,
                           const std::string& fallback) const {
  return has(section, key) ? sections_.at(section).at(key) : fallback;
}

double Config::get_double(const std::string& section, const std::string& key) const {
  const std::string v = get(section, key);
  try {
    size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError("field [" + section + "] " + key + ": not a number: '" + v + "'");
  }
}

double Config::get_double_or(const std::string& section, const std::string& key,
                             double fallback) const {
  return has(section, key) ? get_double(section, key) : fallback;
}

int Config::get_int_or(const std::string& section, const std::string& key, int fallback) const {
  return has(section, key) ? static_cast<int>(std::llround(get_double(section, key))) : fallback;
}

std::vector<double> Config::get_list(const std::string& section, const std::string& key) const {
  const std::string v = get(section, key);
  std::vector<double> out;
  std::istringstream is(v);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("field [" + section + "] " + key + ": bad list entry '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("field [" + section + "] " + key + ": empty list");
  return out;
}

Expr Config::get_expr(const std::string& section, const std::string& key) const {
  try {
    return Expr::parse(get(section, key));
  } catch (const ExprError& e) {
    throw ConfigError("field [" + section + "] " + key + ": " + e.what());
  }
}

nlohmann::json Config::to_json() const {
  nlohmann::json j;
  for (const auto& [sec, kv] : sections_)
    for (const auto& [k, v] : kv) j[sec][k] = v;
  return j;
}

std::string scenario_path(const std::string& name) {
  namespace fs = std::filesystem;
  for (const std::string base : {std::string(THICKFLOW_SOURCE_DIR) + "/scenarios/", std::string("scenarios/")}) {
    const std::string p = base + name + ".cfg";
    if (fs::exists(p)) return p;
  }
  throw ConfigError("unknown scenario: " + name);
}

namespace {

ForcingProvider make_forcing(const Domain& d, const Expr& fx, const Expr& fy, double amp) {
  return [d, fx, fy, amp](double t) {
    VelocityField f(d);
    for (int j = 0; j < d.ny; ++j)
      for (int i = 1; i < d.nx; ++i) f.ux(i, j) = amp * fx(i * d.h, (j + 0.5) * d.h, t);
    for (int j = 1; j < d.ny; ++j)
      for (int i = 0; i < d.nx; ++i) f.uy(i, j) = amp * fy((i + 0.5) * d.h, j * d.h, t);
    return f;
  };
}

VelocityField stream_initial(const Domain& d, const Expr& chi) {
  VelocityField u(d);
  ArrayXXd node(d.nx + 1, d.ny + 1);
  for (int j = 0; j <= d.ny; ++j)
    for (int i = 0; i <= d.nx; ++i) node(i, j) = chi(i * d.h, j * d.h, 0.0);
  for (int j = 0; j < d.ny; ++j)
    for (int i = 1; i < d.nx; ++i) u.ux(i, j) = (node(i, j + 1) - node(i, j)) / d.h;
  for (int j = 1; j < d.ny; ++j)
    for (int i = 0; i < d.nx; ++i) u.uy(i, j) = -(node(i + 1, j) - node(i, j)) / d.h;
  u.enforce_boundary();
  return u;
}

// ||f||_{L²(Q_T)} by the same step-endpoint quadrature as the stepper.
double forcing_l2_qt(const ForcingProvider& f, const SolverConfig& cfg) {
  double s = 0.0;
  for (int k = 1; k <= cfg.steps(); ++k) {
    const VelocityField fk = f(k * cfg.dt);
    s += cfg.dt * inner(fk, fk);
  }
  return std::sqrt(s);
}

ThresholdProvider build_threshold(const Config& cfg, const Domain& d, const SolverConfig& solver) {
  const std::string kind = cfg.get("threshold", "kind");
  const ThresholdBounds bounds(cfg.get_double("threshold", "psi_star"),
                               cfg.get_double("threshold", "psi_upper"));
  ThresholdProvider base = [&]() -> ThresholdProvider {
    if (kind == "constant")
      return ThresholdProvider::constant(d, cfg.get_double("threshold", "value"), bounds);
    if (kind == "analytic") {
      const Expr e = cfg.get_expr("threshold", "expr");
      return ThresholdProvider::analytic(d, e, bounds);
    }
    if (kind == "norm") {
      NormFunctional nf;
      nf.alpha = cfg.get_double("threshold", "alpha");
      nf.beta = cfg.get_double_or("threshold", "beta", 0.0);
      if (cfg.has("threshold", "phi")) {
        const Expr e = cfg.get_expr("threshold", "phi");
        nf.phi = [e](double x, double y, double t) { return e(x, y, t); };
      }
      return ThresholdProvider::norm_functional(d, nf, bounds);
    }
    if (kind == "kernel") {
      const Expr g = cfg.get_expr("threshold", "kernel_g");  // g(x1, x2, t)
      const Expr h = cfg.get_expr("threshold", "kernel_h");  // h(y1, y2, s)
      KernelFunctional kf;
      kf.kernel = [g, h](double x1, double x2, double t, double y1, double y2, double s) {
        return g(x1, x2, t) * h(y1, y2, s);
      };
      const double lo = bounds.psi_star, hi = bounds.psi_upper;
      kf.phi = [lo, hi](double, double, double, double zx, double zy) {
        return lo + (hi - lo) / (1.0 + zx * zx + zy * zy);
      };
      return ThresholdProvider::kernel(d, std::move(kf), bounds);
    }
    throw ConfigError("field [threshold] kind: unknown kind '" + kind + "'");
  }();
  const int moll_n = cfg.get_int_or("threshold", "mollify_n", 0);
  if (moll_n > 0) {
    std::vector<double> times;
    for (int k = 0; k <= solver.steps(); ++k) times.push_back(k * solver.dt);
    base = mollify(base, moll_n, times);
  }
  return base;
}

}  // namespace

Experiment build_experiment(const Config& cfg, unsigned long long seed_override) {
  Experiment ex;
  ex.scenario = cfg.get_or("scenario", "name", "custom");
  ex.domain = Domain(cfg.get_double_or("domain", "lx", 1.0), cfg.get_double_or("domain", "ly", 1.0),
                     cfg.get_int_or("domain", "nx", 32), cfg.get_int_or("domain", "ny", 32));
  ex.solver.nu = cfg.get_double_or("solver", "nu", 0.1);
  ex.solver.dt = cfg.get_double_or("solver", "dt", 0.01);
  ex.solver.t_end = cfg.get_double_or("solver", "t_end", 0.5);
  ex.solver.picard_tol = cfg.get_double_or("solver", "picard_tol", 1e-10);
  ex.solver.picard_max = cfg.get_int_or("solver", "picard_max", 300);
  ex.solver.relax = cfg.get_double_or("solver", "relax", 0.7);
  ex.solver.penalty = PenaltyParams(cfg.get_double_or("solver", "eps", 0.1),
                                    cfg.get_double_or("solver", "q", 5.0));
  ex.solver.validate();

  const double amp = cfg.get_double_or("forcing", "amplitude", 1.0);
  Expr fx = Expr::parse(cfg.get_or("forcing", "fx", "0"));
  Expr fy = Expr::parse(cfg.get_or("forcing", "fy", "0"));
  ex.forcing = make_forcing(ex.domain, fx, fy, amp);

  Expr chi = Expr::parse(cfg.get_or("initial", "stream", "0"));
  ex.u0 = stream_initial(ex.domain, chi);

  ex.threshold = build_threshold(cfg, ex.domain, ex.solver);

  if (cfg.has("sweep", "eps")) ex.sweep_eps = cfg.get_list("sweep", "eps");
  if (cfg.has("sweep", "nu")) ex.sweep_nu = cfg.get_list("sweep", "nu");
  if (cfg.has("sweep", "delta")) ex.sweep_delta = cfg.get_list("sweep", "delta");
  ex.qvi_tol = cfg.get_double_or("qvi", "tol", 1e-6);
  ex.qvi_maxiter = cfg.get_int_or("qvi", "maxiter", 20);
  ex.seed = seed_override ? seed_override
                          : static_cast<unsigned long long>(cfg.get_double_or("run", "seed", 1));
  ex.resolved = cfg.to_json();
  ex.resolved["run"]["seed"] = ex.seed;
  return ex;
}

std::string trajectory_csv(const Trajectory& traj) {
  std::string out = "t,energy,dissipation,constraint_excess,complementarity,multiplier_mass,picard_iters,div_residual\n";
  for (const auto& [st, dg] : traj) {
    out += fmt(dg.t) + "," + fmt(dg.energy) + "," + fmt(dg.dissipation) + "," +
           fmt(dg.constraint_excess) + "," + fmt(dg.complementarity) + "," +
           fmt(dg.multiplier_mass) + "," + std::to_string(dg.picard_iters) + "," +
           fmt(dg.div_residual) + "\n";
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::filesystem::create_directories(std::filesystem::path(path).parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
}

nlohmann::json record_json(const RunRecord& r) {
  nlohmann::json j;
  j["scenario"] = r.scenario;
  j["version"] = "1.0.0";
  j["parameters"] = r.parameters;
  j["summary"] = r.summary;
  j["wall_time"] = r.wall_time;
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& [st, dg] : r.trajectory) {
    steps.push_back({{"t", dg.t},
                     {"energy", dg.energy},
                     {"dissipation", dg.dissipation},
                     {"constraint_excess", dg.constraint_excess},
                     {"complementarity", dg.complementarity},
                     {"multiplier_mass", dg.multiplier_mass},
                     {"picard_iters", dg.picard_iters},
                     {"div_residual", dg.div_residual}});
  }
  j["steps"] = std::move(steps);
  return j;
}

void parallel_for_ordered(int n, int workers, const std::function<void(int)>& job) {
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) job(i);
    return;
  }
  std::mutex mu;
  int next = 0;
  std::vector<std::exception_ptr> errors(n);
  auto worker = [&]() {
    for (;;) {
      int i;
      {
        std::lock_guard<std::mutex> lk(mu);
        if (next >= n) return;
        i = next++;
      }
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

namespace {

RunRecord make_record(const Experiment& ex, const SolverConfig& cfg, Trajectory traj,
                      const PsiProvider& psi, double wall, bool with_momentum) {
  RunRecord r;
  r.scenario = ex.scenario;
  r.parameters = ex.resolved;
  r.parameters["effective"] = {{"nu", cfg.nu}, {"eps", cfg.penalty.eps}, {"dt", cfg.dt}};
  r.wall_time = wall;
  double max_excess = 0.0;
  for (const auto& [st, dg] : traj) max_excess = std::max(max_excess, dg.constraint_excess);
  const MultiplierField lam = extract(traj, psi, cfg.penalty);
  r.summary["max_constraint_excess"] = max_excess;
  r.summary["final_energy"] = traj.empty() ? 0.0 : traj.back().second.energy;
  r.summary["complementarity_residual"] = complementarity_residual(lam, traj, psi);
  r.summary["linf_l2"] = linf_l2(traj);
  if (with_momentum) {
    // heavier diagnostic; skipped inside sweeps
    // (needs the forcing and initial state, see cmd_solve)
  }
  r.trajectory = std::move(traj);
  return r;
}

double wall_seconds(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int cmd_solve(const Experiment& ex, const std::string& out_dir, bool assert_mode) {
  if (ex.threshold.is_functional())
    throw ConfigError("cmd solve: threshold is solution-dependent; use the qvi command");
  const auto t0 = std::chrono::steady_clock::now();
  const PsiProvider psi = ex.threshold.bind(nullptr);
  Trajectory traj = run(ex.u0, psi, ex.forcing, ex.solver);
  RunRecord r = make_record(ex, ex.solver, std::move(traj), psi, 0.0, true);
  const MultiplierField lam = extract(r.trajectory, psi, ex.solver.penalty);
  r.summary["momentum_residual"] =
      momentum_residual(r.trajectory, lam, psi, ex.forcing, ex.u0, ex.solver);
  const double u0_energy = 0.5 * inner(ex.u0, ex.u0);
  const EnergyReport er = energy_report(r.trajectory, u0_energy);
  r.summary["energy_residual_worst"] = er.worst;
  r.wall_time = wall_seconds(t0);
  write_text(out_dir + "/" + ex.scenario + "_solve.csv", trajectory_csv(r.trajectory));
  write_text(out_dir + "/" + ex.scenario + "_solve.json", record_json(r).dump(2) + "\n");
  if (assert_mode) {
    const double scale = std::max(er.energy_scale, 1e-30);
    if (er.worst > 1e-8 * scale) return 4;
    const double fq = forcing_l2_qt(ex.forcing, ex.solver);
    const double gronwall =
        1.05 * std::exp(ex.solver.t_end / 2.0) * std::sqrt(fq * fq + 2.0 * u0_energy);
    if (r.summary["linf_l2"].get<double>() > gronwall) return 4;
  }
  return 0;
}

int cmd_sweep_eps(const Experiment& ex, const std::string& out_dir, int workers, bool assert_mode) {
  std::vector<double> epss = ex.sweep_eps;
  if (epss.empty()) epss = {0.4, 0.3, 0.2, 0.15, 0.1};
  const PsiProvider psi = ex.threshold.bind(nullptr);
  std::vector<RunRecord> recs(epss.size());
  parallel_for_ordered(static_cast<int>(epss.size()), workers, [&](int i) {
    SolverConfig cfg = ex.solver;
    cfg.penalty = PenaltyParams(epss[i], cfg.penalty.q);
    const auto t0 = std::chrono::steady_clock::now();
    Trajectory traj = run(ex.u0, psi, ex.forcing, cfg);
    recs[i] = make_record(ex, cfg, std::move(traj), psi, wall_seconds(t0), false);
  });
  nlohmann::json sweep = nlohmann::json::array();
  for (size_t i = 0; i < epss.size(); ++i) {
    write_text(out_dir + "/" + ex.scenario + "_eps" + fmt(epss[i]) + ".csv",
               trajectory_csv(recs[i].trajectory));
    sweep.push_back({{"eps", epss[i]}, {"summary", recs[i].summary}, {"wall_time", recs[i].wall_time}});
  }
  write_text(out_dir + "/" + ex.scenario + "_sweep_eps.json", sweep.dump(2) + "\n");
  if (assert_mode) {
    const double psi_star = ex.threshold.bounds().psi_star;
    double prev = 1e300;
    for (size_t i = 0; i < epss.size(); ++i) {
      const double ex_i = recs[i].summary["max_constraint_excess"].get<double>();
      if (ex_i > prev * 1.05) return 4;  // nonincreasing within 5% band
      prev = ex_i;
    }
    if (recs.back().summary["max_constraint_excess"].get<double>() > 0.05 * psi_star) return 4;
  }
  return 0;
}

int cmd_sweep_nu(const Experiment& ex, const std::string& out_dir, int workers, bool assert_mode) {
  std::vector<double> nus = ex.sweep_nu;
  if (nus.empty()) nus = {0.1, 0.05, 0.01, 0.0};
  const PsiProvider psi = ex.threshold.bind(nullptr);
  std::vector<RunRecord> recs(nus.size());
  // When the forced steady state is degenerate the sweep must compare runs
  // on a single solution branch: solve nu = 0 first and seed every viscous
  // run from its trajectory, so dist_to_inviscid measures the viscosity
  // deformation along the branch connected to the inviscid limit.
  Trajectory inviscid_warm;
  const Trajectory* warm = nullptr;
  for (size_t i = 0; i < nus.size(); ++i)
    if (nus[i] == 0.0) {
      SolverConfig cfg = ex.solver;
      cfg.nu = 0.0;
      const auto t0 = std::chrono::steady_clock::now();
      inviscid_warm = run(ex.u0, psi, ex.forcing, cfg);
      recs[i] = make_record(ex, cfg, Trajectory(inviscid_warm), psi, wall_seconds(t0), false);
      warm = &inviscid_warm;
    }
  parallel_for_ordered(static_cast<int>(nus.size()), workers, [&](int i) {
    if (nus[i] == 0.0) return;
    SolverConfig cfg = ex.solver;
    cfg.nu = nus[i];
    const auto t0 = std::chrono::steady_clock::now();
    Trajectory traj = run(ex.u0, psi, ex.forcing, cfg, warm);
    recs[i] = make_record(ex, cfg, std::move(traj), psi, wall_seconds(t0), false);
  });
  nlohmann::json sweep = nlohmann::json::array();
  // distances to the nu = 0 run, when present
  int i0 = -1;
  for (size_t i = 0; i < nus.size(); ++i)
    if (nus[i] == 0.0) i0 = static_cast<int>(i);
  for (size_t i = 0; i < nus.size(); ++i) {
    nlohmann::json entry = {{"nu", nus[i]}, {"summary", recs[i].summary}, {"wall_time", recs[i].wall_time}};
    if (i0 >= 0)
      entry["dist_to_inviscid"] = l2qt_distance(recs[i].trajectory, recs[i0].trajectory);
    sweep.push_back(entry);
    write_text(out_dir + "/" + ex.scenario + "_nu" + fmt(nus[i]) + ".csv",
               trajectory_csv(recs[i].trajectory));
  }
  write_text(out_dir + "/" + ex.scenario + "_sweep_nu.json", sweep.dump(2) + "\n");
  if (assert_mode && i0 >= 0) {
    const double e0 = recs[i0].summary["max_constraint_excess"].get<double>();
    const double e1 = recs[0].summary["max_constraint_excess"].get<double>();
    if (e0 > 1.5 * std::max(e1, 1e-12)) return 4;
    double prev = 1e300;
    for (size_t i = 0; i < nus.size(); ++i) {
      if (static_cast<int>(i) == i0) continue;
      const double dist = sweep[i]["dist_to_inviscid"].get<double>();
      if (dist > prev * 1.10) return 4;  // decreasing in nu within 10%
      prev = dist;
    }
  }
  return 0;
}

int cmd_depend(const Experiment& ex, const std::string& out_dir, int workers, bool assert_mode) {
  std::vector<double> deltas = ex.sweep_delta;
  if (deltas.empty()) deltas = {0.02, 0.04, 0.08};
  const ThresholdBounds b = ex.threshold.bounds();
  const PsiProvider psi1 = ex.threshold.bind(nullptr);
  const double psi_base = psi1(0.0).c(0, 0);

  // One budget serves every pair: constant Gamma, pilot M off the base run.
  QviData qd;
  qd.nu = ex.solver.nu;
  qd.T = ex.solver.t_end;
  qd.omega_area = ex.domain.area();
  qd.kappa = rectangle_kappa(ex.domain.lx, ex.domain.ly);
  qd.f_l2 = forcing_l2_qt(ex.forcing, ex.solver);
  qd.u0_l2 = l2_norm(ex.u0);

  Trajectory base = run(ex.u0, psi1, ex.forcing, ex.solver);
  MBound mb;
  mb.mode = MBound::Mode::pilot;
  mb.value = measured_sup_norm(base);
  const ContractionBudget budget =
      compute_budget(qd, constant_gamma_model(psi_base, 1.0, 1.0), mb);

  struct PairResult {
    double delta, lhs, rhs_ff, rhs_FF;
  };
  std::vector<PairResult> results(deltas.size());
  parallel_for_ordered(static_cast<int>(deltas.size()), workers, [&](int i) {
    const double delta = deltas[i];
    ThresholdProvider pert = ThresholdProvider::constant(ex.domain, psi_base - delta, b);
    // Seed the perturbed run from the base trajectory so the pair stays on
    // the same solution branch of the symmetric forcing.
    Trajectory t2 = run(ex.u0, pert.bind(nullptr), ex.forcing, ex.solver, &base);
    double lhs = 0.0;
    for (size_t k = 0; k < base.size(); ++k) {
      const VelocityField dv = base[k].first.u - t2[k].first.u;
      lhs = std::max(lhs, inner(dv, dv));
    }
    DependenceDelta dd;
    dd.dpsi_inf = delta;
    const DependenceBound db = dependence_bound(dd, budget);
    results[i] = {delta, lhs, db.rhs_linf_l2, db.rhs_v2};
  });

  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : results)
    j.push_back({{"delta", r.delta}, {"lhs_linf_l2_sq", r.lhs}, {"rhs_Ff", r.rhs_ff}, {"rhs_FF", r.rhs_FF}});
  nlohmann::json out;
  out["pairs"] = j;
  out["budget"] = {{"C_star", budget.C_star}, {"C_nu", budget.C_nu}, {"M", budget.M}};
  write_text(out_dir + "/" + ex.scenario + "_depend.json", out.dump(2) + "\n");

  if (assert_mode) {
    for (const auto& r : results)
      if (r.lhs > 1.1 * r.rhs_ff) return 4;
    // log-log slope of LHS vs delta over the first/last pair
    const double slope = std::log(results.back().lhs / results.front().lhs) /
                         std::log(results.back().delta / results.front().delta);
    if (slope < 0.7 || slope > 1.3) return 4;
  }
  return 0;
}

ContractionBudget q1_budget(const Experiment& ex, const NormFunctional& nf) {
  QviData qd;
  qd.nu = ex.solver.nu;
  qd.T = ex.solver.t_end;
  qd.omega_area = ex.domain.area();
  qd.kappa = rectangle_kappa(ex.domain.lx, ex.domain.ly);
  qd.f_l2 = forcing_l2_qt(ex.forcing, ex.solver);
  qd.u0_l2 = l2_norm(ex.u0);

  // Pilot run with the constant part of the threshold (Gamma = alpha).
  const ThresholdBounds b = ex.threshold.bounds();
  ThresholdProvider pilot_psi = ThresholdProvider::constant(ex.domain, nf.alpha, b);
  Trajectory pilot = run(ex.u0, pilot_psi.bind(nullptr), ex.forcing, ex.solver);
  MBound mb;
  mb.mode = MBound::Mode::pilot;
  mb.value = measured_sup_norm(pilot);
  return compute_budget(qd, norm_gamma_model(nf, 1.0, 1.0), mb);
}

double beta_for_target_lhs(const Experiment& ex, double alpha, double target_lhs) {
  NormFunctional nf;
  nf.alpha = alpha;
  nf.beta = 0.0;
  // LHS grows monotonically in beta (gamma_* = 2 beta R_*, rho_* grows too);
  // bisect on a bracketing interval.
  auto lhs_of = [&](double beta) {
    NormFunctional n2 = nf;
    n2.beta = beta;
    return q1_budget(ex, n2).lhs;
  };
  // The budget is pure arithmetic past the pilot run; recompute cheaply by
  // caching the budget pieces through q1_budget each call would redo the
  // pilot, so bracket with few evaluations on a rescaled copy instead.
  const ContractionBudget b0 = q1_budget(ex, nf);
  (void)lhs_of;
  // For the norm functional with phi = 1: eta_* = alpha, rho_* = alpha + beta R*²,
  // gamma_* = 2 beta R*. Reconstruct LHS(beta) from the frozen pieces.
  auto lhs_closed = [&](double beta) {
    const double R = b0.R_star, nu = b0.nu, T = b0.T, om = b0.omega_area;
    const double eta = alpha, rho = alpha + beta * R * R, gamma = 2.0 * beta * R;
    const double M = b0.M;  // pilot M does not depend on beta
    const double dd = b0.d;
    const double A = b0.f_l2 * b0.f_l2 +
                     4.0 * dd * dd * std::pow(M, 4) * rho * rho * T * om / (nu * eta * eta);
    const double B = 1.0 + 4.0 * dd * M * M / nu;
    const double u02 = b0.u0_l2 * b0.u0_l2;
    return (gamma / (eta * std::sqrt(nu))) *
           (std::sqrt(nu) * R + std::sqrt((std::exp(B * T) - 1.0) * (A + u02) + A));
  };
  double lo = 0.0, hi = 1.0;
  while (lhs_closed(hi) < target_lhs && hi < 1e12) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (lhs_closed(mid) < target_lhs ? lo : hi) = mid;
  }
  return lo;
}

int cmd_qvi(const Experiment& ex, const std::string& out_dir, bool assert_mode) {
  if (!ex.threshold.is_functional())
    throw ConfigError("cmd qvi: threshold must be solution-dependent (norm or kernel)");
  // Start from the solve with the v-independent part of the threshold.
  ThresholdProvider start = ThresholdProvider::constant(
      ex.domain, ex.threshold.bounds().psi_star, ex.threshold.bounds());
  Trajectory v0 = run(ex.u0, start.bind(nullptr), ex.forcing, ex.solver);

  nlohmann::json j;
  bool budget_ok = true;
  double ball = 0.0;
  if (ex.resolved.contains("threshold") &&
      ex.resolved["threshold"].value("kind", "") == std::string("norm")) {
    NormFunctional nf;
    nf.alpha = std::stod(ex.resolved["threshold"]["alpha"].get<std::string>());
    nf.beta = ex.resolved["threshold"].contains("beta")
                  ? std::stod(ex.resolved["threshold"]["beta"].get<std::string>())
                  : 0.0;
    const ContractionBudget b = q1_budget(ex, nf);
    const ContractionCheck cc = contraction_holds(b);
    budget_ok = cc.holds;
    ball = b.R_star;
    j["budget"] = {{"M", b.M},       {"C1", b.C1},         {"C2", b.C2},
                   {"C3", b.C3},     {"C_star", b.C_star}, {"C_nu", b.C_nu},
                   {"R1", b.R1},     {"R2", b.R2},         {"R_star", b.R_star},
                   {"A", b.A},       {"B", b.B},           {"lhs", b.lhs},
                   {"holds", cc.holds}, {"margin", cc.margin}};
  }

  FixedPointHistory hist;
  bool converged = true;
  try {
    hist = fixed_point(v0, ex.threshold, ex.u0, ex.forcing, ex.solver, ex.qvi_tol, ex.qvi_maxiter,
                       ball);
  } catch (const NotConverged& nc) {
    hist = nc.history;
    converged = false;
  }
  j["distances"] = hist.distances;
  j["ratios"] = hist.ratios;
  j["converged"] = converged && hist.converged;
  write_text(out_dir + "/" + ex.scenario + "_qvi.json", j.dump(2) + "\n");
  write_text(out_dir + "/" + ex.scenario + "_qvi.csv", trajectory_csv(hist.trajectory));

  if (assert_mode && j.contains("budget")) {
    if (!budget_ok) return 4;
    if (!(converged && hist.converged)) return 4;
    for (double r : hist.ratios)
      if (!(r < 1.0)) return 4;
  }
  return 0;
}

int cmd_oracle(const Experiment& ex, const std::string& out_dir, bool assert_mode) {
  // 1D problem spun off the [oracle] section of the resolved config.
  const auto& oc = ex.resolved.contains("oracle") ? ex.resolved["oracle"] : nlohmann::json::object();
  auto getd = [&](const char* k, double dflt) {
    return oc.contains(k) ? std::stod(oc[k].get<std::string>()) : dflt;
  };
  Oracle1DProblem p;
  p.n = static_cast<int>(getd("n", 64));
  p.nu = getd("nu", 0.1);
  p.dt = getd("dt", 0.01);
  p.t_end = getd("t_end", 0.3);
  p.psi = Eigen::VectorXd::Constant(p.n - 1, getd("psi", 1.0));
  p.w0 = Eigen::VectorXd::Zero(p.n);
  p.f = Eigen::VectorXd::Zero(p.n);
  const double famp = getd("f_amplitude", 8.0);
  for (int i = 0; i < p.n; ++i) p.f(i) = famp;

  const Trajectory1D ref = solve_projected(p);
  const double wnorm = l2qt_norm_1d(ref, p);
  std::vector<double> epss = {0.4, 0.2, 0.1};
  nlohmann::json j;
  j["w_norm"] = wnorm;
  nlohmann::json gaps = nlohmann::json::array();
  std::vector<double> gap_vals;
  for (double e : epss) {
    const Trajectory1D pen = solve_penalized_1d(p, PenaltyParams(e, 5.0));
    const double g = compare(ref, pen, p);
    gap_vals.push_back(g);
    gaps.push_back({{"eps", e}, {"l2qt_gap", g}});
  }
  j["gaps"] = gaps;
  write_text(out_dir + "/oracle_1d.json", j.dump(2) + "\n");
  if (assert_mode) {
    if (!(gap_vals.back() <= 1e-2 * wnorm)) return 4;
    if (!(gap_vals.back() < gap_vals.front())) return 4;
  }
  return 0;
}

}  // namespace thick
