#pragma once

#include "thickflow/constraints.hpp"
#include "thickflow/oracle1d.hpp"
#include "thickflow/qvi.hpp"
#include "thickflow/stepper.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace thick {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Line-oriented sectioned key = value text. Values are strings here; typed
/// access (and the expression grammar) is layered on top with field-naming
/// diagnostics.
class Config {
 public:
  static Config parse(const std::string& text);
  static Config from_file(const std::string& path);

  bool has(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key) const;
  std::string get_or(const std::string& section, const std::string& key,
                     const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key) const;
  double get_double_or(const std::string& section, const std::string& key, double fallback) const;
  int get_int_or(const std::string& section, const std::string& key, int fallback) const;
  std::vector<double> get_list(const std::string& section, const std::string& key) const;
  Expr get_expr(const std::string& section, const std::string& key) const;

  nlohmann::json to_json() const;

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

/// Fully resolved experiment inputs built from a Config.
struct Experiment {
  std::string scenario;
  Domain domain;
  SolverConfig solver;
  ThresholdProvider threshold;
  ForcingProvider forcing;
  VelocityField u0;
  std::vector<double> sweep_eps, sweep_nu, sweep_delta;
  double qvi_tol = 1e-6;
  int qvi_maxiter = 20;
  unsigned long long seed = 0;
  nlohmann::json resolved;  // the raw config, embedded in every record
};

Experiment build_experiment(const Config& cfg, unsigned long long seed_override = 0);

/// The four named scenarios shipped in-repo, resolved against scenarios/.
std::string scenario_path(const std::string& name);

struct RunRecord {
  std::string scenario;
  nlohmann::json parameters;
  Trajectory trajectory;
  nlohmann::json summary;
  double wall_time = 0.0;
};

/// Per-step series in the documented column order:
/// t, energy, dissipation, constraint_excess, complementarity,
/// multiplier_mass, picard_iters, div_residual.
std::string trajectory_csv(const Trajectory& traj);
void write_text(const std::string& path, const std::string& text);
nlohmann::json record_json(const RunRecord& r);

/// Dispatch jobs 0..n-1 to a small worker pool; results land in submission
/// order regardless of completion order.
void parallel_for_ordered(int n, int workers, const std::function<void(int)>& job);

// Command implementations; each writes records under out_dir and returns the
// process exit code (0 ok, 4 when --assert finds a violated acceptance bound).
int cmd_solve(const Experiment& ex, const std::string& out_dir, bool assert_mode);
int cmd_sweep_eps(const Experiment& ex, const std::string& out_dir, int workers, bool assert_mode);
int cmd_sweep_nu(const Experiment& ex, const std::string& out_dir, int workers, bool assert_mode);
int cmd_depend(const Experiment& ex, const std::string& out_dir, int workers, bool assert_mode);
int cmd_qvi(const Experiment& ex, const std::string& out_dir, bool assert_mode);
int cmd_oracle(const Experiment& ex, const std::string& out_dir, bool assert_mode);

/// Shared with the Q1 scenario setup and tests: budget for a norm-functional
/// experiment, with M from a pilot run of the constant-threshold problem.
ContractionBudget q1_budget(const Experiment& ex, const NormFunctional& nf);

/// The beta giving contraction LHS = target (LHS is linear in beta for the
/// norm functional with alpha fixed).
double beta_for_target_lhs(const Experiment& ex, double alpha, double target_lhs);

}  // namespace thick
