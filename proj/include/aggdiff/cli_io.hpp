#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aggdiff/analysis.hpp"
#include "aggdiff/kernel.hpp"
#include "aggdiff/radial_field.hpp"
#include "aggdiff/solver.hpp"

namespace aggdiff {

enum class InitialType { Gaussian, Annulus, Table };

// Everything a command needs, with every key defaulted. Relative paths in the
// file are resolved against the directory holding it.
struct RunConfig {
  KernelFamily kernel = KernelFamily::NegAbs;
  std::filesystem::path kernel_table;
  int dimension = 1;
  std::vector<double> epsilons;

  InitialType initial = InitialType::Gaussian;
  double mass = 1.0;
  double width = 0.25;
  double r_inner = 0.0;
  double r_outer = 1.0;
  std::filesystem::path initial_table;

  std::optional<double> lambda;  // empty: scan

  double dr_factor = 0.125;
  std::optional<double> t_end;   // empty: T_Lambda
  double cfl = 0.5;
  DiffusionMode diffusion = DiffusionMode::Implicit;
  std::size_t record_divisor = 200;
  double lambda_cap_tolerance = 1e-6;
  double dt_max = kInfinity;

  double slack = 1e-2;
  double safety_factor = kSafetyFactor;
  std::vector<double> norms = {2.0, kInfinity};
  double concentration_p = 2.0;
  std::vector<double> calibration_epsilons;
  double min_ball_cells = 4.0;
  double slope_tolerance = 0.15;
  double min_r_squared = 0.98;
  double saturation_factor = 10.0;
  double concentration_ratio = 0.5;
  double heat_l1_tolerance = 1e-3;
  double heat_norm_tolerance = 5e-3;

  std::size_t snapshot_stride = 10;  // write every k-th sample; 0 writes none
  int jobs = 1;
  std::filesystem::path cache_dir;

  bool operator==(const RunConfig&) const = default;
};

// Throws ConfigError on unknown keys, bad values, N outside {1,2,3}, or a
// tabulated kernel that fails its hypotheses; IoError when the file is missing.
RunConfig parse_config(const std::filesystem::path& path);
RunConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir = {});
// Fully expanded YAML; parse_config_text(resolved_yaml(c)) == c.
std::string resolved_yaml(const RunConfig& config);

Kernel make_kernel(const RunConfig& config);
InitSpec make_init_spec(const RunConfig& config);
SweepConfig make_sweep_config(const RunConfig& config);

// Single-epsilon run with its checks.
struct SimulationResult {
  RunConfig config;
  double epsilon = 0.0;
  double lambda = 0.0;
  std::optional<TheoremConstants> constants;  // absent for kernels without attraction
  TrajectoryRecord trajectory;
  std::vector<Verdict> verdicts;
};

SimulationResult simulate(const RunConfig& config);

// Checks that need only the recorded series: mass conservation, and, with
// constants, the moment inequality and the weighted D bound.
std::vector<Verdict> trajectory_verdicts(const TrajectoryRecord& traj, const TheoremConstants* constants,
                                         const RunConfig& config);

// Zero-kernel run compared with the heat kernel. For Gaussian data the exact
// solution is the heat kernel shifted by t0 = width^2 / (2 eps); other data
// are compared with the unshifted kernel and get no verdict.
struct BaselineRow {
  double epsilon = 0.0;
  double time = 0.0;
  double shift = 0.0;
  std::optional<double> l1_error;        // relative to the mass
  std::map<double, double> measured;     // p -> ||u(t)||_p
  std::map<double, double> closed_form;  // p -> heat_baseline
};

struct BaselineReport {
  std::vector<BaselineRow> rows;
  std::vector<Verdict> verdicts;
};

BaselineReport heat_comparison(const RunConfig& config);

struct CalibrationReport {
  std::vector<double> epsilons;
  std::optional<double> C1;
  std::map<double, double> Cp;
};

CalibrationReport calibrate(const RunConfig& config);

// --- persistence ----------------------------------------------------------------

std::string format_number(double x);  // 17 significant digits, "inf" / "-inf" / "nan"
double parse_number(const std::string& text);

void write_text_file(const std::filesystem::path& path, const std::string& text);

// t, mass, I_Lambda, D_Lambda, L1, L2, Linf, extra norms, [H1], boundary_flux
void write_trajectory_csv(const TrajectoryRecord& traj, const std::filesystem::path& path);
// Restores the series (not snapshots or step diagnostics); epsilon, Lambda and
// dimension come from the caller.
TrajectoryRecord read_trajectory_csv(const std::filesystem::path& path);

std::string constants_json(const TheoremConstants& c, double epsilon);
TheoremConstants read_constants_json(const std::filesystem::path& path, double* epsilon = nullptr);
std::string sweep_json(const SweepReport& report);
std::string sweep_csv(const SweepReport& report);
std::string verdicts_text(const std::vector<Verdict>& verdicts);

// Writes config.resolved, trajectory.csv, snapshots/, constants.json, verdicts.txt.
void emit_simulation(const SimulationResult& result, const std::filesystem::path& dir);
// Writes config.resolved, sweep.json, sweep.csv, verdicts.txt and runs/eps_<k>/.
void emit_sweep(const SweepReport& report, const RunConfig& config, const std::filesystem::path& dir);

// Re-verifies a simulate or sweep output directory from its files.
std::vector<Verdict> check_directory(const std::filesystem::path& dir);

// Fixed-width table for standard output.
std::string verdict_table(const std::vector<Verdict>& verdicts);

}  // namespace aggdiff
