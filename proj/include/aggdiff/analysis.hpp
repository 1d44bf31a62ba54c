#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aggdiff/drift.hpp"
#include "aggdiff/kernel.hpp"
#include "aggdiff/radial_field.hpp"
#include "aggdiff/solver.hpp"

namespace aggdiff {

struct TheoremConstants {
  int dimension = 1;
  double mass = 0.0;
  double lambda = 0.0;               // Lambda
  double mu_lambda = 0.0;
  double admissibility_bound = 0.0;  // kappa M Lambda / (4 (kappa + 2 ||k'||))
  bool admissible = false;           // mu_lambda < admissibility_bound
  double kappa_lambda = 0.0;
  double kprime_sup_norm = 0.0;
  double omega_lambda = 0.0;
  double initial_moment = 0.0;       // I_Lambda(0)
  double L_lambda = 0.0;
  double T_lambda = 0.0;             // NaN when L_lambda <= 0
  std::optional<double> lambda_ball;
  std::optional<double> C1_empirical;
};

// omega = 2 M (kappa + 2 ||k'||), L = (kappa M^2 / (2 omega) - I(0)) / 2,
// T = (Lambda / omega) log(kappa M^2 / (2 omega L)). The ball parameter is
// 2 (N-1) M T / (Lambda L) for N >= 2 and (Lambda L / (4 C1 M^{5/2} T))^2 in
// one dimension, where it needs C1.
// Inadmissible data is reported, not thrown. Throws DomainError when kappa_Lambda <= 0.
TheoremConstants theorem_constants(const DensityField& u0, const Kernel& kernel, double lambda,
                                   std::optional<double> C1 = std::nullopt);

// kappa M^2 / (2 omega) (1 - exp(-omega T / Lambda)) - I(0); equals L at T = T_Lambda.
double moment_bound_left_side(const TheoremConstants& c, double T);

// Picks Lambda on 61 log-spaced points in [1e-2 r, 1e2 r] maximising L_Lambda.
// Throws DomainError when no point gives L_Lambda > 0.
double choose_lambda(const DensityField& u0, const Kernel& kernel, double support_radius);

inline constexpr double kSafetyFactor = 1.5;

// C1 = factor * max over runs of sup_t ||u||_H1 eps^{3/2} M^{-5/2}.
// Needs at least three distinct epsilons and one-dimensional runs.
double calibrate_C1(const std::vector<const TrajectoryRecord*>& probes, double factor = kSafetyFactor);
double h1_barrier(double C1, double mass, double epsilon, double initial_h1);

// Exponent in ||u||_p ~ eps^{-a}: a = N (p - 1) / p (N for p = infinity).
double lp_exponent(int dimension, double p);
// C_p = factor * max over runs of sup_t ||u||_p / (M^{(N(p-1)+p)/p} eps^{-N(p-1)/p}).
double calibrate_Cp(const std::vector<const TrajectoryRecord*>& probes, double p, double factor = kSafetyFactor);
// max{M, ||u0||_{max(2,p)}, C_p M^{(N(p-1)+p)/p} eps^{-N(p-1)/p}}
double lp_barrier(int dimension, double p, double Cp, double mass, double epsilon, double initial_norm);

struct MomentViolation {
  double time = 0.0;
  double lhs = 0.0;     // Lambda dI/dt
  double rhs = 0.0;     // eps D - kappa M^2 / 2 + omega I
  double excess = 0.0;  // lhs - rhs
};

// Centred differences of I_Lambda at interior samples against the right side;
// records samples with lhs - rhs > slack kappa M^2 / 2.
// Throws PreconditionError for kappa_Lambda <= 0 or a Lambda mismatch.
std::vector<MomentViolation> check_moment_inequality(const TrajectoryRecord& traj, const TheoremConstants& c,
                                                     double epsilon, double slack);

struct WeightedDResult {
  double integral = 0.0;
  double threshold = 0.0;  // Lambda L / eps
  double ratio = 0.0;      // integral / threshold
  bool pass = false;
};

// Trapezoid of D(t) exp(-omega t / Lambda) over [0, T_Lambda]. The last panel
// is cut at T_Lambda by linear interpolation.
// Throws PreconditionError if the trajectory ends before T_Lambda or L <= 0.
WeightedDResult weighted_D_integral(const TrajectoryRecord& traj, const TheoremConstants& c, double epsilon);

struct ConcentrationResult {
  double radius = 0.0;  // lambda eps
  double mass_integral = 0.0;
  std::map<double, double> lp_integral;  // p -> integral of (int_B u^p)^{1/p} dt
  std::size_t samples = 0;
};

inline constexpr std::size_t kMinConcentrationSamples = 20;

// Time trapezoid of the mass inside B_{lambda eps} over [0, T_star], using the
// stored snapshots. Refuses (PreconditionError) when lambda eps < 2 dr or
// fewer than kMinConcentrationSamples snapshots fall in [0, T_star].
ConcentrationResult concentration_integral(const TrajectoryRecord& traj, double lambda_ball, double epsilon,
                                           double T_star, const std::vector<double>& norms = {});

struct PowerFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::size_t points = 0;
};

// Least squares of log y on log x. Requires two or more positive points.
PowerFit fit_power_law(const std::vector<double>& x, const std::vector<double>& y);

// ||heat kernel of mass M at diffusivity eps, time t||_p in R^N.
double heat_baseline(int dimension, double epsilon, double t, double p, double mass);

// --- epsilon sweeps ---------------------------------------------------------

struct SweepConfig {
  int dimension = 1;
  Kernel kernel = Kernel::neg_abs();
  InitSpec initial = GaussianBump{1.0, 0.25};
  std::vector<double> epsilons;
  std::optional<double> lambda;  // empty: choose_lambda
  double dr_factor = 0.125;      // dr = dr_factor eps
  std::optional<double> t_end;   // empty: T_Lambda of each row
  SolverConfig solver;           // epsilon, t_end and record interval are set per row
  std::size_t record_divisor = 200;
  double slack = 1e-2;
  double safety_factor = kSafetyFactor;
  std::vector<double> norms = {2.0, kInfinity};
  double concentration_p = 2.0;
  // Epsilons used to calibrate C1 and C_p; the others are held out. Empty: all.
  std::vector<double> calibration_epsilons;
  // Ball radius is at least this many cells.
  double min_ball_cells = 4.0;
  double slope_tolerance = 0.15;
  double min_r_squared = 0.98;
  double saturation_factor = 10.0;
  double concentration_ratio = 0.5;
  int jobs = 1;
  std::filesystem::path cache_dir;  // empty: no matrix cache
  bool keep_trajectories = true;
};

struct SweepRow {
  double epsilon = 0.0;
  double dr = 0.0;
  std::size_t cells = 0;
  double r_max = 0.0;
  bool ok = false;
  std::string error;
  bool calibration = false;

  TheoremConstants constants;
  std::size_t steps = 0;
  double mass_defect = 0.0;
  double boundary_flux = 0.0;
  bool boundary_loss_exceeded = false;
  std::map<double, double> sup_norms;  // p -> sup_t ||u||_p
  std::optional<double> sup_h1;
  double initial_h1 = 0.0;
  std::map<double, double> initial_norms;

  double ball_parameter = 0.0;         // lambda actually used
  std::optional<double> ball_parameter_theory;
  ConcentrationResult concentration;
  WeightedDResult weighted_D;
  std::size_t dI_violations = 0;
  double dI_worst_excess = 0.0;        // max (lhs - rhs) / (kappa M^2 / 2) over interior samples
};

struct Verdict {
  std::string name;
  bool pass = false;
  double margin = 0.0;  // positive when passing
  std::string detail;
};

struct SweepReport {
  int dimension = 1;
  std::string kernel_id;
  double lambda = 0.0;
  std::vector<SweepRow> rows;  // decreasing eps
  std::map<double, PowerFit> fitted_exponents;
  std::optional<PowerFit> concentration_fit;  // p = concentration_p localized quantity
  std::optional<double> C1;
  std::map<double, double> Cp;
  double C_star = 0.0;  // min over rows of the ball mass integral
  std::optional<double> epsilon_star;  // largest eps below which every row verdict passes
  std::vector<Verdict> verdicts;
  std::vector<TrajectoryRecord> trajectories;  // parallel to rows when kept

  bool all_passed() const;
  const Verdict* find(const std::string& name) const;
};

struct RowRun {
  SweepRow row;
  TrajectoryRecord trajectory;
};

// One sweep row: builds the eps-dependent grid, runs to t_end (T_Lambda by
// default) and fills the per-row diagnostics. Concentration fields are left
// empty; they need the calibrated constants.
RowRun run_sweep_row(const SweepConfig& config, double epsilon, double lambda);

// The configured Lambda, or choose_lambda on the finest grid of the sweep.
double sweep_lambda(const SweepConfig& config);

// Runs one row per epsilon (jobs in parallel), then calibrates and checks.
// Throws PreconditionError for fewer than four epsilons or less than one decade.
SweepReport epsilon_sweep(const SweepConfig& config);

// Number of worker threads: AGGDIFF_JOBS when set, else `fallback`.
int worker_count(int fallback);

}  // namespace aggdiff
