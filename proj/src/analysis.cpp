#include "aggdiff/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "aggdiff/error.hpp"

namespace aggdiff {

TheoremConstants theorem_constants(const DensityField& u0, const Kernel& kernel, double lambda,
                                   std::optional<double> C1) {
  if (!(lambda > 0.0)) throw DomainError("Lambda must be positive");
  auto kappa = kappa_lambda(kernel, lambda);
  if (!kappa.hypothesis_holds || !(kappa.value > 0.0)) {
    throw DomainError(fmt::format("kappa_Lambda = {:.6g} at Lambda = {:.6g}; the attraction hypothesis fails",
                                  kappa.value, lambda));
  }
  TheoremConstants c;
  c.dimension = u0.grid().dimension();
  c.mass = mass(u0);
  c.lambda = lambda;
  c.kappa_lambda = kappa.value;
  c.kprime_sup_norm = kernel.kprime_sup_norm();
  c.mu_lambda = mu_lambda(u0, lambda);
  c.admissibility_bound = c.kappa_lambda * c.mass * lambda / (4.0 * (c.kappa_lambda + 2.0 * c.kprime_sup_norm));
  c.admissible = c.mu_lambda < c.admissibility_bound;
  c.omega_lambda = 2.0 * c.mass * (c.kappa_lambda + 2.0 * c.kprime_sup_norm);
  c.initial_moment = truncated_moment(u0, lambda);
  const double plateau = c.kappa_lambda * c.mass * c.mass / (2.0 * c.omega_lambda);
  c.L_lambda = 0.5 * (plateau - c.initial_moment);
  c.C1_empirical = C1;
  if (c.L_lambda > 0.0) {
    c.T_lambda = lambda / c.omega_lambda * std::log(plateau / c.L_lambda);
    if (c.dimension >= 2) {
      c.lambda_ball = 2.0 * (c.dimension - 1) * c.mass * c.T_lambda / (lambda * c.L_lambda);
    } else if (C1) {
      double root = lambda * c.L_lambda / (4.0 * *C1 * std::pow(c.mass, 2.5) * c.T_lambda);
      c.lambda_ball = root * root;
    }
  } else {
    c.T_lambda = std::numeric_limits<double>::quiet_NaN();
  }
  return c;
}

double moment_bound_left_side(const TheoremConstants& c, double T) {
  const double plateau = c.kappa_lambda * c.mass * c.mass / (2.0 * c.omega_lambda);
  return plateau * -std::expm1(-c.omega_lambda * T / c.lambda) - c.initial_moment;
}

double choose_lambda(const DensityField& u0, const Kernel& kernel, double support_radius) {
  if (!(support_radius > 0.0)) throw DomainError("support radius must be positive");
  constexpr int kPoints = 61;
  double best = 0.0;
  double best_L = 0.0;
  for (int k = 0; k < kPoints; ++k) {
    double lambda = support_radius * std::pow(10.0, -2.0 + 4.0 * k / (kPoints - 1));
    double L = 0.0;
    try {
      L = theorem_constants(u0, kernel, lambda).L_lambda;
    } catch (const DomainError&) {
      continue;
    }
    if (L > best_L) {
      best_L = L;
      best = lambda;
    }
  }
  if (best_L <= 0.0) throw DomainError("no Lambda in the scan gives L_Lambda > 0");
  return best;
}

namespace {

double sup_of(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, x);
  return m;
}

void require_distinct_epsilons(const std::vector<const TrajectoryRecord*>& probes) {
  std::set<double> eps;
  for (const auto* p : probes) {
    if (p == nullptr) throw PreconditionError("null probe run");
    eps.insert(p->epsilon);
  }
  if (eps.size() < 3) {
    throw PreconditionError(fmt::format("calibration needs runs at 3 or more epsilons, got {}", eps.size()));
  }
}

}  // namespace

double calibrate_C1(const std::vector<const TrajectoryRecord*>& probes, double factor) {
  require_distinct_epsilons(probes);
  double worst = 0.0;
  for (const auto* p : probes) {
    if (p->dimension != 1 || p->h1.empty()) throw PreconditionError("C1 calibration needs one-dimensional runs");
    worst = std::max(worst, sup_of(p->h1) * std::pow(p->epsilon, 1.5) / std::pow(p->initial_mass, 2.5));
  }
  return factor * worst;
}

double h1_barrier(double C1, double mass, double epsilon, double initial_h1) {
  return std::max(initial_h1, C1 * std::pow(mass, 2.5) * std::pow(epsilon, -1.5));
}

double lp_exponent(int dimension, double p) {
  if (std::isinf(p)) return dimension;
  return dimension * (p - 1.0) / p;
}

namespace {

double mass_exponent(int dimension, double p) {
  if (std::isinf(p)) return dimension + 1.0;
  return (dimension * (p - 1.0) + p) / p;
}

}  // namespace

double calibrate_Cp(const std::vector<const TrajectoryRecord*>& probes, double p, double factor) {
  require_distinct_epsilons(probes);
  double worst = 0.0;
  for (const auto* run : probes) {
    double scale =
        std::pow(run->initial_mass, mass_exponent(run->dimension, p)) * std::pow(run->epsilon, -lp_exponent(run->dimension, p));
    worst = std::max(worst, sup_of(run->norm(p)) / scale);
  }
  return factor * worst;
}

double lp_barrier(int dimension, double p, double Cp, double mass, double epsilon, double initial_norm) {
  double scaling = Cp * std::pow(mass, mass_exponent(dimension, p)) * std::pow(epsilon, -lp_exponent(dimension, p));
  return std::max({mass, initial_norm, scaling});
}

std::vector<MomentViolation> check_moment_inequality(const TrajectoryRecord& traj, const TheoremConstants& c,
                                                     double epsilon, double slack) {
  if (!(c.kappa_lambda > 0.0)) throw PreconditionError("the moment inequality needs kappa_Lambda > 0");
  if (std::abs(traj.lambda - c.lambda) > 1e-12 * c.lambda) {
    throw PreconditionError("trajectory was recorded with a different Lambda");
  }
  const double scale = 0.5 * c.kappa_lambda * c.mass * c.mass;
  std::vector<MomentViolation> out;
  const auto& t = traj.times;
  const auto& I = traj.truncated_moment;
  for (std::size_t k = 1; k + 1 < t.size(); ++k) {
    MomentViolation v;
    v.time = t[k];
    v.lhs = c.lambda * (I[k + 1] - I[k - 1]) / (t[k + 1] - t[k - 1]);
    v.rhs = epsilon * traj.concentration[k] - scale + c.omega_lambda * I[k];
    v.excess = v.lhs - v.rhs;
    if (v.excess > slack * scale) out.push_back(v);
  }
  return out;
}

WeightedDResult weighted_D_integral(const TrajectoryRecord& traj, const TheoremConstants& c, double epsilon) {
  if (!(c.L_lambda > 0.0)) throw PreconditionError("the weighted bound needs L_Lambda > 0");
  const auto& t = traj.times;
  const double T = c.T_lambda;
  if (t.empty() || t.back() < T * (1.0 - 1e-12)) {
    throw PreconditionError(fmt::format("trajectory ends at {:.6g}, before T_Lambda = {:.6g}",
                                        t.empty() ? 0.0 : t.back(), T));
  }
  auto f = [&](std::size_t k) { return traj.concentration[k] * std::exp(-c.omega_lambda * t[k] / c.lambda); };
  WeightedDResult r;
  for (std::size_t k = 0; k + 1 < t.size() && t[k] < T; ++k) {
    double t1 = std::min(t[k + 1], T);
    double f1 = f(k + 1);
    if (t[k + 1] > T) f1 = f(k) + (f(k + 1) - f(k)) * (T - t[k]) / (t[k + 1] - t[k]);
    r.integral += 0.5 * (t1 - t[k]) * (f(k) + f1);
  }
  r.threshold = c.lambda * c.L_lambda / epsilon;
  r.ratio = r.integral / r.threshold;
  r.pass = r.integral >= r.threshold;
  return r;
}

ConcentrationResult concentration_integral(const TrajectoryRecord& traj, double lambda_ball, double epsilon,
                                           double T_star, const std::vector<double>& norms) {
  if (traj.snapshots.empty()) throw PreconditionError("concentration integral needs stored snapshots");
  const auto& g = traj.snapshots.front().grid();
  ConcentrationResult r;
  r.radius = lambda_ball * epsilon;
  if (r.radius < 2.0 * g.dr()) {
    throw PreconditionError(
        fmt::format("ball radius {:.6g} is below 2 dr = {:.6g}; refine the grid", r.radius, 2.0 * g.dr()));
  }
  std::vector<const DensityField*> used;
  for (const auto& s : traj.snapshots) {
    if (s.time() <= T_star * (1.0 + 1e-12)) used.push_back(&s);
  }
  r.samples = used.size();
  if (r.samples < kMinConcentrationSamples) {
    throw PreconditionError(fmt::format("{} snapshots in [0, T*], need {}", r.samples, kMinConcentrationSamples));
  }
  std::vector<std::size_t> cells;
  std::vector<double> weights;
  for (std::size_t i = 0; i < g.size() && g.outer_face(i) - g.dr() < r.radius; ++i) {
    cells.push_back(i);
    weights.push_back(g.volume_within(i, r.radius));
  }
  auto ball_mass = [&](const DensityField& u) {
    double m = 0.0;
    for (std::size_t k = 0; k < cells.size(); ++k) m += weights[k] * u[cells[k]];
    return m;
  };
  auto ball_norm = [&](const DensityField& u, double p) {
    double m = 0.0;
    if (std::isinf(p)) {
      for (std::size_t i : cells) m = std::max(m, u[i]);
      return m;
    }
    for (std::size_t k = 0; k < cells.size(); ++k) m += weights[k] * std::pow(u[cells[k]], p);
    return std::pow(m, 1.0 / p);
  };
  for (double p : norms) r.lp_integral[p] = 0.0;
  for (std::size_t k = 0; k + 1 < used.size(); ++k) {
    double h = 0.5 * (used[k + 1]->time() - used[k]->time());
    r.mass_integral += h * (ball_mass(*used[k]) + ball_mass(*used[k + 1]));
    for (double p : norms) r.lp_integral[p] += h * (ball_norm(*used[k], p) + ball_norm(*used[k + 1], p));
  }
  return r;
}

PowerFit fit_power_law(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw PreconditionError("power fit needs two or more paired points");
  std::vector<double> lx;
  std::vector<double> ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw DomainError("power fit needs positive data");
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  const double n = static_cast<double>(lx.size());
  double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / n;
  double my = std::accumulate(ly.begin(), ly.end(), 0.0) / n;
  double sxx = 0.0;
  double sxy = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (sxx == 0.0) throw DomainError("power fit needs distinct abscissae");
  PowerFit f;
  f.points = lx.size();
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r_squared = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
  return f;
}

double heat_baseline(int dimension, double epsilon, double t, double p, double mass) {
  if (!(epsilon > 0.0) || !(t > 0.0)) throw DomainError("heat baseline needs eps, t > 0");
  if (!(p >= 1.0)) throw DomainError("heat baseline needs p >= 1");
  const double n = dimension;
  const double base = 4.0 * std::numbers::pi * epsilon * t;
  if (std::isinf(p)) return std::pow(base, -n / 2.0) * mass;
  return std::pow(base, -n * (p - 1.0) / (2.0 * p)) * std::pow(p, -n / (2.0 * p)) * mass;
}

// --- sweeps -------------------------------------------------------------------

bool SweepReport::all_passed() const {
  return std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.pass; });
}

const Verdict* SweepReport::find(const std::string& name) const {
  for (const auto& v : verdicts) {
    if (v.name == name) return &v;
  }
  return nullptr;
}

int worker_count(int fallback) {
  if (const char* env = std::getenv("AGGDIFF_JOBS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(v);
  }
  return std::max(1, fallback);
}

namespace {

std::string norm_label(double p) { return std::isinf(p) ? std::string("inf") : fmt::format("{:g}", p); }

bool contains_epsilon(const std::vector<double>& list, double eps) {
  return std::any_of(list.begin(), list.end(), [&](double e) { return std::abs(e - eps) <= 1e-12 * eps; });
}

}  // namespace

RowRun run_sweep_row(const SweepConfig& cfg, double eps, double lambda) {
  RowRun out;
  SweepRow& row = out.row;
  row.epsilon = eps;
  row.dr = cfg.dr_factor * eps;
  const double rs = support_radius(cfg.initial);

  double t_end = 0.0;
  if (cfg.t_end) {
    t_end = *cfg.t_end;
  } else {
    auto provisional = make_grid_with_spacing(cfg.dimension, row.dr, 10.0 * rs);
    auto c = theorem_constants(make_initial_condition(cfg.initial, provisional), cfg.kernel, lambda);
    if (!(c.L_lambda > 0.0)) throw DomainError("L_Lambda <= 0; no T_Lambda to run to");
    t_end = c.T_lambda;
  }
  auto grid = make_grid_with_spacing(cfg.dimension, row.dr, std::max(10.0 * rs, 20.0 * std::sqrt(eps * t_end)));
  row.dr = grid->dr();
  row.cells = grid->size();
  row.r_max = grid->r_max();
  auto u0 = make_initial_condition(cfg.initial, grid);
  row.constants = theorem_constants(u0, cfg.kernel, lambda);
  if (!cfg.t_end) t_end = row.constants.T_lambda;

  SolverConfig sc = cfg.solver;
  sc.epsilon = eps;
  sc.t_end = t_end;
  sc.record_interval = t_end / static_cast<double>(cfg.record_divisor);
  sc.store_snapshots = true;
  for (double p : cfg.norms) {
    if (p != 1.0 && p != 2.0 && !std::isinf(p)) sc.extra_norms.push_back(p);
  }
  auto matrix = cfg.cache_dir.empty() ? build_face_matrix(grid, cfg.kernel)
                                      : cached_face_matrix(cfg.cache_dir, grid, cfg.kernel);
  out.trajectory = run(u0, matrix, sc, lambda);
  const auto& traj = out.trajectory;

  row.steps = traj.steps;
  row.mass_defect = traj.max_mass_defect();
  row.boundary_flux = traj.boundary_flux_cumulative();
  row.boundary_loss_exceeded = traj.boundary_loss_exceeded;
  for (double p : cfg.norms) {
    row.sup_norms[p] = sup_of(traj.norm(p));
    row.initial_norms[p] = traj.norm(p).front();
  }
  if (cfg.dimension == 1) {
    row.sup_h1 = sup_of(traj.h1);
    row.initial_h1 = traj.h1.front();
  }

  const double scale = 0.5 * row.constants.kappa_lambda * row.constants.mass * row.constants.mass;
  auto violations = check_moment_inequality(traj, row.constants, eps, cfg.slack);
  row.dI_violations = violations.size();
  auto all = check_moment_inequality(traj, row.constants, eps, -kInfinity);
  row.dI_worst_excess = -kInfinity;
  for (const auto& v : all) row.dI_worst_excess = std::max(row.dI_worst_excess, v.excess / scale);
  if (row.constants.L_lambda > 0.0 && traj.times.back() >= row.constants.T_lambda * (1.0 - 1e-12)) {
    row.weighted_D = weighted_D_integral(traj, row.constants, eps);
  }
  row.ok = true;
  return out;
}

namespace {

// ||u0||_{max(2, p)}, falling back to ||u0||_p when the former was not recorded.
double initial_norm(const SweepRow& r, double p) {
  auto it = r.initial_norms.find(std::max(2.0, p));
  return it != r.initial_norms.end() ? it->second : r.initial_norms.at(p);
}

Verdict slope_verdict(const std::string& name, const PowerFit& fit, double target, double tolerance,
                      double min_r2) {
  Verdict v;
  v.name = name;
  double allowed = tolerance * std::abs(target);
  double off = std::abs(fit.slope - target);
  v.margin = std::min(allowed - off, min_r2 > 0.0 ? fit.r_squared - min_r2 : kInfinity);
  v.pass = off <= allowed && fit.r_squared >= min_r2;
  v.detail = fmt::format("slope {:.4f} (target {:.4f} +- {:.0f}%), R^2 {:.4f}", fit.slope, target,
                         100.0 * tolerance, fit.r_squared);
  return v;
}

}  // namespace

double sweep_lambda(const SweepConfig& config) {
  if (config.lambda) return *config.lambda;
  if (config.epsilons.empty()) throw PreconditionError("no epsilons to size the grid");
  double eps = *std::min_element(config.epsilons.begin(), config.epsilons.end());
  double rs = support_radius(config.initial);
  auto grid = make_grid_with_spacing(config.dimension, config.dr_factor * eps, 10.0 * rs);
  return choose_lambda(make_initial_condition(config.initial, grid), config.kernel, rs);
}

SweepReport epsilon_sweep(const SweepConfig& config) {
  if (config.epsilons.size() < 4) throw PreconditionError("a sweep needs at least four epsilons");
  auto eps = config.epsilons;
  std::sort(eps.begin(), eps.end(), std::greater<>());
  if (std::adjacent_find(eps.begin(), eps.end()) != eps.end()) throw PreconditionError("duplicate epsilon in sweep");
  if (eps.front() < 10.0 * eps.back() * (1.0 - 1e-12)) {
    throw PreconditionError("sweep epsilons must span at least one decade");
  }
  if (!(config.dr_factor > 0.0) || config.dr_factor > 0.125) {
    throw PreconditionError("dr_factor must lie in (0, 1/8] to resolve the eps scale");
  }

  SweepReport report;
  report.dimension = config.dimension;
  report.kernel_id = config.kernel.id();
  report.lambda = sweep_lambda(config);

  const std::size_t n = eps.size();
  std::vector<RowRun> outputs(n);
  const int jobs = std::max(1, config.jobs);
#pragma omp parallel for num_threads(jobs) schedule(dynamic, 1)
  for (std::size_t k = 0; k < n; ++k) {
    try {
      outputs[k] = run_sweep_row(config, eps[k], report.lambda);
    } catch (const std::exception& e) {
      outputs[k].row.epsilon = eps[k];
      outputs[k].row.ok = false;
      outputs[k].row.error = e.what();
    }
  }

  for (auto& o : outputs) {
    o.row.calibration = config.calibration_epsilons.empty() || contains_epsilon(config.calibration_epsilons, o.row.epsilon);
    report.rows.push_back(o.row);
  }
  auto& rows = report.rows;

  std::vector<const TrajectoryRecord*> probes;
  for (std::size_t k = 0; k < n; ++k) {
    if (rows[k].ok && rows[k].calibration) probes.push_back(&outputs[k].trajectory);
  }
  std::vector<std::size_t> held_out;
  for (std::size_t k = 0; k < n; ++k) {
    if (rows[k].ok && !rows[k].calibration) held_out.push_back(k);
  }

  auto add = [&](Verdict v) { report.verdicts.push_back(std::move(v)); };
  try {
    if (config.dimension == 1) report.C1 = calibrate_C1(probes, config.safety_factor);
    for (double p : config.norms) report.Cp[p] = calibrate_Cp(probes, p, config.safety_factor);
  } catch (const PreconditionError& e) {
    add({"calibration", false, 0.0, e.what()});
  }

  bool all_ok = true;
  for (const auto& r : rows) {
    if (!r.ok) {
      all_ok = false;
      add({fmt::format("run eps={:g}", r.epsilon), false, 0.0, r.error});
    }
  }

  // Per-row checks.
  std::vector<bool> row_pass(n, false);
  double worst_defect = 0.0;
  bool domain_ok = true;
  for (std::size_t k = 0; k < n; ++k) {
    auto& r = rows[k];
    if (!r.ok) continue;
    worst_defect = std::max(worst_defect, r.mass_defect);
    domain_ok = domain_ok && !r.boundary_loss_exceeded;
    bool pass = true;
    {
      Verdict v;
      v.name = fmt::format("moment inequality eps={:g}", r.epsilon);
      v.pass = r.dI_violations == 0;
      v.margin = config.slack - r.dI_worst_excess;
      v.detail = fmt::format("{} violations, worst excess {:.3e} of kappa M^2/2 (slack {:g})", r.dI_violations,
                             r.dI_worst_excess, config.slack);
      pass = pass && v.pass;
      add(v);
    }
    {
      Verdict v;
      v.name = fmt::format("weighted D bound eps={:g}", r.epsilon);
      v.pass = r.weighted_D.pass;
      v.margin = r.weighted_D.ratio - 1.0;
      v.detail = fmt::format("integral {:.6g} vs Lambda L / eps = {:.6g}, ratio {:.4f}", r.weighted_D.integral,
                             r.weighted_D.threshold, r.weighted_D.ratio);
      pass = pass && v.pass;
      add(v);
    }
    for (auto [p, Cp] : report.Cp) {
      if (r.sup_norms[p] > lp_barrier(config.dimension, p, Cp, r.constants.mass, r.epsilon, initial_norm(r, p))) {
        pass = false;
      }
    }
    if (report.C1 && r.sup_h1 && *r.sup_h1 > h1_barrier(*report.C1, r.constants.mass, r.epsilon, r.initial_h1)) {
      pass = false;
    }
    row_pass[k] = pass;
  }
  add({"mass conservation", worst_defect <= 1e-6, 1e-6 - worst_defect,
       fmt::format("max |M(t) - M(0) + flux| / M(0) = {:.3e}", worst_defect)});
  add({"domain size", domain_ok, domain_ok ? 1.0 : -1.0,
       domain_ok ? "boundary outflow within tolerance" : "mass left through r_max beyond tolerance"});

  // Empirical eps_*: largest eps such that it and every smaller eps pass.
  for (std::size_t k = n; k-- > 0;) {
    if (!row_pass[k]) break;
    report.epsilon_star = rows[k].epsilon;
  }

  if (!all_ok) return report;

  std::vector<double> es;
  for (const auto& r : rows) es.push_back(r.epsilon);

  for (double p : config.norms) {
    std::vector<double> sup;
    for (const auto& r : rows) sup.push_back(r.sup_norms.at(p));
    auto fit = fit_power_law(es, sup);
    report.fitted_exponents[p] = fit;
    add(slope_verdict(fmt::format("Lp slope p={}", norm_label(p)), fit, -lp_exponent(config.dimension, p),
                      config.slope_tolerance, config.min_r_squared));

    if (!report.Cp.count(p)) continue;
    const double Cp = report.Cp[p];
    double worst = kInfinity;
    for (const auto& r : rows) {
      double barrier = lp_barrier(config.dimension, p, Cp, r.constants.mass, r.epsilon, initial_norm(r, p));
      worst = std::min(worst, (barrier - r.sup_norms.at(p)) / barrier);
    }
    add({fmt::format("Lp barrier p={}", norm_label(p)), worst >= 0.0, worst,
         fmt::format("C_p = {:.6g}, smallest relative headroom {:.4f}", Cp, worst)});
    const auto& last = rows.back();
    double ratio = lp_barrier(config.dimension, p, Cp, last.constants.mass, last.epsilon, initial_norm(last, p)) /
                   last.sup_norms.at(p);
    add({fmt::format("Lp barrier saturation p={}", norm_label(p)), ratio <= config.saturation_factor,
         config.saturation_factor - ratio, fmt::format("barrier / sup at eps={:g} is {:.4f}", last.epsilon, ratio)});
  }

  if (config.dimension == 1 && report.C1) {
    std::vector<std::size_t> idx = held_out;
    if (idx.empty()) {
      for (std::size_t k = 0; k < n; ++k) idx.push_back(k);
    }
    double worst = kInfinity;
    for (std::size_t k : idx) {
      const auto& r = rows[k];
      double barrier = h1_barrier(*report.C1, r.constants.mass, r.epsilon, r.initial_h1);
      worst = std::min(worst, (barrier - *r.sup_h1) / barrier);
    }
    add({"H1 barrier", worst >= 0.0, worst,
         fmt::format("C1 = {:.6g}, {} held-out runs, smallest relative headroom {:.4f}", *report.C1,
                     held_out.size(), worst)});
  }

  // Concentration in B_{lambda eps}.
  bool conc_ok = true;
  std::string conc_error;
  for (std::size_t k = 0; k < n; ++k) {
    auto& r = rows[k];
    auto c = theorem_constants(make_initial_condition(config.initial, outputs[k].trajectory.snapshots.front().grid_ptr()),
                               config.kernel, report.lambda, report.C1);
    r.ball_parameter_theory = c.lambda_ball;
    double floor = config.min_ball_cells * r.dr / r.epsilon;
    r.ball_parameter = std::max(c.lambda_ball.value_or(0.0), floor);
    try {
      double T_star = std::min(r.constants.T_lambda, outputs[k].trajectory.times.back());
      if (!std::isfinite(T_star)) T_star = outputs[k].trajectory.times.back();
      r.concentration =
          concentration_integral(outputs[k].trajectory, r.ball_parameter, r.epsilon, T_star, {config.concentration_p});
    } catch (const Error& e) {
      conc_ok = false;
      conc_error = e.what();
    }
  }
  if (conc_ok) {
    double lo = kInfinity;
    for (const auto& r : rows) lo = std::min(lo, r.concentration.mass_integral);
    report.C_star = lo;
    double ratio = rows.back().concentration.mass_integral / rows.front().concentration.mass_integral;
    add({"concentration uniform", lo > 0.0 && ratio >= config.concentration_ratio,
         std::min(lo, ratio - config.concentration_ratio),
         fmt::format("C_* = {:.6g}, smallest-eps / largest-eps = {:.4f}", lo, ratio)});
    if (config.dimension <= 2) {
      std::vector<double> loc;
      for (const auto& r : rows) loc.push_back(r.concentration.lp_integral.at(config.concentration_p));
      report.concentration_fit = fit_power_law(es, loc);
      add(slope_verdict(fmt::format("localized Lp slope p={}", norm_label(config.concentration_p)),
                        *report.concentration_fit, -lp_exponent(config.dimension, config.concentration_p),
                        config.slope_tolerance, 0.0));
    }
  } else {
    add({"concentration uniform", false, 0.0, conc_error});
  }

  if (!config.keep_trajectories) return report;
  for (auto& o : outputs) report.trajectories.push_back(std::move(o.trajectory));
  return report;
}

}  // namespace aggdiff
