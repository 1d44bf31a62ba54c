#include "aggdiff/solver.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "aggdiff/error.hpp"

namespace aggdiff {

void SolverConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw ConfigError(fmt::format("epsilon must be positive, got {}", epsilon));
  }
  if (!(t_end >= 0.0) || !std::isfinite(t_end)) throw ConfigError("t_end must be nonnegative and finite");
  if (!(cfl > 0.0) || cfl > 1.0) throw ConfigError(fmt::format("cfl must lie in (0, 1], got {}", cfl));
  if (!(record_interval > 0.0)) throw ConfigError("record_interval must be positive");
  if (!(lambda_cap_tolerance >= 0.0)) throw ConfigError("lambda_cap_tolerance must be nonnegative");
  if (!(dt_max > 0.0)) throw ConfigError("dt_max must be positive");
  for (double p : extra_norms) {
    if (!(p >= 1.0)) throw ConfigError(fmt::format("recorded norm exponent {} below 1", p));
  }
}

double positivity_time_step(const RadialGrid& grid, std::span<const double> face_velocity,
                            const SolverConfig& config) {
  const std::size_t n = grid.size();
  const double dr = grid.dr();
  const bool explicit_diffusion = config.diffusion == DiffusionMode::Explicit;
  double max_rate = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double outer_area = grid.outer_face_area(i);
    double inner_area = i > 0 ? grid.outer_face_area(i - 1) : 0.0;
    double out = outer_area * std::max(face_velocity[i], 0.0);
    if (i > 0) out += inner_area * std::max(-face_velocity[i - 1], 0.0);
    if (explicit_diffusion) out += config.epsilon * (outer_area + inner_area) / dr;
    max_rate = std::max(max_rate, out / grid.volume(i));
  }
  return max_rate > 0.0 ? 1.0 / max_rate : kInfinity;
}

namespace {

// Thomas algorithm for lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i].
void solve_tridiagonal(std::span<const double> lower, std::span<const double> diag, std::span<const double> upper,
                       std::span<double> x, std::vector<double>& scratch) {
  const std::size_t n = diag.size();
  scratch.resize(n);
  double denom = diag[0];
  scratch[0] = upper[0] / denom;
  x[0] = x[0] / denom;
  for (std::size_t i = 1; i < n; ++i) {
    denom = diag[i] - lower[i] * scratch[i - 1];
    scratch[i] = upper[i] / denom;
    x[i] = (x[i] - lower[i] * x[i - 1]) / denom;
  }
  for (std::size_t i = n - 1; i-- > 0;) x[i] -= scratch[i] * x[i + 1];
}

}  // namespace

DensityField step_with_velocity(const DensityField& field, std::span<const double> face_velocity,
                                const SolverConfig& config, double dt, StepReport* report) {
  const auto& g = field.grid();
  const std::size_t n = g.size();
  if (face_velocity.size() != n) throw PreconditionError("face velocity does not match the grid");
  if (!(dt > 0.0)) throw CflError("time step must be positive");
  const double bound = positivity_time_step(g, face_velocity, config);
  if (dt > bound * (1.0 + 1e-12)) {
    throw CflError(fmt::format("dt = {:.6g} exceeds the positivity bound {:.6g}", dt, bound));
  }

  const double dr = g.dr();
  const double eps = config.epsilon;
  const bool implicit = config.diffusion == DiffusionMode::Implicit;
  auto u = field.values();

  // Outward flux through the outer face of each cell.
  std::vector<double> flux(n);
  for (std::size_t i = 0; i < n; ++i) {
    double area = g.outer_face_area(i);
    double v = face_velocity[i];
    double outer_u = i + 1 < n ? u[i + 1] : 0.0;
    double f = area * v * (v >= 0.0 ? u[i] : outer_u);
    if (!implicit) f -= eps * area * (outer_u - u[i]) / dr;
    flux[i] = f;
  }

  std::vector<double> next(n);
  for (std::size_t i = 0; i < n; ++i) {
    double inflow = i > 0 ? flux[i - 1] : 0.0;
    next[i] = u[i] - dt * (flux[i] - inflow) / g.volume(i);
  }
  double outflow = dt * flux[n - 1];

  if (implicit) {
    std::vector<double> lower(n, 0.0);
    std::vector<double> diag(n);
    std::vector<double> upper(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double vol_dt = g.volume(i) / dt;
      double outer = eps * g.outer_face_area(i) / dr;
      double inner = i > 0 ? eps * g.outer_face_area(i - 1) / dr : 0.0;
      diag[i] = vol_dt + outer + inner;
      if (i > 0) lower[i] = -inner;
      if (i + 1 < n) upper[i] = -outer;
      next[i] *= vol_dt;
    }
    std::vector<double> scratch;
    solve_tridiagonal(lower, diag, upper, next, scratch);
    outflow += dt * eps * g.outer_face_area(n - 1) * next[n - 1] / dr;
  }

  std::size_t clipped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double& x = next[i];
    if (x < 0.0) {
      if (x < kClipThreshold) {
        throw NegativityError(fmt::format("cell {} fell to {:.6g} at t = {:.6g}", i, x, field.time() + dt));
      }
      x = 0.0;
      ++clipped;
    } else if (x < kUnderflowFloor) {
      x = 0.0;
    }
  }
  if (report) {
    report->boundary_outflow = outflow;
    report->clipped_cells = clipped;
  }
  return DensityField(field.grid_ptr(), std::move(next), field.time() + dt);
}

namespace {

std::vector<double> face_velocity_of(const InteractionMatrix& matrix, const DensityField& field) {
  const auto& g = field.grid();
  if (matrix.kprime_sup_norm() == 0.0) return std::vector<double>(matrix.rows(), 0.0);
  std::vector<double> masses(g.size());
  for (std::size_t j = 0; j < masses.size(); ++j) masses[j] = field[j] * g.volume(j);
  std::vector<double> v(matrix.rows());
  apply_masses(matrix, masses, v);
  return v;
}

void check_face_matrix(const InteractionMatrix& matrix, const DensityField& field) {
  if (!(matrix.grid() == field.grid())) throw PreconditionError("face matrix and field use different grids");
  if (matrix.target_kind() != TargetKind::OuterFaces) {
    throw PreconditionError("the solver needs a matrix sampled at the outer cell faces");
  }
}

}  // namespace

DensityField step(const DensityField& field, const InteractionMatrix& face_matrix, const SolverConfig& config,
                  double dt, StepReport* report) {
  config.validate();
  check_face_matrix(face_matrix, field);
  auto v = face_velocity_of(face_matrix, field);
  return step_with_velocity(field, v, config, dt, report);
}

const std::vector<double>& TrajectoryRecord::norm(double p) const {
  auto it = lp.find(p);
  if (it == lp.end()) throw PreconditionError(fmt::format("norm p = {} was not recorded", p));
  return it->second;
}

double TrajectoryRecord::max_mass_defect() const {
  double worst = 0.0;
  if (mass.empty() || !(initial_mass > 0.0)) return worst;
  for (std::size_t k = 0; k < mass.size(); ++k) {
    worst = std::max(worst, std::abs(mass[k] - mass.front() + boundary_flux[k]) / mass.front());
  }
  return worst;
}

namespace {

void record_sample(TrajectoryRecord& rec, const DensityField& u, double flux, const SolverConfig& config) {
  rec.times.push_back(u.time());
  rec.mass.push_back(mass(u));
  rec.truncated_moment.push_back(truncated_moment(u, rec.lambda));
  rec.concentration.push_back(concentration_functional(u, rec.lambda));
  for (auto& [p, series] : rec.lp) series.push_back(lp_norm(u, p));
  if (rec.dimension == 1) rec.h1.push_back(h1_seminorm(u));
  rec.boundary_flux.push_back(flux);
  if (config.store_snapshots) rec.snapshots.push_back(u);
}

}  // namespace

TrajectoryRecord run(const DensityField& u0, const Kernel& kernel, const SolverConfig& config, double lambda) {
  auto matrix = build_face_matrix(u0.grid_ptr(), kernel);
  return run(u0, matrix, config, lambda);
}

TrajectoryRecord run(const DensityField& u0, const InteractionMatrix& face_matrix, const SolverConfig& config,
                     double lambda) {
  config.validate();
  check_face_matrix(face_matrix, u0);
  if (!(lambda > 0.0)) throw DomainError("run requires Lambda > 0");

  TrajectoryRecord rec;
  rec.dimension = u0.grid().dimension();
  rec.epsilon = config.epsilon;
  rec.lambda = lambda;
  rec.initial_mass = mass(u0);
  rec.lp[1.0];
  rec.lp[2.0];
  rec.lp[kInfinity];
  for (double p : config.extra_norms) rec.lp[p];

  DensityField u = u0;
  double flux = 0.0;
  record_sample(rec, u, flux, config);

  const double t_end = config.t_end;
  std::size_t next_index = 1;
  auto sample_time = [&](std::size_t k) { return std::min(t_end, static_cast<double>(k) * config.record_interval); };
  rec.dt_min = kInfinity;

  double t = u.time();
  while (t < t_end) {
    auto v = face_velocity_of(face_matrix, u);
    double target = sample_time(next_index);
    double dt = std::min(config.cfl * positivity_time_step(u.grid(), v, config), config.dt_max);
    bool lands = false;
    if (t + dt >= target * (1.0 - 1e-14) || !std::isfinite(dt)) {
      dt = target - t;
      lands = true;
    }
    StepReport step_report;
    u = step_with_velocity(u, v, config, dt, &step_report);
    if (lands) u = DensityField(u.grid_ptr(), {u.values().begin(), u.values().end()}, target);
    t = u.time();
    flux += step_report.boundary_outflow;
    rec.clipped_cells += step_report.clipped_cells;
    ++rec.steps;
    rec.dt_min = std::min(rec.dt_min, dt);
    rec.dt_max = std::max(rec.dt_max, dt);
    if (lands) {
      record_sample(rec, u, flux, config);
      while (sample_time(next_index) <= t && t < t_end) ++next_index;
      if (t >= t_end) break;
    }
  }
  if (rec.steps == 0) rec.dt_min = 0.0;
  rec.boundary_loss_exceeded = flux > config.lambda_cap_tolerance * rec.initial_mass;
  return rec;
}

}  // namespace aggdiff
