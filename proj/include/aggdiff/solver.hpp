#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "aggdiff/drift.hpp"
#include "aggdiff/kernel.hpp"
#include "aggdiff/radial_field.hpp"

namespace aggdiff {

enum class DiffusionMode { Explicit, Implicit };

struct SolverConfig {
  double epsilon = 0.1;
  double t_end = 1.0;
  double cfl = 0.5;
  DiffusionMode diffusion = DiffusionMode::Implicit;
  double record_interval = 0.01;
  // Largest tolerated relative mass loss through r_max before the run is flagged.
  double lambda_cap_tolerance = 1e-6;
  // Upper bound on the step; needed when the drift vanishes in implicit mode.
  double dt_max = kInfinity;
  bool store_snapshots = false;
  // L^p norms recorded besides p = 1, 2, infinity.
  std::vector<double> extra_norms;

  // Throws ConfigError: epsilon must be positive (the diffusion-free problem
  // can blow up), cfl in (0, 1], intervals positive.
  void validate() const;
};

// Values below this are flushed to zero after each step (denormal guard).
inline constexpr double kUnderflowFloor = 1e-300;
// Implicit undershoot tolerated (and clipped) before a run aborts.
inline constexpr double kClipThreshold = -1e-14;

struct StepReport {
  double boundary_outflow = 0.0;  // mass that left through r_max during the step
  std::size_t clipped_cells = 0;
};

// Largest dt for which the explicit part of the update is a convex
// combination (every cell keeps u_i >= 0): the reciprocal of the largest
// per-cell outflow rate, including explicit diffusion when selected.
// Returns kInfinity when nothing flows.
double positivity_time_step(const RadialGrid& grid, std::span<const double> face_velocity,
                            const SolverConfig& config);

// One finite-volume step: upwind drift flux A V u_upwind and centred diffusive
// flux -eps A (u_{i+1} - u_i) / dr on every face, zero flux at the origin,
// outflow into an empty ghost cell beyond r_max. Implicit mode treats the
// diffusive part with backward Euler (one tridiagonal solve).
// Throws CflError when dt exceeds positivity_time_step, NegativityError on an
// undershoot below kClipThreshold.
DensityField step(const DensityField& field, const InteractionMatrix& face_matrix, const SolverConfig& config,
                  double dt, StepReport* report = nullptr);

// Same update with a precomputed face velocity.
DensityField step_with_velocity(const DensityField& field, std::span<const double> face_velocity,
                                const SolverConfig& config, double dt, StepReport* report = nullptr);

struct TrajectoryRecord {
  int dimension = 1;
  double epsilon = 0.0;
  double lambda = 0.0;
  double initial_mass = 0.0;

  std::vector<double> times;
  std::vector<double> mass;
  std::vector<double> truncated_moment;       // I_Lambda(t)
  std::vector<double> concentration;          // D_Lambda(u(t))
  std::map<double, std::vector<double>> lp;   // p -> ||u(t)||_p, p = kInfinity included
  std::vector<double> h1;                     // one dimension only
  std::vector<double> boundary_flux;          // cumulative outflow at each sample
  std::vector<DensityField> snapshots;

  std::size_t steps = 0;
  double dt_min = 0.0;
  double dt_max = 0.0;
  std::size_t clipped_cells = 0;
  bool boundary_loss_exceeded = false;

  std::size_t samples() const { return times.size(); }
  double boundary_flux_cumulative() const { return boundary_flux.empty() ? 0.0 : boundary_flux.back(); }
  const std::vector<double>& norm(double p) const;
  // max_k |M(t_k) - M(0) + flux(t_k)| / M(0)
  double max_mass_defect() const;
};

TrajectoryRecord run(const DensityField& u0, const Kernel& kernel, const SolverConfig& config, double lambda);
// Uses a prebuilt face matrix (see build_face_matrix / cached_face_matrix).
TrajectoryRecord run(const DensityField& u0, const InteractionMatrix& face_matrix, const SolverConfig& config,
                     double lambda);

}  // namespace aggdiff
