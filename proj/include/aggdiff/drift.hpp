#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "aggdiff/kernel.hpp"
#include "aggdiff/radial_field.hpp"

namespace aggdiff {

// Where the drift V(r) = x/|x| . (grad K * u)(x) is sampled.
enum class TargetKind { CellCenters, OuterFaces, Custom };

struct MatrixOptions {
  int initial_order = 8;     // Gauss-Legendre points per angular panel
  int max_order = 128;
  double tolerance = 1e-6;   // relative change allowed under order doubling
  int radial_points = 2;     // Gauss-Legendre points per source cell (or half cell)
};

// Dense map from cell masses m_j = u_j vol_j to drift samples:
// V(target_i) = sum_j W_ij m_j.
class InteractionMatrix {
 public:
  InteractionMatrix() = default;
  InteractionMatrix(GridPtr grid, std::vector<double> targets, TargetKind kind, std::vector<double> weights,
                    std::string kernel_id, double kprime_sup_norm, int order, bool converged, double change);

  const RadialGrid& grid() const { return *grid_; }
  const GridPtr& grid_ptr() const { return grid_; }
  std::span<const double> targets() const { return targets_; }
  TargetKind target_kind() const { return kind_; }
  std::size_t rows() const { return targets_.size(); }
  std::size_t cols() const { return grid_->size(); }
  std::span<const double> weights() const { return weights_; }
  std::span<const double> row(std::size_t i) const { return {weights_.data() + i * cols(), cols()}; }

  const std::string& kernel_id() const { return kernel_id_; }
  double kprime_sup_norm() const { return kprime_sup_norm_; }
  // Angular points per panel (0 in one dimension, where no angular integral exists).
  int quadrature_order() const { return order_; }
  bool converged() const { return converged_; }
  // Largest relative change observed on the probe rows at the last doubling.
  double convergence_change() const { return change_; }

 private:
  GridPtr grid_;
  std::vector<double> targets_;
  TargetKind kind_ = TargetKind::Custom;
  std::vector<double> weights_;
  std::string kernel_id_;
  double kprime_sup_norm_ = 0.0;
  int order_ = 0;
  bool converged_ = true;
  double change_ = 0.0;
};

// Drift at cell centres.
InteractionMatrix build_interaction_matrix(GridPtr grid, const Kernel& kernel, const MatrixOptions& options = {});
// Drift at the outer face of every cell; used by the flux assembly.
InteractionMatrix build_face_matrix(GridPtr grid, const Kernel& kernel, const MatrixOptions& options = {});
// Drift at arbitrary radii in (0, r_max].
InteractionMatrix build_matrix_at(GridPtr grid, const Kernel& kernel, std::vector<double> targets,
                                  const MatrixOptions& options = {});
// Single-threaded reference for build_matrix_at; identical results.
InteractionMatrix build_matrix_at_serial(GridPtr grid, const Kernel& kernel, std::vector<double> targets,
                                         const MatrixOptions& options = {});

// Kernel-weighted contribution of source cell j to the drift at radius r,
// per unit mass in that cell. Exposed for tests and the benchmark.
double interaction_weight(const RadialGrid& grid, const Kernel& kernel, double r, std::size_t j, int angular_order,
                          int radial_points);

// V_i = sum_j W_ij u_j vol_j. Checks ||V||_inf <= ||k'||_inf mass(field).
std::vector<double> apply(const InteractionMatrix& matrix, const DensityField& field);
std::vector<double> apply_serial(const InteractionMatrix& matrix, const DensityField& field);
// Lower-level product on precomputed cell masses; no bound check.
void apply_masses(const InteractionMatrix& matrix, std::span<const double> masses, std::span<double> out);
void apply_masses_serial(const InteractionMatrix& matrix, std::span<const double> masses, std::span<double> out);

struct JumpIdentityResult {
  double residual = 0.0;        // max-norm residual with the selected sign
  int sign = 1;                 // +1 or -1 multiplying 2 kappa_0 v
  double rejected_residual = 0.0;
};

// Checks (K' * v)_x = s 2 kappa_0 v + k''(|.|) * v on the mirrored full line of
// a one-dimensional field, choosing the sign s in {+1, -1} that fits best.
// Ties keep s = +1.
JumpIdentityResult jump_identity_residual(const Kernel& kernel, const DensityField& v);

// Binary cache: header with (grid hash, kernel id, target kind, order), then
// row-major float64 weights.
void save_matrix(const InteractionMatrix& matrix, const std::filesystem::path& path);
InteractionMatrix load_matrix(const std::filesystem::path& path, GridPtr grid, const Kernel& kernel,
                              TargetKind expected_kind);
// Load the matrix from cache_dir when a matching file exists, else build and store it.
InteractionMatrix cached_face_matrix(const std::filesystem::path& cache_dir, GridPtr grid, const Kernel& kernel,
                                     const MatrixOptions& options = {});

}  // namespace aggdiff
