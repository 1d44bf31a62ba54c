#include "aggdiff/drift.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <exception>
#include <fstream>
#include <numbers>
#include <optional>

#include <fmt/format.h>

#include "aggdiff/error.hpp"
#include "aggdiff/hash.hpp"
#include "aggdiff/quadrature.hpp"

namespace aggdiff {

InteractionMatrix::InteractionMatrix(GridPtr grid, std::vector<double> targets, TargetKind kind,
                                     std::vector<double> weights, std::string kernel_id, double kprime_sup_norm,
                                     int order, bool converged, double change)
    : grid_(std::move(grid)),
      targets_(std::move(targets)),
      kind_(kind),
      weights_(std::move(weights)),
      kernel_id_(std::move(kernel_id)),
      kprime_sup_norm_(kprime_sup_norm),
      order_(order),
      converged_(converged),
      change_(change) {
  if (weights_.size() != targets_.size() * grid_->size()) {
    throw PreconditionError("interaction matrix weights do not match its shape");
  }
}

namespace {

constexpr double kDistanceFloor = 1e-12;

// K'(x) = sign(x) k'(|x|) in one dimension, with K'(0) = 0.
double odd_kprime(const Kernel& kernel, double x) {
  if (x == 0.0) return 0.0;
  double s = std::max(std::abs(x), kDistanceFloor);
  return x > 0.0 ? kernel.kprime(s) : -kernel.kprime(s);
}

// G(r, rho) = sigma_{N-1} int_0^pi k'(d) (r - rho cos t) / d sin^{N-2} t dt, the
// radial drift at radius r of a unit-density sphere of radius rho (per unit
// rho^{N-1} d rho). The integrand turns over on the angular scale
// |r - rho| / sqrt(r rho), so panels grow geometrically from that scale.
double angular_factor(const Kernel& kernel, int dimension, double r, double rho, const GaussLegendre& rule) {
  const double diff = r - rho;
  const double four_r_rho = 4.0 * r * rho;
  auto integrand = [&](double theta) {
    double h = std::sin(0.5 * theta);
    double h2 = h * h;
    double d = std::max(std::sqrt(diff * diff + four_r_rho * h2), kDistanceFloor);
    double radial = (diff + 2.0 * rho * h2) / d;
    double value = kernel.kprime(d) * radial;
    return dimension == 3 ? value * std::sin(theta) : value;
  };
  const double pi = std::numbers::pi;
  double scale = std::abs(diff) / std::sqrt(r * rho);
  double total = 0.0;
  double a = 0.0;
  double b = std::clamp(scale, 1e-14, pi);
  while (true) {
    total += rule.integrate(integrand, a, b);
    if (b >= pi) break;
    a = b;
    b = std::min(2.0 * b, pi);
  }
  double sphere = dimension == 2 ? 2.0 : 2.0 * pi;
  return sphere * total;
}

}  // namespace

namespace {

double weight_with_rules(const RadialGrid& grid, const Kernel& kernel, double r, std::size_t j,
                         const GaussLegendre& radial, const GaussLegendre* angular) {
  const int dim = grid.dimension();
  const double a = static_cast<double>(j) * grid.dr();
  const double b = static_cast<double>(j + 1) * grid.dr();
  auto source = [&](double rho) {
    if (dim == 1) return odd_kprime(kernel, r - rho) + odd_kprime(kernel, r + rho);
    return std::pow(rho, dim - 1) * angular_factor(kernel, dim, r, rho, *angular);
  };
  double integral = 0.0;
  if (r > a && r < b) {
    integral = radial.integrate(source, a, r) + radial.integrate(source, r, b);
  } else {
    integral = radial.integrate(source, a, b);
  }
  return integral / grid.volume(j);
}

}  // namespace

double interaction_weight(const RadialGrid& grid, const Kernel& kernel, double r, std::size_t j, int angular_order,
                          int radial_points) {
  const GaussLegendre radial(radial_points);
  if (grid.dimension() == 1) return weight_with_rules(grid, kernel, r, j, radial, nullptr);
  const GaussLegendre angular(angular_order);
  return weight_with_rules(grid, kernel, r, j, radial, &angular);
}

namespace {

void check_targets(const RadialGrid& grid, const Kernel& kernel, std::span<const double> targets) {
  double reach = 0.0;
  for (double r : targets) {
    if (!(r > 0.0) || r > grid.r_max() * (1.0 + 1e-12)) {
      throw DomainError(fmt::format("drift target {} outside (0, {}]", r, grid.r_max()));
    }
    reach = std::max(reach, r);
  }
  reach += grid.r_max();
  if (kernel.family() == KernelFamily::Tabulated && (kernel.range_min() > 0.0 || kernel.range_max() < reach)) {
    throw DomainError(fmt::format("tabulated kernel range [{}, {}] does not cover interaction distances [0, {}]",
                                  kernel.range_min(), kernel.range_max(), reach));
  }
}

struct RowPlan {
  int order = 0;
  bool converged = true;
  double change = 0.0;
};

void fill_row(const RadialGrid& grid, const Kernel& kernel, double r, int order, int radial_points,
              std::span<double> row) {
  const GaussLegendre radial(radial_points);
  std::optional<GaussLegendre> angular;
  if (grid.dimension() > 1) angular.emplace(order);
  const GaussLegendre* angular_rule = angular ? &*angular : nullptr;
  for (std::size_t j = 0; j < row.size(); ++j) row[j] = weight_with_rules(grid, kernel, r, j, radial, angular_rule);
}

// Doubles the angular order on a handful of probe rows until the rows change
// by less than the tolerance relative to their largest entry.
RowPlan choose_order(const RadialGrid& grid, const Kernel& kernel, std::span<const double> targets,
                     const MatrixOptions& options) {
  RowPlan plan;
  if (grid.dimension() == 1 || kernel.family() == KernelFamily::Zero) return plan;

  std::vector<std::size_t> probes;
  const std::size_t n = targets.size();
  const std::size_t count = std::min<std::size_t>(n, 9);
  for (std::size_t k = 0; k < count; ++k) probes.push_back(count == 1 ? 0 : k * (n - 1) / (count - 1));

  std::vector<double> coarse(grid.size());
  std::vector<double> fine(grid.size());
  int order = std::max(1, options.initial_order);
  while (true) {
    double change = 0.0;
    for (std::size_t p : probes) {
      fill_row(grid, kernel, targets[p], order, options.radial_points, coarse);
      fill_row(grid, kernel, targets[p], 2 * order, options.radial_points, fine);
      double scale = 0.0;
      double diff = 0.0;
      for (std::size_t j = 0; j < fine.size(); ++j) {
        scale = std::max(scale, std::abs(fine[j]));
        diff = std::max(diff, std::abs(fine[j] - coarse[j]));
      }
      if (scale > 0.0) change = std::max(change, diff / scale);
    }
    plan.order = order;
    plan.change = change;
    plan.converged = change <= options.tolerance;
    if (plan.converged || 2 * order > options.max_order) break;
    order *= 2;
  }
  return plan;
}

InteractionMatrix build_impl(GridPtr grid, const Kernel& kernel, std::vector<double> targets, TargetKind kind,
                             const MatrixOptions& options, bool parallel) {
  check_targets(*grid, kernel, targets);
  const RowPlan plan = choose_order(*grid, kernel, targets, options);
  const std::size_t rows = targets.size();
  const std::size_t cols = grid->size();
  std::vector<double> weights(rows * cols, 0.0);

  if (kernel.family() != KernelFamily::Zero) {
    std::exception_ptr failure;
    const auto n_rows = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(dynamic, 4) if (parallel)
    for (std::ptrdiff_t i = 0; i < n_rows; ++i) {
      try {
        std::span<double> row(weights.data() + static_cast<std::size_t>(i) * cols, cols);
        fill_row(*grid, kernel, targets[static_cast<std::size_t>(i)], plan.order, options.radial_points, row);
      } catch (...) {
#pragma omp critical(aggdiff_build_failure)
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  }
  return InteractionMatrix(std::move(grid), std::move(targets), kind, std::move(weights), kernel.id(),
                           kernel.kprime_sup_norm(), plan.order, plan.converged, plan.change);
}

std::vector<double> center_targets(const RadialGrid& g) { return {g.centers().begin(), g.centers().end()}; }

std::vector<double> face_targets(const RadialGrid& g) {
  std::vector<double> t(g.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = g.outer_face(i);
  return t;
}

}  // namespace

InteractionMatrix build_interaction_matrix(GridPtr grid, const Kernel& kernel, const MatrixOptions& options) {
  auto targets = center_targets(*grid);
  return build_impl(std::move(grid), kernel, std::move(targets), TargetKind::CellCenters, options, true);
}

InteractionMatrix build_face_matrix(GridPtr grid, const Kernel& kernel, const MatrixOptions& options) {
  auto targets = face_targets(*grid);
  return build_impl(std::move(grid), kernel, std::move(targets), TargetKind::OuterFaces, options, true);
}

InteractionMatrix build_matrix_at(GridPtr grid, const Kernel& kernel, std::vector<double> targets,
                                  const MatrixOptions& options) {
  return build_impl(std::move(grid), kernel, std::move(targets), TargetKind::Custom, options, true);
}

InteractionMatrix build_matrix_at_serial(GridPtr grid, const Kernel& kernel, std::vector<double> targets,
                                         const MatrixOptions& options) {
  return build_impl(std::move(grid), kernel, std::move(targets), TargetKind::Custom, options, false);
}

void apply_masses(const InteractionMatrix& matrix, std::span<const double> masses, std::span<double> out) {
  const std::size_t cols = matrix.cols();
  // Trailing empty cells contribute exact zeros; skip them.
  std::size_t active = cols;
  while (active > 0 && masses[active - 1] == 0.0) --active;
  const double* w = matrix.weights().data();
  const double* m = masses.data();
  const auto rows = static_cast<std::ptrdiff_t>(matrix.rows());
#pragma omp parallel for schedule(static) if (rows * static_cast<std::ptrdiff_t>(active) > (1 << 16))
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    const double* row = w + static_cast<std::size_t>(i) * cols;
    double s = 0.0;
    for (std::size_t j = 0; j < active; ++j) s += row[j] * m[j];
    out[static_cast<std::size_t>(i)] = s;
  }
}

void apply_masses_serial(const InteractionMatrix& matrix, std::span<const double> masses, std::span<double> out) {
  const std::size_t cols = matrix.cols();
  for (std::size_t i = 0; i < matrix.rows(); ++i) {
    auto row = matrix.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += row[j] * masses[j];
    out[i] = s;
  }
}

namespace {

std::vector<double> apply_checked(const InteractionMatrix& matrix, const DensityField& field, bool parallel) {
  if (!(matrix.grid() == field.grid())) throw PreconditionError("interaction matrix and field use different grids");
  const auto& g = field.grid();
  std::vector<double> masses(g.size());
  for (std::size_t j = 0; j < masses.size(); ++j) masses[j] = field[j] * g.volume(j);
  std::vector<double> v(matrix.rows());
  if (parallel) {
    apply_masses(matrix, masses, v);
  } else {
    apply_masses_serial(matrix, masses, v);
  }
  double bound = matrix.kprime_sup_norm() * mass(field);
  double vmax = 0.0;
  for (double x : v) vmax = std::max(vmax, std::abs(x));
  if (vmax > bound * (1.0 + 1e-8) + 1e-300) {
    throw Error(fmt::format("drift bound violated: ||V||_inf = {:.17g} > ||k'||_inf M = {:.17g}", vmax, bound));
  }
  return v;
}

}  // namespace

std::vector<double> apply(const InteractionMatrix& matrix, const DensityField& field) {
  return apply_checked(matrix, field, true);
}

std::vector<double> apply_serial(const InteractionMatrix& matrix, const DensityField& field) {
  return apply_checked(matrix, field, false);
}

JumpIdentityResult jump_identity_residual(const Kernel& kernel, const DensityField& v) {
  const auto& g = v.grid();
  if (g.dimension() != 1) throw PreconditionError("the jump identity is one-dimensional");
  const std::size_t half = g.size();
  const std::size_t n = 2 * half;
  const double dr = g.dr();
  if (kernel.family() == KernelFamily::Tabulated &&
      (kernel.range_min() > 0.0 || kernel.range_max() < 2.0 * g.r_max())) {
    throw DomainError("tabulated kernel range does not cover the full-line distances");
  }

  // Full line x_k = (k - half + 1/2) dr, even extension of v.
  std::vector<double> x(n);
  std::vector<double> u(n);
  for (std::size_t k = 0; k < n; ++k) {
    x[k] = (static_cast<double>(k) - static_cast<double>(half) + 0.5) * dr;
    u[k] = k >= half ? v[k - half] : v[half - 1 - k];
  }
  const double kappa0 = kappa_zero(kernel).value;
  const double k2_origin = kernel.kdoubleprime(std::numeric_limits<double>::min());

  // Trapezoid sums: K' is odd with a jump at 0, so dropping the diagonal term
  // is the trapezoid rule on both half-lines; k''(|.|) is continuous there.
  std::vector<double> conv_k1(n);
  std::vector<double> conv_k2(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s1 = 0.0;
    double s2 = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double d = x[i] - x[j];
      if (j == i) {
        s2 += k2_origin * u[j];
        continue;
      }
      double ad = std::abs(d);
      s1 += (d > 0.0 ? kernel.kprime(ad) : -kernel.kprime(ad)) * u[j];
      s2 += kernel.kdoubleprime(ad) * u[j];
    }
    conv_k1[i] = s1 * dr;
    conv_k2[i] = s2 * dr;
  }

  double residual_plus = 0.0;
  double residual_minus = 0.0;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    double derivative = (conv_k1[i + 1] - conv_k1[i - 1]) / (2.0 * dr);
    double jump = 2.0 * kappa0 * u[i];
    residual_plus = std::max(residual_plus, std::abs(derivative - (jump + conv_k2[i])));
    residual_minus = std::max(residual_minus, std::abs(derivative - (-jump + conv_k2[i])));
  }
  JumpIdentityResult r;
  if (residual_minus < residual_plus) {
    r.sign = -1;
    r.residual = residual_minus;
    r.rejected_residual = residual_plus;
  } else {
    r.sign = 1;
    r.residual = residual_plus;
    r.rejected_residual = residual_minus;
  }
  return r;
}

namespace {

constexpr char kMagic[8] = {'A', 'G', 'G', 'D', 'I', 'F', 'F', 'W'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

}  // namespace

void save_matrix(const InteractionMatrix& matrix, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write matrix cache '{}'", path.string()));
  out.write(kMagic, sizeof kMagic);
  write_pod(out, kFormatVersion);
  write_pod(out, matrix.grid().hash());
  write_pod(out, static_cast<std::uint32_t>(matrix.target_kind()));
  write_pod(out, static_cast<std::int32_t>(matrix.quadrature_order()));
  write_pod(out, static_cast<std::uint8_t>(matrix.converged()));
  write_pod(out, matrix.convergence_change());
  write_pod(out, matrix.kprime_sup_norm());
  write_pod(out, static_cast<std::uint32_t>(matrix.kernel_id().size()));
  out.write(matrix.kernel_id().data(), static_cast<std::streamsize>(matrix.kernel_id().size()));
  write_pod(out, static_cast<std::uint64_t>(matrix.rows()));
  write_pod(out, static_cast<std::uint64_t>(matrix.cols()));
  out.write(reinterpret_cast<const char*>(matrix.targets().data()),
            static_cast<std::streamsize>(matrix.targets().size_bytes()));
  out.write(reinterpret_cast<const char*>(matrix.weights().data()),
            static_cast<std::streamsize>(matrix.weights().size_bytes()));
  if (!out) throw IoError(fmt::format("failed writing matrix cache '{}'", path.string()));
}

InteractionMatrix load_matrix(const std::filesystem::path& path, GridPtr grid, const Kernel& kernel,
                              TargetKind expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open matrix cache '{}'", path.string()));
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw IoError(fmt::format("'{}' is not an interaction matrix cache", path.string()));
  }
  if (read_pod<std::uint32_t>(in) != kFormatVersion) {
    throw IoError(fmt::format("'{}': unsupported cache version", path.string()));
  }
  auto grid_hash = read_pod<std::uint64_t>(in);
  auto kind = static_cast<TargetKind>(read_pod<std::uint32_t>(in));
  auto order = read_pod<std::int32_t>(in);
  bool converged = read_pod<std::uint8_t>(in) != 0;
  auto change = read_pod<double>(in);
  auto sup = read_pod<double>(in);
  auto id_len = read_pod<std::uint32_t>(in);
  if (!in || id_len > 4096) throw IoError(fmt::format("'{}': corrupt cache header", path.string()));
  std::string id(id_len, '\0');
  in.read(id.data(), id_len);
  auto rows = read_pod<std::uint64_t>(in);
  auto cols = read_pod<std::uint64_t>(in);
  if (!in) throw IoError(fmt::format("'{}': truncated cache header", path.string()));

  if (grid_hash != grid->hash() || id != kernel.id() || kind != expected_kind || cols != grid->size()) {
    throw IoError(fmt::format("'{}': cache key does not match the requested grid/kernel", path.string()));
  }
  std::vector<double> targets(rows);
  std::vector<double> weights(rows * cols);
  in.read(reinterpret_cast<char*>(targets.data()), static_cast<std::streamsize>(rows * sizeof(double)));
  in.read(reinterpret_cast<char*>(weights.data()), static_cast<std::streamsize>(rows * cols * sizeof(double)));
  if (!in) throw IoError(fmt::format("'{}': truncated cache payload", path.string()));
  return InteractionMatrix(std::move(grid), std::move(targets), kind, std::move(weights), std::move(id), sup, order,
                           converged, change);
}

InteractionMatrix cached_face_matrix(const std::filesystem::path& cache_dir, GridPtr grid, const Kernel& kernel,
                                     const MatrixOptions& options) {
  Fnv1a key;
  key.add(grid->hash());
  key.add(kernel.id());
  key.add(static_cast<std::uint64_t>(TargetKind::OuterFaces));
  key.add(static_cast<std::uint64_t>(options.initial_order));
  key.add(static_cast<std::uint64_t>(options.max_order));
  key.add(static_cast<std::uint64_t>(options.radial_points));
  key.add(options.tolerance);
  auto path = cache_dir / fmt::format("W_{:016x}.bin", key.value());
  if (std::filesystem::exists(path)) {
    try {
      return load_matrix(path, grid, kernel, TargetKind::OuterFaces);
    } catch (const IoError&) {
      // stale or foreign file: rebuild below
    }
  }
  auto matrix = build_face_matrix(grid, kernel, options);
  std::filesystem::create_directories(cache_dir);
  save_matrix(matrix, path);
  return matrix;
}

}  // namespace aggdiff
