#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <span>
#include <variant>
#include <vector>

namespace aggdiff {

// sigma_N = 2 pi^{N/2} / Gamma(N/2), the area of the unit sphere in R^N.
double unit_sphere_area(int dimension);
// |B_r| in R^N.
double ball_volume(int dimension, double r);

// Uniform cell-centred radial mesh on [0, r_max]. Cell i spans
// [i dr, (i+1) dr]; no node sits at the origin. In one dimension each cell
// stands for the mirrored pair of intervals, so volumes integrate over R.
class RadialGrid {
 public:
  RadialGrid(int dimension, std::size_t cells, double r_max);

  int dimension() const { return dimension_; }
  std::size_t size() const { return centers_.size(); }
  double dr() const { return dr_; }
  double r_max() const { return r_max_; }

  double center(std::size_t i) const { return centers_[i]; }
  double volume(std::size_t i) const { return volumes_[i]; }
  // Radius of the outer face of cell i.
  double outer_face(std::size_t i) const { return static_cast<double>(i + 1) * dr_; }
  // sigma_N r^{N-1} at the outer face of cell i.
  double outer_face_area(std::size_t i) const { return face_areas_[i]; }

  std::span<const double> centers() const { return centers_; }
  std::span<const double> volumes() const { return volumes_; }
  std::span<const double> outer_face_areas() const { return face_areas_; }

  // Volume of the part of cell i inside the ball B_radius.
  double volume_within(std::size_t i, double radius) const;

  std::uint64_t hash() const;
  bool operator==(const RadialGrid& other) const;

 private:
  int dimension_;
  double dr_;
  double r_max_;
  std::vector<double> centers_;
  std::vector<double> volumes_;
  std::vector<double> face_areas_;
};

using GridPtr = std::shared_ptr<const RadialGrid>;

GridPtr make_grid(int dimension, std::size_t cells, double r_max);
// Smallest grid with spacing <= dr covering [0, r_max].
GridPtr make_grid_with_spacing(int dimension, double dr, double r_max);

// Nonnegative cell averages of a radial density on a grid, at time t.
class DensityField {
 public:
  DensityField(GridPtr grid, std::vector<double> values, double time = 0.0);

  const RadialGrid& grid() const { return *grid_; }
  const GridPtr& grid_ptr() const { return grid_; }
  std::span<const double> values() const { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  std::size_t size() const { return values_.size(); }
  double time() const { return time_; }

  DensityField scaled(double factor) const;

 private:
  GridPtr grid_;
  std::vector<double> values_;
  double time_;
};

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

double mass(const DensityField& field);
// (sum u^p vol)^{1/p}; p = kInfinity gives max u. Throws DomainError for p < 1.
double lp_norm(const DensityField& field, double p);
// Homogeneous H^1 seminorm over the mirrored full line; one dimension only.
double h1_seminorm(const DensityField& field);

// Concave cutoff profile: s on [0, 1/2], 1 - (3/2 - s)^2 / 2 on [1/2, 3/2], 1 beyond.
double phi(double s);
double phi_prime(double s);

// I_Lambda = integral of phi(|x| / Lambda) u dx.
double truncated_moment(const DensityField& field, double lambda);
// D_Lambda: 2 u(0) in one dimension (u(0) extrapolated quadratically in r^2 from
// the first three cells), (N-1) * integral over B_{3 Lambda / 2} of u / |x| otherwise.
double concentration_functional(const DensityField& field, double lambda);
// integral of min(|x|, Lambda) u dx.
double mu_lambda(const DensityField& field, double lambda);
// u(0) extrapolated from the first three cells, even in r.
double extrapolate_to_origin(const DensityField& field);

struct GaussianBump {
  double mass = 1.0;
  double width = 0.2;  // standard deviation of exp(-r^2 / (2 width^2))
};

struct IndicatorAnnulus {
  double mass = 1.0;
  double r_inner = 0.0;
  double r_outer = 1.0;
};

// Radial profile (r, u(r)), linearly interpolated and zero outside its range.
struct TabulatedProfile {
  double mass = 1.0;
  std::vector<double> r;
  std::vector<double> u;

  static TabulatedProfile load(const std::filesystem::path& path, double mass);
};

using InitSpec = std::variant<GaussianBump, IndicatorAnnulus, TabulatedProfile>;

// Length scale of the initial data: the width of a Gaussian, the outer radius
// of an annulus, the end of the last segment with positive density of a profile.
double support_radius(const InitSpec& spec);

// Discretise and rescale so that mass(result) equals the requested mass.
DensityField make_initial_condition(const InitSpec& spec, GridPtr grid);

}  // namespace aggdiff
