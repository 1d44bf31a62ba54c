#include "aggdiff/radial_field.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "aggdiff/error.hpp"
#include "aggdiff/hash.hpp"

namespace aggdiff {

double unit_sphere_area(int dimension) {
  if (dimension < 1) throw DomainError(fmt::format("unsupported dimension {}", dimension));
  double n = dimension;
  return 2.0 * std::pow(std::numbers::pi, n / 2.0) / std::tgamma(n / 2.0);
}

double ball_volume(int dimension, double r) {
  return unit_sphere_area(dimension) * std::pow(r, dimension) / dimension;
}

RadialGrid::RadialGrid(int dimension, std::size_t cells, double r_max)
    : dimension_(dimension), dr_(0.0), r_max_(r_max) {
  if (dimension < 1 || dimension > 3) {
    throw DomainError(fmt::format("unsupported dimension {} (expected 1, 2 or 3)", dimension));
  }
  if (cells < 3) throw DomainError("a radial grid needs at least three cells");
  if (!(r_max > 0.0) || !std::isfinite(r_max)) throw DomainError("grid radius must be positive and finite");

  dr_ = r_max / static_cast<double>(cells);
  const double sigma = unit_sphere_area(dimension);
  centers_.resize(cells);
  volumes_.resize(cells);
  face_areas_.resize(cells);
  for (std::size_t i = 0; i < cells; ++i) {
    double inner = static_cast<double>(i) * dr_;
    double outer = static_cast<double>(i + 1) * dr_;
    centers_[i] = (static_cast<double>(i) + 0.5) * dr_;
    volumes_[i] = sigma * (std::pow(outer, dimension) - std::pow(inner, dimension)) / dimension;
    face_areas_[i] = sigma * std::pow(outer, dimension - 1);
  }
}

double RadialGrid::volume_within(std::size_t i, double radius) const {
  double inner = static_cast<double>(i) * dr_;
  double outer = static_cast<double>(i + 1) * dr_;
  if (radius <= inner) return 0.0;
  if (radius >= outer) return volumes_[i];
  return unit_sphere_area(dimension_) * (std::pow(radius, dimension_) - std::pow(inner, dimension_)) / dimension_;
}

std::uint64_t RadialGrid::hash() const {
  Fnv1a h;
  h.add(static_cast<std::uint64_t>(dimension_));
  h.add(static_cast<std::uint64_t>(size()));
  h.add(dr_);
  h.add(r_max_);
  return h.value();
}

bool RadialGrid::operator==(const RadialGrid& other) const {
  return dimension_ == other.dimension_ && size() == other.size() && dr_ == other.dr_ && r_max_ == other.r_max_;
}

GridPtr make_grid(int dimension, std::size_t cells, double r_max) {
  return std::make_shared<const RadialGrid>(dimension, cells, r_max);
}

GridPtr make_grid_with_spacing(int dimension, double dr, double r_max) {
  if (!(dr > 0.0) || !(r_max > 0.0)) throw DomainError("grid spacing and radius must be positive");
  auto cells = static_cast<std::size_t>(std::ceil(r_max / dr - 1e-9));
  cells = std::max<std::size_t>(cells, 3);
  return make_grid(dimension, cells, static_cast<double>(cells) * dr);
}

DensityField::DensityField(GridPtr grid, std::vector<double> values, double time)
    : grid_(std::move(grid)), values_(std::move(values)), time_(time) {
  if (!grid_) throw PreconditionError("density field without a grid");
  if (values_.size() != grid_->size()) {
    throw PreconditionError(fmt::format("field has {} values for a grid of {} cells", values_.size(), grid_->size()));
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!(values_[i] >= 0.0) || !std::isfinite(values_[i])) {
      throw DomainError(fmt::format("density must be finite and nonnegative; cell {} holds {}", i, values_[i]));
    }
  }
  if (!(time_ >= 0.0)) throw DomainError("field time must be nonnegative");
}

DensityField DensityField::scaled(double factor) const {
  std::vector<double> v(values_);
  for (double& x : v) x *= factor;
  return DensityField(grid_, std::move(v), time_);
}

double mass(const DensityField& field) {
  auto u = field.values();
  auto vol = field.grid().volumes();
  double m = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) m += u[i] * vol[i];
  return m;
}

double lp_norm(const DensityField& field, double p) {
  if (!(p >= 1.0)) throw DomainError(fmt::format("L^p norm requires p >= 1, got {}", p));
  auto u = field.values();
  if (p == kInfinity) return *std::max_element(u.begin(), u.end());
  if (p == 1.0) return mass(field);
  auto vol = field.grid().volumes();
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += std::pow(u[i], p) * vol[i];
  return std::pow(s, 1.0 / p);
}

double h1_seminorm(const DensityField& field) {
  const auto& g = field.grid();
  if (g.dimension() != 1) throw PreconditionError("the H^1 seminorm is only evaluated in one dimension");
  auto u = field.values();
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < u.size(); ++i) {
    double d = u[i + 1] - u[i];
    s += d * d;
  }
  // The mirrored half contributes the same differences; the pair straddling
  // the origin has equal values.
  return std::sqrt(2.0 * s / g.dr());
}

double phi(double s) {
  if (s <= 0.5) return s;
  if (s <= 1.5) {
    double d = 1.5 - s;
    return 1.0 - 0.5 * d * d;
  }
  return 1.0;
}

double phi_prime(double s) {
  if (s <= 0.5) return 1.0;
  if (s <= 1.5) return 1.5 - s;
  return 0.0;
}

double truncated_moment(const DensityField& field, double lambda) {
  if (!(lambda > 0.0)) throw DomainError("truncated moment requires Lambda > 0");
  auto u = field.values();
  const auto& g = field.grid();
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += phi(g.center(i) / lambda) * u[i] * g.volume(i);
  return s;
}

double extrapolate_to_origin(const DensityField& field) {
  // Lagrange weights at s = 0 for nodes s_k = r_k^2 = dr^2 {1/4, 9/4, 25/4}.
  constexpr double w0 = 225.0 / 192.0;
  constexpr double w1 = -25.0 / 128.0;
  constexpr double w2 = 9.0 / 384.0;
  return w0 * field[0] + w1 * field[1] + w2 * field[2];
}

double concentration_functional(const DensityField& field, double lambda) {
  if (!(lambda > 0.0)) throw DomainError("concentration functional requires Lambda > 0");
  const auto& g = field.grid();
  if (g.dimension() == 1) return 2.0 * std::max(0.0, extrapolate_to_origin(field));

  const double cutoff = 1.5 * lambda;
  auto u = field.values();
  double s = 0.0;
  for (std::size_t i = 0; i < u.size() && g.center(i) < cutoff; ++i) s += u[i] * g.volume(i) / g.center(i);
  return (g.dimension() - 1) * s;
}

double mu_lambda(const DensityField& field, double lambda) {
  if (!(lambda > 0.0)) throw DomainError("mu_Lambda requires Lambda > 0");
  auto u = field.values();
  const auto& g = field.grid();
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += std::min(g.center(i), lambda) * u[i] * g.volume(i);
  return s;
}

TabulatedProfile TabulatedProfile::load(const std::filesystem::path& path, double mass) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open profile '{}'", path.string()));
  TabulatedProfile p;
  p.mass = mass;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    double r = 0.0;
    double u = 0.0;
    if (!(fields >> r >> u)) {
      throw IoError(fmt::format("{}:{}: expected two numeric columns", path.string(), line_no));
    }
    if (!p.r.empty() && !(r > p.r.back())) {
      throw IoError(fmt::format("{}:{}: radii must be strictly increasing", path.string(), line_no));
    }
    if (r < 0.0 || u < 0.0) {
      throw IoError(fmt::format("{}:{}: radius and density must be nonnegative", path.string(), line_no));
    }
    p.r.push_back(r);
    p.u.push_back(u);
  }
  if (p.r.size() < 2) throw IoError(fmt::format("{}: a profile needs at least two samples", path.string()));
  return p;
}

namespace {

double requested_mass(const InitSpec& spec) {
  return std::visit([](const auto& s) { return s.mass; }, spec);
}

std::vector<double> raw_profile(const GaussianBump& g, const RadialGrid& grid) {
  if (!(g.width > 0.0)) throw DomainError("gaussian width must be positive");
  std::vector<double> u(grid.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    double x = grid.center(i) / g.width;
    u[i] = std::exp(-0.5 * x * x);
  }
  return u;
}

std::vector<double> raw_profile(const IndicatorAnnulus& a, const RadialGrid& grid) {
  if (!(a.r_inner >= 0.0) || !(a.r_outer > a.r_inner)) throw DomainError("annulus requires 0 <= r_inner < r_outer");
  std::vector<double> u(grid.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    double inside = grid.volume_within(i, a.r_outer) - grid.volume_within(i, a.r_inner);
    u[i] = inside / grid.volume(i);
  }
  return u;
}

std::vector<double> raw_profile(const TabulatedProfile& p, const RadialGrid& grid) {
  if (p.r.size() != p.u.size() || p.r.size() < 2) throw DomainError("tabulated profile needs matching columns");
  std::vector<double> u(grid.size(), 0.0);
  for (std::size_t i = 0; i < u.size(); ++i) {
    double r = grid.center(i);
    if (r < p.r.front() || r > p.r.back()) continue;
    auto it = std::upper_bound(p.r.begin(), p.r.end(), r);
    std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(it - p.r.begin()), p.r.size() - 1);
    k = std::max<std::size_t>(k, 1);
    double w = (r - p.r[k - 1]) / (p.r[k] - p.r[k - 1]);
    u[i] = (1.0 - w) * p.u[k - 1] + w * p.u[k];
  }
  return u;
}

}  // namespace

double support_radius(const InitSpec& spec) {
  struct Visitor {
    double operator()(const GaussianBump& g) const { return g.width; }
    double operator()(const IndicatorAnnulus& a) const { return a.r_outer; }
    double operator()(const TabulatedProfile& p) const {
      for (std::size_t i = p.u.size(); i-- > 0;) {
        if (p.u[i] > 0.0) return p.r[std::min(i + 1, p.r.size() - 1)];
      }
      return 0.0;
    }
  };
  return std::visit(Visitor{}, spec);
}

DensityField make_initial_condition(const InitSpec& spec, GridPtr grid) {
  const double target = requested_mass(spec);
  if (!(target > 0.0) || !std::isfinite(target)) {
    throw DomainError("initial data must carry positive finite mass");
  }
  auto u = std::visit([&](const auto& s) { return raw_profile(s, *grid); }, spec);
  DensityField raw(grid, std::move(u));
  double m = mass(raw);
  if (!(m > 0.0)) throw DomainError("initial profile has zero mass on this grid");
  return raw.scaled(target / m);
}

}  // namespace aggdiff
