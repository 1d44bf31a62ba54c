#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "aggdiff/drift.hpp"
#include "aggdiff/error.hpp"
#include "doctest.h"

using namespace aggdiff;

namespace {

constexpr double kPi = std::numbers::pi;

double gaussian_density(int dim, double mass, double w, double s) {
  return mass * std::exp(-s * s / (2 * w * w)) / std::pow(2 * kPi * w * w, dim / 2.0);
}

// Composite Simpson on [a, b] with m (even) panels.
template <class F>
double simpson(F f, double a, double b, int m) {
  double h = (b - a) / m;
  double s = f(a) + f(b);
  for (int k = 1; k < m; ++k) s += (k % 2 ? 4.0 : 2.0) * f(a + k * h);
  return s * h / 3.0;
}

// Drift of a Gaussian at radius r by direct quadrature in polar coordinates
// centred at the target, where the kernel direction is smooth.
double drift_oracle_2d(const Kernel& k, double mass, double w, double r) {
  const int m = 256;
  auto radial = [&](double rho) {
    if (rho == 0.0) return 0.0;
    double s = 0.0;
    for (int q = 0; q < m; ++q) {
      double th = 2 * kPi * q / m;
      double d = std::sqrt(r * r + rho * rho + 2 * r * rho * std::cos(th));
      s += std::cos(th) * gaussian_density(2, mass, w, d);
    }
    return -k.kprime(rho) * rho * s * 2 * kPi / m;
  };
  return simpson(radial, 0.0, r + 10 * w, 2000);
}

double drift_oracle_3d(const Kernel& k, double mass, double w, double r) {
  auto radial = [&](double rho) {
    if (rho == 0.0) return 0.0;
    auto polar = [&](double ph) {
      double d = std::sqrt(r * r + rho * rho + 2 * r * rho * std::cos(ph));
      return std::cos(ph) * std::sin(ph) * gaussian_density(3, mass, w, d);
    };
    return -k.kprime(rho) * rho * rho * 2 * kPi * simpson(polar, 0.0, kPi, 400);
  };
  return simpson(radial, 0.0, r + 10 * w, 1000);
}

}  // namespace

TEST_CASE("one dimension, neg_abs: drift at a face is minus the enclosed mass") {
  auto g = make_grid(1, 200, 2.0);
  auto u = make_initial_condition(GaussianBump{1.0, 0.3}, g);
  auto m = build_face_matrix(g, Kernel::neg_abs());
  auto v = apply(m, u);
  double enclosed = 0.0;
  for (std::size_t i = 0; i < g->size(); ++i) {
    enclosed += u[i] * g->volume(i);
    CHECK(v[i] == doctest::Approx(-enclosed).epsilon(1e-12).scale(1.0));
  }
}

TEST_CASE("two dimensions: drift matches direct planar quadrature") {
  auto g = make_grid(2, 600, 3.0);
  const double w = 0.4;
  auto u = make_initial_condition(GaussianBump{1.0, w}, g);
  for (const Kernel& k : {Kernel::neg_abs(), Kernel::exponential()}) {
    auto m = build_interaction_matrix(g, k);
    CHECK(m.converged());
    auto v = apply(m, u);
    for (std::size_t i : {5u, 60u, 150u, 300u, 590u}) {
      double exact = drift_oracle_2d(k, 1.0, w, g->center(i));
      CHECK(std::abs(v[i] - exact) < 1e-4);
    }
  }
}

TEST_CASE("three dimensions: drift matches direct spatial quadrature") {
  auto g = make_grid(3, 300, 3.0);
  const double w = 0.4;
  auto u = make_initial_condition(GaussianBump{1.0, w}, g);
  auto k = Kernel::neg_abs();
  auto m = build_interaction_matrix(g, k);
  auto v = apply(m, u);
  for (std::size_t i : {3u, 40u, 100u, 250u}) {
    double exact = drift_oracle_3d(k, 1.0, w, g->center(i));
    CHECK(std::abs(v[i] - exact) < 2e-4);
  }
}

TEST_CASE("parallel and serial builds are bit identical") {
  auto g = make_grid(2, 80, 2.0);
  std::vector<double> targets;
  for (std::size_t i = 0; i < g->size(); ++i) targets.push_back(g->outer_face(i));
  auto k = Kernel::exponential();
  auto a = build_matrix_at(g, k, targets);
  auto b = build_matrix_at_serial(g, k, targets);
  REQUIRE(a.weights().size() == b.weights().size());
  CHECK(std::equal(a.weights().begin(), a.weights().end(), b.weights().begin()));
  auto u = make_initial_condition(GaussianBump{1.0, 0.3}, g);
  auto va = apply(a, u);
  auto vb = apply_serial(b, u);
  CHECK(va == vb);
}

TEST_CASE("drift obeys the sup bound on random data") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int dim = 1; dim <= 3; ++dim) {
    auto g = make_grid(dim, 60, 2.0);
    auto m = build_face_matrix(g, Kernel::exponential());
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> vals(60);
      for (auto& x : vals) x = unif(rng) < 0.3 ? 0.0 : unif(rng);
      DensityField u(g, vals);
      auto v = apply(m, u);
      double M = mass(u);
      for (double x : v) REQUIRE(std::abs(x) <= M * (1 + 1e-12));
    }
  }
}

TEST_CASE("matrix cache round trip") {
  auto dir = std::filesystem::temp_directory_path() / "aggdiff_cache_test";
  std::filesystem::remove_all(dir);
  auto g = make_grid(2, 40, 1.0);
  auto k = Kernel::neg_abs();
  auto a = cached_face_matrix(dir, g, k);
  auto b = cached_face_matrix(dir, g, k);
  CHECK(std::equal(a.weights().begin(), a.weights().end(), b.weights().begin()));
  auto path = dir / "m.bin";
  save_matrix(a, path);
  auto c = load_matrix(path, g, k, TargetKind::OuterFaces);
  CHECK(std::equal(a.weights().begin(), a.weights().end(), c.weights().begin()));
  auto other = make_grid(2, 41, 1.0);
  CHECK_THROWS(load_matrix(path, other, k, TargetKind::OuterFaces));
  CHECK_THROWS(load_matrix(path, g, Kernel::exponential(), TargetKind::OuterFaces));
  CHECK_THROWS(load_matrix(path, g, k, TargetKind::CellCenters));
  std::filesystem::remove_all(dir);
}

TEST_CASE("jump identity picks the minus sign and converges at second order") {
  auto k = Kernel::exponential();
  std::vector<double> residuals;
  for (std::size_t n : {100u, 200u, 400u}) {
    auto g = make_grid(1, n, 4.0);
    auto v = make_initial_condition(GaussianBump{1.0, 0.5}, g);
    auto r = jump_identity_residual(k, v);
    CHECK(r.sign == -1);
    CHECK(r.rejected_residual > 100 * r.residual);
    residuals.push_back(r.residual);
  }
  for (std::size_t i = 1; i < residuals.size(); ++i) {
    CHECK(std::log2(residuals[i - 1] / residuals[i]) >= 1.8);
  }
  auto g2 = make_grid(2, 10, 1.0);
  CHECK_THROWS_AS(jump_identity_residual(k, DensityField(g2, std::vector<double>(10, 1.0))), PreconditionError);
}
