#include <cmath>
#include <numbers>
#include <random>

#include "aggdiff/drift.hpp"
#include "aggdiff/error.hpp"
#include "aggdiff/solver.hpp"
#include "doctest.h"

using namespace aggdiff;

namespace {

double total(const DensityField& u) { return mass(u); }

// L1 distance between a coarse field and a fine one averaged onto it.
double l1_to_reference(const DensityField& coarse, const DensityField& fine) {
  const auto& gc = coarse.grid();
  const auto& gf = fine.grid();
  std::size_t ratio = gf.size() / gc.size();
  double err = 0.0;
  for (std::size_t i = 0; i < gc.size(); ++i) {
    double m = 0.0;
    for (std::size_t k = 0; k < ratio; ++k) m += fine[i * ratio + k] * gf.volume(i * ratio + k);
    err += std::abs(coarse[i] * gc.volume(i) - m);
  }
  return err;
}

DensityField solve(int dim, std::size_t n, double r_max, const Kernel& k, double eps, double t_end,
                   DiffusionMode mode) {
  auto g = make_grid(dim, n, r_max);
  auto u0 = make_initial_condition(GaussianBump{1.0, 0.25}, g);
  SolverConfig c;
  c.epsilon = eps;
  c.t_end = t_end;
  c.diffusion = mode;
  c.record_interval = t_end;
  c.store_snapshots = true;
  c.dt_max = 1e-3;
  auto rec = run(u0, k, c, 1.0);
  return rec.snapshots.back();
}

}  // namespace

TEST_CASE("configuration is validated") {
  SolverConfig c;
  c.epsilon = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.cfl = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.extra_norms = {0.5};
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("one step conserves mass up to the recorded outflow") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int dim = 1; dim <= 3; ++dim) {
    for (auto mode : {DiffusionMode::Explicit, DiffusionMode::Implicit}) {
      auto g = make_grid(dim, 50, 1.0);
      for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> vals(50);
        std::vector<double> vel(50);
        for (auto& x : vals) x = unif(rng);
        for (auto& x : vel) x = 2.0 * unif(rng) - 1.0;
        DensityField u(g, vals);
        SolverConfig c;
        c.epsilon = 0.05;
        c.diffusion = mode;
        double dt = positivity_time_step(*g, vel, c);
        StepReport rep;
        auto next = step_with_velocity(u, vel, c, dt, &rep);
        CHECK(total(next) + rep.boundary_outflow == doctest::Approx(total(u)).epsilon(1e-13));
        // Nonnegativity at the full positivity step.
        for (double x : next.values()) REQUIRE(x >= 0.0);
        CHECK(rep.boundary_outflow >= -1e-15);
      }
    }
  }
}

TEST_CASE("a step above the positivity bound is refused") {
  auto g = make_grid(1, 20, 1.0);
  DensityField u(g, std::vector<double>(20, 1.0));
  std::vector<double> vel(20, 0.5);
  SolverConfig c;
  c.diffusion = DiffusionMode::Explicit;
  double dt = positivity_time_step(*g, vel, c);
  CHECK_NOTHROW(step_with_velocity(u, vel, c, dt));
  CHECK_THROWS_AS(step_with_velocity(u, vel, c, 1.01 * dt), CflError);
  CHECK_THROWS_AS(step_with_velocity(u, vel, c, 0.0), CflError);
  CHECK_THROWS_AS(step_with_velocity(u, std::vector<double>(3, 0.0), c, dt), PreconditionError);
}

TEST_CASE("constant data stays constant in the interior without drift") {
  auto g = make_grid(2, 40, 1.0);
  DensityField u(g, std::vector<double>(40, 2.0));
  std::vector<double> vel(40, 0.0);
  SolverConfig c;
  c.diffusion = DiffusionMode::Explicit;
  auto next = step_with_velocity(u, vel, c, 0.5 * positivity_time_step(*g, vel, c));
  for (std::size_t i = 0; i + 1 < 40; ++i) CHECK(next[i] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(next[39] < 2.0);
}

TEST_CASE("the solver needs a face matrix on the same grid") {
  auto g = make_grid(1, 20, 1.0);
  auto u = make_initial_condition(GaussianBump{1.0, 0.2}, g);
  auto centres = build_interaction_matrix(g, Kernel::neg_abs());
  SolverConfig c;
  CHECK_THROWS_AS(step(u, centres, c, 1e-4), PreconditionError);
  auto other = build_face_matrix(make_grid(1, 21, 1.0), Kernel::neg_abs());
  CHECK_THROWS_AS(step(u, other, c, 1e-4), PreconditionError);
}

TEST_CASE("t_end = 0 records only the initial state") {
  auto g = make_grid(1, 20, 1.0);
  auto u0 = make_initial_condition(GaussianBump{1.0, 0.2}, g);
  SolverConfig c;
  c.t_end = 0.0;
  auto rec = run(u0, Kernel::neg_abs(), c, 1.0);
  CHECK(rec.samples() == 1);
  CHECK(rec.steps == 0);
  CHECK(rec.mass.front() == doctest::Approx(1.0));
}

TEST_CASE("heat equation matches the shifted heat kernel") {
  // Gaussian of width w is the heat kernel at time w^2 / (2 eps).
  const double eps = 0.1;
  const double w = 0.25;
  const double t = 1.0;
  auto g = make_grid(1, 2400, 6.0);
  auto u0 = make_initial_condition(GaussianBump{1.0, w}, g);
  SolverConfig c;
  c.epsilon = eps;
  c.t_end = t;
  c.diffusion = DiffusionMode::Explicit;
  c.record_interval = t;
  c.store_snapshots = true;
  auto rec = run(u0, Kernel::zero(), c, 1.0);
  const auto& u = rec.snapshots.back();
  double s2 = w * w + 2 * eps * t;
  double err = 0.0;
  for (std::size_t i = 0; i < g->size(); ++i) {
    double r = g->center(i);
    double exact = std::exp(-r * r / (2 * s2)) / std::sqrt(2 * std::numbers::pi * s2);
    err += std::abs(u[i] - exact) * g->volume(i);
  }
  CHECK(err <= 1e-3);
  CHECK(rec.max_mass_defect() < 1e-12);
}

TEST_CASE("aggregation keeps mass and stays nonnegative") {
  for (int dim = 1; dim <= 2; ++dim) {
    auto g = make_grid(dim, 200, 3.0);
    auto u0 = make_initial_condition(GaussianBump{1.0, 0.3}, g);
    SolverConfig c;
    c.epsilon = 0.05;
    c.t_end = 0.5;
    c.record_interval = 0.05;
    auto rec = run(u0, Kernel::neg_abs(), c, 1.0);
    CHECK(rec.samples() == 11);
    CHECK(rec.times.back() == 0.5);
    CHECK(rec.max_mass_defect() < 1e-12);
    for (double m : rec.mass) CHECK(m == doctest::Approx(1.0).epsilon(1e-6));
    // Attraction sharpens the profile.
    CHECK(rec.norm(kInfinity).back() > rec.norm(kInfinity).front());
    CHECK_FALSE(rec.boundary_loss_exceeded);
  }
}

TEST_CASE("first-order convergence under grid refinement") {
  const auto k = Kernel::neg_abs();
  for (auto mode : {DiffusionMode::Explicit, DiffusionMode::Implicit}) {
    // Explicit diffusion needs dt ~ dr^2, so its reference is coarser.
    std::size_t fine = mode == DiffusionMode::Explicit ? 800 : 1600;
    auto ref = solve(1, fine, 2.0, k, 0.1, 0.2, mode);
    auto a = solve(1, 100, 2.0, k, 0.1, 0.2, mode);
    auto b = solve(1, 200, 2.0, k, 0.1, 0.2, mode);
    double ea = l1_to_reference(a, ref);
    double eb = l1_to_reference(b, ref);
    MESSAGE("errors " << ea << " " << eb);
    CHECK(ea / eb >= 1.8);
  }
}
