#include <cmath>
#include <cstdlib>
#include <numbers>

#include "aggdiff/analysis.hpp"
#include "aggdiff/error.hpp"
#include "doctest.h"

using namespace aggdiff;

namespace {

struct Fixture {
  double lambda = 5.0;
  double eps = 0.1;
  TheoremConstants c;
  TrajectoryRecord traj;
};

// One-dimensional aggregation run up to T_Lambda, 200 samples.
const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture f;
    auto k = Kernel::neg_abs();
    auto probe = make_initial_condition(GaussianBump{1.0, 0.25}, make_grid_with_spacing(1, 0.0125, 2.5));
    auto pc = theorem_constants(probe, k, f.lambda);
    double r_max = std::max(2.5, 20 * std::sqrt(f.eps * pc.T_lambda));
    auto g = make_grid_with_spacing(1, 0.0125, r_max);
    auto u0 = make_initial_condition(GaussianBump{1.0, 0.25}, g);
    f.c = theorem_constants(u0, k, f.lambda);
    SolverConfig s;
    s.epsilon = f.eps;
    s.t_end = f.c.T_lambda;
    s.record_interval = f.c.T_lambda / 200;
    f.traj = run(u0, k, s, f.lambda);
    return f;
  }();
  return f;
}

TrajectoryRecord synthetic(int dim, double eps, double mass, std::vector<double> h1, std::vector<double> l2) {
  TrajectoryRecord r;
  r.dimension = dim;
  r.epsilon = eps;
  r.initial_mass = mass;
  r.h1 = std::move(h1);
  r.lp[2.0] = std::move(l2);
  return r;
}

}  // namespace

TEST_CASE("theorem constants follow their closed forms") {
  for (double M : {1.0, 2.5}) {
    auto g = make_grid(1, 400, 4.0);
    auto u = make_initial_condition(GaussianBump{M, 0.3}, g);
    auto c = theorem_constants(u, Kernel::neg_abs(), 8.0);
    CHECK(c.omega_lambda == doctest::Approx(6.0 * M));
    CHECK(c.mass == doctest::Approx(M));
    double I0 = truncated_moment(u, 8.0);
    double L = 0.5 * (M * M / (2 * 6 * M) - I0);
    CHECK(c.L_lambda == doctest::Approx(L).epsilon(1e-14));
    CHECK(c.T_lambda == doctest::Approx(8.0 / (6 * M) * std::log(M * M / (2 * 6 * M * L))).epsilon(1e-14));
    CHECK(c.admissibility_bound == doctest::Approx(M * 8.0 / 12.0));
    CHECK(c.admissible == (c.mu_lambda < c.admissibility_bound));
    CHECK_FALSE(c.lambda_ball.has_value());
    auto c1 = theorem_constants(u, Kernel::neg_abs(), 8.0, 0.3);
    REQUIRE(c1.lambda_ball.has_value());
    double expected = std::pow(8.0 * L / (4 * 0.3 * std::pow(M, 2.5) * c.T_lambda), 2);
    CHECK(*c1.lambda_ball == doctest::Approx(expected).epsilon(1e-13));
  }
  // The exponential kernel attracts weakly at long range; only tight data is admissible.
  auto g2 = make_grid(2, 400, 0.2);
  auto u2 = make_initial_condition(GaussianBump{1.0, 0.01}, g2);
  auto c2 = theorem_constants(u2, Kernel::exponential(), 0.5);
  REQUIRE(c2.L_lambda > 0.0);
  double kap = std::exp(-0.5);
  CHECK(c2.omega_lambda == doctest::Approx(2 * (kap + 2)));
  REQUIRE(c2.lambda_ball.has_value());
  CHECK(*c2.lambda_ball == doctest::Approx(2 * 1 * c2.T_lambda / (0.5 * c2.L_lambda)));
}

TEST_CASE("left side of the moment bound equals L at T_Lambda") {
  auto g = make_grid(2, 300, 3.0);
  for (double lam : {4.0, 6.0, 10.0}) {
    auto u = make_initial_condition(GaussianBump{1.0, 0.2}, g);
    auto c = theorem_constants(u, Kernel::neg_abs(), lam);
    REQUIRE(c.L_lambda > 0.0);
    CHECK(moment_bound_left_side(c, c.T_lambda) == doctest::Approx(c.L_lambda).epsilon(1e-12));
    CHECK(moment_bound_left_side(c, 2 * c.T_lambda) > c.L_lambda);
    CHECK(moment_bound_left_side(c, 0.0) == doctest::Approx(-c.initial_moment));
  }
}

TEST_CASE("far away mass is reported as inadmissible") {
  auto g = make_grid(1, 1200, 12.0);
  auto u = make_initial_condition(IndicatorAnnulus{1.0, 10.0, 11.0}, g);
  auto c = theorem_constants(u, Kernel::neg_abs(), 1.0);
  CHECK_FALSE(c.admissible);
  CHECK(c.L_lambda <= 0.0);
  CHECK(std::isnan(c.T_lambda));
  CHECK_THROWS_AS(theorem_constants(u, Kernel::zero(), 1.0), DomainError);
  CHECK_THROWS_AS(choose_lambda(u, Kernel::neg_abs(), 11.0 * 1e-3), DomainError);
}

TEST_CASE("choose_lambda returns the best scan point") {
  auto g = make_grid(1, 800, 4.0);
  auto u = make_initial_condition(GaussianBump{1.0, 0.25}, g);
  auto k = Kernel::neg_abs();
  double best = choose_lambda(u, k, 0.25);
  double L_best = theorem_constants(u, k, best).L_lambda;
  for (int i = 0; i <= 60; ++i) {
    double lam = 0.25 * 1e-2 * std::pow(10.0, 4.0 * i / 60.0);
    CHECK(theorem_constants(u, k, lam).L_lambda <= L_best);
  }
}

TEST_CASE("moment inequality holds on a real run and catches corruption") {
  const auto& f = fixture();
  auto ok = check_moment_inequality(f.traj, f.c, f.eps, 1e-2);
  CHECK(ok.empty());
  auto bad = f.traj;
  bad.truncated_moment[100] *= 1.1;
  auto v = check_moment_inequality(bad, f.c, f.eps, 1e-2);
  REQUIRE_FALSE(v.empty());
  CHECK(v.front().time == doctest::Approx(bad.times[99]));
  auto other = f.c;
  other.lambda = 4.0;
  CHECK_THROWS_AS(check_moment_inequality(f.traj, other, f.eps, 1e-2), PreconditionError);
  other = f.c;
  other.kappa_lambda = 0.0;
  CHECK_THROWS_AS(check_moment_inequality(f.traj, other, f.eps, 1e-2), PreconditionError);
}

TEST_CASE("weighted D integral") {
  const auto& f = fixture();
  auto r = weighted_D_integral(f.traj, f.c, f.eps);
  CHECK(r.pass);
  CHECK(r.threshold == doctest::Approx(f.lambda * f.c.L_lambda / f.eps));

  auto zero = f.traj;
  std::fill(zero.concentration.begin(), zero.concentration.end(), 0.0);
  auto z = weighted_D_integral(zero, f.c, f.eps);
  CHECK(z.integral == 0.0);
  CHECK_FALSE(z.pass);

  auto flat = f.traj;
  std::fill(flat.concentration.begin(), flat.concentration.end(), 3.0);
  double a = f.c.omega_lambda / f.lambda;
  double exact = 3.0 * (1 - std::exp(-a * f.c.T_lambda)) / a;
  CHECK(weighted_D_integral(flat, f.c, f.eps).integral == doctest::Approx(exact).epsilon(1e-3));

  auto cut = f.traj;
  cut.times.resize(100);
  cut.concentration.resize(100);
  CHECK_THROWS_AS(weighted_D_integral(cut, f.c, f.eps), PreconditionError);
}

TEST_CASE("C1 calibration takes the scaled maximum") {
  auto a = synthetic(1, 0.1, 1.0, {1.0, 2.0}, {});
  auto b = synthetic(1, 0.05, 1.0, {3.0}, {});
  auto c = synthetic(1, 0.02, 2.0, {10.0}, {});
  double expected = 1.5 * std::max({2.0 * std::pow(0.1, 1.5), 3.0 * std::pow(0.05, 1.5),
                                    10.0 * std::pow(0.02, 1.5) / std::pow(2.0, 2.5)});
  double C1 = calibrate_C1({&a, &b, &c});
  CHECK(C1 == doctest::Approx(expected).epsilon(1e-15));
  // Repeating a run changes nothing; a run below the maximum changes nothing.
  CHECK(calibrate_C1({&a, &b, &c, &a}) == C1);
  auto small = synthetic(1, 0.01, 1.0, {1e-6}, {});
  CHECK(calibrate_C1({&a, &b, &c, &small}) == C1);
  CHECK_THROWS_AS(calibrate_C1({&a, &b}), PreconditionError);
  CHECK_THROWS_AS(calibrate_C1({&a, &b, &a}), PreconditionError);
  auto two_d = synthetic(2, 0.01, 1.0, {1.0}, {});
  CHECK_THROWS_AS(calibrate_C1({&a, &b, &two_d}), PreconditionError);
  CHECK(h1_barrier(C1, 1.0, 0.01, 0.0) == doctest::Approx(C1 * 1000.0));
  CHECK(h1_barrier(C1, 1.0, 0.01, 1e9) == 1e9);
}

TEST_CASE("C_p calibration and barriers") {
  CHECK(lp_exponent(1, 2.0) == 0.5);
  CHECK(lp_exponent(2, kInfinity) == 2.0);
  CHECK(lp_exponent(3, 2.0) == 1.5);
  auto a = synthetic(2, 0.1, 1.0, {}, {5.0});
  auto b = synthetic(2, 0.05, 1.0, {}, {9.0});
  auto c = synthetic(2, 0.02, 1.0, {}, {20.0});
  // p = 2, N = 2: scale M^2 eps^-1.
  double Cp = calibrate_Cp({&a, &b, &c}, 2.0);
  CHECK(Cp == doctest::Approx(1.5 * std::max({0.5, 0.45, 0.4})));
  CHECK(lp_barrier(2, 2.0, Cp, 1.0, 0.01, 0.0) == doctest::Approx(Cp * 100.0));
  CHECK(lp_barrier(2, 2.0, Cp, 1e3, 0.01, 0.0) == doctest::Approx(Cp * 1e6 * 100.0));
  CHECK(lp_barrier(2, 2.0, 1e-9, 7.0, 0.5, 0.0) == 7.0);
  CHECK(lp_barrier(2, 2.0, 1e-9, 1.0, 0.5, 42.0) == 42.0);
  CHECK_THROWS_AS(calibrate_Cp({&a, &b, &c}, 3.0), PreconditionError);
}

TEST_CASE("heat kernel norms") {
  CHECK(heat_baseline(2, 0.3, 1.7, 1.0, 2.0) == doctest::Approx(2.0));
  double t = 1.0 / (4 * std::numbers::pi);
  CHECK(heat_baseline(1, 1.0, t, kInfinity, 3.0) == doctest::Approx(3.0));
  // p = 2 in two dimensions against radial quadrature of G^2.
  double eps = 0.2;
  double tt = 0.7;
  double a = 4 * eps * tt;
  auto G = [&](double r) { return std::exp(-r * r / a) / (std::numbers::pi * a); };
  double s = 0.0;
  const int m = 20000;
  const double R = 10.0;
  for (int i = 0; i < m; ++i) {
    double r = (i + 0.5) * R / m;
    s += G(r) * G(r) * 2 * std::numbers::pi * r * R / m;
  }
  CHECK(heat_baseline(2, eps, tt, 2.0, 1.0) == doctest::Approx(std::sqrt(s)).epsilon(1e-6));
  CHECK_THROWS_AS(heat_baseline(1, 0.0, 1.0, 2.0, 1.0), DomainError);
}

TEST_CASE("power law fit recovers exact data") {
  std::vector<double> x{0.1, 0.05, 0.02, 0.01};
  std::vector<double> y;
  for (double e : x) y.push_back(3.0 * std::pow(e, -0.7));
  auto f = fit_power_law(x, y);
  CHECK(f.slope == doctest::Approx(-0.7).epsilon(1e-12));
  CHECK(std::exp(f.intercept) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(f.r_squared == doctest::Approx(1.0));
  CHECK(f.points == 4);
  CHECK_THROWS(fit_power_law({1.0}, {1.0}));
  CHECK_THROWS(fit_power_law({1.0, 2.0}, {1.0, -1.0}));
}

TEST_CASE("concentration integral of a stationary field") {
  auto g = make_grid(2, 100, 1.0);
  DensityField u(g, std::vector<double>(100, 1.0));
  TrajectoryRecord r;
  r.dimension = 2;
  for (int k = 0; k <= 20; ++k) r.snapshots.emplace_back(g, std::vector<double>(100, 1.0), 0.1 * k);
  auto c = concentration_integral(r, 3.33, 0.1, 2.0, {2.0});
  double R = 0.333;
  CHECK(c.radius == doctest::Approx(R));
  CHECK(c.samples == 21);
  CHECK(c.mass_integral == doctest::Approx(std::numbers::pi * R * R * 2.0).epsilon(1e-12));
  CHECK(c.lp_integral.at(2.0) == doctest::Approx(std::sqrt(std::numbers::pi) * R * 2.0).epsilon(1e-12));
  CHECK_THROWS_AS(concentration_integral(r, 0.15, 0.1, 2.0), PreconditionError);
  CHECK_THROWS_AS(concentration_integral(r, 3.33, 0.1, 1.0), PreconditionError);
}

TEST_CASE("sweep preconditions and worker count") {
  SweepConfig s;
  s.epsilons = {0.1, 0.05, 0.02};
  CHECK_THROWS_AS(epsilon_sweep(s), PreconditionError);
  s.epsilons = {0.1, 0.08, 0.06, 0.05};
  CHECK_THROWS_AS(epsilon_sweep(s), PreconditionError);
  setenv("AGGDIFF_JOBS", "3", 1);
  CHECK(worker_count(1) == 3);
  setenv("AGGDIFF_JOBS", "zero", 1);
  CHECK(worker_count(2) == 2);
  unsetenv("AGGDIFF_JOBS");
  CHECK(worker_count(0) == 1);
}
