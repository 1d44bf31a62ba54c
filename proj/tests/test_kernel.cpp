#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "aggdiff/error.hpp"
#include "aggdiff/kernel.hpp"
#include "doctest.h"

using namespace aggdiff;

namespace {

Kernel sampled_exponential(double s_max, int n) {
  std::vector<double> s;
  std::vector<double> kp;
  for (int i = 0; i <= n; ++i) {
    double x = s_max * i / n;
    s.push_back(x);
    kp.push_back(-std::exp(-x));
  }
  return Kernel::tabulated(s, kp);
}

}  // namespace

TEST_CASE("built-in kernels evaluate k' and k''") {
  auto a = Kernel::neg_abs();
  CHECK(a.kprime(0.3) == -1.0);
  CHECK(a.kdoubleprime(2.0) == 0.0);
  CHECK(a.kprime_sup_norm() == 1.0);
  CHECK(*a.kdoubleprime_l1() == 0.0);

  auto e = Kernel::exponential();
  CHECK(e.kprime(1.0) == doctest::Approx(-std::exp(-1.0)).epsilon(1e-15));
  CHECK(e.kdoubleprime(1.0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  CHECK(e.kprime_sup_norm() == 1.0);
  CHECK(*e.kdoubleprime_l1() == doctest::Approx(1.0));

  auto z = Kernel::zero();
  CHECK(z.kprime(4.0) == 0.0);
  CHECK(z.kprime_sup_norm() == 0.0);
}

TEST_CASE("k' is only defined for s > 0") {
  CHECK_THROWS_AS(Kernel::neg_abs().kprime(0.0), DomainError);
  CHECK_THROWS_AS(Kernel::exponential().kprime(-1.0), DomainError);
  auto t = sampled_exponential(5.0, 50);
  CHECK_THROWS_AS(t.kprime(6.0), DomainError);
}

TEST_CASE("kappa_Lambda closed forms") {
  auto a = kappa_lambda(Kernel::neg_abs(), 5.0);
  CHECK(a.value == 1.0);
  CHECK(a.hypothesis_holds);
  auto e = kappa_lambda(Kernel::exponential(), 1.0);
  CHECK(e.value == doctest::Approx(0.367879441171442).epsilon(1e-14));
  auto z = kappa_lambda(Kernel::zero(), 1.0);
  CHECK(z.value == 0.0);
  CHECK_FALSE(z.hypothesis_holds);
  CHECK_THROWS_AS(kappa_lambda(Kernel::neg_abs(), 0.0), DomainError);
}

TEST_CASE("kappa_Lambda is nonincreasing in Lambda") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> lam(1e-3, 9.9);
  auto t = sampled_exponential(10.0, 200);
  for (const Kernel& k : {Kernel::neg_abs(), Kernel::exponential(), t}) {
    for (int trial = 0; trial < 500; ++trial) {
      double a = lam(rng);
      double b = lam(rng);
      if (a > b) std::swap(a, b);
      CHECK(kappa_lambda(k, b).value <= kappa_lambda(k, a).value);
    }
  }
}

TEST_CASE("tabulated kernel reproduces its samples and the exact supremum") {
  auto t = sampled_exponential(10.0, 1000);
  CHECK(t.kprime(1.0) == doctest::Approx(-std::exp(-1.0)).epsilon(1e-12));
  // k' increasing: sup over (0, Lambda) is the value at Lambda, interpolated.
  CHECK(kappa_lambda(t, 2.0).value == doctest::Approx(std::exp(-2.0)).epsilon(1e-4));
  auto k0 = kappa_zero(t);
  CHECK(k0.converged);
  CHECK(k0.value == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(kappa_zero(Kernel::exponential()).value == 1.0);
  CHECK(kappa_zero(Kernel::neg_abs()).value == 1.0);
}

TEST_CASE("tabulated ids are stable and content addressed") {
  auto a = sampled_exponential(10.0, 100);
  auto b = sampled_exponential(10.0, 100);
  auto c = sampled_exponential(10.0, 101);
  CHECK(a.id() == b.id());
  CHECK(a.id() != c.id());
  CHECK(a.id().rfind("tabulated:", 0) == 0);
  CHECK(Kernel::neg_abs().id() == "neg_abs");
}

TEST_CASE("tabulated tables are validated") {
  CHECK_THROWS(Kernel::tabulated({0.0, 1.0, 0.5}, {-1.0, -1.0, -1.0}));
  CHECK_THROWS(Kernel::tabulated({0.0}, {-1.0}));
  CHECK_THROWS(Kernel::tabulated({0.0, 1.0}, {-1.0}));
}

TEST_CASE("load_tabulated reports the offending line") {
  auto path = std::filesystem::temp_directory_path() / "aggdiff_bad_kernel.txt";
  {
    std::ofstream out(path);
    out << "# s kprime\n0 -1\n1 oops\n";
  }
  try {
    Kernel::load_tabulated(path);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find(":3") != std::string::npos);
  }
  {
    std::ofstream out(path);
    out << "# s kprime\n0 -1\n1 -0.5\n2 -0.25\n";
  }
  auto k = Kernel::load_tabulated(path);
  CHECK(k.kprime(1.5) == doctest::Approx(-0.375));
  std::filesystem::remove(path);
}

TEST_CASE("hypothesis report") {
  auto r1 = validate_hypotheses(Kernel::neg_abs(), 1);
  CHECK(r1.all_passed());
  CHECK(r1.checks.size() == 6);
  auto r2 = validate_hypotheses(Kernel::exponential(), 2);
  CHECK(r2.all_passed());
  REQUIRE(r2.find("||k''||_1 finite") != nullptr);
  CHECK(r2.find("||k''||_1 finite")->skipped);
  auto z = validate_hypotheses(Kernel::zero(), 1);
  CHECK_FALSE(z.all_passed());
  CHECK_FALSE(z.find("kappa_0 > 0")->passed);
  CHECK_THROWS_AS(validate_hypotheses(Kernel::neg_abs(), 4), PreconditionError);
}
