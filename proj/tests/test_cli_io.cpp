#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "aggdiff/cli_io.hpp"
#include "aggdiff/error.hpp"
#include "doctest.h"

using namespace aggdiff;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("aggdiff_test_" + name);
  fs::remove_all(p);
  return p;
}

const char* kSmall = R"(
kernel: neg_abs
N: 1
eps: [0.1]
initial: {type: gaussian, mass: 1, width: 0.25}
Lambda: 5
solver: {record_divisor: 40}
output: {snapshot_stride: 20}
)";

}  // namespace

TEST_CASE("minimal configuration takes the defaults") {
  auto c = parse_config_text("kernel: neg_abs\nN: 1\neps: 0.1\n");
  CHECK(c.kernel == KernelFamily::NegAbs);
  CHECK(c.dimension == 1);
  CHECK(c.epsilons == std::vector<double>{0.1});
  CHECK(c.initial == InitialType::Gaussian);
  CHECK_FALSE(c.lambda.has_value());
  CHECK_FALSE(c.t_end.has_value());
  CHECK(c.diffusion == DiffusionMode::Implicit);
  CHECK(c.dr_factor == 0.125);
}

TEST_CASE("invalid configurations are rejected") {
  CHECK_THROWS_AS(parse_config_text("N: 4\neps: 0.1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("N: 0\neps: 0.1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("eps: 0.1\nfoo: 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("eps: 0.1\nsolver: {tend: 1}\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("eps: 0.1\ninitial: {type: gaussian, r_outer: 2}\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("eps: 0.1\nkernel: quadratic\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("eps: [0.1, -1]\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("eps: 0.1\nsolver: {diffusion: crank}\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("eps: 0.1\nsolver: {cfl: 2}\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("eps: [0.1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config(scratch("missing.yaml")), IoError);
}

TEST_CASE("tabulated kernels must satisfy the hypotheses") {
  auto dir = scratch("table");
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "repulsive.txt");
    out << "0 1\n1 1\n20 1\n";
  }
  {
    std::ofstream out(dir / "ok.txt");
    for (int i = 0; i <= 200; ++i) out << i * 0.1 << " " << -std::exp(-i * 0.1) << "\n";
  }
  {
    std::ofstream out(dir / "c.yaml");
    out << "kernel: tabulated\nkernel_table: repulsive.txt\nN: 1\neps: 0.1\n";
  }
  CHECK_THROWS_AS(parse_config(dir / "c.yaml"), ConfigError);
  {
    std::ofstream out(dir / "c.yaml");
    out << "kernel: tabulated\nkernel_table: ok.txt\nN: 1\neps: 0.1\n";
  }
  auto c = parse_config(dir / "c.yaml");
  CHECK(c.kernel_table == dir / "ok.txt");
  CHECK(make_kernel(c).kprime(1.0) == doctest::Approx(-std::exp(-1.0)));
  fs::remove_all(dir);
}

TEST_CASE("resolved configuration round trips") {
  const char* texts[] = {
      kSmall,
      "kernel: exponential\nN: 2\neps: [0.1, 0.05, 0.02, 0.01]\nLambda: auto\n"
      "initial: {type: annulus, mass: 2.5, r_inner: 0.1, r_outer: 0.3}\n"
      "solver: {t_end: 0.7, dt_max: 0.01, diffusion: explicit}\n"
      "analysis: {norms: [2, 3, .inf], calibration_eps: [0.1, 0.05, 0.02]}\n",
  };
  for (const char* t : texts) {
    auto c = parse_config_text(t);
    auto y = resolved_yaml(c);
    auto c2 = parse_config_text(y);
    CHECK(c2 == c);
    CHECK(resolved_yaml(c2) == y);
  }
}

TEST_CASE("numbers survive formatting bit for bit") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> unif(-30.0, 30.0);
  for (int k = 0; k < 10000; ++k) {
    double x = std::pow(10.0, unif(rng)) * (k % 2 ? -1.0 : 1.0);
    double y = parse_number(format_number(x));
    REQUIRE(std::memcmp(&x, &y, sizeof x) == 0);
  }
  CHECK(std::isinf(parse_number(format_number(kInfinity))));
  CHECK(parse_number(format_number(-kInfinity)) < 0.0);
  CHECK(std::isnan(parse_number(format_number(std::nan("")))));
  CHECK_THROWS(parse_number("1.5x"));
}

TEST_CASE("empty trajectory gives a header-only CSV") {
  auto dir = scratch("empty_csv");
  fs::create_directories(dir);
  TrajectoryRecord t;
  write_trajectory_csv(t, dir / "t.csv");
  auto text = slurp(dir / "t.csv");
  CHECK(std::count(text.begin(), text.end(), '\n') == 1);
  CHECK(text.rfind("t,mass,I_Lambda,D_Lambda,L1,L2,Linf", 0) == 0);
  auto back = read_trajectory_csv(dir / "t.csv");
  CHECK(back.samples() == 0);
  fs::remove_all(dir);
}

TEST_CASE("trajectory CSV round trip") {
  auto g = make_grid(1, 100, 3.0);
  auto u0 = make_initial_condition(GaussianBump{1.0, 0.25}, g);
  SolverConfig s;
  s.t_end = 0.2;
  s.record_interval = 0.02;
  s.extra_norms = {3.0};
  auto t = run(u0, Kernel::neg_abs(), s, 2.0);
  auto dir = scratch("csv");
  fs::create_directories(dir);
  write_trajectory_csv(t, dir / "t.csv");
  auto b = read_trajectory_csv(dir / "t.csv");
  CHECK(b.times == t.times);
  CHECK(b.mass == t.mass);
  CHECK(b.truncated_moment == t.truncated_moment);
  CHECK(b.concentration == t.concentration);
  CHECK(b.lp == t.lp);
  CHECK(b.h1 == t.h1);
  CHECK(b.boundary_flux == t.boundary_flux);
  fs::remove_all(dir);
}

TEST_CASE("constants JSON round trip") {
  auto g = make_grid(1, 400, 4.0);
  auto u = make_initial_condition(GaussianBump{1.0, 0.25}, g);
  auto c = theorem_constants(u, Kernel::neg_abs(), 5.0, 0.25);
  auto dir = scratch("json");
  fs::create_directories(dir);
  write_text_file(dir / "c.json", constants_json(c, 0.05));
  double eps = 0.0;
  auto b = read_constants_json(dir / "c.json", &eps);
  CHECK(eps == 0.05);
  CHECK(b.omega_lambda == c.omega_lambda);
  CHECK(b.L_lambda == c.L_lambda);
  CHECK(b.T_lambda == c.T_lambda);
  CHECK(b.lambda_ball == c.lambda_ball);
  CHECK(b.admissible == c.admissible);
  fs::remove_all(dir);
}

TEST_CASE("verdict text has one line per verdict") {
  std::vector<Verdict> v{{"a", true, 0.5, "fine"}, {"b", false, -1.0, "bad"}};
  auto s = verdicts_text(v);
  CHECK(std::count(s.begin(), s.end(), '\n') == 2);
  CHECK(s.find("PASS | a") != std::string::npos);
  CHECK(s.find("FAIL | b") != std::string::npos);
}

TEST_CASE("simulate is deterministic and its output re-checks") {
  auto c = parse_config_text(kSmall);
  auto r1 = simulate(c);
  auto r2 = simulate(c);
  for (const auto& v : r1.verdicts) CHECK_MESSAGE(v.pass, v.name << ": " << v.detail);
  auto a = scratch("sim_a");
  auto b = scratch("sim_b");
  emit_simulation(r1, a);
  emit_simulation(r2, b);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    auto rel = fs::relative(e.path(), a);
    CHECK_MESSAGE(slurp(e.path()) == slurp(b / rel), rel.string());
  }
  CHECK(files >= 6);
  CHECK(fs::exists(a / "snapshots" / "index.csv"));
  auto checked = check_directory(a);
  CHECK(checked.size() == r1.verdicts.size());
  for (std::size_t i = 0; i < checked.size(); ++i) {
    CHECK(checked[i].name == r1.verdicts[i].name);
    CHECK(checked[i].pass == r1.verdicts[i].pass);
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("simulate needs exactly one epsilon") {
  auto c = parse_config_text("eps: [0.1, 0.05]\n");
  CHECK_THROWS_AS(simulate(c), ConfigError);
}
