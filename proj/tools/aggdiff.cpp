// Command-line front end: simulate, sweep, check, baseline, calibrate.
// Exit status 0 iff every verdict passes; 1 on a failed verdict; 2 on errors.

#include <cstdio>
#include <filesystem>
#include <iostream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "aggdiff/analysis.hpp"
#include "aggdiff/cli_io.hpp"
#include "aggdiff/error.hpp"

namespace fs = std::filesystem;
using namespace aggdiff;

namespace {

int finish(const std::vector<Verdict>& verdicts) {
  std::cout << verdict_table(verdicts);
  bool ok = std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.pass; });
  return ok ? 0 : 1;
}

int cmd_simulate(const fs::path& config_path, const fs::path& out) {
  auto config = parse_config(config_path);
  auto result = simulate(config);
  emit_simulation(result, out);
  const auto& t = result.trajectory;
  std::cout << fmt::format("eps {:g}, Lambda {:.6g}, {} cells, {} steps, t_end {:.6g}\n", result.epsilon, result.lambda,
                           t.snapshots.empty() ? 0 : t.snapshots.front().size(), t.steps,
                           t.times.empty() ? 0.0 : t.times.back());
  return finish(result.verdicts);
}

int cmd_sweep(const fs::path& config_path, const fs::path& out, int jobs_flag) {
  auto config = parse_config(config_path);
  config.jobs = jobs_flag > 0 ? jobs_flag : worker_count(config.jobs);
  auto sweep = make_sweep_config(config);
  auto report = epsilon_sweep(sweep);
  emit_sweep(report, config, out);
  std::cout << fmt::format("Lambda {:.6g}", report.lambda);
  if (report.C1) std::cout << fmt::format(", C1 {:.6g}", *report.C1);
  std::cout << fmt::format(", C_* {:.6g}, empirical eps_* ", report.C_star);
  std::cout << (report.epsilon_star ? fmt::format("{:g}", *report.epsilon_star) : std::string("none")) << "\n";
  return finish(report.verdicts);
}

int cmd_check(const fs::path& dir) { return finish(check_directory(dir)); }

int cmd_baseline(const fs::path& config_path) {
  auto config = parse_config(config_path);
  auto report = heat_comparison(config);
  std::cout << fmt::format("{:>10} {:>10} {:>6} {:>16} {:>16} {:>12}\n", "eps", "t", "p", "solver", "heat kernel",
                           "ratio");
  for (const auto& row : report.rows) {
    for (const auto& [p, measured] : row.measured) {
      double exact = row.closed_form.at(p);
      std::cout << fmt::format("{:>10g} {:>10g} {:>6} {:>16.9g} {:>16.9g} {:>12.6f}\n", row.epsilon, row.time,
                               std::isinf(p) ? std::string("inf") : fmt::format("{:g}", p), measured, exact,
                               measured / exact);
    }
  }
  return finish(report.verdicts);
}

int cmd_calibrate(const fs::path& config_path, int jobs_flag) {
  auto config = parse_config(config_path);
  config.jobs = jobs_flag > 0 ? jobs_flag : worker_count(config.jobs);
  auto report = calibrate(config);
  std::cout << "{\n  \"epsilons\": [";
  for (std::size_t i = 0; i < report.epsilons.size(); ++i) {
    std::cout << (i ? ", " : "") << format_number(report.epsilons[i]);
  }
  std::cout << "],\n  \"C1\": " << (report.C1 ? format_number(*report.C1) : std::string("null")) << ",\n  \"Cp\": {";
  bool first = true;
  for (const auto& [p, v] : report.Cp) {
    std::cout << (first ? "" : ", ") << "\"" << (std::isinf(p) ? std::string("inf") : fmt::format("{:g}", p))
              << "\": " << format_number(v);
    first = false;
  }
  std::cout << "}\n}\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Radial aggregation-diffusion solver and inequality checks"};
  app.require_subcommand(1);

  fs::path config;
  fs::path out;
  fs::path traj;
  int jobs = 0;

  auto* simulate_cmd = app.add_subcommand("simulate", "Run one epsilon and check it");
  simulate_cmd->add_option("--config", config, "YAML configuration")->required()->check(CLI::ExistingFile);
  simulate_cmd->add_option("--out", out, "Output directory")->required();

  auto* sweep_cmd = app.add_subcommand("sweep", "Run an epsilon sweep, fit exponents, check the bounds");
  sweep_cmd->add_option("--config", config, "YAML configuration")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--out", out, "Output directory")->required();
  sweep_cmd->add_option("--jobs", jobs, "Worker threads (default: AGGDIFF_JOBS or output.jobs)")
      ->check(CLI::PositiveNumber);

  auto* check_cmd = app.add_subcommand("check", "Re-verify a simulate or sweep output directory");
  check_cmd->add_option("--traj", traj, "Output directory")->required()->check(CLI::ExistingDirectory);

  auto* baseline_cmd = app.add_subcommand("baseline", "Compare the heat equation run with the heat kernel");
  baseline_cmd->add_option("--config", config, "YAML configuration")->required()->check(CLI::ExistingFile);

  auto* calibrate_cmd = app.add_subcommand("calibrate", "Calibrate C1 and C_p from probe runs");
  calibrate_cmd->add_option("--config", config, "YAML configuration")->required()->check(CLI::ExistingFile);
  calibrate_cmd->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*simulate_cmd) return cmd_simulate(config, out);
    if (*sweep_cmd) return cmd_sweep(config, out, jobs);
    if (*check_cmd) return cmd_check(traj);
    if (*baseline_cmd) return cmd_baseline(config);
    if (*calibrate_cmd) return cmd_calibrate(config, jobs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
