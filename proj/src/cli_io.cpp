#include "aggdiff/cli_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "aggdiff/error.hpp"
#include "json.hpp"

namespace aggdiff {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

// --- numbers ----------------------------------------------------------------------

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return fmt::format("{:.17g}", x);
}

double parse_number(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "inf" || t == "+inf" || t == ".inf" || t == "+.inf" || t == "infinity") return kInfinity;
  if (t == "-inf" || t == "-.inf" || t == "-infinity") return -kInfinity;
  if (t == "nan" || t == ".nan") return std::numeric_limits<double>::quiet_NaN();
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (first != last && *first == '+') ++first;
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || first == last) {
    throw ConfigError(fmt::format("'{}' is not a number", text));
  }
  return value;
}

namespace {

std::string yaml_number(double x) {
  if (std::isinf(x)) return x > 0 ? ".inf" : "-.inf";
  if (std::isnan(x)) return ".nan";
  // Shortest text that reads back to the same double.
  return fmt::format("{}", x);
}

std::string yaml_string(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

std::string yaml_list(const std::vector<double>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += yaml_number(v[i]);
  }
  return out + "]";
}

// --- YAML reading -------------------------------------------------------------------

void check_keys(const YAML::Node& node, const std::set<std::string>& allowed, const std::string& where) {
  if (!node.IsMap()) throw ConfigError(fmt::format("{} must be a mapping", where));
  for (const auto& kv : node) {
    auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) throw ConfigError(fmt::format("unknown key '{}' in {}", key, where));
  }
}

std::string scalar(const YAML::Node& node, const std::string& key) {
  if (!node.IsScalar()) throw ConfigError(fmt::format("{} must be a scalar", key));
  return node.Scalar();
}

double number(const YAML::Node& node, const std::string& key) {
  try {
    return parse_number(scalar(node, key));
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("{}: {}", key, e.what()));
  }
}

long long integer(const YAML::Node& node, const std::string& key) {
  double v = number(node, key);
  if (!std::isfinite(v) || v != std::floor(v)) throw ConfigError(fmt::format("{} must be an integer", key));
  return static_cast<long long>(v);
}

std::vector<double> number_list(const YAML::Node& node, const std::string& key) {
  std::vector<double> out;
  if (node.IsScalar()) {
    out.push_back(number(node, key));
  } else if (node.IsSequence()) {
    for (const auto& item : node) out.push_back(number(item, key));
  } else if (!node.IsNull()) {
    throw ConfigError(fmt::format("{} must be a number or a list of numbers", key));
  }
  return out;
}

std::optional<double> auto_or_number(const YAML::Node& node, const std::string& key) {
  if (scalar(node, key) == "auto") return std::nullopt;
  return number(node, key);
}

fs::path resolve_path(const std::string& text, const fs::path& base) {
  if (text.empty()) return {};
  fs::path p(text);
  if (p.is_relative() && !base.empty()) p = base / p;
  return p.lexically_normal();
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

void validate(const RunConfig& c) {
  require(c.dimension >= 1 && c.dimension <= 3, fmt::format("N = {} is unsupported; use 1, 2 or 3", c.dimension));
  require(!c.epsilons.empty(), "eps must list at least one value");
  for (double e : c.epsilons) require(e > 0.0 && std::isfinite(e), "every eps must be positive");
  require(c.mass > 0.0 && std::isfinite(c.mass), "initial.mass must be positive");
  if (c.initial == InitialType::Gaussian) require(c.width > 0.0, "initial.width must be positive");
  if (c.initial == InitialType::Annulus) {
    require(c.r_inner >= 0.0 && c.r_outer > c.r_inner, "initial needs 0 <= r_inner < r_outer");
  }
  if (c.initial == InitialType::Table) require(!c.initial_table.empty(), "initial.path is required for type table");
  if (c.kernel == KernelFamily::Tabulated) {
    require(!c.kernel_table.empty(), "kernel_table is required for kernel tabulated");
  } else {
    require(c.kernel_table.empty(), "kernel_table is only valid with kernel tabulated");
  }
  if (c.lambda) require(*c.lambda > 0.0, "Lambda must be positive or auto");
  require(c.dr_factor > 0.0 && c.dr_factor <= 1.0, "grid.dr_factor must lie in (0, 1]");
  if (c.t_end) require(*c.t_end >= 0.0 && std::isfinite(*c.t_end), "solver.t_end must be nonnegative or auto");
  require(c.cfl > 0.0 && c.cfl <= 1.0, "solver.cfl must lie in (0, 1]");
  require(c.record_divisor >= 1, "solver.record_divisor must be positive");
  require(c.lambda_cap_tolerance >= 0.0, "solver.lambda_cap_tolerance must be nonnegative");
  require(c.dt_max > 0.0, "solver.dt_max must be positive");
  require(c.slack >= 0.0, "analysis.slack must be nonnegative");
  require(c.safety_factor >= 1.0, "analysis.safety_factor must be at least 1");
  for (double p : c.norms) require(p >= 1.0, "analysis.norms entries must be >= 1");
  require(c.concentration_p >= 1.0, "analysis.concentration_p must be >= 1");
  require(c.min_ball_cells >= 2.0, "analysis.min_ball_cells must be at least 2");
  require(c.slope_tolerance > 0.0, "analysis.slope_tolerance must be positive");
  require(c.jobs >= 1, "output.jobs must be positive");
}

KernelFamily kernel_from(const std::string& s) {
  if (s == "neg_abs") return KernelFamily::NegAbs;
  if (s == "exponential") return KernelFamily::Exponential;
  if (s == "zero") return KernelFamily::Zero;
  if (s == "tabulated") return KernelFamily::Tabulated;
  throw ConfigError(fmt::format("unknown kernel '{}'; expected neg_abs, exponential, zero or tabulated", s));
}

std::string kernel_name(KernelFamily f) {
  switch (f) {
    case KernelFamily::NegAbs: return "neg_abs";
    case KernelFamily::Exponential: return "exponential";
    case KernelFamily::Zero: return "zero";
    case KernelFamily::Tabulated: return "tabulated";
  }
  return "";
}

std::string initial_name(InitialType t) {
  switch (t) {
    case InitialType::Gaussian: return "gaussian";
    case InitialType::Annulus: return "annulus";
    case InitialType::Table: return "table";
  }
  return "";
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const fs::path& base_dir) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(fmt::format("malformed configuration: {}", e.what()));
  }
  check_keys(root, {"kernel", "kernel_table", "N", "eps", "initial", "Lambda", "grid", "solver", "analysis", "output"},
             "configuration");
  RunConfig c;
  if (root["kernel"]) c.kernel = kernel_from(scalar(root["kernel"], "kernel"));
  if (root["kernel_table"]) c.kernel_table = resolve_path(scalar(root["kernel_table"], "kernel_table"), base_dir);
  if (root["N"]) c.dimension = static_cast<int>(integer(root["N"], "N"));
  if (root["eps"]) c.epsilons = number_list(root["eps"], "eps");
  if (auto n = root["initial"]) {
    check_keys(n, {"type", "mass", "width", "r_inner", "r_outer", "path"}, "initial");
    std::string type = n["type"] ? scalar(n["type"], "initial.type") : "gaussian";
    if (type == "gaussian") {
      c.initial = InitialType::Gaussian;
    } else if (type == "annulus") {
      c.initial = InitialType::Annulus;
    } else if (type == "table") {
      c.initial = InitialType::Table;
    } else {
      throw ConfigError(fmt::format("unknown initial.type '{}'", type));
    }
    std::set<std::string> own = {"type", "mass"};
    if (c.initial == InitialType::Gaussian) own.insert("width");
    if (c.initial == InitialType::Annulus) own.insert({"r_inner", "r_outer"});
    if (c.initial == InitialType::Table) own.insert("path");
    check_keys(n, own, fmt::format("initial of type {}", type));
    if (n["mass"]) c.mass = number(n["mass"], "initial.mass");
    if (n["width"]) c.width = number(n["width"], "initial.width");
    if (n["r_inner"]) c.r_inner = number(n["r_inner"], "initial.r_inner");
    if (n["r_outer"]) c.r_outer = number(n["r_outer"], "initial.r_outer");
    if (n["path"]) c.initial_table = resolve_path(scalar(n["path"], "initial.path"), base_dir);
  }
  if (root["Lambda"]) c.lambda = auto_or_number(root["Lambda"], "Lambda");
  if (auto n = root["grid"]) {
    check_keys(n, {"dr_factor"}, "grid");
    if (n["dr_factor"]) c.dr_factor = number(n["dr_factor"], "grid.dr_factor");
  }
  if (auto n = root["solver"]) {
    check_keys(n, {"t_end", "cfl", "diffusion", "record_divisor", "lambda_cap_tolerance", "dt_max"}, "solver");
    if (n["t_end"]) c.t_end = auto_or_number(n["t_end"], "solver.t_end");
    if (n["cfl"]) c.cfl = number(n["cfl"], "solver.cfl");
    if (n["diffusion"]) {
      auto d = scalar(n["diffusion"], "solver.diffusion");
      if (d == "implicit") {
        c.diffusion = DiffusionMode::Implicit;
      } else if (d == "explicit") {
        c.diffusion = DiffusionMode::Explicit;
      } else {
        throw ConfigError(fmt::format("solver.diffusion must be explicit or implicit, got '{}'", d));
      }
    }
    if (n["record_divisor"]) {
      auto v = integer(n["record_divisor"], "solver.record_divisor");
      require(v >= 1, "solver.record_divisor must be positive");
      c.record_divisor = static_cast<std::size_t>(v);
    }
    if (n["lambda_cap_tolerance"]) c.lambda_cap_tolerance = number(n["lambda_cap_tolerance"], "solver.lambda_cap_tolerance");
    if (n["dt_max"]) c.dt_max = number(n["dt_max"], "solver.dt_max");
  }
  if (auto n = root["analysis"]) {
    check_keys(n,
               {"slack", "safety_factor", "norms", "concentration_p", "calibration_eps", "min_ball_cells",
                "slope_tolerance", "min_r_squared", "saturation_factor", "concentration_ratio", "heat_l1_tolerance",
                "heat_norm_tolerance"},
               "analysis");
    auto get = [&](const char* key, double& field) {
      if (n[key]) field = number(n[key], fmt::format("analysis.{}", key));
    };
    get("slack", c.slack);
    get("safety_factor", c.safety_factor);
    if (n["norms"]) c.norms = number_list(n["norms"], "analysis.norms");
    get("concentration_p", c.concentration_p);
    if (n["calibration_eps"]) c.calibration_epsilons = number_list(n["calibration_eps"], "analysis.calibration_eps");
    get("min_ball_cells", c.min_ball_cells);
    get("slope_tolerance", c.slope_tolerance);
    get("min_r_squared", c.min_r_squared);
    get("saturation_factor", c.saturation_factor);
    get("concentration_ratio", c.concentration_ratio);
    get("heat_l1_tolerance", c.heat_l1_tolerance);
    get("heat_norm_tolerance", c.heat_norm_tolerance);
  }
  if (auto n = root["output"]) {
    check_keys(n, {"snapshot_stride", "jobs", "cache_dir"}, "output");
    if (n["snapshot_stride"]) {
      auto v = integer(n["snapshot_stride"], "output.snapshot_stride");
      require(v >= 0, "output.snapshot_stride must be nonnegative");
      c.snapshot_stride = static_cast<std::size_t>(v);
    }
    if (n["jobs"]) c.jobs = static_cast<int>(integer(n["jobs"], "output.jobs"));
    if (n["cache_dir"]) c.cache_dir = resolve_path(scalar(n["cache_dir"], "output.cache_dir"), base_dir);
  }
  validate(c);
  if (c.kernel == KernelFamily::Tabulated) {
    auto report = validate_hypotheses(make_kernel(c), c.dimension);
    if (!report.all_passed()) {
      std::string failed;
      for (const auto& check : report.checks) {
        if (!check.passed && !check.skipped) failed += fmt::format(" [{}: {}]", check.name, check.detail);
      }
      throw ConfigError(fmt::format("tabulated kernel unsuitable in dimension {}:{}", c.dimension, failed));
    }
  }
  return c;
}

RunConfig parse_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("{}: cannot open configuration", path.string()));
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_config_text(buffer.str(), fs::absolute(path).parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::string resolved_yaml(const RunConfig& c) {
  std::string y;
  auto line = [&](const std::string& s) { y += s + "\n"; };
  line(fmt::format("kernel: {}", kernel_name(c.kernel)));
  if (!c.kernel_table.empty()) line(fmt::format("kernel_table: {}", yaml_string(c.kernel_table.string())));
  line(fmt::format("N: {}", c.dimension));
  line(fmt::format("eps: {}", yaml_list(c.epsilons)));
  line("initial:");
  line(fmt::format("  type: {}", initial_name(c.initial)));
  line(fmt::format("  mass: {}", yaml_number(c.mass)));
  switch (c.initial) {
    case InitialType::Gaussian: line(fmt::format("  width: {}", yaml_number(c.width))); break;
    case InitialType::Annulus:
      line(fmt::format("  r_inner: {}", yaml_number(c.r_inner)));
      line(fmt::format("  r_outer: {}", yaml_number(c.r_outer)));
      break;
    case InitialType::Table: line(fmt::format("  path: {}", yaml_string(c.initial_table.string()))); break;
  }
  line(fmt::format("Lambda: {}", c.lambda ? yaml_number(*c.lambda) : "auto"));
  line("grid:");
  line(fmt::format("  dr_factor: {}", yaml_number(c.dr_factor)));
  line("solver:");
  line(fmt::format("  t_end: {}", c.t_end ? yaml_number(*c.t_end) : "auto"));
  line(fmt::format("  cfl: {}", yaml_number(c.cfl)));
  line(fmt::format("  diffusion: {}", c.diffusion == DiffusionMode::Implicit ? "implicit" : "explicit"));
  line(fmt::format("  record_divisor: {}", c.record_divisor));
  line(fmt::format("  lambda_cap_tolerance: {}", yaml_number(c.lambda_cap_tolerance)));
  line(fmt::format("  dt_max: {}", yaml_number(c.dt_max)));
  line("analysis:");
  line(fmt::format("  slack: {}", yaml_number(c.slack)));
  line(fmt::format("  safety_factor: {}", yaml_number(c.safety_factor)));
  line(fmt::format("  norms: {}", yaml_list(c.norms)));
  line(fmt::format("  concentration_p: {}", yaml_number(c.concentration_p)));
  line(fmt::format("  calibration_eps: {}", yaml_list(c.calibration_epsilons)));
  line(fmt::format("  min_ball_cells: {}", yaml_number(c.min_ball_cells)));
  line(fmt::format("  slope_tolerance: {}", yaml_number(c.slope_tolerance)));
  line(fmt::format("  min_r_squared: {}", yaml_number(c.min_r_squared)));
  line(fmt::format("  saturation_factor: {}", yaml_number(c.saturation_factor)));
  line(fmt::format("  concentration_ratio: {}", yaml_number(c.concentration_ratio)));
  line(fmt::format("  heat_l1_tolerance: {}", yaml_number(c.heat_l1_tolerance)));
  line(fmt::format("  heat_norm_tolerance: {}", yaml_number(c.heat_norm_tolerance)));
  line("output:");
  line(fmt::format("  snapshot_stride: {}", c.snapshot_stride));
  line(fmt::format("  jobs: {}", c.jobs));
  if (!c.cache_dir.empty()) line(fmt::format("  cache_dir: {}", yaml_string(c.cache_dir.string())));
  return y;
}

Kernel make_kernel(const RunConfig& c) {
  switch (c.kernel) {
    case KernelFamily::NegAbs: return Kernel::neg_abs();
    case KernelFamily::Exponential: return Kernel::exponential();
    case KernelFamily::Zero: return Kernel::zero();
    case KernelFamily::Tabulated: return Kernel::load_tabulated(c.kernel_table);
  }
  throw ConfigError("unknown kernel family");
}

InitSpec make_init_spec(const RunConfig& c) {
  switch (c.initial) {
    case InitialType::Gaussian: return GaussianBump{c.mass, c.width};
    case InitialType::Annulus: return IndicatorAnnulus{c.mass, c.r_inner, c.r_outer};
    case InitialType::Table: return TabulatedProfile::load(c.initial_table, c.mass);
  }
  throw ConfigError("unknown initial data type");
}

namespace {

SolverConfig solver_config(const RunConfig& c) {
  SolverConfig s;
  s.cfl = c.cfl;
  s.diffusion = c.diffusion;
  s.lambda_cap_tolerance = c.lambda_cap_tolerance;
  s.dt_max = c.dt_max;
  for (double p : c.norms) {
    if (p != 1.0 && p != 2.0 && !std::isinf(p)) s.extra_norms.push_back(p);
  }
  return s;
}

InteractionMatrix face_matrix(const RunConfig& c, GridPtr grid, const Kernel& kernel) {
  return c.cache_dir.empty() ? build_face_matrix(std::move(grid), kernel)
                             : cached_face_matrix(c.cache_dir, std::move(grid), kernel);
}

std::optional<TheoremConstants> try_constants(const DensityField& u0, const Kernel& kernel, double lambda) {
  try {
    return theorem_constants(u0, kernel, lambda);
  } catch (const DomainError&) {
    return std::nullopt;
  }
}

}  // namespace

SweepConfig make_sweep_config(const RunConfig& c) {
  SweepConfig s;
  s.dimension = c.dimension;
  s.kernel = make_kernel(c);
  s.initial = make_init_spec(c);
  s.epsilons = c.epsilons;
  s.lambda = c.lambda;
  s.dr_factor = c.dr_factor;
  s.t_end = c.t_end;
  s.solver = solver_config(c);
  s.record_divisor = c.record_divisor;
  s.slack = c.slack;
  s.safety_factor = c.safety_factor;
  s.norms = c.norms;
  s.concentration_p = c.concentration_p;
  s.calibration_epsilons = c.calibration_epsilons;
  s.min_ball_cells = c.min_ball_cells;
  s.slope_tolerance = c.slope_tolerance;
  s.min_r_squared = c.min_r_squared;
  s.saturation_factor = c.saturation_factor;
  s.concentration_ratio = c.concentration_ratio;
  s.jobs = c.jobs;
  s.cache_dir = c.cache_dir;
  return s;
}

std::vector<Verdict> trajectory_verdicts(const TrajectoryRecord& traj, const TheoremConstants* constants,
                                         const RunConfig& config) {
  std::vector<Verdict> out;
  double defect = traj.max_mass_defect();
  out.push_back({"mass conservation", defect <= 1e-6, 1e-6 - defect,
                 fmt::format("max |M(t) - M(0) + flux| / M(0) = {:.3e}", defect)});
  double m0 = traj.mass.empty() ? 0.0 : traj.mass.front();
  double lost = traj.boundary_flux_cumulative();
  bool domain_ok = lost <= config.lambda_cap_tolerance * m0;
  out.push_back({"domain size", domain_ok, config.lambda_cap_tolerance * m0 - lost,
                 fmt::format("mass through r_max {:.3e}", lost)});
  if (constants == nullptr) return out;

  const double scale = 0.5 * constants->kappa_lambda * constants->mass * constants->mass;
  auto all = check_moment_inequality(traj, *constants, traj.epsilon, -kInfinity);
  double worst = -kInfinity;
  std::size_t count = 0;
  for (const auto& v : all) {
    worst = std::max(worst, v.excess / scale);
    if (v.excess > config.slack * scale) ++count;
  }
  out.push_back({"moment inequality", count == 0, config.slack - worst,
                 fmt::format("{} violations, worst excess {:.3e} of kappa M^2/2", count, worst)});

  if (constants->L_lambda > 0.0 && !traj.times.empty() &&
      traj.times.back() >= constants->T_lambda * (1.0 - 1e-12)) {
    auto w = weighted_D_integral(traj, *constants, traj.epsilon);
    out.push_back({"weighted D bound", w.pass, w.ratio - 1.0,
                   fmt::format("integral {:.6g} vs Lambda L / eps = {:.6g}, ratio {:.4f}", w.integral, w.threshold,
                               w.ratio)});
  }
  return out;
}

SimulationResult simulate(const RunConfig& config) {
  if (config.epsilons.size() != 1) throw ConfigError("simulate needs exactly one value in eps");
  SimulationResult result;
  result.config = config;
  const double eps = config.epsilons.front();
  result.epsilon = eps;
  const int dim = config.dimension;
  const auto kernel = make_kernel(config);
  const auto init = make_init_spec(config);
  const double rs = support_radius(init);

  auto provisional = make_grid_with_spacing(dim, config.dr_factor * eps, 10.0 * rs);
  auto u_provisional = make_initial_condition(init, provisional);
  if (config.lambda) {
    result.lambda = *config.lambda;
  } else if (kernel.family() == KernelFamily::Zero) {
    result.lambda = rs;
  } else {
    result.lambda = choose_lambda(u_provisional, kernel, rs);
  }

  double t_end = 0.0;
  if (config.t_end) {
    t_end = *config.t_end;
  } else {
    auto c = try_constants(u_provisional, kernel, result.lambda);
    if (!c || !(c->L_lambda > 0.0)) throw ConfigError("solver.t_end: auto needs data with L_Lambda > 0");
    t_end = c->T_lambda;
  }

  auto grid = make_grid_with_spacing(dim, config.dr_factor * eps, std::max(10.0 * rs, 20.0 * std::sqrt(eps * t_end)));
  auto u0 = make_initial_condition(init, grid);
  result.constants = try_constants(u0, kernel, result.lambda);
  if (!config.t_end) t_end = result.constants->T_lambda;

  SolverConfig sc = solver_config(config);
  sc.epsilon = eps;
  sc.t_end = t_end;
  sc.record_interval = t_end > 0.0 ? t_end / static_cast<double>(config.record_divisor) : 1.0;
  sc.store_snapshots = config.snapshot_stride > 0;
  result.trajectory = run(u0, face_matrix(config, grid, kernel), sc, result.lambda);
  result.verdicts =
      trajectory_verdicts(result.trajectory, result.constants ? &*result.constants : nullptr, config);
  return result;
}

BaselineReport heat_comparison(const RunConfig& config) {
  BaselineReport report;
  const int dim = config.dimension;
  const auto init = make_init_spec(config);
  const double rs = support_radius(init);
  const bool gaussian = config.initial == InitialType::Gaussian;
  const double t = config.t_end.value_or(1.0);
  if (!(t > 0.0)) throw ConfigError("baseline needs solver.t_end > 0");
  const auto kernel = Kernel::zero();

  for (double eps : config.epsilons) {
    BaselineRow row;
    row.epsilon = eps;
    row.time = t;
    row.shift = gaussian ? config.width * config.width / (2.0 * eps) : 0.0;
    const double s = t + row.shift;
    auto grid = make_grid_with_spacing(dim, config.dr_factor * eps, std::max(10.0 * rs, 20.0 * std::sqrt(eps * s)));
    auto u0 = make_initial_condition(init, grid);
    SolverConfig sc = solver_config(config);
    sc.epsilon = eps;
    sc.t_end = t;
    sc.record_interval = t / static_cast<double>(config.record_divisor);
    sc.store_snapshots = gaussian;
    auto traj = run(u0, face_matrix(config, grid, kernel), sc, config.lambda.value_or(rs));
    const double m = traj.initial_mass;

    std::vector<double> ps = {1.0};
    for (double p : config.norms) {
      if (p != 1.0) ps.push_back(p);
    }
    for (double p : ps) {
      row.measured[p] = traj.norm(p).back();
      row.closed_form[p] = heat_baseline(dim, eps, s, p, m);
    }
    if (gaussian) {
      // Final profile against the exact heat kernel sampled at cell centres.
      const auto& u = traj.snapshots.back();
      const double peak = m * std::pow(4.0 * std::numbers::pi * eps * s, -dim / 2.0);
      double err = 0.0;
      for (std::size_t i = 0; i < grid->size(); ++i) {
        double r = grid->center(i);
        err += std::abs(u[i] - peak * std::exp(-r * r / (4.0 * eps * s))) * grid->volume(i);
      }
      row.l1_error = err / m;
      report.verdicts.push_back({fmt::format("heat L1 eps={:g}", eps), err / m <= config.heat_l1_tolerance,
                                 config.heat_l1_tolerance - err / m,
                                 fmt::format("relative L1 error {:.3e} at t = {:g}", err / m, t)});
      for (double p : ps) {
        if (p == 1.0) continue;
        double rel = std::abs(row.measured[p] - row.closed_form[p]) / row.closed_form[p];
        report.verdicts.push_back({fmt::format("heat L{} eps={:g}", std::isinf(p) ? "inf" : fmt::format("{:g}", p), eps),
                                   rel <= config.heat_norm_tolerance, config.heat_norm_tolerance - rel,
                                   fmt::format("measured {:.8g}, closed form {:.8g}, relative {:.3e}",
                                               row.measured[p], row.closed_form[p], rel)});
      }
    }
    report.rows.push_back(row);
  }
  return report;
}

CalibrationReport calibrate(const RunConfig& config) {
  auto sweep = make_sweep_config(config);
  if (sweep.kernel.family() == KernelFamily::Zero) throw ConfigError("calibration needs an attracting kernel");
  auto eps = config.epsilons;
  std::sort(eps.begin(), eps.end(), std::greater<>());
  const double lambda = sweep_lambda(sweep);
  std::vector<RowRun> runs(eps.size());
  std::vector<std::string> errors(eps.size());
  const int jobs = std::max(1, sweep.jobs);
#pragma omp parallel for num_threads(jobs) schedule(dynamic, 1)
  for (std::size_t k = 0; k < eps.size(); ++k) {
    try {
      runs[k] = run_sweep_row(sweep, eps[k], lambda);
    } catch (const std::exception& e) {
      errors[k] = e.what();
    }
  }
  for (std::size_t k = 0; k < eps.size(); ++k) {
    if (!errors[k].empty()) throw Error(fmt::format("probe run eps={:g} failed: {}", eps[k], errors[k]));
  }
  std::vector<const TrajectoryRecord*> probes;
  for (const auto& r : runs) probes.push_back(&r.trajectory);
  CalibrationReport report;
  report.epsilons = eps;
  if (config.dimension == 1) report.C1 = calibrate_C1(probes, config.safety_factor);
  for (double p : config.norms) report.Cp[p] = calibrate_Cp(probes, p, config.safety_factor);
  return report;
}

// --- files ---------------------------------------------------------------------------

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError(fmt::format("{}: {}", path.parent_path().string(), ec.message()));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("{}: cannot open for writing", path.string()));
  out << text;
  out.close();
  if (!out) throw IoError(fmt::format("{}: write failed", path.string()));
}

namespace {

std::string norm_column(double p) {
  if (std::isinf(p)) return "Linf";
  return fmt::format("L{:g}", p);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("{}: cannot open", path.string()));
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

void write_trajectory_csv(const TrajectoryRecord& traj, const fs::path& path) {
  std::vector<double> extra;
  for (const auto& [p, series] : traj.lp) {
    if (p != 1.0 && p != 2.0 && !std::isinf(p)) extra.push_back(p);
  }
  const bool h1 = traj.dimension == 1 && (traj.samples() == 0 || !traj.h1.empty());
  std::string s = "t,mass,I_Lambda,D_Lambda,L1,L2,Linf";
  for (double p : extra) s += "," + norm_column(p);
  if (h1) s += ",H1";
  s += ",boundary_flux\n";
  auto col = [&](double p, std::size_t k) {
    auto it = traj.lp.find(p);
    return it == traj.lp.end() ? std::string("nan") : format_number(it->second[k]);
  };
  for (std::size_t k = 0; k < traj.samples(); ++k) {
    s += format_number(traj.times[k]);
    s += "," + format_number(traj.mass[k]);
    s += "," + format_number(traj.truncated_moment[k]);
    s += "," + format_number(traj.concentration[k]);
    s += "," + col(1.0, k) + "," + col(2.0, k) + "," + col(kInfinity, k);
    for (double p : extra) s += "," + col(p, k);
    if (h1) s += "," + format_number(traj.h1[k]);
    s += "," + format_number(traj.boundary_flux[k]) + "\n";
  }
  write_text_file(path, s);
}

TrajectoryRecord read_trajectory_csv(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw IoError(fmt::format("{}: empty file", path.string()));
  auto header = split(line, ',');
  TrajectoryRecord traj;
  traj.dimension = 0;
  std::vector<std::vector<double>*> targets;
  for (const auto& name : header) {
    if (name == "t") {
      targets.push_back(&traj.times);
    } else if (name == "mass") {
      targets.push_back(&traj.mass);
    } else if (name == "I_Lambda") {
      targets.push_back(&traj.truncated_moment);
    } else if (name == "D_Lambda") {
      targets.push_back(&traj.concentration);
    } else if (name == "H1") {
      traj.dimension = 1;
      targets.push_back(&traj.h1);
    } else if (name == "boundary_flux") {
      targets.push_back(&traj.boundary_flux);
    } else if (name.size() > 1 && name[0] == 'L') {
      double p = name == "Linf" ? kInfinity : parse_number(name.substr(1));
      targets.push_back(&traj.lp[p]);
    } else {
      throw IoError(fmt::format("{}: unknown column '{}'", path.string(), name));
    }
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = split(line, ',');
    if (cells.size() != targets.size()) {
      throw IoError(fmt::format("{}:{}: expected {} fields, got {}", path.string(), line_no, targets.size(),
                                cells.size()));
    }
    for (std::size_t j = 0; j < cells.size(); ++j) {
      try {
        targets[j]->push_back(parse_number(cells[j]));
      } catch (const ConfigError& e) {
        throw IoError(fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
      }
    }
  }
  if (!traj.mass.empty()) traj.initial_mass = traj.mass.front();
  return traj;
}

namespace {

Json number_or_null(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

Json optional_number(const std::optional<double>& x) { return x ? number_or_null(*x) : Json(nullptr); }

std::string norm_key(double p) { return std::isinf(p) ? "inf" : fmt::format("{:g}", p); }

Json norm_map(const std::map<double, double>& m) {
  Json j = Json::object();
  for (const auto& [p, v] : m) j[norm_key(p)] = number_or_null(v);
  return j;
}

Json constants_object(const TheoremConstants& c) {
  Json j;
  j["dimension"] = c.dimension;
  j["mass"] = c.mass;
  j["Lambda"] = c.lambda;
  j["mu_Lambda"] = c.mu_lambda;
  j["admissibility_bound"] = c.admissibility_bound;
  j["admissible"] = c.admissible;
  j["kappa_Lambda"] = c.kappa_lambda;
  j["kprime_sup_norm"] = c.kprime_sup_norm;
  j["omega_Lambda"] = c.omega_lambda;
  j["I_Lambda_0"] = c.initial_moment;
  j["L_Lambda"] = c.L_lambda;
  j["T_Lambda"] = number_or_null(c.T_lambda);
  j["lambda_ball"] = optional_number(c.lambda_ball);
  j["C1_empirical"] = optional_number(c.C1_empirical);
  return j;
}

Json fit_object(const PowerFit& f) {
  Json j;
  j["slope"] = f.slope;
  j["intercept"] = f.intercept;
  j["r_squared"] = f.r_squared;
  j["points"] = f.points;
  return j;
}

double json_number(const Json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

}  // namespace

std::string constants_json(const TheoremConstants& c, double epsilon) {
  Json j;
  j["epsilon"] = epsilon;
  j["constants"] = constants_object(c);
  return j.dump(2) + "\n";
}

TheoremConstants read_constants_json(const fs::path& path, double* epsilon) {
  Json j;
  try {
    j = Json::parse(read_file(path));
    const auto& o = j.at("constants");
    TheoremConstants c;
    c.dimension = o.at("dimension").get<int>();
    c.mass = o.at("mass").get<double>();
    c.lambda = o.at("Lambda").get<double>();
    c.mu_lambda = o.at("mu_Lambda").get<double>();
    c.admissibility_bound = o.at("admissibility_bound").get<double>();
    c.admissible = o.at("admissible").get<bool>();
    c.kappa_lambda = o.at("kappa_Lambda").get<double>();
    c.kprime_sup_norm = o.at("kprime_sup_norm").get<double>();
    c.omega_lambda = o.at("omega_Lambda").get<double>();
    c.initial_moment = o.at("I_Lambda_0").get<double>();
    c.L_lambda = o.at("L_Lambda").get<double>();
    c.T_lambda = json_number(o.at("T_Lambda"));
    if (!o.at("lambda_ball").is_null()) c.lambda_ball = o.at("lambda_ball").get<double>();
    if (!o.at("C1_empirical").is_null()) c.C1_empirical = o.at("C1_empirical").get<double>();
    if (epsilon) *epsilon = j.at("epsilon").get<double>();
    return c;
  } catch (const Json::exception& e) {
    throw IoError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::string sweep_json(const SweepReport& r) {
  Json j;
  j["schema"] = "aggdiff.sweep/1";
  j["dimension"] = r.dimension;
  j["kernel"] = r.kernel_id;
  j["Lambda"] = r.lambda;
  j["C1"] = optional_number(r.C1);
  j["Cp"] = norm_map(r.Cp);
  j["C_star"] = r.C_star;
  j["epsilon_star"] = optional_number(r.epsilon_star);
  Json fits = Json::object();
  for (const auto& [p, f] : r.fitted_exponents) fits[norm_key(p)] = fit_object(f);
  j["fitted_exponents"] = fits;
  j["concentration_fit"] = r.concentration_fit ? fit_object(*r.concentration_fit) : Json(nullptr);
  Json rows = Json::array();
  for (const auto& row : r.rows) {
    Json o;
    o["epsilon"] = row.epsilon;
    o["dr"] = row.dr;
    o["cells"] = row.cells;
    o["r_max"] = row.r_max;
    o["ok"] = row.ok;
    o["error"] = row.error;
    o["calibration"] = row.calibration;
    o["steps"] = row.steps;
    o["mass_defect"] = row.mass_defect;
    o["boundary_flux"] = row.boundary_flux;
    o["boundary_loss_exceeded"] = row.boundary_loss_exceeded;
    o["sup_norms"] = norm_map(row.sup_norms);
    o["initial_norms"] = norm_map(row.initial_norms);
    o["sup_h1"] = optional_number(row.sup_h1);
    o["initial_h1"] = row.initial_h1;
    o["constants"] = constants_object(row.constants);
    o["ball_parameter"] = row.ball_parameter;
    o["ball_parameter_theory"] = optional_number(row.ball_parameter_theory);
    Json conc;
    conc["radius"] = row.concentration.radius;
    conc["mass_integral"] = row.concentration.mass_integral;
    conc["lp_integral"] = norm_map(row.concentration.lp_integral);
    conc["samples"] = row.concentration.samples;
    o["concentration"] = conc;
    Json wd;
    wd["integral"] = row.weighted_D.integral;
    wd["threshold"] = row.weighted_D.threshold;
    wd["ratio"] = row.weighted_D.ratio;
    wd["pass"] = row.weighted_D.pass;
    o["weighted_D"] = wd;
    o["dI_violations"] = row.dI_violations;
    o["dI_worst_excess"] = number_or_null(row.dI_worst_excess);
    rows.push_back(o);
  }
  j["rows"] = rows;
  Json verdicts = Json::array();
  for (const auto& v : r.verdicts) {
    Json o;
    o["name"] = v.name;
    o["pass"] = v.pass;
    o["margin"] = number_or_null(v.margin);
    o["detail"] = v.detail;
    verdicts.push_back(o);
  }
  j["verdicts"] = verdicts;
  return j.dump(2) + "\n";
}

std::string sweep_csv(const SweepReport& r) {
  std::set<double> norms;
  std::set<double> conc;
  for (const auto& row : r.rows) {
    for (const auto& [p, v] : row.sup_norms) norms.insert(p);
    for (const auto& [p, v] : row.concentration.lp_integral) conc.insert(p);
  }
  std::string s = "epsilon,dr,cells,ok,steps,mass_defect,boundary_flux";
  for (double p : norms) s += ",sup_" + norm_column(p);
  s += ",sup_H1,I_Lambda_0,L_Lambda,T_Lambda,ball_parameter,ball_mass_integral";
  for (double p : conc) s += ",ball_" + norm_column(p) + "_integral";
  s += ",weighted_D,weighted_D_ratio,dI_violations,dI_worst_excess\n";
  for (const auto& row : r.rows) {
    s += format_number(row.epsilon) + "," + format_number(row.dr) + "," + std::to_string(row.cells) + "," +
         (row.ok ? "1" : "0") + "," + std::to_string(row.steps) + "," + format_number(row.mass_defect) + "," +
         format_number(row.boundary_flux);
    for (double p : norms) {
      auto it = row.sup_norms.find(p);
      s += "," + format_number(it == row.sup_norms.end() ? std::nan("") : it->second);
    }
    s += "," + format_number(row.sup_h1.value_or(std::nan("")));
    s += "," + format_number(row.constants.initial_moment) + "," + format_number(row.constants.L_lambda) + "," +
         format_number(row.constants.T_lambda) + "," + format_number(row.ball_parameter) + "," +
         format_number(row.concentration.mass_integral);
    for (double p : conc) {
      auto it = row.concentration.lp_integral.find(p);
      s += "," + format_number(it == row.concentration.lp_integral.end() ? std::nan("") : it->second);
    }
    s += "," + format_number(row.weighted_D.integral) + "," + format_number(row.weighted_D.ratio) + "," +
         std::to_string(row.dI_violations) + "," + format_number(row.dI_worst_excess) + "\n";
  }
  return s;
}

std::string verdicts_text(const std::vector<Verdict>& verdicts) {
  std::string s;
  for (const auto& v : verdicts) {
    s += fmt::format("{} | {} | margin {} | {}\n", v.pass ? "PASS" : "FAIL", v.name, format_number(v.margin),
                     v.detail);
  }
  return s;
}

std::string verdict_table(const std::vector<Verdict>& verdicts) {
  std::size_t width = 7;
  for (const auto& v : verdicts) width = std::max(width, v.name.size());
  std::string s = fmt::format("{:<6} {:<{}} {:>12}  {}\n", "result", "verdict", width, "margin", "detail");
  for (const auto& v : verdicts) {
    s += fmt::format("{:<6} {:<{}} {:>12.4g}  {}\n", v.pass ? "PASS" : "FAIL", v.name, width, v.margin, v.detail);
  }
  return s;
}

namespace {

void write_snapshots(const TrajectoryRecord& traj, std::size_t stride, const fs::path& dir) {
  if (stride == 0 || traj.snapshots.empty()) return;
  std::string index = "index,t,file\n";
  const std::size_t n = traj.snapshots.size();
  for (std::size_t k = 0; k < n; ++k) {
    if (k % stride != 0 && k + 1 != n) continue;
    const auto& u = traj.snapshots[k];
    std::string name = fmt::format("snapshot_{:05d}.csv", k);
    std::string s = "r,u\n";
    for (std::size_t i = 0; i < u.size(); ++i) {
      s += format_number(u.grid().center(i)) + "," + format_number(u[i]) + "\n";
    }
    write_text_file(dir / name, s);
    index += fmt::format("{},{},{}\n", k, format_number(u.time()), name);
  }
  write_text_file(dir / "index.csv", index);
}

}  // namespace

void emit_simulation(const SimulationResult& result, const fs::path& dir) {
  write_text_file(dir / "config.resolved", resolved_yaml(result.config));
  write_trajectory_csv(result.trajectory, dir / "trajectory.csv");
  write_snapshots(result.trajectory, result.config.snapshot_stride, dir / "snapshots");
  if (result.constants) write_text_file(dir / "constants.json", constants_json(*result.constants, result.epsilon));
  write_text_file(dir / "verdicts.txt", verdicts_text(result.verdicts));
}

void emit_sweep(const SweepReport& report, const RunConfig& config, const fs::path& dir) {
  write_text_file(dir / "config.resolved", resolved_yaml(config));
  write_text_file(dir / "sweep.json", sweep_json(report));
  write_text_file(dir / "sweep.csv", sweep_csv(report));
  write_text_file(dir / "verdicts.txt", verdicts_text(report.verdicts));
  for (std::size_t k = 0; k < report.rows.size(); ++k) {
    const auto& row = report.rows[k];
    if (!row.ok) continue;
    auto run_dir = dir / "runs" / fmt::format("eps_{}", k);
    write_text_file(run_dir / "constants.json", constants_json(row.constants, row.epsilon));
    if (k < report.trajectories.size()) {
      write_trajectory_csv(report.trajectories[k], run_dir / "trajectory.csv");
      write_snapshots(report.trajectories[k], config.snapshot_stride, run_dir / "snapshots");
    }
  }
}

namespace {

std::vector<Verdict> check_run(const fs::path& run_dir, const RunConfig& config, const std::string& prefix) {
  auto traj = read_trajectory_csv(run_dir / "trajectory.csv");
  std::optional<TheoremConstants> c;
  double eps = config.epsilons.empty() ? 0.0 : config.epsilons.front();
  if (fs::exists(run_dir / "constants.json")) c = read_constants_json(run_dir / "constants.json", &eps);
  traj.epsilon = eps;
  traj.dimension = config.dimension;
  if (c) traj.lambda = c->lambda;
  auto verdicts = trajectory_verdicts(traj, c ? &*c : nullptr, config);
  for (auto& v : verdicts) v.name = prefix + v.name;
  return verdicts;
}

}  // namespace

std::vector<Verdict> check_directory(const fs::path& dir) {
  auto config = parse_config(dir / "config.resolved");
  if (!fs::exists(dir / "sweep.json")) return check_run(dir, config, "");
  std::vector<fs::path> runs;
  if (fs::exists(dir / "runs")) {
    for (const auto& entry : fs::directory_iterator(dir / "runs")) {
      if (entry.is_directory() && fs::exists(entry.path() / "trajectory.csv")) runs.push_back(entry.path());
    }
  }
  if (runs.empty()) throw IoError(fmt::format("{}: sweep directory without stored runs", dir.string()));
  std::sort(runs.begin(), runs.end());
  std::vector<Verdict> all;
  for (const auto& r : runs) {
    double eps = 0.0;
    read_constants_json(r / "constants.json", &eps);
    for (auto& v : check_run(r, config, fmt::format("eps={:g}: ", eps))) all.push_back(std::move(v));
  }
  return all;
}

}  // namespace aggdiff
