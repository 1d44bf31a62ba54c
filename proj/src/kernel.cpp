#include "aggdiff/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>

#include "aggdiff/error.hpp"
#include "aggdiff/hash.hpp"

namespace aggdiff {

std::string to_string(KernelFamily family) {
  switch (family) {
    case KernelFamily::NegAbs: return "neg_abs";
    case KernelFamily::Exponential: return "exponential";
    case KernelFamily::Zero: return "zero";
    case KernelFamily::Tabulated: return "tabulated";
  }
  return "unknown";
}

Kernel::Kernel(KernelFamily family, std::string id, std::shared_ptr<const Table> table)
    : family_(family), id_(std::move(id)), table_(std::move(table)) {}

Kernel Kernel::neg_abs() { return Kernel(KernelFamily::NegAbs, "neg_abs"); }
Kernel Kernel::exponential() { return Kernel(KernelFamily::Exponential, "exponential"); }
Kernel Kernel::zero() { return Kernel(KernelFamily::Zero, "zero"); }

Kernel Kernel::tabulated(std::vector<double> s, std::vector<double> kprime) {
  if (s.size() != kprime.size()) {
    throw DomainError("tabulated kernel: abscissa and value counts differ");
  }
  if (s.size() < 2) {
    throw DomainError("tabulated kernel: at least two samples are required");
  }
  if (!(s.front() >= 0.0)) {
    throw DomainError("tabulated kernel: sample abscissae must be nonnegative");
  }
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!std::isfinite(s[i]) || !std::isfinite(kprime[i])) {
      throw DomainError("tabulated kernel: non-finite sample");
    }
    if (i > 0 && !(s[i] > s[i - 1])) {
      throw DomainError(fmt::format("tabulated kernel: abscissae not strictly increasing at index {}", i));
    }
  }
  Fnv1a hash;
  hash.add_doubles(s);
  hash.add_doubles(kprime);
  auto table = std::make_shared<Table>(Table{std::move(s), std::move(kprime)});
  return Kernel(KernelFamily::Tabulated, fmt::format("tabulated:{:016x}", hash.value()), std::move(table));
}

Kernel Kernel::load_tabulated(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError(fmt::format("cannot open kernel table '{}'", path.string()));
  }
  std::vector<double> s;
  std::vector<double> kp;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    double a = 0.0;
    double b = 0.0;
    if (!(fields >> a >> b)) {
      throw IoError(fmt::format("{}:{}: expected two numeric columns", path.string(), line_no));
    }
    s.push_back(a);
    kp.push_back(b);
  }
  try {
    return tabulated(std::move(s), std::move(kp));
  } catch (const DomainError& e) {
    throw IoError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

double Kernel::range_min() const {
  return family_ == KernelFamily::Tabulated ? table_->s.front() : 0.0;
}

double Kernel::range_max() const {
  return family_ == KernelFamily::Tabulated ? table_->s.back()
                                            : std::numeric_limits<double>::infinity();
}

namespace {

// Index of the segment [s[k], s[k+1]] containing x; x must lie in the table range.
std::size_t segment_of(const std::vector<double>& s, double x) {
  auto it = std::upper_bound(s.begin(), s.end(), x);
  auto k = static_cast<std::size_t>(it - s.begin());
  if (k == 0) return 0;
  return std::min(k - 1, s.size() - 2);
}

}  // namespace

double Kernel::kprime(double s) const {
  if (!(s > 0.0)) {
    throw DomainError(fmt::format("k'(s) requires s > 0, got {}", s));
  }
  switch (family_) {
    case KernelFamily::NegAbs: return -1.0;
    case KernelFamily::Exponential: return -std::exp(-s);
    case KernelFamily::Zero: return 0.0;
    case KernelFamily::Tabulated: {
      const auto& t = *table_;
      if (s < t.s.front() || s > t.s.back()) {
        throw DomainError(fmt::format("k'({}) outside tabulated range [{}, {}]", s, t.s.front(), t.s.back()));
      }
      auto k = segment_of(t.s, s);
      double w = (s - t.s[k]) / (t.s[k + 1] - t.s[k]);
      return (1.0 - w) * t.kprime[k] + w * t.kprime[k + 1];
    }
  }
  return 0.0;
}

double Kernel::kdoubleprime(double s) const {
  if (!(s > 0.0)) {
    throw DomainError(fmt::format("k''(s) requires s > 0, got {}", s));
  }
  switch (family_) {
    case KernelFamily::NegAbs: return 0.0;
    case KernelFamily::Exponential: return std::exp(-s);
    case KernelFamily::Zero: return 0.0;
    case KernelFamily::Tabulated: {
      const auto& t = *table_;
      if (s < t.s.front() || s > t.s.back()) {
        throw DomainError(fmt::format("k''({}) outside tabulated range [{}, {}]", s, t.s.front(), t.s.back()));
      }
      auto k = segment_of(t.s, s);
      return (t.kprime[k + 1] - t.kprime[k]) / (t.s[k + 1] - t.s[k]);
    }
  }
  return 0.0;
}

double Kernel::kprime_sup_norm() const {
  switch (family_) {
    case KernelFamily::NegAbs:
    case KernelFamily::Exponential: return 1.0;
    case KernelFamily::Zero: return 0.0;
    case KernelFamily::Tabulated: {
      double m = 0.0;
      for (double v : table_->kprime) m = std::max(m, std::abs(v));
      return m;
    }
  }
  return 0.0;
}

std::optional<double> Kernel::kdoubleprime_l1() const {
  switch (family_) {
    case KernelFamily::NegAbs: return 0.0;
    case KernelFamily::Exponential: return 1.0;
    case KernelFamily::Zero: return 0.0;
    case KernelFamily::Tabulated: {
      double tv = 0.0;
      const auto& v = table_->kprime;
      for (std::size_t i = 1; i < v.size(); ++i) tv += std::abs(v[i] - v[i - 1]);
      return tv;
    }
  }
  return std::nullopt;
}

KappaResult kappa_lambda(const Kernel& kernel, double lambda) {
  if (!(lambda > 0.0)) {
    throw DomainError(fmt::format("kappa_Lambda requires Lambda > 0, got {}", lambda));
  }
  double sup = 0.0;
  switch (kernel.family()) {
    case KernelFamily::NegAbs: sup = -1.0; break;
    // k' is increasing, so the supremum is the limit at s -> Lambda.
    case KernelFamily::Exponential: sup = -std::exp(-lambda); break;
    case KernelFamily::Zero: sup = 0.0; break;
    case KernelFamily::Tabulated: {
      if (kernel.range_min() > 0.0 || lambda > kernel.range_max()) {
        throw DomainError(fmt::format("kappa_Lambda: (0, {}) not covered by tabulated range [{}, {}]", lambda,
                                      kernel.range_min(), kernel.range_max()));
      }
      // A piecewise-linear function attains its supremum over an interval at a
      // node or at one of the endpoint limits, so this is exact.
      auto s = kernel.table_s();
      auto v = kernel.table_kprime();
      sup = std::max(v.front(), kernel.kprime(lambda));
      for (std::size_t i = 1; i < s.size() && s[i] < lambda; ++i) sup = std::max(sup, v[i]);
      break;
    }
  }
  KappaResult r;
  r.value = -sup;
  r.hypothesis_holds = r.value > 0.0;
  return r;
}

KappaZeroResult kappa_zero(const Kernel& kernel) {
  KappaZeroResult r;
  switch (kernel.family()) {
    case KernelFamily::NegAbs:
    case KernelFamily::Exponential: r.value = 1.0; break;
    case KernelFamily::Zero: r.value = 0.0; break;
    case KernelFamily::Tabulated: {
      // Richardson extrapolation assuming kappa_Lambda = kappa_0 + c * Lambda.
      constexpr double probes[] = {1e-2, 1e-3, 1e-4};
      double k[3];
      for (int i = 0; i < 3; ++i) k[i] = kappa_lambda(kernel, probes[i]).value;
      auto extrapolate = [&](int a, int b) {
        return (probes[a] * k[b] - probes[b] * k[a]) / (probes[a] - probes[b]);
      };
      double coarse = extrapolate(0, 1);
      double fine = extrapolate(1, 2);
      r.value = fine;
      double scale = std::max(std::abs(fine), std::numeric_limits<double>::min());
      r.converged = std::abs(fine - coarse) <= 1e-4 * scale;
      break;
    }
  }
  r.hypothesis_holds = r.value > 0.0;
  return r;
}

bool ValidationReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const HypothesisCheck& c) { return c.passed || c.skipped; });
}

const HypothesisCheck* ValidationReport::find(const std::string& name) const {
  for (const auto& c : checks) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

ValidationReport validate_hypotheses(const Kernel& kernel, int dimension) {
  if (dimension < 1 || dimension > 3) {
    throw PreconditionError(fmt::format("unsupported dimension {}", dimension));
  }
  ValidationReport report;
  report.dimension = dimension;

  HypothesisCheck bounded;
  bounded.name = "k' bounded";
  bounded.value = kernel.kprime_sup_norm();
  bounded.passed = std::isfinite(bounded.value);
  bounded.detail = fmt::format("||k'||_inf = {:.6g}", bounded.value);
  report.checks.push_back(bounded);

  for (double probe : kKappaProbes) {
    HypothesisCheck c;
    c.name = fmt::format("kappa_Lambda > 0 at Lambda = {}", probe);
    try {
      auto k = kappa_lambda(kernel, probe);
      c.value = k.value;
      c.passed = k.hypothesis_holds;
      c.detail = fmt::format("kappa = {:.6g}", k.value);
    } catch (const DomainError& e) {
      c.detail = e.what();
    }
    report.checks.push_back(c);
  }

  HypothesisCheck k0;
  k0.name = "kappa_0 > 0";
  try {
    auto z = kappa_zero(kernel);
    k0.value = z.value;
    k0.passed = z.hypothesis_holds && z.converged;
    k0.detail = z.converged ? fmt::format("kappa_0 = {:.6g}", z.value)
                            : fmt::format("kappa_0 = {:.6g}, extrapolation did not converge", z.value);
  } catch (const DomainError& e) {
    k0.detail = e.what();
  }
  report.checks.push_back(k0);

  HypothesisCheck l1;
  l1.name = "||k''||_1 finite";
  if (dimension == 1) {
    auto v = kernel.kdoubleprime_l1();
    l1.passed = v.has_value() && std::isfinite(*v);
    l1.value = v.value_or(std::numeric_limits<double>::infinity());
    l1.detail = fmt::format("||k''||_1 = {:.6g}", l1.value);
  } else {
    l1.skipped = true;
    l1.detail = "only required in one dimension";
  }
  report.checks.push_back(l1);
  return report;
}

std::span<const double> Kernel::table_s() const {
  if (!table_) return {};
  return table_->s;
}

std::span<const double> Kernel::table_kprime() const {
  if (!table_) return {};
  return table_->kprime;
}

}  // namespace aggdiff
