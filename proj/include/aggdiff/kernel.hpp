#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace aggdiff {

enum class KernelFamily { NegAbs, Exponential, Zero, Tabulated };

std::string to_string(KernelFamily family);

// Radial interaction kernel K(x) = k(|x|), described through k' (and k'').
//
// Immutable after construction; copies share the sample table of tabulated
// kernels.
class Kernel {
 public:
  static Kernel neg_abs();      // K = -|x|,      k'(s) = -1
  static Kernel exponential();  // K = exp(-|x|), k'(s) = -exp(-s)
  static Kernel zero();         // K = 0, heat-equation baseline only

  // Piecewise-linear k' through (s[i], kprime[i]); s strictly increasing, s[0] >= 0.
  static Kernel tabulated(std::vector<double> s, std::vector<double> kprime);
  // Two-column text file (s, k'(s)); lines starting with '#' are ignored.
  static Kernel load_tabulated(const std::filesystem::path& path);

  KernelFamily family() const { return family_; }

  // Stable identifier used for cache keys: "neg_abs", "exponential", "zero",
  // or "tabulated:<16 hex digits>" hashing the sample table.
  const std::string& id() const { return id_; }

  // k'(s) for s > 0. Throws DomainError for s <= 0 or outside the table.
  double kprime(double s) const;
  // k''(s) for s > 0 (piecewise constant for tabulated kernels).
  double kdoubleprime(double s) const;

  // ||k'||_inf. Closed form for built-ins; the sample maximum for tabulated
  // kernels, which is a lower estimate of the true norm.
  double kprime_sup_norm() const;
  // ||k''||_{L1(0,inf)}; the total variation of the samples for tabulated kernels.
  std::optional<double> kdoubleprime_l1() const;

  // Closed interval of admissible arguments; (0, +inf) for built-ins.
  double range_min() const;
  double range_max() const;

  // Sample table of a tabulated kernel; empty for built-ins.
  std::span<const double> table_s() const;
  std::span<const double> table_kprime() const;

 private:
  struct Table {
    std::vector<double> s;
    std::vector<double> kprime;
  };

  Kernel(KernelFamily family, std::string id, std::shared_ptr<const Table> table = nullptr);

  KernelFamily family_;
  std::string id_;
  std::shared_ptr<const Table> table_;
};

// kappa_Lambda = -sup_{s in (0, Lambda)} k'(s).
struct KappaResult {
  double value = 0.0;
  // False when kappa <= 0, i.e. the attraction hypothesis fails at this scale.
  bool hypothesis_holds = false;
};

KappaResult kappa_lambda(const Kernel& kernel, double lambda);

struct KappaZeroResult {
  double value = 0.0;
  bool hypothesis_holds = false;
  // Tabulated kernels: successive extrapolants agreed within 1e-4 relative.
  bool converged = true;
};

// kappa_0 = lim_{Lambda -> 0} kappa_Lambda.
KappaZeroResult kappa_zero(const Kernel& kernel);

struct HypothesisCheck {
  std::string name;
  bool passed = false;
  bool skipped = false;
  double value = 0.0;
  std::string detail;
};

struct ValidationReport {
  int dimension = 0;
  std::vector<HypothesisCheck> checks;

  bool all_passed() const;
  const HypothesisCheck* find(const std::string& name) const;
};

// Probe values for the kappa_Lambda > 0 check.
inline constexpr double kKappaProbes[] = {0.1, 1.0, 10.0};

ValidationReport validate_hypotheses(const Kernel& kernel, int dimension);

}  // namespace aggdiff
