#pragma once

#include <functional>
#include <vector>

namespace aggdiff {

// Gauss-Legendre rule on [-1, 1].
struct GaussLegendre {
  std::vector<double> nodes;
  std::vector<double> weights;

  explicit GaussLegendre(int order);
  int order() const { return static_cast<int>(nodes.size()); }

  // Integral of f over [a, b].
  template <typename F>
  double integrate(F&& f, double a, double b) const {
    double half = 0.5 * (b - a);
    double mid = 0.5 * (b + a);
    double s = 0.0;
    for (std::size_t k = 0; k < nodes.size(); ++k) s += weights[k] * f(mid + half * nodes[k]);
    return half * s;
  }
};

}  // namespace aggdiff
