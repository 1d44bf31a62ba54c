// Serial reference vs OpenMP kernels: matrix assembly and matrix-vector apply.
// Usage: bench_drift [--quick]

#include <chrono>
#include <cstring>
#include <iostream>

#include <fmt/format.h>
#include <omp.h>

#include "aggdiff/drift.hpp"

using namespace aggdiff;

namespace {

template <class F>
double best_of(int reps, F&& f) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

}  // namespace

int main(int argc, char** argv) {
  const bool quick = argc > 1 && std::strcmp(argv[1], "--quick") == 0;
  std::cout << fmt::format("OpenMP threads: {}\n", omp_get_max_threads());
  std::cout << fmt::format("{:>4} {:>6} {:>12} {:>12} {:>8} {:>12} {:>12} {:>8} {:>9}\n", "N", "cells", "build ser",
                           "build par", "speedup", "apply ser", "apply par", "speedup", "identical");
  struct Case {
    int dim;
    std::size_t cells;
  };
  std::vector<Case> cases = quick ? std::vector<Case>{{1, 256}, {2, 128}}
                                  : std::vector<Case>{{1, 2048}, {2, 512}, {2, 1024}, {3, 512}};
  bool all_identical = true;
  for (auto [dim, n] : cases) {
    auto grid = make_grid(dim, n, 4.0);
    auto kernel = Kernel::exponential();
    std::vector<double> targets;
    for (std::size_t i = 0; i < n; ++i) targets.push_back(grid->outer_face(i));
    auto u = make_initial_condition(GaussianBump{1.0, 0.25}, grid);

    InteractionMatrix ms;
    InteractionMatrix mp;
    double tbs = best_of(1, [&] { ms = build_matrix_at_serial(grid, kernel, targets); });
    double tbp = best_of(1, [&] { mp = build_matrix_at(grid, kernel, targets); });
    std::vector<double> vs;
    std::vector<double> vp;
    int reps = quick ? 3 : 20;
    double tas = best_of(reps, [&] { vs = apply_serial(ms, u); });
    double tap = best_of(reps, [&] { vp = apply(mp, u); });
    bool identical = vs == vp && std::equal(ms.weights().begin(), ms.weights().end(), mp.weights().begin());
    all_identical = all_identical && identical;
    std::cout << fmt::format("{:>4} {:>6} {:>11.4f}s {:>11.4f}s {:>8.2f} {:>11.6f}s {:>11.6f}s {:>8.2f} {:>9}\n", dim,
                             n, tbs, tbp, tbs / tbp, tas, tap, tas / tap, identical ? "yes" : "NO");
  }
  return all_identical ? 0 : 1;
}
