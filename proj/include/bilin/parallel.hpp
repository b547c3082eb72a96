#pragma once
// Deterministic parallel reduction helpers.
//
// Every hot loop in the library runs through these wrappers so that
//  (a) the OpenMP kernels and the serial reference path share one code body,
//  (b) results are bit-identical regardless of thread count: the index range
//      is cut into a fixed number of blocks, each block is reduced serially,
//      and the per-block partials are combined in block order.

#include <algorithm>
#include <complex>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace bilin {

enum class Exec { serial, parallel };

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline void set_threads(int k) {
#ifdef _OPENMP
  if (k > 0) omp_set_num_threads(k);
#else
  (void)k;
#endif
}

namespace detail {
constexpr std::size_t kReduceBlocks = 256;
}

// Runs body(i) for i in [0, count) with a fixed block decomposition.
template <class Body>
void for_each_index(std::size_t count, Exec exec, Body&& body) {
  if (count == 0) return;
  if (exec == Exec::serial) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long i = 0; i < (long long)count; ++i) body((std::size_t)i);
}

// Deterministic sum of term(i) over [0, count): identical result for both
// execution modes and any thread count.
template <class Term, class Acc = double>
Acc block_sum(std::size_t count, Exec exec, Term&& term, Acc zero = Acc{}) {
  if (count == 0) return zero;
  const std::size_t nb = std::min(detail::kReduceBlocks, count);
  std::vector<Acc> partial(nb, zero);
  auto run_block = [&](std::size_t b) {
    const std::size_t lo = count * b / nb;
    const std::size_t hi = count * (b + 1) / nb;
    Acc s = zero;
    for (std::size_t i = lo; i < hi; ++i) s += term(i);
    partial[b] = s;
  };
  if (exec == Exec::serial) {
    for (std::size_t b = 0; b < nb; ++b) run_block(b);
  } else {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long b = 0; b < (long long)nb; ++b) run_block((std::size_t)b);
  }
  Acc total = zero;
  for (std::size_t b = 0; b < nb; ++b) total += partial[b];
  return total;
}

// Deterministic argmin of value(i): smallest value wins, ties resolved toward
// the smallest index.
template <class Value>
std::pair<double, std::size_t> block_min(std::size_t count, Exec exec,
                                         Value&& value) {
  const std::size_t nb = std::min(detail::kReduceBlocks, std::max<std::size_t>(count, 1));
  std::vector<std::pair<double, std::size_t>> partial(
      nb, {std::numeric_limits<double>::infinity(), (std::size_t)-1});
  auto run_block = [&](std::size_t b) {
    const std::size_t lo = count * b / nb;
    const std::size_t hi = count * (b + 1) / nb;
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = (std::size_t)-1;
    for (std::size_t i = lo; i < hi; ++i) {
      const double v = value(i);
      if (v < best) {
        best = v;
        arg = i;
      }
    }
    partial[b] = {best, arg};
  };
  if (exec == Exec::serial) {
    for (std::size_t b = 0; b < nb; ++b) run_block(b);
  } else {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long b = 0; b < (long long)nb; ++b) run_block((std::size_t)b);
  }
  std::pair<double, std::size_t> best = partial[0];
  for (std::size_t b = 1; b < nb; ++b)
    if (partial[b].first < best.first) best = partial[b];
  return best;
}

}  // namespace bilin
