#pragma once

#include <cstddef>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace partscope::par {

// Worker cap: min(OpenMP default, PARTSCOPE_THREADS). Reads the environment
// once; tests may override via set_thread_cap.
int threads();
void set_thread_cap(int n);  // n <= 0 restores the environment-derived cap

// Summation block size. All reductions below group terms into fixed blocks of
// this size and combine the per-block partials in index order, so the result
// is bit-identical for any worker count (including 1).
inline constexpr std::size_t kSumBlock = 4096;

inline std::size_t num_blocks(std::size_t n) { return (n + kSumBlock - 1) / kSumBlock; }

// Elementwise parallel loop; body(i) must write only state owned by index i.
template <class Body>
void parallel_for(std::size_t n, Body&& body) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads())
#endif
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    body(static_cast<std::size_t>(i));
  }
}

// Range-chunked variant; body(begin, end) runs serially over its chunk.
template <class Body>
void parallel_for_blocked(std::size_t n, Body&& body) {
  const std::size_t nb = num_blocks(n);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads())
#endif
  for (long long b = 0; b < static_cast<long long>(nb); ++b) {
    const std::size_t begin = static_cast<std::size_t>(b) * kSumBlock;
    const std::size_t end = begin + kSumBlock < n ? begin + kSumBlock : n;
    body(begin, end);
  }
}

// Deterministic sum of term(i) for i in [0, n).
template <class Term>
double block_sum(std::size_t n, Term&& term) {
  const std::size_t nb = num_blocks(n);
  std::vector<double> partial(nb, 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads())
#endif
  for (long long b = 0; b < static_cast<long long>(nb); ++b) {
    const std::size_t begin = static_cast<std::size_t>(b) * kSumBlock;
    const std::size_t end = begin + kSumBlock < n ? begin + kSumBlock : n;
    double s = 0.0;
    for (std::size_t i = begin; i < end; ++i) s += term(i);
    partial[static_cast<std::size_t>(b)] = s;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

// Deterministic row reduction: accumulates term(i, row) into `dim` doubles per
// block, then combines blocks in order. `emit(i, acc)` must add index i's
// contribution into acc[0..dim).
template <class Emit>
void block_sum_rows(std::size_t n, std::size_t dim, double* out, Emit&& emit) {
  const std::size_t nb = num_blocks(n);
  std::vector<double> partial(nb * dim, 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads())
#endif
  for (long long b = 0; b < static_cast<long long>(nb); ++b) {
    const std::size_t begin = static_cast<std::size_t>(b) * kSumBlock;
    const std::size_t end = begin + kSumBlock < n ? begin + kSumBlock : n;
    double* acc = partial.data() + static_cast<std::size_t>(b) * dim;
    for (std::size_t i = begin; i < end; ++i) emit(i, acc);
  }
  for (std::size_t d = 0; d < dim; ++d) out[d] = 0.0;
  for (std::size_t b = 0; b < nb; ++b) {
    const double* acc = partial.data() + b * dim;
    for (std::size_t d = 0; d < dim; ++d) out[d] += acc[d];
  }
}

}  // namespace partscope::par
