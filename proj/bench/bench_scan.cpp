// Standalone scan benchmark: sequential recurrence vs Blelloch prefix scan
// across a sweep of shapes. Same CSV as `mamba_va bench-scan`.

#include <cstdio>
#include <iostream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mva/bench.hpp"

int main(int argc, char** argv) {
  int reps = 3;
  if (argc > 1) reps = std::atoi(argv[1]);
  const std::vector<int64_t> t_lens = {64, 256, 1024, 2048};
  const std::vector<int64_t> d_inners = {4, 64, 256};
  const std::vector<int64_t> n_states = {8};
#ifdef _OPENMP
  std::fprintf(stderr, "threads: %d, reps: %d\n", omp_get_max_threads(), reps);
#endif
  const auto rows = mva::bench_scan(t_lens, d_inners, n_states, reps, 42);
  std::cout << mva::bench_csv(rows);
  return 0;
}
