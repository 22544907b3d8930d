#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mva {

struct BenchRow {
  std::string variant;  // sequential | parallel
  int64_t t_len = 0;
  int64_t d_inner = 0;
  int64_t n_state = 0;
  double nanos_per_element = 0.0;
};

// Times both scan variants over the sweep (best of `reps` runs per cell)
// and cross-checks that their outputs agree while doing so.
std::vector<BenchRow> bench_scan(const std::vector<int64_t>& t_lens,
                                 const std::vector<int64_t>& d_inners,
                                 const std::vector<int64_t>& n_states, int reps, uint64_t seed);

// CSV: variant,T,d_inner,N,nanos_per_element
std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace mva
