#include "mva/bench.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "mva/errors.hpp"
#include "mva/rng.hpp"
#include "mva/scan.hpp"

namespace mva {

namespace {

Tensor<float> random_tensor(Rng& rng, Shape shape) {
  Tensor<float> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<float>(rng.normal());
  return t;
}

}  // namespace

std::vector<BenchRow> bench_scan(const std::vector<int64_t>& t_lens,
                                 const std::vector<int64_t>& d_inners,
                                 const std::vector<int64_t>& n_states, int reps, uint64_t seed) {
  using clock = std::chrono::steady_clock;
  std::vector<BenchRow> rows;
  for (int64_t t_len : t_lens) {
    for (int64_t d_inner : d_inners) {
      for (int64_t n_state : n_states) {
        Rng rng = stream(seed, "bench", static_cast<uint64_t>(t_len),
                         static_cast<uint64_t>(d_inner), static_cast<uint64_t>(n_state));
        Tensor<float> a_bar({t_len, d_inner, n_state});
        for (auto& v : a_bar.data) v = static_cast<float>(rng.uniform(0.05, 0.95));
        Tensor<float> bx = random_tensor(rng, {t_len, d_inner, n_state});
        Tensor<float> c = random_tensor(rng, {t_len, n_state});
        Tensor<float> d_skip = random_tensor(rng, {d_inner});
        Tensor<float> x = random_tensor(rng, {t_len, d_inner});

        Tensor<float> y_seq = ssm_scan_sequential(a_bar, bx, c, d_skip, x);
        Tensor<float> y_par = ssm_scan_parallel(a_bar, bx, c, d_skip, x);
        float max_diff = 0.0f;
        for (int64_t i = 0; i < y_seq.numel(); ++i) {
          max_diff = std::max(max_diff, std::abs(y_seq.data[static_cast<size_t>(i)] -
                                                 y_par.data[static_cast<size_t>(i)]));
        }
        if (max_diff > 1e-4f) {
          throw NumericError("bench_scan: variants disagree by " + std::to_string(max_diff));
        }

        const double elements = static_cast<double>(t_len * d_inner * n_state);
        for (int variant = 0; variant < 2; ++variant) {
          double best_ns = 0.0;
          for (int rep = 0; rep < reps; ++rep) {
            const auto start = clock::now();
            Tensor<float> y = variant == 0 ? ssm_scan_sequential(a_bar, bx, c, d_skip, x)
                                           : ssm_scan_parallel(a_bar, bx, c, d_skip, x);
            const auto stop = clock::now();
            const double ns =
                static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(stop - start).count());
            if (rep == 0 || ns < best_ns) best_ns = ns;
          }
          rows.push_back({variant == 0 ? "sequential" : "parallel", t_len, d_inner, n_state,
                          best_ns / elements});
        }
      }
    }
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = "variant,T,d_inner,N,nanos_per_element\n";
  char line[128];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%s,%lld,%lld,%lld,%.4f\n", r.variant.c_str(),
                  static_cast<long long>(r.t_len), static_cast<long long>(r.d_inner),
                  static_cast<long long>(r.n_state), r.nanos_per_element);
    out += line;
  }
  return out;
}

}  // namespace mva
