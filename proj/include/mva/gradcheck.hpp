#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mva/tensor.hpp"

namespace mva {

constexpr double kGradCheckTol = 1e-4;

// Central finite differences against precomputed analytic gradients.
// eval() recomputes the scalar objective from the tensors' current values;
// each listed tensor's .grad must already hold the analytic gradient.
// Runs in double (h = 1e-3) so the oracle itself adds no rounding noise.
double gradcheck_max_rel_err(const std::vector<Tensor<double>*>& tensors,
                             const std::function<double()>& eval, double h = 1e-3);

struct GradCheckReport {
  std::string name;
  std::string scope;  // core | scan | layers | loss
  double max_rel_err = 0.0;
  double tol = kGradCheckTol;
  bool pass = false;
};

// Named checks over every differentiable operation, on random instances
// with all dims <= 8. scope "all" runs everything.
std::vector<GradCheckReport> run_gradcheck_suite(uint64_t seed, const std::string& scope = "all");

}  // namespace mva
