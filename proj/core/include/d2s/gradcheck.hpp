#pragma once

#include <string>
#include <vector>

#include "d2s/tensor.hpp"

namespace d2s {

struct GradCheckResult {
  std::string op;
  int cases = 0;
  double max_rel_err = 0.0;
};

// Elementwise max of |a-b| / max(|a|, |b|, 1e-6).
double max_rel_error(const TensorT<double>& analytic, const TensorT<double>& numeric);

// Central finite differences (double precision, eps = 1e-4) against every
// analytic backward in the library, on randomized small shapes, plus the
// end-to-end loss gradient of the reduced r=4 model. Deterministic in seed.
std::vector<GradCheckResult> run_gradcheck_suite(uint64_t seed, int cases_per_op = 20);

bool gradcheck_passed(const std::vector<GradCheckResult>& results, double tol = 1e-3);

// One "op <name> cases <n> max_rel_err <e>" line per result.
std::string format_gradcheck(const std::vector<GradCheckResult>& results);

}  // namespace d2s
