#pragma once

#include <functional>
#include <vector>

#include "aesim/tensor.hpp"

namespace aesim {

struct GradCheckOptions {
  double eps = 1e-5;
  // Multiplies the analytic gradient before comparison. Only used to prove
  // that the checker notices a wrong gradient.
  double analytic_scale = 1.0;
  // Smallest denominator of the relative error. Central differences in
  // double carry about 1e-16 * |loss| / eps of roundoff, so gradients much
  // below this floor are effectively compared in absolute terms.
  double denominator_floor = 1e-8;
  // An element whose error exceeds `tolerance` at `eps` is re-measured with
  // eps * kink_step_ratio. If that agrees, the input sat within eps of a
  // kink (max pooling, selu at 0); the element is counted in `kinks` and the
  // refined error is kept. Set kink_step_ratio to 0 to disable.
  double tolerance = 1e-4;
  double kink_step_ratio = 1e-2;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t elements = 0;
  std::size_t kinks = 0;
};

// Compares reverse-mode gradients of the scalar `loss` against central
// differences (f(x+eps) - f(x-eps)) / 2eps for every element of `inputs`.
// Relative error per element is |a - n| / max(|a|, |n|, denominator_floor).
//
// `loss` is invoked repeatedly and must be deterministic. Inputs are leaf
// tensors that `loss` reads; they are perturbed in place and restored.
GradCheckResult grad_check(const std::function<Tensor<double>()>& loss,
                           const std::vector<Tensor<double>>& inputs,
                           const GradCheckOptions& options = {});

}  // namespace aesim
