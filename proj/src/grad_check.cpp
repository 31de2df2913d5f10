#include "aesim/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace aesim {

GradCheckResult grad_check(const std::function<Tensor<double>()>& loss,
                           const std::vector<Tensor<double>>& inputs,
                           const GradCheckOptions& options) {
  std::vector<bool> had_grad;
  for (const auto& input : inputs) {
    had_grad.push_back(input.requires_grad());
  }
  std::vector<Tensor<double>> leaves = inputs;
  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Tensor<double> value = loss();
    tape.backward(value);
  }
  for (auto& leaf : leaves) {
    auto g = leaf.grad();
    analytic.emplace_back(g.begin(), g.end());
    leaf.zero_grad();
  }

  GradCheckResult result;
  NoGradScope<double> no_grad;
  for (std::size_t p = 0; p < leaves.size(); ++p) {
    auto values = leaves[p].data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      const double a = analytic[p][i] * options.analytic_scale;
      auto error_at = [&](double step) {
        values[i] = saved + step;
        const double up = loss().item();
        values[i] = saved - step;
        const double down = loss().item();
        values[i] = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double denom = std::max(
            {std::abs(a), std::abs(numeric), options.denominator_floor});
        return std::abs(a - numeric) / denom;
      };
      double error = error_at(options.eps);
      if (error > options.tolerance && options.kink_step_ratio > 0) {
        const double refined = error_at(options.eps * options.kink_step_ratio);
        if (refined <= options.tolerance) {
          error = refined;
          ++result.kinks;
        }
      }
      result.max_rel_error = std::max(result.max_rel_error, error);
      ++result.elements;
    }
  }
  for (std::size_t p = 0; p < leaves.size(); ++p) {
    leaves[p].set_requires_grad(had_grad[p]);
  }
  return result;
}

}  // namespace aesim
