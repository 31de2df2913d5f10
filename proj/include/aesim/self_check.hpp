#pragma once

// Finite-difference self-check over every primitive op, each encoder layer
// and both full models at toy dimensions (64-bit).

#include <cstdint>
#include <string>
#include <vector>

#include "aesim/grad_check.hpp"

namespace aesim {

struct LayerCheck {
  std::string name;
  GradCheckResult result;
};

struct SelfCheckOptions {
  std::uint64_t seed = 7;
  std::size_t hidden_dim = 4;
  std::size_t max_steps = 3;
  std::size_t vocab_size = 10;
  bool include_ops = true;
  GradCheckOptions grad;
  // Denominator floor for the full-model entries. Their structurally tiny
  // gradients (~1e-8) sit below the resolution of central differences.
  double model_denominator_floor = 1e-6;
};

// One entry per named op or layer, each listed exactly once.
std::vector<LayerCheck> run_self_check(const SelfCheckOptions& options = {});

}  // namespace aesim
