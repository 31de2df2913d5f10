#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace aesim {

enum class ExitCode : int {
  kOk = 0,
  kUsage = 1,    // bad flags, configuration or contract violations
  kData = 2,     // unreadable corpora, embeddings or checkpoints
  kNumeric = 3,  // divergence, non-finite values, failed gradient check
};

// Subcommands: train, eval, predict, export-attention, grad-check.
// `args` excludes the program name. Results go to `out`, diagnostics and
// progress to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace aesim
