#include "aesim/sequence.hpp"

#include <algorithm>

#include "aesim/errors.hpp"

namespace aesim {

SequenceBatch SequenceBatch::from_sequences(
    const std::vector<std::vector<std::int32_t>>& sequences,
    std::size_t min_steps) {
  if (sequences.empty()) throw ContractError("empty sequence batch");
  SequenceBatch out;
  out.batch = sequences.size();
  out.steps = min_steps;
  for (const auto& seq : sequences) {
    if (seq.empty()) throw ContractError("empty sequence in batch");
    out.steps = std::max(out.steps, seq.size());
  }
  out.ids.assign(out.batch * out.steps, 0);
  out.mask.assign(out.batch * out.steps, 0);
  for (std::size_t b = 0; b < out.batch; ++b) {
    const auto& seq = sequences[b];
    std::copy(seq.begin(), seq.end(), out.ids.begin() + b * out.steps);
    std::fill_n(out.mask.begin() + b * out.steps, seq.size(), 1);
    out.lengths.push_back(seq.size());
  }
  return out;
}

}  // namespace aesim
