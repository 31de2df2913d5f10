#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace aesim {

// Padded token-index matrix for a batch of sentences. Row-major
// [batch, steps]; mask[b * steps + t] is 1 iff t < lengths[b], and padded
// positions hold index 0.
struct SequenceBatch {
  std::size_t batch = 0;
  std::size_t steps = 0;
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> mask;
  std::vector<std::size_t> lengths;

  // Pads every sequence to max(longest, min_steps). Empty sequences are a
  // ContractError.
  static SequenceBatch from_sequences(
      const std::vector<std::vector<std::int32_t>>& sequences,
      std::size_t min_steps = 0);

  std::span<const std::uint8_t> mask_view() const { return mask; }
};

}  // namespace aesim
