#pragma once

// Versioned binary checkpoint, all integers and floats little-endian:
//
//   magic      8 bytes  "AESIMCKP"
//   version    u32      (kCheckpointVersion)
//   dtype      u8       model precision (1 = f32, 2 = f64)
//   config     u64 length + UTF-8 JSON (EsimConfig)
//   vocab      u64 count, then per token: u32 length + bytes
//   tensors    u64 count, then per tensor:
//                u32 name length + name, u8 dtype, u32 rank, u64 dims[rank],
//                payload (numel values)
//   optimizer  u8 present; if 1: f64 lr, beta1, beta2, eps, max_grad_norm,
//                u64 step, then for every tensor in order: m payload, v payload
//   rng        u8 present; if 1: u64 length + textual mt19937_64 state
//   trailer    8 bytes  "AESIMEND"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "aesim/data.hpp"
#include "aesim/model.hpp"
#include "aesim/train.hpp"

namespace aesim {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { kF32 = 1, kF64 = 2 };

template <typename T>
constexpr DType dtype_of() {
  return sizeof(T) == 4 ? DType::kF32 : DType::kF64;
}

struct TensorEntry {
  std::string name;
  DType dtype = DType::kF64;
  Shape shape;
  std::size_t numel() const { return shape_numel(shape); }
};

// Header-level view of a checkpoint, readable without knowing its precision.
struct CheckpointInfo {
  std::uint32_t version = 0;
  DType dtype = DType::kF64;
  EsimConfig config;
  std::size_t vocab_size = 0;
  std::vector<TensorEntry> tensors;
  bool has_optimizer = false;
  bool has_rng = false;

  std::size_t parameter_count() const;
};

template <typename T>
struct Checkpoint {
  EsimModel<T> model;
  Vocab vocab;
  std::optional<AdamState<T>> optimizer;
  std::optional<std::mt19937_64> rng;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path,
                     const EsimModel<T>& model, const Vocab& vocab,
                     const AdamState<T>* optimizer = nullptr,
                     const std::mt19937_64* rng = nullptr);

// Throws CheckpointError on bad magic, unknown version, truncation,
// precision mismatch or tensors that do not fit the stored config.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

CheckpointInfo inspect_checkpoint(const std::filesystem::path& path);

}  // namespace aesim
