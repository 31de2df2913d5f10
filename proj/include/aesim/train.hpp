#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "aesim/data.hpp"
#include "aesim/model.hpp"

namespace aesim {

struct AdamConfig {
  double lr = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Global L2 norm cap on the gradient; 0 disables clipping.
  double max_grad_norm = 0.0;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;  // one buffer per parameter, same order
  std::vector<std::vector<T>> v;

  static AdamState init(const ParameterList<T>& params, AdamConfig config);
};

// Bias-corrected Adam update from the parameters' current gradients.
// A parameter that never received a gradient is treated as having a zero
// gradient. A non-finite gradient raises TrainingError naming the tensor.
template <typename T>
void adam_step(const ParameterList<T>& params, AdamState<T>& state);

template <typename T>
void zero_grads(const ParameterList<T>& params);

// Forward + mean cross-entropy + backward on one batch. Gradients
// accumulate into the model's parameters; returns the batch loss.
template <typename T>
double accumulate_gradients(const EsimModel<T>& model, const Batch& batch,
                            ForwardMode mode);

struct EpochStats {
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double dev_accuracy = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;  // index into epochs, -1 when no epoch ran
  double best_dev_accuracy = 0.0;
  bool has_train_accuracy = false;

  // Wall-clock seconds are the only nondeterministic field; leaving them
  // out gives a byte-stable report for a fixed seed.
  std::string to_json(bool include_timing = true) const;
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  std::size_t patience = 5;  // epochs without dev improvement; 0 = never stop
  std::uint64_t seed = 1;
  AdamConfig adam;
  bool track_train_accuracy = false;
  std::size_t eval_threads = 1;
  std::function<void(std::size_t epoch, const EpochStats&)> on_epoch;
};

template <typename T>
struct TrainOutcome {
  TrainReport report;
  EsimModel<T> best;  // parameters of the best dev epoch (initial if none)
  AdamState<T> optimizer;
  std::mt19937_64 rng;
};

// Trains `model` in place. Each epoch reshuffles, takes one Adam step per
// batch and scores the dev set; the best-dev parameters are kept.
template <typename T>
TrainOutcome<T> train(EsimModel<T>& model,
                      const std::vector<IndexedPair>& train_pairs,
                      const std::vector<IndexedPair>& dev_pairs,
                      const TrainConfig& config);

// Class predictions in input order (eval mode).
template <typename T>
std::vector<int> predict(const EsimModel<T>& model,
                         const std::vector<IndexedPair>& pairs,
                         std::size_t batch_size = 128, std::size_t threads = 1);

// Fraction of pairs whose argmax logit equals the gold label.
template <typename T>
double evaluate(const EsimModel<T>& model,
                const std::vector<IndexedPair>& pairs,
                std::size_t batch_size = 128, std::size_t threads = 1);

// Worker count from AESIM_THREADS (default 1, minimum 1).
std::size_t threads_from_env();

}  // namespace aesim
