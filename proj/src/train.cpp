#include "aesim/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <json.hpp>

namespace aesim {

template <typename T>
AdamState<T> AdamState<T>::init(const ParameterList<T>& params,
                                AdamConfig config) {
  if (!(config.lr > 0) || !(config.beta1 >= 0 && config.beta1 < 1) ||
      !(config.beta2 >= 0 && config.beta2 < 1) || !(config.eps > 0) ||
      config.max_grad_norm < 0) {
    throw ConfigError("invalid Adam hyperparameters");
  }
  AdamState state;
  state.config = config;
  for (const auto& p : params) {
    state.m.emplace_back(p.value.numel(), T(0));
    state.v.emplace_back(p.value.numel(), T(0));
  }
  return state;
}

template <typename T>
void zero_grads(const ParameterList<T>& params) {
  for (const auto& p : params) {
    Tensor<T> t = p.value;
    t.zero_grad();
  }
}

template <typename T>
void adam_step(const ParameterList<T>& params, AdamState<T>& state) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("Adam state does not match the parameter list");
  }
  double norm_sq = 0.0;
  for (const auto& p : params) {
    if (!p.value.has_grad()) continue;
    for (T g : p.value.grad()) {
      if (!std::isfinite(g)) {
        throw TrainingError("non-finite gradient in parameter " + p.name);
      }
      norm_sq += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  double clip = 1.0;
  const double cap = state.config.max_grad_norm;
  if (cap > 0 && norm_sq > cap * cap) clip = cap / std::sqrt(norm_sq);

  ++state.step;
  const AdamConfig& c = state.config;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T> param = params[k].value;
    if (state.m[k].size() != param.numel()) {
      throw ContractError("Adam state shape mismatch for " + params[k].name);
    }
    auto theta = param.data();
    const bool has_grad = param.has_grad();
    std::span<const T> grad;
    if (has_grad) grad = param.grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = has_grad ? static_cast<double>(grad[i]) * clip : 0.0;
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / correction1;
      const double v_hat = vi / correction2;
      theta[i] = static_cast<T>(theta[i] -
                                c.lr * m_hat / (std::sqrt(v_hat) + c.eps));
    }
  }
}

template <typename T>
double accumulate_gradients(const EsimModel<T>& model, const Batch& batch,
                            ForwardMode mode) {
  Tape<T> tape;
  TapeScope<T> scope(tape);
  Tensor<T> logits = forward(batch.premise, batch.hypothesis, model, mode);
  Tensor<T> loss = softmax_cross_entropy(logits, std::span<const int>(batch.labels));
  const double value = static_cast<double>(loss.item());
  tape.backward(loss);
  return value;
}

std::string TrainReport::to_json(bool include_timing) const {
  nlohmann::json epochs_json = nlohmann::json::array();
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    nlohmann::json e = {{"epoch", i},
                        {"train_loss", epochs[i].train_loss},
                        {"dev_accuracy", epochs[i].dev_accuracy}};
    if (has_train_accuracy) e["train_accuracy"] = epochs[i].train_accuracy;
    if (include_timing) e["seconds"] = epochs[i].seconds;
    epochs_json.push_back(std::move(e));
  }
  nlohmann::json j = {{"epochs", epochs_json},
                      {"best_epoch", best_epoch},
                      {"best_dev_accuracy", best_dev_accuracy}};
  return j.dump(2);
}

template <typename T>
TrainOutcome<T> train(EsimModel<T>& model,
                      const std::vector<IndexedPair>& train_pairs,
                      const std::vector<IndexedPair>& dev_pairs,
                      const TrainConfig& config) {
  if (train_pairs.empty()) throw ContractError("empty training set");
  if (config.batch_size == 0) throw ConfigError("batch size must be positive");
  const ParameterList<T> params = model.parameters();
  TrainOutcome<T> out{TrainReport{}, model.clone(),
                      AdamState<T>::init(params, config.adam),
                      std::mt19937_64(config.seed)};
  std::mt19937_64 shuffle_rng(config.seed ^ 0x5eedba7c4ULL);
  out.report.has_train_accuracy = config.track_train_accuracy;
  double best = -1.0;
  std::size_t stale = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const std::vector<Batch> batches =
        make_batches(train_pairs, config.batch_size, shuffle_rng());
    double total = 0.0;
    for (const Batch& batch : batches) {
      zero_grads(params);
      double loss = 0.0;
      try {
        loss = accumulate_gradients(model, batch, ForwardMode::train(out.rng));
      } catch (const NumericError& e) {
        throw TrainingError("training diverged in epoch " +
                            std::to_string(epoch) + ": " + e.what());
      }
      if (!std::isfinite(loss)) {
        throw TrainingError("training diverged in epoch " +
                            std::to_string(epoch) + ": loss is not finite");
      }
      adam_step(params, out.optimizer);
      total += loss * static_cast<double>(batch.labels.size());
    }
    zero_grads(params);

    EpochStats stats;
    stats.train_loss = total / static_cast<double>(train_pairs.size());
    stats.dev_accuracy = evaluate(model, dev_pairs, config.batch_size,
                                  config.eval_threads);
    if (config.track_train_accuracy) {
      stats.train_accuracy = evaluate(model, train_pairs, config.batch_size,
                                      config.eval_threads);
    }
    stats.seconds = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - start)
                        .count();
    out.report.epochs.push_back(stats);
    if (stats.dev_accuracy > best) {
      best = stats.dev_accuracy;
      out.best = model.clone();
      out.report.best_epoch = static_cast<int>(epoch);
      out.report.best_dev_accuracy = best;
      stale = 0;
    } else {
      ++stale;
    }
    if (config.on_epoch) config.on_epoch(epoch, stats);
    if (config.patience > 0 && stale >= config.patience) break;
  }
  return out;
}

template <typename T>
std::vector<int> predict(const EsimModel<T>& model,
                         const std::vector<IndexedPair>& pairs,
                         std::size_t batch_size, std::size_t threads) {
  if (pairs.empty()) throw ContractError("predict on an empty pair list");
  const std::vector<Batch> batches =
      make_batches(pairs, batch_size, std::nullopt);
  std::vector<int> labels(pairs.size());
  auto work = [&](std::size_t worker, std::size_t workers) {
    NoGradScope<T> no_grad;
    for (std::size_t k = worker; k < batches.size(); k += workers) {
      const Batch& batch = batches[k];
      Tensor<T> logits =
          forward(batch.premise, batch.hypothesis, model, ForwardMode::eval());
      const std::size_t classes = logits.dim(1);
      for (std::size_t b = 0; b < batch.labels.size(); ++b) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes; ++c) {
          if (logits.at(b, c) > logits.at(b, best)) best = c;
        }
        labels[k * batch_size + b] = static_cast<int>(best);
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(
      1, std::min(threads, batches.size()));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          work(w, workers);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return labels;
}

template <typename T>
double evaluate(const EsimModel<T>& model,
                const std::vector<IndexedPair>& pairs, std::size_t batch_size,
                std::size_t threads) {
  if (pairs.empty()) throw ContractError("evaluate on an empty pair list");
  const std::vector<int> labels = predict(model, pairs, batch_size, threads);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    correct += labels[i] == pairs[i].label ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

std::size_t threads_from_env() {
  const char* raw = std::getenv("AESIM_THREADS");
  if (raw == nullptr) return 1;
  char* end = nullptr;
  const long n = std::strtol(raw, &end, 10);
  return (end != raw && n > 0) ? static_cast<std::size_t>(n) : 1;
}

#define AESIM_INSTANTIATE_TRAIN(T)                                           \
  template struct AdamState<T>;                                              \
  template void adam_step(const ParameterList<T>&, AdamState<T>&);           \
  template void zero_grads(const ParameterList<T>&);                         \
  template double accumulate_gradients(const EsimModel<T>&, const Batch&,    \
                                       ForwardMode);                         \
  template TrainOutcome<T> train(EsimModel<T>&,                              \
                                 const std::vector<IndexedPair>&,            \
                                 const std::vector<IndexedPair>&,            \
                                 const TrainConfig&);                        \
  template std::vector<int> predict(const EsimModel<T>&,                     \
                                    const std::vector<IndexedPair>&,         \
                                    std::size_t, std::size_t);               \
  template double evaluate(const EsimModel<T>&,                              \
                           const std::vector<IndexedPair>&, std::size_t,     \
                           std::size_t);

AESIM_INSTANTIATE_TRAIN(float)
AESIM_INSTANTIATE_TRAIN(double)

#undef AESIM_INSTANTIATE_TRAIN

}  // namespace aesim
