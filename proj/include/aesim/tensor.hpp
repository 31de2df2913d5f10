#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "aesim/errors.hpp"

namespace aesim {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Storage shared by every handle to the same tensor. Tape records hold
// shared_ptrs to nodes, so intermediates live until the tape is cleared.
template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

// Dense row-major n-dimensional array. Copies are shallow: they alias the
// same node, which is what lets parameters be referenced from several places
// in a graph and accumulate gradients in one buffer.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);
  explicit Tensor(Shape shape, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), requires_grad);
  }
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false) {
    return full({1}, value, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  std::vector<T>& values() { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }

  bool has_grad() const { return !node_->grad.empty(); }
  // Gradient buffer; allocated as zeros on first access.
  std::span<T> grad() { return node_->ensure_grad(); }
  std::span<const T> grad() const { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }

  T item() const;
  T& operator[](std::size_t flat) { return node_->data[flat]; }
  T operator[](std::size_t flat) const { return node_->data[flat]; }
  // Row-major element access for rank-2 tensors.
  T at(std::size_t row, std::size_t col) const {
    return node_->data[row * node_->shape.back() + col];
  }

  // Deep copy without tape history.
  Tensor clone() const;
  // Same data, no history, requires_grad = false.
  Tensor detach() const;

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

// Ordered record of executed differentiable operations. Records are appended
// in execution order, which is a topological order of the graph; backward
// walks them once in reverse.
template <typename T>
class Tape {
 public:
  struct Record {
    std::string op;
    std::vector<std::shared_ptr<TensorNode<T>>> inputs;
    std::shared_ptr<TensorNode<T>> output;
    // Reads output->grad and accumulates into the inputs' grads.
    std::function<void()> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(Record rec) { records_.push_back(std::move(rec)); }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const std::vector<Record>& records() const { return records_; }
  void clear() { records_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and runs every record in reverse. The tape is
  // cleared afterwards; leaf gradients keep accumulating across calls until
  // zero_grad.
  void backward(const Tensor<T>& loss);

  // Tape active on the calling thread, or nullptr.
  static Tape*& active() {
    thread_local Tape* tape = nullptr;
    return tape;
  }

 private:
  std::vector<Record> records_;
};

// Installs a tape as the thread's active tape for the scope's lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(Tape<T>::active()) {
    Tape<T>::active() = &tape;
  }
  ~TapeScope() { Tape<T>::active() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

// Suspends recording (evaluation, finite differences).
template <typename T>
class NoGradScope {
 public:
  NoGradScope() : previous_(Tape<T>::active()) { Tape<T>::active() = nullptr; }
  ~NoGradScope() { Tape<T>::active() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* previous_;
};

// Convenience: run backward on the active tape.
template <typename T>
void backward(const Tensor<T>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace aesim
