#include "aesim/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace aesim {
namespace {

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

template <typename T>
Tape<T>* recording_tape(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr) return nullptr;
  for (const Tensor<T>* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

template <typename T>
Tape<T>* recording_tape(const std::vector<Tensor<T>>& inputs) {
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr) return nullptr;
  for (const Tensor<T>& t : inputs) {
    if (t.requires_grad()) return tape;
  }
  return nullptr;
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  for (T v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) +
                         " vs " + shape_str(b));
  }
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void check_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(shape));
  }
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

// Plain row-major kernels shared by matmul and bmm. The summation order for
// each output element is fixed (ascending inner index) and independent of
// the number of rows, so appending rows never perturbs existing results.
template <typename T>
void gemm_nn(const T* a, const T* b, T* out, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* orow = out + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T aik = a[i * k + kk];
      if (aik == T(0)) continue;
      const T* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
}

// ga[m,k] += g[m,n] * b[k,n]^T
template <typename T>
void gemm_grad_a(const T* g, const T* b, T* ga, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T* brow = b + kk * n;
      T acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      ga[i * k + kk] += acc;
    }
  }
}

// gb[k,n] += a[m,k]^T * g[m,n]
template <typename T>
void gemm_grad_b(const T* a, const T* g, T* gb, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T aik = a[i * k + kk];
      if (aik == T(0)) continue;
      T* gbrow = gb + kk * n;
      for (std::size_t j = 0; j < n; ++j) gbrow[j] += aik * grow[j];
    }
  }
}

}  // namespace

double selu_value(double x) {
  return x > 0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * std::expm1(x);
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) +
                         " by " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out({m, n});
  gemm_nn(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  check_finite(out, "matmul");
  if (Tape<T>* tape = recording_tape({&a, &b})) {
    out.set_requires_grad(true);
    NodePtr<T> an = a.node(), bn = b.node(), on = out.node();
    tape->record({"matmul", {an, bn}, on, [an, bn, on, m, k, n] {
                    if (an->requires_grad) {
                      gemm_grad_a(on->grad.data(), bn->data.data(),
                                  an->ensure_grad().data(), m, k, n);
                    }
                    if (bn->requires_grad) {
                      gemm_grad_b(an->data.data(), on->grad.data(),
                                  bn->ensure_grad().data(), m, k, n);
                    }
                  }});
  }
  return out;
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != b.dim(1)) {
    throw DimensionError("bmm: cannot multiply " + shape_str(a.shape()) +
                         " by " + shape_str(b.shape()));
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2),
                    n = b.dim(2);
  Tensor<T> out({batch, m, n});
  for (std::size_t s = 0; s < batch; ++s) {
    gemm_nn(a.data().data() + s * m * k, b.data().data() + s * k * n,
            out.data().data() + s * m * n, m, k, n);
  }
  check_finite(out, "bmm");
  if (Tape<T>* tape = recording_tape({&a, &b})) {
    out.set_requires_grad(true);
    NodePtr<T> an = a.node(), bn = b.node(), on = out.node();
    tape->record({"bmm", {an, bn}, on, [an, bn, on, batch, m, k, n] {
                    for (std::size_t s = 0; s < batch; ++s) {
                      const T* g = on->grad.data() + s * m * n;
                      if (an->requires_grad) {
                        gemm_grad_a(g, bn->data.data() + s * k * n,
                                    an->ensure_grad().data() + s * m * k, m, k,
                                    n);
                      }
                      if (bn->requires_grad) {
                        gemm_grad_b(an->data.data() + s * m * k, g,
                                    bn->ensure_grad().data() + s * k * n, m, k,
                                    n);
                      }
                    }
                  }});
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2 && a.rank() != 3) {
    throw DimensionError("transpose expects rank 2 or 3, got " +
                         shape_str(a.shape()));
  }
  const std::size_t batch = a.rank() == 3 ? a.dim(0) : 1;
  const std::size_t rows = a.dim(a.rank() - 2), cols = a.dim(a.rank() - 1);
  Shape shape = a.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  Tensor<T> out(shape);
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        dst[s * rows * cols + j * rows + i] = src[s * rows * cols + i * cols + j];
      }
    }
  }
  if (Tape<T>* tape = recording_tape({&a})) {
    out.set_requires_grad(true);
    NodePtr<T> an = a.node(), on = out.node();
    tape->record({"transpose", {an}, on, [an, on, batch, rows, cols] {
                    auto& ga = an->ensure_grad();
                    for (std::size_t s = 0; s < batch; ++s) {
                      for (std::size_t i = 0; i < rows; ++i) {
                        for (std::size_t j = 0; j < cols; ++j) {
                          ga[s * rows * cols + i * cols + j] +=
                              on->grad[s * rows * cols + j * rows + i];
                        }
                      }
                    }
                  }});
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) +
                         " as " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), a.values());
  if (Tape<T>* tape = recording_tape({&a})) {
    out.set_requires_grad(true);
    NodePtr<T> an = a.node(), on = out.node();
    tape->record({"reshape", {an}, on, [an, on] {
                    auto& ga = an->ensure_grad();
                    for (std::size_t i = 0; i < ga.size(); ++i) {
                      ga[i] += on->grad[i];
                    }
                  }});
  }
  return out;
}

template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b) {
  static constexpr const char* kNames[] = {"add", "sub", "mul"};
  const char* name = kNames[static_cast<int>(op)];
  require_same_shape(a.shape(), b.shape(), name);
  Tensor<T> out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto z = out.data();
  switch (op) {
    case BinaryOp::kAdd:
      for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
      break;
    case BinaryOp::kSub:
      for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] - y[i];
      break;
    case BinaryOp::kMul:
      for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * y[i];
      break;
  }
  check_finite(out, name);
  if (Tape<T>* tape = recording_tape({&a, &b})) {
    out.set_requires_grad(true);
    NodePtr<T> an = a.node(), bn = b.node(), on = out.node();
    tape->record({name, {an, bn}, on, [an, bn, on, op] {
                    const auto& g = on->grad;
                    if (an->requires_grad) {
                      auto& ga = an->ensure_grad();
                      if (op == BinaryOp::kMul) {
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          ga[i] += g[i] * bn->data[i];
                        }
                      } else {
                        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                      }
                    }
                    if (bn->requires_grad) {
                      auto& gb = bn->ensure_grad();
                      switch (op) {
                        case BinaryOp::kAdd:
                          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                          break;
                        case BinaryOp::kSub:
                          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                          break;
                        case BinaryOp::kMul:
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            gb[i] += g[i] * an->data[i];
                          }
                          break;
                      }
                    }
                  }});
  }
  return out;
}

template <typename T>
Tensor<T> elementwise(UnaryOp op, const Tensor<T>& a) {
  static constexpr const char* kNames[] = {"tanh", "sigmoid", "exp", "selu"};
  const char* name = kNames[static_cast<int>(op)];
  const T lambda = static_cast<T>(kSeluLambda);
  const T lambda_alpha = static_cast<T>(kSeluLambda * kSeluAlpha);
  Tensor<T> out(a.shape());
  auto x = a.data();
  auto y = out.data();
  switch (op) {
    case UnaryOp::kTanh:
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(x[i]);
      break;
    case UnaryOp::kSigmoid:
      for (std::size_t i = 0; i < y.size(); ++i) {
        // Split by sign so exp never overflows.
        if (x[i] >= 0) {
          y[i] = T(1) / (T(1) + std::exp(-x[i]));
        } else {
          const T e = std::exp(x[i]);
          y[i] = e / (T(1) + e);
        }
      }
      break;
    case UnaryOp::kExp:
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::exp(x[i]);
      break;
    case UnaryOp::kSelu:
      for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = x[i] > 0 ? lambda * x[i] : lambda_alpha * std::expm1(x[i]);
      }
      break;
  }
  check_finite(out, name);
  if (Tape<T>* tape = recording_tape({&a})) {
    out.set_requires_grad(true);
    NodePtr<T> an = a.node(), on = out.node();
    tape->record({name, {an}, on, [an, on, op, lambda, lambda_alpha] {
                    const auto& g = on->grad;
                    const auto& x = an->data;
                    const auto& y = on->data;
                    auto& ga = an->ensure_grad();
                    switch (op) {
                      case UnaryOp::kTanh:
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          ga[i] += g[i] * (T(1) - y[i] * y[i]);
                        }
                        break;
                      case UnaryOp::kSigmoid:
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          ga[i] += g[i] * y[i] * (T(1) - y[i]);
                        }
                        break;
                      case UnaryOp::kExp:
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          ga[i] += g[i] * y[i];
                        }
                        break;
                      case UnaryOp::kSelu:
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          ga[i] += g[i] * (x[i] > 0 ? lambda
                                                    : lambda_alpha * std::exp(x[i]));
                        }
                        break;
                    }
                  }});
  }
  return out;
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t n = x.shape().back();
  if (bias.rank() != 1 || bias.dim(0) != n) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) +
                         " does not match rows of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / n;
  Tensor<T> out(x.shape());
  auto xs = x.data();
  auto bs = bias.data();
  auto ys = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) ys[r * n + j] = xs[r * n + j] + bs[j];
  }
  check_finite(out, "add_bias");
  if (Tape<T>* tape = recording_tape({&x, &bias})) {
    out.set_requires_grad(true);
    NodePtr<T> xn = x.node(), bn = bias.node(), on = out.node();
    tape->record({"add_bias", {xn, bn}, on, [xn, bn, on, rows, n] {
                    const auto& g = on->grad;
                    if (xn->requires_grad) {
                      auto& gx = xn->ensure_grad();
                      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                    }
                    if (bn->requires_grad) {
                      auto& gb = bn->ensure_grad();
                      for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
                      }
                    }
                  }});
  }
  return out;
}

template <typename T>
Tensor<T> row_scale(const Tensor<T>& x, const Tensor<T>& weights) {
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  if (weights.numel() != rows) {
    throw DimensionError("row_scale: " + shape_str(weights.shape()) +
                         " weights for " + shape_str(x.shape()));
  }
  Tensor<T> out(x.shape());
  auto xs = x.data();
  auto ws = weights.data();
  auto ys = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) ys[r * d + j] = ws[r] * xs[r * d + j];
  }
  check_finite(out, "row_scale");
  if (Tape<T>* tape = recording_tape({&x, &weights})) {
    out.set_requires_grad(true);
    NodePtr<T> xn = x.node(), wn = weights.node(), on = out.node();
    tape->record({"row_scale", {xn, wn}, on, [xn, wn, on, rows, d] {
                    const auto& g = on->grad;
                    if (xn->requires_grad) {
                      auto& gx = xn->ensure_grad();
                      for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t j = 0; j < d; ++j) {
                          gx[r * d + j] += wn->data[r] * g[r * d + j];
                        }
                      }
                    }
                    if (wn->requires_grad) {
                      auto& gw = wn->ensure_grad();
                      for (std::size_t r = 0; r < rows; ++r) {
                        T acc = 0;
                        for (std::size_t j = 0; j < d; ++j) {
                          acc += xn->data[r * d + j] * g[r * d + j];
                        }
                        gw[r] += acc;
                      }
                    }
                  }});
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Tensor<T> out(x.shape());
  auto xs = x.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = factor * xs[i];
  check_finite(out, "scale");
  if (Tape<T>* tape = recording_tape({&x})) {
    out.set_requires_grad(true);
    NodePtr<T> xn = x.node(), on = out.node();
    tape->record({"scale", {xn}, on, [xn, on, factor] {
                    auto& gx = xn->ensure_grad();
                    for (std::size_t i = 0; i < gx.size(); ++i) {
                      gx[i] += factor * on->grad[i];
                    }
                  }});
  }
  return out;
}

template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& logits, MaskView mask) {
  const std::size_t len = logits.shape().back();
  const std::size_t rows = logits.numel() / len;
  if (mask.size() != logits.numel()) {
    throw DimensionError("masked_softmax: mask of " +
                         std::to_string(mask.size()) + " entries for logits " +
                         shape_str(logits.shape()));
  }
  Tensor<T> out(logits.shape());
  auto x = logits.data();
  auto y = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * len;
    T peak = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t t = 0; t < len; ++t) {
      if (mask[base + t]) {
        peak = std::max(peak, x[base + t]);
        any = true;
      }
    }
    if (!any) {
      throw InvalidMaskError("masked_softmax: row " + std::to_string(r) +
                             " is fully masked");
    }
    T total = 0;
    for (std::size_t t = 0; t < len; ++t) {
      if (mask[base + t]) {
        y[base + t] = std::exp(x[base + t] - peak);
        total += y[base + t];
      }
    }
    for (std::size_t t = 0; t < len; ++t) {
      if (mask[base + t]) y[base + t] /= total;
    }
  }
  check_finite(out, "masked_softmax");
  if (Tape<T>* tape = recording_tape({&logits})) {
    out.set_requires_grad(true);
    NodePtr<T> xn = logits.node(), on = out.node();
    tape->record({"masked_softmax", {xn}, on, [xn, on, rows, len] {
                    const auto& g = on->grad;
                    const auto& y = on->data;
                    auto& gx = xn->ensure_grad();
                    for (std::size_t r = 0; r < rows; ++r) {
                      const std::size_t base = r * len;
                      T dot = 0;
                      for (std::size_t t = 0; t < len; ++t) {
                        dot += y[base + t] * g[base + t];
                      }
                      // Masked entries have y == 0 and therefore no gradient.
                      for (std::size_t t = 0; t < len; ++t) {
                        gx[base + t] += y[base + t] * (g[base + t] - dot);
                      }
                    }
                  }});
  }
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  check_axis(first, axis, "concat");
  Shape shape = first;
  shape[axis] = 0;
  for (const Tensor<T>& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) ok = false;
    }
    if (!ok) {
      throw DimensionError("concat: incompatible shapes " + shape_str(first) +
                           " and " + shape_str(s) + " on axis " +
                           std::to_string(axis));
    }
    shape[axis] += s[axis];
  }
  const AxisSplit whole = split_at(shape, axis);
  std::vector<std::size_t> widths;
  for (const Tensor<T>& p : parts) widths.push_back(p.dim(axis) * whole.inner);
  const std::size_t row = whole.len * whole.inner;
  Tensor<T> out(shape);
  auto y = out.data();
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto x = parts[p].data();
    for (std::size_t o = 0; o < whole.outer; ++o) {
      std::copy_n(x.begin() + o * widths[p], widths[p],
                  y.begin() + o * row + offset);
    }
    offset += widths[p];
  }
  if (Tape<T>* tape = recording_tape(parts)) {
    out.set_requires_grad(true);
    std::vector<NodePtr<T>> nodes;
    for (const Tensor<T>& p : parts) nodes.push_back(p.node());
    NodePtr<T> on = out.node();
    const std::size_t outer = whole.outer;
    tape->record({"concat", nodes, on, [nodes, on, widths, outer, row] {
                    std::size_t offset = 0;
                    for (std::size_t p = 0; p < nodes.size(); ++p) {
                      if (nodes[p]->requires_grad) {
                        auto& gx = nodes[p]->ensure_grad();
                        for (std::size_t o = 0; o < outer; ++o) {
                          for (std::size_t i = 0; i < widths[p]; ++i) {
                            gx[o * widths[p] + i] += on->grad[o * row + offset + i];
                          }
                        }
                      }
                      offset += widths[p];
                    }
                  }});
  }
  return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin,
                std::size_t end) {
  check_axis(x.shape(), axis, "slice");
  if (begin >= end || end > x.dim(axis)) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") invalid for axis " +
                         std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = end - begin;
  const std::size_t width = (end - begin) * s.inner;
  const std::size_t row = s.len * s.inner;
  const std::size_t start = begin * s.inner;
  Tensor<T> out(shape);
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(src.begin() + o * row + start, width, dst.begin() + o * width);
  }
  if (Tape<T>* tape = recording_tape({&x})) {
    out.set_requires_grad(true);
    NodePtr<T> xn = x.node(), on = out.node();
    const std::size_t outer = s.outer;
    tape->record({"slice", {xn}, on, [xn, on, outer, width, row, start] {
                    auto& gx = xn->ensure_grad();
                    for (std::size_t o = 0; o < outer; ++o) {
                      for (std::size_t i = 0; i < width; ++i) {
                        gx[o * row + start + i] += on->grad[o * width + i];
                      }
                    }
                  }});
  }
  return out;
}

template <typename T>
Tensor<T> select(const Tensor<T>& x, std::size_t axis, std::size_t index) {
  check_axis(x.shape(), axis, "select");
  if (index >= x.dim(axis)) {
    throw DimensionError("select: index " + std::to_string(index) +
                         " out of range for axis " + std::to_string(axis) +
                         " of " + shape_str(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  const std::size_t row = s.len * s.inner;
  const std::size_t start = index * s.inner;
  Tensor<T> out(drop_axis(x.shape(), axis));
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(src.begin() + o * row + start, s.inner,
                dst.begin() + o * s.inner);
  }
  if (Tape<T>* tape = recording_tape({&x})) {
    out.set_requires_grad(true);
    NodePtr<T> xn = x.node(), on = out.node();
    const std::size_t outer = s.outer, inner = s.inner;
    tape->record({"select", {xn}, on, [xn, on, outer, inner, row, start] {
                    auto& gx = xn->ensure_grad();
                    for (std::size_t o = 0; o < outer; ++o) {
                      for (std::size_t i = 0; i < inner; ++i) {
                        gx[o * row + start + i] += on->grad[o * inner + i];
                      }
                    }
                  }});
  }
  return out;
}

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("stack of zero tensors");
  const Shape& base = parts.front().shape();
  if (axis > base.size()) {
    throw DimensionError("stack: axis " + std::to_string(axis) +
                         " out of range for " + shape_str(base));
  }
  for (const Tensor<T>& p : parts) require_same_shape(base, p.shape(), "stack");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= base[i];
  for (std::size_t i = axis; i < base.size(); ++i) inner *= base[i];
  Shape shape = base;
  shape.insert(shape.begin() + static_cast<std::ptrdiff_t>(axis), parts.size());
  const std::size_t count = parts.size();
  Tensor<T> out(shape);
  auto dst = out.data();
  for (std::size_t p = 0; p < count; ++p) {
    auto src = parts[p].data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.begin() + o * inner, inner,
                  dst.begin() + (o * count + p) * inner);
    }
  }
  if (Tape<T>* tape = recording_tape(parts)) {
    out.set_requires_grad(true);
    std::vector<NodePtr<T>> nodes;
    for (const Tensor<T>& p : parts) nodes.push_back(p.node());
    NodePtr<T> on = out.node();
    tape->record({"stack", nodes, on, [nodes, on, outer, inner, count] {
                    for (std::size_t p = 0; p < count; ++p) {
                      if (!nodes[p]->requires_grad) continue;
                      auto& gx = nodes[p]->ensure_grad();
                      for (std::size_t o = 0; o < outer; ++o) {
                        for (std::size_t i = 0; i < inner; ++i) {
                          gx[o * inner + i] += on->grad[(o * count + p) * inner + i];
                        }
                      }
                    }
                  }});
  }
  return out;
}

template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& x, std::size_t axis,
                 MaskView mask) {
  check_axis(x.shape(), axis, "reduce");
  const AxisSplit s = split_at(x.shape(), axis);
  if (!mask.empty() && mask.size() != s.outer * s.len) {
    throw DimensionError("reduce: mask of " + std::to_string(mask.size()) +
                         " entries for axis " + std::to_string(axis) + " of " +
                         shape_str(x.shape()));
  }
  auto keep = [&](std::size_t o, std::size_t t) {
    return mask.empty() || mask[o * s.len + t] != 0;
  };
  Tensor<T> out(drop_axis(x.shape(), axis));
  auto src = x.data();
  auto dst = out.data();
  // For max: argmax position along the axis per (outer, inner) cell.
  // For mean: unmasked count per outer index.
  std::vector<std::size_t> aux(op == ReduceOp::kMax ? s.outer * s.inner
                                                     : s.outer);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::size_t count = 0;
    for (std::size_t t = 0; t < s.len; ++t) count += keep(o, t) ? 1 : 0;
    if (count == 0) {
      throw InvalidMaskError("reduce: every step masked for row " +
                             std::to_string(o));
    }
    if (op == ReduceOp::kMean) {
      aux[o] = count;
      for (std::size_t i = 0; i < s.inner; ++i) {
        T acc = 0;
        for (std::size_t t = 0; t < s.len; ++t) {
          if (keep(o, t)) acc += src[(o * s.len + t) * s.inner + i];
        }
        dst[o * s.inner + i] = acc / static_cast<T>(count);
      }
    } else {
      for (std::size_t i = 0; i < s.inner; ++i) {
        std::size_t best = s.len;
        T best_value = 0;
        for (std::size_t t = 0; t < s.len; ++t) {
          if (!keep(o, t)) continue;
          const T v = src[(o * s.len + t) * s.inner + i];
          if (best == s.len || v > best_value) {
            best = t;
            best_value = v;
          }
        }
        aux[o * s.inner + i] = best;
        dst[o * s.inner + i] = best_value;
      }
    }
  }
  check_finite(out, "reduce");
  if (Tape<T>* tape = recording_tape({&x})) {
    out.set_requires_grad(true);
    NodePtr<T> xn = x.node(), on = out.node();
    std::vector<std::uint8_t> kept(mask.begin(), mask.end());
    tape->record({op == ReduceOp::kMax ? "reduce_max" : "reduce_mean",
                  {xn},
                  on,
                  [xn, on, op, s, aux = std::move(aux),
                   kept = std::move(kept)] {
                    auto& gx = xn->ensure_grad();
                    const auto& g = on->grad;
                    for (std::size_t o = 0; o < s.outer; ++o) {
                      for (std::size_t i = 0; i < s.inner; ++i) {
                        const T go = g[o * s.inner + i];
                        if (op == ReduceOp::kMax) {
                          gx[(o * s.len + aux[o * s.inner + i]) * s.inner + i] += go;
                          continue;
                        }
                        const T share = go / static_cast<T>(aux[o]);
                        for (std::size_t t = 0; t < s.len; ++t) {
                          if (kept.empty() || kept[o * s.len + t]) {
                            gx[(o * s.len + t) * s.inner + i] += share;
                          }
                        }
                      }
                    }
                  }});
  }
  return out;
}

template <typename T>
Tensor<T> where_rows(MaskView mask, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "where_rows");
  const std::size_t d = a.shape().back();
  const std::size_t rows = a.numel() / d;
  if (mask.size() != rows) {
    throw DimensionError("where_rows: mask of " + std::to_string(mask.size()) +
                         " entries for " + shape_str(a.shape()));
  }
  Tensor<T> out(a.shape());
  auto xa = a.data();
  auto xb = b.data();
  auto y = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    auto src = mask[r] ? xa : xb;
    std::copy_n(src.begin() + r * d, d, y.begin() + r * d);
  }
  if (Tape<T>* tape = recording_tape({&a, &b})) {
    out.set_requires_grad(true);
    NodePtr<T> an = a.node(), bn = b.node(), on = out.node();
    std::vector<std::uint8_t> m(mask.begin(), mask.end());
    tape->record({"where_rows", {an, bn}, on, [an, bn, on, m = std::move(m), d] {
                    for (std::size_t r = 0; r < m.size(); ++r) {
                      const auto& target = m[r] ? an : bn;
                      if (!target->requires_grad) continue;
                      auto& g = target->ensure_grad();
                      for (std::size_t j = 0; j < d; ++j) {
                        g[r * d + j] += on->grad[r * d + j];
                      }
                    }
                  }});
  }
  return out;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training,
                  std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must be in [0, 1), got " +
                      std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  const T survivor = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> factors(x.numel());
  for (T& f : factors) f = keep(rng) ? survivor : T(0);
  Tensor<T> out(x.shape());
  auto xs = x.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = xs[i] * factors[i];
  if (Tape<T>* tape = recording_tape({&x})) {
    out.set_requires_grad(true);
    NodePtr<T> xn = x.node(), on = out.node();
    tape->record({"dropout", {xn}, on, [xn, on, factors = std::move(factors)] {
                    auto& gx = xn->ensure_grad();
                    for (std::size_t i = 0; i < gx.size(); ++i) {
                      gx[i] += on->grad[i] * factors[i];
                    }
                  }});
  }
  return out;
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids,
                    const Shape& index_shape, std::int32_t padding_index) {
  if (table.rank() != 2) {
    throw DimensionError("embedding table must be rank 2, got " +
                         shape_str(table.shape()));
  }
  if (shape_numel(index_shape) != ids.size()) {
    throw DimensionError("embedding: " + std::to_string(ids.size()) +
                         " ids for index shape " + shape_str(index_shape));
  }
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  for (std::int32_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw DataError("token index " + std::to_string(id) +
                      " outside vocabulary of " + std::to_string(vocab));
    }
  }
  Shape shape = index_shape;
  shape.push_back(d);
  Tensor<T> out(shape);
  auto src = table.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(src.begin() + static_cast<std::size_t>(ids[i]) * d, d,
                dst.begin() + i * d);
  }
  if (Tape<T>* tape = recording_tape({&table})) {
    out.set_requires_grad(true);
    NodePtr<T> tn = table.node(), on = out.node();
    std::vector<std::int32_t> idx(ids.begin(), ids.end());
    tape->record({"embedding", {tn}, on,
                  [tn, on, idx = std::move(idx), d, padding_index] {
                    auto& gt = tn->ensure_grad();
                    for (std::size_t i = 0; i < idx.size(); ++i) {
                      if (idx[i] == padding_index) continue;
                      const std::size_t row = static_cast<std::size_t>(idx[i]) * d;
                      for (std::size_t j = 0; j < d; ++j) {
                        gt[row + j] += on->grad[i * d + j];
                      }
                    }
                  }});
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  check_finite(out, "sum");
  if (Tape<T>* tape = recording_tape({&x})) {
    out.set_requires_grad(true);
    NodePtr<T> xn = x.node(), on = out.node();
    tape->record({"sum", {xn}, on, [xn, on] {
                    auto& gx = xn->ensure_grad();
                    const T g = on->grad[0];
                    for (T& v : gx) v += g;
                  }});
  }
  return out;
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits,
                                std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("softmax_cross_entropy: logits " +
                         shape_str(logits.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  std::vector<T> probs(logits.numel());
  auto x = logits.data();
  T total = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw DataError("label " + std::to_string(label) + " outside " +
                      std::to_string(classes) + " classes");
    }
    const T* row = x.data() + b * classes;
    const T peak = *std::max_element(row, row + classes);
    T norm = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      probs[b * classes + c] = std::exp(row[c] - peak);
      norm += probs[b * classes + c];
    }
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] /= norm;
    total += -(row[label] - peak - std::log(norm));
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(batch));
  check_finite(out, "softmax_cross_entropy");
  if (Tape<T>* tape = recording_tape({&logits})) {
    out.set_requires_grad(true);
    NodePtr<T> xn = logits.node(), on = out.node();
    std::vector<int> gold(labels.begin(), labels.end());
    tape->record({"softmax_cross_entropy", {xn}, on,
                  [xn, on, probs = std::move(probs), gold = std::move(gold),
                   batch, classes] {
                    auto& gx = xn->ensure_grad();
                    const T g = on->grad[0] / static_cast<T>(batch);
                    for (std::size_t b = 0; b < batch; ++b) {
                      for (std::size_t c = 0; c < classes; ++c) {
                        const T target =
                            static_cast<int>(c) == gold[b] ? T(1) : T(0);
                        gx[b * classes + c] += g * (probs[b * classes + c] - target);
                      }
                    }
                  }});
  }
  return out;
}

#define AESIM_INSTANTIATE_OPS(T)                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> transpose(const Tensor<T>&);                             \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                        \
  template Tensor<T> elementwise(BinaryOp, const Tensor<T>&,                  \
                                 const Tensor<T>&);                           \
  template Tensor<T> elementwise(UnaryOp, const Tensor<T>&);                  \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> row_scale(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> scale(const Tensor<T>&, T);                              \
  template Tensor<T> masked_softmax(const Tensor<T>&, MaskView);              \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);      \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t,        \
                           std::size_t);                                      \
  template Tensor<T> select(const Tensor<T>&, std::size_t, std::size_t);      \
  template Tensor<T> stack(const std::vector<Tensor<T>>&, std::size_t);       \
  template Tensor<T> reduce(ReduceOp, const Tensor<T>&, std::size_t,          \
                            MaskView);                                        \
  template Tensor<T> where_rows(MaskView, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> dropout(const Tensor<T>&, double, bool,                  \
                             std::mt19937_64&);                               \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const std::int32_t>, \
                               const Shape&, std::int32_t);                   \
  template Tensor<T> sum(const Tensor<T>&);                                   \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&,                  \
                                           std::span<const int>);

AESIM_INSTANTIATE_OPS(float)
AESIM_INSTANTIATE_OPS(double)

#undef AESIM_INSTANTIATE_OPS

}  // namespace aesim
