#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "aesim/errors.hpp"
#include "aesim/grad_check.hpp"
#include "aesim/ops.hpp"
#include "aesim/tensor.hpp"

namespace aesim {
namespace {

using Td = Tensor<double>;

Td random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                 double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Td(shape, std::move(v));
}

// Independent reference product, plain triple loop with no zero skipping.
std::vector<double> triple_loop(const Td& a, const Td& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t t = 0; t < k; ++t) c[i * n + j] += a.at(i, t) * b.at(t, j);
  return c;
}

TEST(Tensor, ShapeAndStorage) {
  Td t({2, 3});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_FALSE(t.has_grad());
  EXPECT_THROW(Td({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
  EXPECT_THROW(Td({2, 0}), DimensionError);
  EXPECT_THROW(t.item(), ContractError);
  EXPECT_DOUBLE_EQ(Td::scalar(4.5).item(), 4.5);
}

TEST(Tensor, CloneIsDeepDetachDropsGrad) {
  Td a({2}, {1.0, 2.0}, true);
  Td c = a.clone();
  c[0] = 9.0;
  EXPECT_DOUBLE_EQ(a[0], 1.0);
  EXPECT_FALSE(a.detach().requires_grad());
}

TEST(Matmul, IdentityCase) {
  Td eye({2, 2}, {1, 0, 0, 1});
  Td b({2, 2}, {3, 4, 5, 6});
  EXPECT_EQ(matmul(eye, b).values(), (std::vector<double>{3, 4, 5, 6}));
}

TEST(Matmul, HandMultiply) {
  Td a({1, 2}, {1, 2});
  Td b({2, 1}, {3, 4});
  EXPECT_DOUBLE_EQ(matmul(a, b).item(), 11.0);
}

TEST(Matmul, MatchesTripleLoopOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Td a = random_tensor({3, 5}, rng), b = random_tensor({5, 4}, rng);
    const auto ref = triple_loop(a, b);
    const Td c = matmul(a, b);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(c[i], ref[i], 1e-12);
  }
}

TEST(Matmul, InnerDimensionMismatch) {
  Td a({2, 3}), b({4, 2});
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x2]"), std::string::npos) << msg;
  }
}

TEST(Elementwise, ReferenceValues) {
  const Td zero = Td::scalar(0.0);
  EXPECT_DOUBLE_EQ(tanh(zero).item(), 0.0);
  EXPECT_DOUBLE_EQ(sigmoid(zero).item(), 0.5);
  EXPECT_DOUBLE_EQ(selu(zero).item(), 0.0);
  EXPECT_DOUBLE_EQ(selu(Td::scalar(1.0)).item(), 1.0507009873554805);
  const double neg = selu(Td::scalar(-1.0)).item();
  EXPECT_NEAR(neg, 1.0507009873554805 * 1.6732632423543772 * (std::exp(-1.0) - 1.0),
              1e-15);
  EXPECT_THROW(add(Td({2}), Td({3})), DimensionError);
}

TEST(Elementwise, NonFiniteResultRaises) {
  EXPECT_THROW(exp(Td::scalar(1000.0)), NumericError);
}

TEST(Elementwise, BoundedInputsStayFinite) {
  std::mt19937_64 rng(5);
  Td x = random_tensor({64}, rng, -50.0, 50.0);
  for (UnaryOp op : {UnaryOp::kTanh, UnaryOp::kSigmoid, UnaryOp::kExp, UnaryOp::kSelu}) {
    const Td y = elementwise(op, x);
    for (double v : y.values()) EXPECT_TRUE(std::isfinite(v));
  }
  const std::vector<std::uint8_t> mask(64, 1);
  const Td s = masked_softmax(reshape(x, {8, 8}), MaskView(mask));
  for (double v : s.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(MaskedSoftmax, UniformRow) {
  const std::vector<std::uint8_t> mask = {1, 1, 1};
  const Td s = masked_softmax(Td({3}, {0, 0, 0}), MaskView(mask));
  for (double v : s.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(MaskedSoftmax, TwoElementOracle) {
  const std::vector<std::uint8_t> mask = {1, 1, 0};
  const Td s = masked_softmax(Td({3}, {1, 2, 3}), MaskView(mask));
  const double e = std::exp(1.0);
  EXPECT_NEAR(s[0], 1.0 / (1.0 + e), 1e-15);
  EXPECT_NEAR(s[1], e / (1.0 + e), 1e-15);
  EXPECT_EQ(s[2], 0.0);
}

TEST(MaskedSoftmax, FullyMaskedRowRaises) {
  const std::vector<std::uint8_t> mask = {0, 0, 0};
  EXPECT_THROW(masked_softmax(Td({3}, {1, 2, 3}), MaskView(mask)), InvalidMaskError);
}

TEST(MaskedSoftmax, NormalizationProperty) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> dim(1, 7);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = dim(rng), cols = dim(rng);
    const Td x = random_tensor({rows, cols}, rng, -20.0, 20.0);
    std::vector<std::uint8_t> mask(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t len = std::uniform_int_distribution<std::size_t>(1, cols)(rng);
      for (std::size_t c = 0; c < cols; ++c) mask[r * cols + c] = c < len;
    }
    const Td s = masked_softmax(x, MaskView(mask));
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        const double w = s.at(r, c);
        EXPECT_GE(w, 0.0);
        if (!mask[r * cols + c]) EXPECT_EQ(w, 0.0);
        total += w;
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(Concat, Definition) {
  const Td c = concat<double>({Td({2, 1}, {1, 2}), Td({2, 1}, {3, 4})}, 1);
  EXPECT_EQ(c.shape(), (Shape{2, 2}));
  EXPECT_EQ(c.values(), (std::vector<double>{1, 3, 2, 4}));
}

TEST(Concat, EnhancementWidth) {
  std::vector<Td> parts(4, Td({1, 600}));
  EXPECT_EQ(concat(parts, 1).shape(), (Shape{1, 2400}));
}

TEST(Concat, MismatchedRowsRaise) {
  EXPECT_THROW(concat<double>({Td({2, 1}), Td({3, 1})}, 1), DimensionError);
}

TEST(Reduce, MaxAndMean) {
  const Td x({2, 2}, {1, 5, 3, 2});
  EXPECT_EQ(reduce(ReduceOp::kMax, x, 0).values(), (std::vector<double>{3, 5}));
  EXPECT_EQ(reduce(ReduceOp::kMean, x, 0).values(), (std::vector<double>{2, 3.5}));
}

TEST(Reduce, MaskedMean) {
  const Td x({2, 2}, {1, 5, 3, 2});
  const std::vector<std::uint8_t> mask = {1, 0};
  EXPECT_EQ(reduce(ReduceOp::kMean, x, 0, MaskView(mask)).values(),
            (std::vector<double>{1, 5}));
}

TEST(Reduce, AllMaskedRaises) {
  const std::vector<std::uint8_t> mask = {0, 0};
  EXPECT_THROW(reduce(ReduceOp::kMax, Td({2, 2}), 0, MaskView(mask)), InvalidMaskError);
}

TEST(Reduce, MaxTieRoutesGradientToFirst) {
  Td x({3, 1}, {2, 2, 1}, true);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    tape.backward(sum(reduce(ReduceOp::kMax, x, 0)));
  }
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()),
            (std::vector<double>{1, 0, 0}));
}

TEST(Dropout, IdentityCases) {
  std::mt19937_64 rng(1);
  Td x({4}, {1, 2, 3, 4});
  EXPECT_EQ(dropout(x, 0.0, true, rng).values(), x.values());
  EXPECT_EQ(dropout(x, 0.5, false, rng).values(), x.values());
  EXPECT_THROW(dropout(x, 1.0, true, rng), ConfigError);
  EXPECT_THROW(dropout(x, -0.1, true, rng), ConfigError);
}

TEST(Dropout, SurvivorScaleAveragesToOne) {
  std::mt19937_64 rng(2024);
  const Td ones = Td::full({100000}, 1.0);
  const Td y = dropout(ones, 0.2, true, rng);
  double total = 0.0;
  std::size_t zeros = 0;
  for (double v : y.values()) {
    total += v;
    if (v == 0.0) {
      ++zeros;
    } else {
      EXPECT_DOUBLE_EQ(v, 1.0 / 0.8);
    }
  }
  EXPECT_NEAR(total / 100000.0, 1.0, 0.02);
  EXPECT_NEAR(static_cast<double>(zeros) / 100000.0, 0.2, 0.01);
}

TEST(Backward, SumGivesOnes) {
  Td x({3}, {4, -1, 7}, true);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    tape.backward(sum(x));
  }
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareGivesTwoX) {
  Td x({3}, {1, 2, 3}, true);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    tape.backward(sum(mul(x, x)));
  }
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()),
            (std::vector<double>{2, 4, 6}));
}

TEST(Backward, TwoConsumersAccumulate) {
  Td x({2}, {0.3, -0.7}, true);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    // d/dx [sum(tanh x) + sum(3x)] = (1 - tanh^2 x) + 3
    tape.backward(add(sum(tanh(x)), sum(scale(x, 3.0))));
  }
  for (std::size_t i = 0; i < 2; ++i) {
    const double t = std::tanh(x[i]);
    EXPECT_NEAR(x.grad()[i], 1.0 - t * t + 3.0, 1e-15);
  }
}

TEST(Backward, LeafGradientsAccumulateAcrossPasses) {
  Td x({1}, {2.0}, true);
  for (int pass = 0; pass < 2; ++pass) {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    tape.backward(sum(x));
  }
  EXPECT_EQ(x.grad()[0], 2.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Backward, ContractViolations) {
  Td x({2}, {1, 2}, true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  Td y = mul(x, x);
  EXPECT_THROW(tape.backward(y), ContractError);
  Tape<double> empty;
  EXPECT_THROW(empty.backward(Td::scalar(1.0)), ContractError);
}

TEST(Backward, NoGradScopeRecordsNothing) {
  Td x({2}, {1, 2}, true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  {
    NoGradScope<double> off;
    sum(mul(x, x));
  }
  EXPECT_TRUE(tape.empty());
  sum(x);
  EXPECT_EQ(tape.size(), 1u);
}

TEST(Embedding, GathersRowsAndSkipsPaddingGradient) {
  Td table({3, 2}, {0, 0, 1, 2, 3, 4}, true);
  const std::vector<std::int32_t> ids = {2, 0, 1};
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    const Td e = embedding(table, std::span<const std::int32_t>(ids), Shape{3});
    EXPECT_EQ(e.values(), (std::vector<double>{3, 4, 0, 0, 1, 2}));
    tape.backward(sum(e));
  }
  EXPECT_EQ(std::vector<double>(table.grad().begin(), table.grad().end()),
            (std::vector<double>{0, 0, 1, 1, 1, 1}));
  const std::vector<std::int32_t> bad = {3};
  EXPECT_THROW(embedding(table, std::span<const std::int32_t>(bad), Shape{1}), DataError);
}

TEST(CrossEntropy, MatchesHandValue) {
  const Td logits({1, 3}, {1.0, 2.0, 3.0});
  const std::vector<int> label = {2};
  const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  EXPECT_NEAR(softmax_cross_entropy(logits, std::span<const int>(label)).item(),
              lse - 3.0, 1e-14);
}

TEST(GradCheck, MatmulChain) {
  std::mt19937_64 rng(8);
  Td a = random_tensor({3, 4}, rng), b = random_tensor({4, 3}, rng),
     c = random_tensor({3, 4}, rng);
  const auto r = grad_check([&] { return sum(tanh(matmul(matmul(a, b), c))); }, {a, b, c});
  EXPECT_LT(r.max_rel_error, 1e-6);
  EXPECT_EQ(r.elements, 36u);
}

TEST(GradCheck, MaskedSoftmaxSum) {
  std::mt19937_64 rng(9);
  Td x = random_tensor({3, 4}, rng), w = random_tensor({3, 4}, rng);
  const std::vector<std::uint8_t> mask = {1, 1, 1, 0, 1, 0, 0, 0, 1, 1, 1, 1};
  const auto r = grad_check(
      [&] { return sum(mul(masked_softmax(x, MaskView(mask)), w)); }, {x});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, DetectsWrongGradient) {
  std::mt19937_64 rng(10);
  Td x = random_tensor({2, 3}, rng);
  GradCheckOptions bad;
  bad.analytic_scale = 1.01;
  EXPECT_GT(grad_check([&] { return sum(mul(x, x)); }, {x}, bad).max_rel_error, 1e-3);
}

TEST(GradCheck, RestoresInputsAndFlags) {
  Td x({2}, {0.25, -0.5});
  const auto before = x.values();
  grad_check([&] { return sum(exp(x)); }, {x});
  EXPECT_EQ(x.values(), before);
  EXPECT_FALSE(x.requires_grad());
}

// Every primitive op, 100 randomized trials each, strict tolerance.
TEST(GradCheck, EveryPrimitiveOpOverHundredTrials) {
  std::mt19937_64 rng(12345);
  GradCheckOptions options;
  options.tolerance = 1e-6;
  double worst = 0.0;
  auto track = [&](const GradCheckResult& r) { worst = std::max(worst, r.max_rel_error); };
  for (int trial = 0; trial < 100; ++trial) {
    Td a = random_tensor({2, 3}, rng), b = random_tensor({3, 2}, rng);
    Td c = random_tensor({2, 3}, rng), w = random_tensor({2, 3}, rng);
    Td p3 = random_tensor({2, 3, 2}, rng), q3 = random_tensor({2, 2, 3}, rng);
    Td bias = random_tensor({3}, rng), rows = random_tensor({2}, rng);
    Td table = random_tensor({4, 3}, rng);
    const std::vector<std::uint8_t> mask = {1, 1, 0, 1, 1, 1};
    const std::vector<std::uint8_t> row_mask = {1, 0};
    const std::vector<std::int32_t> ids = {3, 1, 2};
    const std::vector<int> labels = {1, 0};
    auto probe = [&](const Td& y) { return sum(mul(y, w)); };

    track(grad_check([&] { return sum(mul(matmul(a, b), Td({2, 2}, {1, -2, 3, 0.5}))); }, {a, b}, options));
    track(grad_check([&] { return sum(tanh(bmm(p3, q3))); }, {p3, q3}, options));
    track(grad_check([&] { return probe(transpose(b)); }, {b}, options));
    track(grad_check([&] { return probe(reshape(b, {2, 3})); }, {b}, options));
    track(grad_check([&] { return probe(add(a, c)); }, {a, c}, options));
    track(grad_check([&] { return probe(sub(a, c)); }, {a, c}, options));
    track(grad_check([&] { return probe(mul(a, c)); }, {a, c}, options));
    for (UnaryOp op : {UnaryOp::kTanh, UnaryOp::kSigmoid, UnaryOp::kExp, UnaryOp::kSelu}) {
      track(grad_check([&] { return probe(elementwise(op, a)); }, {a}, options));
    }
    track(grad_check([&] { return probe(add_bias(a, bias)); }, {a, bias}, options));
    track(grad_check([&] { return probe(row_scale(a, rows)); }, {a, rows}, options));
    track(grad_check([&] { return probe(scale(a, -1.5)); }, {a}, options));
    track(grad_check([&] { return probe(masked_softmax(a, MaskView(mask))); }, {a}, options));
    track(grad_check([&] { return sum(tanh(concat<double>({a, c}, 0))); }, {a, c}, options));
    track(grad_check([&] { return sum(tanh(slice(a, 1, 1, 3))); }, {a}, options));
    track(grad_check([&] { return sum(tanh(select(a, 0, 1))); }, {a}, options));
    track(grad_check([&] { return sum(tanh(stack<double>({a, c}, 0))); }, {a, c}, options));
    track(grad_check([&] { return sum(tanh(reduce(ReduceOp::kMax, a, 1))); }, {a}, options));
    track(grad_check([&] { return sum(tanh(reduce(ReduceOp::kMean, a, 1, MaskView(mask)))); }, {a}, options));
    track(grad_check([&] { return probe(where_rows(MaskView(row_mask), a, c)); }, {a, c}, options));
    track(grad_check([&] {
      std::mt19937_64 fixed(trial);
      return probe(dropout(a, 0.3, true, fixed));
    }, {a}, options));
    track(grad_check([&] {
      return sum(tanh(embedding(table, std::span<const std::int32_t>(ids), Shape{3})));
    }, {table}, options));
    track(grad_check([&] {
      return softmax_cross_entropy(matmul(a, b), std::span<const int>(labels));
    }, {a, b}, options));
  }
  EXPECT_LT(worst, 1e-6);
}

}  // namespace
}  // namespace aesim
