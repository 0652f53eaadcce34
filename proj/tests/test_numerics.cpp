#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "test_support.hpp"

using namespace urbanpulse;
using num::Tensor;
using test::random_tensor;

namespace {

constexpr double kH = 1e-5;
constexpr double kTol = 1e-4;

// Projects an op output onto fixed random weights so every entry has a
// nonzero, well-conditioned derivative.
struct Probe {
  num::Rng rng{1234};
  Tensor weights;

  Tensor operator()(const Tensor& y) {
    if (!weights.defined() || weights.numel() != y.numel()) {
      weights = random_tensor(rng, {y.numel()}, 1.0, false);
    }
    return num::sum(num::mul(num::reshape(y, {y.numel()}), weights));
  }
};

void expect_grad(const std::function<Tensor()>& f, Tensor p) {
  auto r = num::grad_check(f, p, kH, kTol);
  EXPECT_TRUE(r.passed) << "max rel error " << r.max_rel_error << " at " << r.worst_index;
}

}  // namespace

TEST(Tensor, FactoriesAndShapes) {
  auto t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(num::shape_str(t.shape()), "[2x3]");
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), num::ShapeError);
  EXPECT_THROW(num::add(t, Tensor::zeros({3, 2})), num::ShapeError);
  EXPECT_THROW(num::backward(t), num::ShapeError);
}

TEST(Tensor, NoGradGuardSkipsHistory) {
  auto x = Tensor::from({2}, {1, 2}, true);
  {
    num::NoGradGuard g;
    auto y = num::square(x);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(num::square(x).requires_grad());
}

TEST(Tensor, GradientAccumulatesOverSharedInputs) {
  auto x = Tensor::from({1}, {3.0}, true);
  auto y = num::add(num::mul(x, x), x);  // x^2 + x
  num::backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Ops, SoftplusOracleValues) {
  auto y = num::softplus(Tensor::from({3}, {0.0, -20.0, 40.0}));
  EXPECT_NEAR(y[0], 0.6931471805599453, 1e-15);
  EXPECT_NEAR(y[1], 2.061153620314380703e-9, 1e-22);
  EXPECT_DOUBLE_EQ(y[2], 40.0);
}

TEST(Ops, LayerNormOracle) {
  auto y = num::layer_norm(Tensor::from({1, 3}, {1, 2, 3}), Tensor::full({3}, 1.0), Tensor::zeros({3}), 0.0);
  EXPECT_NEAR(y[0], -1.2247448713915890, 1e-12);
  EXPECT_NEAR(y[1], 0.0, 1e-12);
  EXPECT_NEAR(y[2], 1.2247448713915890, 1e-12);
  // Constant row with zero eps falls back to beta.
  auto c = num::layer_norm(Tensor::from({1, 2}, {5, 5}), Tensor::full({2}, 1.0), Tensor::full({2}, 0.5), 0.0);
  EXPECT_EQ(c[0], 0.5);
}

TEST(Ops, Conv1dOracle) {
  auto y = num::conv1d_time(Tensor::from({1, 1, 4}, {1, 2, 3, 4}), Tensor::from({1, 1, 3}, {1, 1, 1}));
  ASSERT_EQ(y.numel(), 4u);
  EXPECT_EQ(y.vec(), (std::vector<double>{3, 6, 9, 7}));
  EXPECT_THROW(num::conv1d_time(Tensor::zeros({1, 1, 4}), Tensor::zeros({1, 1, 2})), num::ShapeError);
}

TEST(Ops, SoftmaxOracleAndMask) {
  auto y = num::attention_softmax(Tensor::from({1, 3}, {1, 2, 7}), {1, 1, 0});
  EXPECT_NEAR(y[0], 0.2689414213699951, 1e-15);
  EXPECT_NEAR(y[1], 0.7310585786300049, 1e-15);
  EXPECT_EQ(y[2], 0.0);
  EXPECT_THROW(num::attention_softmax(Tensor::zeros({1, 2}), {0, 0}), std::invalid_argument);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  num::Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t q = 1 + rng.index(6), k = 1 + rng.index(9);
    auto s = random_tensor(rng, {q, k}, 10.0, false);
    std::vector<std::uint8_t> mask(q * k);
    for (std::size_t r = 0; r < q; ++r) {
      for (std::size_t c = 0; c < k; ++c) mask[r * k + c] = rng.uniform() < 0.6;
      mask[r * k + rng.index(k)] = 1;
    }
    auto y = num::attention_softmax(s, mask);
    for (std::size_t r = 0; r < q; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        if (!mask[r * k + c]) EXPECT_EQ(y[r * k + c], 0.0);
        total += y[r * k + c];
      }
      EXPECT_NEAR(total, 1.0, 1e-9);
    }
  }
}

TEST(Ops, EmbeddingRejectsUnknownIndex) {
  EXPECT_THROW(num::embedding(Tensor::zeros({3, 2}), {0, 3}), std::out_of_range);
}

TEST(Ops, DropoutDeterministicAndIdentityAtEval) {
  num::Rng rng(3);
  auto x = random_tensor(rng, {4, 16}, 1.0, false);
  EXPECT_EQ(num::dropout(x, 0.5, false, 1).vec(), x.vec());
  EXPECT_EQ(num::dropout(x, 0.5, true, 9).vec(), num::dropout(x, 0.5, true, 9).vec());
  EXPECT_NE(num::dropout(x, 0.5, true, 9).vec(), num::dropout(x, 0.5, true, 10).vec());
}

TEST(Random, StreamsAreReproducible) {
  num::Rng a(7, 2), b(7, 2), c(7, 3);
  for (int i = 0; i < 10; ++i) {
    const auto va = a.next();
    EXPECT_EQ(va, b.next());
    EXPECT_NE(va, c.next());
  }
}

// ---------------------------------------------------------------------------
// Finite-difference checks, one per differentiable primitive.

class GradCheck : public ::testing::Test {
 protected:
  num::Rng rng{42};
  Probe probe;
};

TEST_F(GradCheck, Matmul) {
  auto a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {4, 2});
  expect_grad([&] { return probe(num::matmul(a, b)); }, a);
  expect_grad([&] { return probe(num::matmul(a, b)); }, b);
  auto c = random_tensor(rng, {5, 4});
  expect_grad([&] { return probe(num::matmul_nt(a, c)); }, a);
  expect_grad([&] { return probe(num::matmul_nt(a, c)); }, c);
  auto x = random_tensor(rng, {2, 3, 4}), y = random_tensor(rng, {2, 4, 3});
  expect_grad([&] { return probe(num::bmm(x, y)); }, x);
  expect_grad([&] { return probe(num::bmm(x, y)); }, y);
}

TEST_F(GradCheck, Conv1dTime) {
  auto x = random_tensor(rng, {2, 3, 5}), k = random_tensor(rng, {4, 3, 3}), b = random_tensor(rng, {4});
  expect_grad([&] { return probe(num::conv1d_time(x, k, b)); }, x);
  expect_grad([&] { return probe(num::conv1d_time(x, k, b)); }, k);
  expect_grad([&] { return probe(num::conv1d_time(x, k, b)); }, b);
}

TEST_F(GradCheck, Elementwise) {
  auto x = random_tensor(rng, {3, 4}), y = random_tensor(rng, {3, 4}), row = random_tensor(rng, {4});
  expect_grad([&] { return probe(num::relu(x)); }, x);
  expect_grad([&] { return probe(num::softplus(num::scale(x, 3.0))); }, x);
  expect_grad([&] { return probe(num::tanh(x)); }, x);
  expect_grad([&] { return probe(num::exp(x)); }, x);
  expect_grad([&] { return probe(num::abs(x)); }, x);
  expect_grad([&] { return probe(num::square(x)); }, x);
  expect_grad([&] { return probe(num::clamp(x, -0.5, 0.5)); }, x);
  expect_grad([&] { return probe(num::mul(x, y)); }, y);
  expect_grad([&] { return probe(num::sub(x, y)); }, y);
  expect_grad([&] { return probe(num::minimum(x, y)); }, x);
  expect_grad([&] { return probe(num::add(x, row)); }, row);
  expect_grad([&] { return probe(num::add_scalar(x, 2.0)); }, x);
}

TEST_F(GradCheck, LayerNorm) {
  auto x = random_tensor(rng, {3, 5}), g = random_tensor(rng, {5}), b = random_tensor(rng, {5});
  expect_grad([&] { return probe(num::layer_norm(x, g, b, 1e-5)); }, x);
  expect_grad([&] { return probe(num::layer_norm(x, g, b, 1e-5)); }, g);
  expect_grad([&] { return probe(num::layer_norm(x, g, b, 1e-5)); }, b);
}

TEST_F(GradCheck, Softmax) {
  auto s = random_tensor(rng, {3, 4});
  expect_grad([&] { return probe(num::attention_softmax(s, {1, 0, 1, 1})); }, s);
  expect_grad([&] { return probe(num::attention_softmax(s, {1, 1, 0, 0, 0, 1, 1, 1, 1, 0, 0, 1})); }, s);
}

TEST_F(GradCheck, EmbeddingAndRows) {
  auto table = random_tensor(rng, {5, 3});
  expect_grad([&] { return probe(num::embedding(table, {0, 2, 2, 4})); }, table);
  auto x = random_tensor(rng, {4, 3});
  expect_grad([&] { return probe(num::gather_rows(x, {3, 1, 1})); }, x);
  expect_grad([&] { return probe(num::scatter_rows(x, {0, 2, 5, 6}, 7)); }, x);
}

TEST_F(GradCheck, Reductions) {
  auto x = random_tensor(rng, {4, 3});
  expect_grad([&] { return probe(num::sum(x)); }, x);
  expect_grad([&] { return probe(num::mean(x)); }, x);
  expect_grad([&] { return probe(num::mean_rows(x)); }, x);
  expect_grad([&] { return probe(num::std_rows(x)); }, x);
  expect_grad([&] { return probe(num::max_rows(x)); }, x);
  expect_grad([&] { return probe(num::min_rows(x)); }, x);
}

TEST_F(GradCheck, Layout) {
  auto a = random_tensor(rng, {2, 3}), b = random_tensor(rng, {2, 2});
  expect_grad([&] { return probe(num::concat({a, b}, 1)); }, a);
  expect_grad([&] { return probe(num::concat({a, b}, 1)); }, b);
  auto c = random_tensor(rng, {1, 3});
  expect_grad([&] { return probe(num::concat({a, c}, 0)); }, c);
  auto x = random_tensor(rng, {2, 3, 4});
  expect_grad([&] { return probe(num::permute(x, {2, 0, 1})); }, x);
  expect_grad([&] { return probe(num::slice(x, 2, 1, 3)); }, x);
  expect_grad([&] { return probe(num::reshape(x, {6, 4})); }, x);
}

TEST_F(GradCheck, Dropout) {
  auto x = random_tensor(rng, {3, 4});
  expect_grad([&] { return probe(num::dropout(x, 0.3, true, 11)); }, x);
}
