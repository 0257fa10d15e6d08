#include <gtest/gtest.h>

#include <cmath>

#include "scribe/autograd.hpp"
#include "scribe/error.hpp"
#include "scribe/ops.hpp"
#include "support.hpp"

using namespace scribe;
using scribe::test::random_tensor;

namespace {

// Direct nested-loop convolution, zero padding.
Tensor conv_oracle(const Tensor& x, const Tensor& k, Index stride, Index pad) {
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index f = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const Index oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
  Tensor out({n, f, oh, ow});
  for (Index b = 0; b < n; ++b)
    for (Index o = 0; o < f; ++o)
      for (Index y = 0; y < oh; ++y)
        for (Index xx = 0; xx < ow; ++xx) {
          double acc = 0;
          for (Index ci = 0; ci < c; ++ci)
            for (Index i = 0; i < kh; ++i)
              for (Index j = 0; j < kw; ++j) {
                const Index iy = y * stride + i - pad, ix = xx * stride + j - pad;
                if (iy < 0 || ix < 0 || iy >= h || ix >= w) continue;
                acc += x.at(b, ci, iy, ix) * k.at(o, ci, i, j);
              }
          out.at(b, o, y, xx) = acc;
        }
  return out;
}

}  // namespace

TEST(Tensor, ShapeMatchesData) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24);
  EXPECT_EQ(shape_size(t.shape()), t.size());
  EXPECT_THROW(Tensor({2, 2}, Eigen::ArrayXd::Zero(3)), DimensionError);
  EXPECT_EQ(Tensor::scalar(2.5).item(), 2.5);
}

TEST(Tensor, NonFiniteLeafRejected) {
  Tape tape;
  EXPECT_THROW(tape.leaf(Tensor({1}, {std::nan("")})), NumericError);
  EXPECT_THROW(tape.leaf(Tensor({1}, {INFINITY})), NumericError);
}

TEST(Tensor, NonFiniteOpOutputRejected) {
  Tape tape;
  const Variable big = tape.leaf(Tensor({1}, {1e200}));
  EXPECT_THROW(mul(big, big), NumericError);
}

TEST(Conv2d, OnesGiveNine) {
  Tape tape;
  const Variable x = tape.leaf(Tensor::full({1, 1, 3, 3}, 1.0));
  const Variable k = tape.leaf(Tensor::full({1, 1, 3, 3}, 1.0));
  const Variable y = conv2d(x, k, 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.value()[0], 9.0);
}

TEST(Conv2d, IdentityKernel) {
  Tape tape;
  const Tensor in = random_tensor({2, 1, 5, 4}, 3);
  const Variable y = conv2d(tape.leaf(in), tape.leaf(Tensor({1, 1, 1, 1}, {1.0})), 1, 0);
  EXPECT_TRUE(y.value() == in);
}

TEST(Conv2d, MatchesNestedLoopOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor x = random_tensor({1, 2, 4, 4}, seed);
    const Tensor k = random_tensor({3, 2, 2, 2}, seed + 100);
    for (Index stride : {1, 2}) {
      for (Index pad : {0, 1}) {
        Tape tape;
        const Tensor got = conv2d(tape.leaf(x), tape.leaf(k), stride, pad).value();
        const Tensor want = conv_oracle(x, k, stride, pad);
        ASSERT_EQ(got.shape(), want.shape());
        EXPECT_LT((got.data() - want.data()).abs().maxCoeff(), 1e-12);
      }
    }
  }
}

TEST(Conv2d, OutputSizeFloorsStride) {
  Tape tape;
  const Variable y = conv2d(tape.leaf(random_tensor({1, 1, 8, 7}, 1)), tape.leaf(random_tensor({2, 1, 3, 3}, 2)), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 4, 4}));
}

TEST(Conv2d, ShapeErrorsNameAxes) {
  Tape tape;
  const Variable x = tape.leaf(random_tensor({1, 3, 4, 4}, 1));
  try {
    conv2d(x, tape.leaf(random_tensor({2, 2, 3, 3}, 2)), 1, 0);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos) << e.what();
  }
  try {
    conv2d(x, tape.leaf(random_tensor({2, 3, 6, 3}, 2)), 1, 0);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("height"), std::string::npos) << e.what();
  }
  EXPECT_THROW(conv2d(x, tape.leaf(random_tensor({2, 3, 3, 3}, 2)), 0, 0), Error);
}

TEST(Elementwise, Examples) {
  Tape tape;
  EXPECT_EQ(sigmoid(tape.leaf(Tensor::scalar(0.0))).value().item(), 0.5);
  EXPECT_EQ(relu(tape.leaf(Tensor::scalar(-3.2))).value().item(), 0.0);
}

TEST(Elementwise, SigmoidDerivativeMatchesFiniteDifference) {
  const double err = grad_check([](Tape&, const Variable& x) { return sum(sigmoid(x)); }, Tensor({1}, {1.0}));
  EXPECT_LT(err, 1e-8);
  Tape tape;
  const Variable x = tape.leaf(Tensor({1}, {1.0}));
  tape.backward(sum(sigmoid(x)));
  const double s = 1.0 / (1.0 + std::exp(-1.0));
  const double h = 1e-5;
  const double fd = (1.0 / (1.0 + std::exp(-(1.0 + h))) - 1.0 / (1.0 + std::exp(-(1.0 - h)))) / (2 * h);
  EXPECT_NEAR(x.grad()[0], s * (1 - s), 1e-15);
  EXPECT_NEAR(x.grad()[0], fd, 1e-8);
}

TEST(Elementwise, BroadcastErrors) {
  Tape tape;
  const Variable a = tape.leaf(random_tensor({2, 3}, 1));
  const Variable b = tape.leaf(random_tensor({4}, 2));
  EXPECT_THROW(add(a, b), DimensionError);
  EXPECT_THROW(mul(a, b), DimensionError);
  EXPECT_EQ(add(a, tape.leaf(random_tensor({1, 3}, 3))).shape(), (Shape{2, 3}));
  EXPECT_EQ(broadcast_shape({4, 1, 3}, {2, 1}), (Shape{4, 2, 3}));
}

TEST(GradCheck, SumIsExact) {
  Tape tape;
  const Tensor x = random_tensor({3, 4}, 7);
  const Variable v = tape.leaf(x);
  tape.backward(sum(v));
  EXPECT_TRUE((v.grad().data() == 1.0).all());
  EXPECT_LT(grad_check([](Tape&, const Variable& a) { return sum(a); }, x), 1e-10);
}

TEST(GradCheck, SumOfSquares) {
  const Tensor x({3}, {1.0, 2.0, 3.0});
  Tape tape;
  const Variable v = tape.leaf(x);
  tape.backward(sum(mul(v, v)));
  EXPECT_EQ(v.grad().data()[0], 2.0);
  EXPECT_EQ(v.grad().data()[1], 4.0);
  EXPECT_EQ(v.grad().data()[2], 6.0);
  EXPECT_LT(grad_check([](Tape&, const Variable& a) { return sum(mul(a, a)); }, x), 1e-8);
}

TEST(GradCheck, NonScalarOutputIsContractError) {
  EXPECT_THROW(grad_check([](Tape&, const Variable& a) { return relu(a); }, random_tensor({3}, 1)), ContractError);
}

TEST(GradCheck, RejectsNonPositiveEps) {
  EXPECT_THROW(grad_check([](Tape&, const Variable& a) { return sum(a); }, random_tensor({3}, 1), 0.0), ParameterError);
}

TEST(Backward, IdentityAndScale) {
  {
    Tape tape;
    const Variable x = tape.leaf(Tensor::scalar(1.7));
    tape.backward(x);
    EXPECT_EQ(x.grad().item(), 1.0);
  }
  {
    Tape tape;
    const Variable x = tape.leaf(Tensor::scalar(1.7));
    tape.backward(scale(x, 3.0));
    EXPECT_EQ(x.grad().item(), 3.0);
  }
}

TEST(Backward, SecondCallIsUsageError) {
  Tape tape;
  const Variable x = tape.leaf(Tensor::scalar(1.0));
  const Variable y = scale(x, 2.0);
  tape.backward(y);
  EXPECT_THROW(tape.backward(y), UsageError);
  EXPECT_THROW(tape.leaf(Tensor::scalar(1.0)), UsageError);
  tape.reset();
  const Variable z = tape.leaf(Tensor::scalar(2.0));
  tape.backward(scale(z, 4.0));
  EXPECT_EQ(z.grad().item(), 4.0);
}

TEST(Backward, NonScalarLossIsContractError) {
  Tape tape;
  const Variable x = tape.leaf(random_tensor({2}, 1));
  EXPECT_THROW(tape.backward(x), ContractError);
}

TEST(Backward, VisitsOpsInExactReverseOrder) {
  Tape tape;
  const Variable x = tape.leaf(random_tensor({2, 2}, 1));
  const Variable a = relu(x);
  const Variable b = sigmoid(a);
  const Variable c = mul(a, b);
  const Variable d = sum(c);
  tape.backward(d);
  const auto& order = tape.last_backward_order();
  ASSERT_EQ(order.size(), tape.op_count());
  for (std::size_t i = 0; i < order.size(); ++i) EXPECT_EQ(order[i], order.size() - 1 - i);
  EXPECT_EQ(tape.op_name(order.front()), "sum");
}

TEST(Backward, ConvReluSumMatchesGradCheck) {
  const Tensor x = random_tensor({2, 2, 5, 5}, 11);
  const Tensor k = random_tensor({3, 2, 3, 3}, 12);
  const double err = grad_check(
      [](Tape&, const std::vector<Variable>& v) { return sum(relu(conv2d(v[0], v[1], 1, 1))); }, {x, k});
  EXPECT_LT(err, 1e-6);
}

TEST(Backward, LeafUsedTwiceAccumulates) {
  const Tensor x = random_tensor({3}, 5);
  Tape tape;
  const Variable v = tape.leaf(x);
  tape.backward(sum(add(scale(v, 2.0), mul(v, v))));
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(v.grad()[i], 2.0 + 2.0 * x[i], 1e-15);
  EXPECT_LT(grad_check([](Tape&, const Variable& a) { return sum(add(scale(a, 2.0), mul(a, a))); }, x), 1e-8);
}

TEST(Backward, ConstantsGetNoGradient) {
  Tape tape;
  const Variable c = tape.constant(Tensor::scalar(2.0));
  const Variable x = tape.leaf(Tensor::scalar(3.0));
  tape.backward(mul(c, x));
  EXPECT_FALSE(c.requires_grad());
  EXPECT_EQ(x.grad().item(), 2.0);
  EXPECT_EQ(c.grad().item(), 0.0);
}

// Every primitive, 10 seeds, shapes up to 4x4x8x8.
class PrimitiveGradients : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(PrimitiveGradients, AllPrimitivesPass) {
  const std::uint64_t s = GetParam();
  std::mt19937_64 rng(s);
  auto dim = [&](Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng); };
  const Index n = dim(1, 2), c = dim(1, 4), h = dim(3, 8), w = dim(3, 8);
  const Tensor x = random_tensor({n, c, h, w}, s * 31 + 1);
  const Tensor other = random_tensor({n, c, h, w}, s * 31 + 2);
  const Tensor weight = random_tensor({dim(1, 4), c, 3, 3}, s * 31 + 3);
  const Tensor bias = random_tensor({1, c, 1, 1}, s * 31 + 4);
  // Keep relu inputs away from the kink.
  Tensor away = x;
  for (Index i = 0; i < away.size(); ++i) away[i] += away[i] >= 0 ? 0.05 : -0.05;

  const double tol = 1e-6;
  EXPECT_LT(grad_check([](Tape&, const std::vector<Variable>& v) { return sum(mul(conv2d(v[0], v[1], 1, 1), conv2d(v[0], v[1], 1, 1))); }, {x, weight}), tol);
  EXPECT_LT(grad_check([](Tape&, const std::vector<Variable>& v) { return sum(conv2d(v[0], v[1], 2, 1)); }, {x, weight}), tol);
  EXPECT_LT(grad_check([&](Tape& t, const Variable& v) { return sum(mul(relu(v), t.constant(other))); }, away), tol);
  EXPECT_LT(grad_check([&](Tape& t, const Variable& v) { return sum(mul(sigmoid(v), t.constant(other))); }, x), tol);
  EXPECT_LT(grad_check([](Tape&, const std::vector<Variable>& v) { return sum(mul(add(v[0], v[1]), v[0])); }, {x, bias}), tol);
  EXPECT_LT(grad_check([](Tape&, const std::vector<Variable>& v) { return sum(mul(v[0], v[1])); }, {x, other}), tol);
  EXPECT_LT(grad_check([](Tape&, const std::vector<Variable>& v) { return sum(mul(v[0], v[1])); }, {x, bias}), tol);
  EXPECT_LT(grad_check([&](Tape& t, const Variable& v) { return sum(mul(scale(v, -1.7), t.constant(other))); }, x), tol);
  EXPECT_LT(grad_check([&](Tape& t, const Variable& v) { return mean(mul(reshape(v, {n * c, h * w}), t.constant(other.reshaped({n * c, h * w})))); }, x), tol);
  const Tensor gamma = random_tensor({4}, s + 5, 0.5, 1.5), beta = random_tensor({4}, s + 6);
  const Tensor x4 = random_tensor({n, 4, h, w}, s + 7), o4 = random_tensor({n, 4, h, w}, s + 8);
  EXPECT_LT(grad_check([&](Tape& t, const std::vector<Variable>& v) { return sum(mul(group_norm(v[0], v[1], v[2], 2), t.constant(o4))); },
                       {x4, gamma, beta}),
            tol);
  EXPECT_LT(grad_check([&](Tape& t, const Variable& v) { return sum(mul(global_avg_pool(v), t.constant(random_tensor({n, c}, s + 9)))); }, x), tol);
  std::vector<int> targets;
  for (Index i = 0; i < n; ++i) targets.push_back(static_cast<int>(i % c));
  EXPECT_LT(grad_check([&](Tape&, const Variable& v) { return softmax_cross_entropy(v, targets); }, random_tensor({n, c}, s + 10, -3, 3)), tol);
}

INSTANTIATE_TEST_SUITE_P(TenSeeds, PrimitiveGradients, ::testing::Range<std::uint64_t>(0, 10));

TEST(Determinism, RepeatedForwardIsBitIdentical) {
  const Tensor x = random_tensor({2, 3, 8, 8}, 1), k = random_tensor({4, 3, 3, 3}, 2);
  auto run = [&] {
    Tape tape;
    return group_norm(relu(conv2d(tape.leaf(x), tape.leaf(k), 1, 1)), tape.leaf(Tensor::full({4}, 1.0)),
                      tape.leaf(Tensor::zeros({4})), 4)
        .value();
  };
  const Tensor a = run(), b = run();
  EXPECT_TRUE(a == b);
}

TEST(Tape, VariablesFromAnotherTapeRejected) {
  Tape t1, t2;
  const Variable a = t1.leaf(Tensor::scalar(1.0));
  const Variable b = t2.leaf(Tensor::scalar(2.0));
  EXPECT_THROW(add(a, b), UsageError);
}
