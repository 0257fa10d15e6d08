#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "scribe/color.hpp"
#include "scribe/ibe.hpp"
#include "scribe/ops.hpp"
#include "support.hpp"

using namespace scribe;
using scribe::test::random_tensor;

namespace {

double sigma(double v) { return 1.0 / (1.0 + std::exp(-v)); }

Cam<double> random_cam(Index k, Index h, Index w, std::uint64_t seed, double spread = 3.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-spread, spread);
  Cam<double> cam(k, h, w);
  for (Index i = 0; i < cam.values.size(); ++i) cam.values.data()[i] = u(rng);
  return cam;
}

Eigen::ArrayXd random_logits(Index k, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  Eigen::ArrayXd s(k);
  for (Index i = 0; i < k; ++i) s[i] = u(rng);
  return s;
}

// Finite differences of the scalar loss directly, no tape involved.
Eigen::ArrayXd fd_loss_grad(const Eigen::ArrayXd& s, int t) {
  const double h = 1e-5;
  Eigen::ArrayXd g(s.size());
  for (Index i = 0; i < s.size(); ++i) {
    Eigen::ArrayXd up = s, dn = s;
    up[i] += h;
    dn[i] -= h;
    g[i] = (ibe_loss(up, t).loss - ibe_loss(dn, t).loss) / (2 * h);
  }
  return g;
}

}  // namespace

TEST(LsePool, ConstantMapGivesConstant) {
  Cam<double> cam(2, 3, 3);
  cam.values.row(0).setConstant(1.25);
  cam.values.row(1).setConstant(-4.0);
  for (double r : {0.1, 1.0, 4.0, 50.0}) {
    const auto s = lse_pool_spatial(cam, {r});
    EXPECT_NEAR(s[0], 1.25, 1e-12);
    EXPECT_NEAR(s[1], -4.0, 1e-12);
  }
}

TEST(LsePool, HandExample) {
  Cam<double> cam(1, 1, 2);
  cam.at(0, 0, 0) = 0.0;
  cam.at(0, 0, 1) = 10.0;
  EXPECT_NEAR(lse_pool_spatial(cam, {1.0})[0], std::log((1.0 + std::exp(10.0)) / 2.0), 1e-12);
  EXPECT_NEAR(lse_pool_spatial(cam, {1.0})[0], 9.30695, 1e-4);  // exact value 9.306898...
  const double big = lse_pool_spatial(cam, {100.0})[0];
  EXPECT_NEAR(big, 10.0, 0.01);
  EXPECT_NEAR(big, 10.0 + std::log(0.5 * (1.0 + std::exp(-1000.0))) / 100.0, 1e-12);
}

TEST(LsePool, NonPositiveRRejected) {
  const Cam<double> cam = random_cam(2, 2, 2, 1);
  EXPECT_THROW(lse_pool_spatial(cam, {0.0}), ParameterError);
  EXPECT_THROW(lse_pool_spatial(cam, {-1.0}), ParameterError);
  EXPECT_THROW(attention_map(cam, {0.0}, 4, 4), ParameterError);
}

TEST(LsePool, ShiftEquivarianceBoundsAndMonotonicity) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Cam<double> cam = random_cam(3, 4, 5, seed);
    const auto base = lse_pool_spatial(cam, {4.0});
    Cam<double> shifted = cam;
    shifted.values += 2.75;
    const auto moved = lse_pool_spatial(shifted, {4.0});
    for (Index n = 0; n < 3; ++n) {
      EXPECT_NEAR(moved[n], base[n] + 2.75, 1e-10);
      const double mean = cam.values.row(n).mean(), mx = cam.values.row(n).maxCoeff();
      EXPECT_LT(mean, base[n]);
      EXPECT_LT(base[n], mx);
      double prev = -INFINITY;
      for (double r : {0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0}) {
        const double v = lse_pool_spatial(cam, {r})[n];
        EXPECT_LE(prev, v + 1e-10);
        prev = v;
      }
    }
  }
}

TEST(IbeLoss, ZeroLogits) {
  const Eigen::Array2d s(0.0, 0.0);
  const auto res = ibe_loss(s, 0);
  EXPECT_NEAR(res.loss, 2.0 * std::log(2.0), 1e-15);
  EXPECT_NEAR(res.grad[0], -0.5, 1e-15);
  EXPECT_NEAR(res.grad[1], 0.5, 1e-15);
  const Eigen::ArrayXd fd = fd_loss_grad(Eigen::ArrayXd(s), 0);
  EXPECT_NEAR(fd[0], -0.5, 1e-9);
  EXPECT_NEAR(fd[1], 0.5, 1e-9);
}

TEST(IbeLoss, IdealPrediction) {
  EXPECT_LT(ibe_loss(Eigen::Array2d(30.0, -30.0), 0).loss, 1e-9);
  EXPECT_GE(ibe_loss(Eigen::Array2d(30.0, -30.0), 0).loss, 0.0);
}

TEST(IbeLoss, TargetOutOfRange) {
  EXPECT_THROW(ibe_loss(Eigen::Array2d(0.0, 0.0), 2), ParameterError);
  EXPECT_THROW(ibe_loss(Eigen::Array2d(0.0, 0.0), -1), ParameterError);
}

TEST(IbeLoss, GradientIdentityClosedForm) {
  std::mt19937_64 rng(2024);
  for (Index k : {2, 3, 10}) {
    for (int trial = 0; trial < 50; ++trial) {
      const Eigen::ArrayXd s = random_logits(k, rng);
      const int t = static_cast<int>(rng() % static_cast<std::uint64_t>(k));
      const auto res = ibe_loss(s, t);
      EXPECT_NEAR(res.grad[t], -(1.0 - sigma(s[t])), 1e-12);
      double denom = 1.0;
      for (Index m = 0; m < k; ++m)
        if (m != t) denom += std::exp(s[m]);
      for (Index m = 0; m < k; ++m)
        if (m != t) EXPECT_NEAR(res.grad[m], std::exp(s[m]) / denom, 1e-12);
      const Eigen::ArrayXd fd = fd_loss_grad(s, t);
      EXPECT_LT((fd - res.grad).abs().maxCoeff(), 1e-8);
      const double closed = std::log1p(std::exp(-s[t])) + std::log(denom);
      EXPECT_NEAR(res.loss, closed, 1e-12);
      EXPECT_GE(res.loss, 0.0);
    }
  }
}

TEST(IbeLoss, Ordering) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::ArrayXd s = random_logits(4, rng);
    const double l0 = ibe_loss(s, 1).loss;
    Eigen::ArrayXd up = s;
    up[1] += 0.3;
    EXPECT_LT(ibe_loss(up, 1).loss, l0);
    Eigen::ArrayXd other = s;
    other[3] += 0.3;
    EXPECT_GT(ibe_loss(other, 1).loss, l0);
  }
}

TEST(IbeLoss, TapeOpsPassGradCheck) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor cam = random_tensor({3, 4, 3, 5}, seed, -2, 2);
    const std::vector<int> targets{0, 3, 2};
    const double err = grad_check(
        [&](Tape&, const Variable& v) { return ibe_loss(lse_pool(v, {4.0}), targets); }, cam);
    EXPECT_LT(err, 1e-6) << "seed " << seed;
    EXPECT_LT(grad_check([](Tape& t, const Variable& v) { return sum(mul(lse_pool(v, {2.5}), t.constant(random_tensor({3, 4}, 9)))); }, cam), 1e-6);
  }
}

TEST(IbeLoss, FullLossOnTwoClassCam) {
  const Tensor cam = random_tensor({1, 2, 4, 4}, 99, -3, 3);
  EXPECT_LT(grad_check([](Tape&, const Variable& v) { return ibe_loss(lse_pool(v, {4.0}), {1}); }, cam), 1e-6);
}

TEST(IbeLoss, TapeValueMatchesScalarFormula) {
  const Tensor cam = random_tensor({2, 3, 2, 2}, 5);
  Tape tape;
  const Variable pooled = lse_pool(tape.leaf(cam), {4.0});
  const double loss = ibe_loss(pooled, {2, 0}).value().item();
  double want = 0.0;
  for (Index n = 0; n < 2; ++n) {
    const auto s = lse_pool_spatial(Cam<double>::from_batch(cam, n), {4.0});
    want += ibe_loss(s, n == 0 ? 2 : 0).loss;
  }
  EXPECT_NEAR(loss, want / 2.0, 1e-12);
}

TEST(Attention, ZeroLogitsGiveHalf) {
  const AttentionMap a = attention_map(Cam<double>(3, 4, 4), {4.0}, 16, 16);
  EXPECT_EQ(a.rows(), 16);
  EXPECT_EQ(a.cols(), 16);
  EXPECT_TRUE((a.values == 0.5).all());
}

TEST(Attention, SaturatesTowardOne) {
  Cam<double> cam(2, 2, 2);
  cam.at(1, 0, 0) = 60.0;
  const auto low = attention_at_cam_resolution(cam, {4.0});
  EXPECT_GT(low(0, 0), 1.0 - 1e-15);
  EXPECT_DOUBLE_EQ(low(1, 1), 0.5);
}

TEST(Attention, TwoClassFixtureMatchesScalarFormula) {
  // class 0 = [[0,4],[-4,0]], class 1 = its negation
  Cam<double> cam(2, 2, 2);
  const double c0[2][2] = {{0, 4}, {-4, 0}};
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) {
      cam.at(0, y, x) = c0[y][x];
      cam.at(1, y, x) = -c0[y][x];
    }
  const double r = 4.0;
  const auto low = attention_at_cam_resolution(cam, {r});
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) {
      const double a = cam.at(0, y, x), b = cam.at(1, y, x);
      const double want = sigma(std::log(0.5 * (std::exp(r * a) + std::exp(r * b))) / r);
      EXPECT_NEAR(low(y, x), want, 1e-12);
    }
}

TEST(Attention, OpenIntervalAndSizeChecks) {
  const Cam<double> cam = random_cam(4, 8, 8, 3);
  const AttentionMap a = attention_map(cam, {4.0}, 32, 32, 17);
  EXPECT_EQ(a.image_id, 17);
  EXPECT_GT(a.values.minCoeff(), 0.0);
  EXPECT_LT(a.values.maxCoeff(), 1.0);
  EXPECT_THROW(attention_map(cam, {4.0}, 4, 32), ParameterError);
}

TEST(Attention, UpsamplingOfConstantIsConstant) {
  Eigen::ArrayXXd src = Eigen::ArrayXXd::Constant(3, 5, 0.37);
  EXPECT_LT((bilinear_resize(src, 12, 20) - 0.37).abs().maxCoeff(), 1e-15);
}

TEST(Mask, ZeroAttentionIsBlack) {
  const Cam<double> cam = random_cam(3, 4, 4, 1);
  AttentionMap attn{Eigen::ArrayXXd::Zero(16, 16), 0};
  const auto mask = segmentation_mask(cam, attn, evenly_spaced_hues(3));
  EXPECT_TRUE((mask.rgb.data == 0.0).all());
}

TEST(Mask, SingleClassBrightnessEqualsAttention) {
  const Cam<double> cam = random_cam(1, 4, 4, 2);
  const AttentionMap attn = attention_map(cam, {4.0}, 16, 16);
  const auto mask = segmentation_mask(cam, attn, evenly_spaced_hues(1));
  for (Index y = 0; y < 16; ++y)
    for (Index x = 0; x < 16; ++x) {
      double h, s, v;
      rgb_to_hsv(mask.rgb.at(0, y, x), mask.rgb.at(1, y, x), mask.rgb.at(2, y, x), h, s, v);
      EXPECT_NEAR(v, attn.values(y, x), 1e-12);
      EXPECT_NEAR(h, 0.0, 1e-9);
      EXPECT_EQ(mask.classes(y, x), 0);
    }
}

TEST(Mask, LeftRightFixture) {
  Cam<double> cam(2, 4, 4);
  for (Index y = 0; y < 4; ++y)
    for (Index x = 0; x < 4; ++x) {
      cam.at(0, y, x) = x < 2 ? 2.0 : -2.0;
      cam.at(1, y, x) = -cam.at(0, y, x);
    }
  const AttentionMap attn = attention_map(cam, {4.0}, 16, 16);
  const std::vector<double> hues = evenly_spaced_hues(2);
  const auto mask = segmentation_mask(cam, attn, hues);
  for (Index y = 0; y < 16; ++y)
    for (Index x = 0; x < 16; ++x) {
      const int want = x < 8 ? 0 : 1;
      EXPECT_EQ(mask.classes(y, x), want) << y << "," << x;
      double h, s, v;
      rgb_to_hsv(mask.rgb.at(0, y, x), mask.rgb.at(1, y, x), mask.rgb.at(2, y, x), h, s, v);
      EXPECT_NEAR(h, hues[static_cast<std::size_t>(want)], 1e-9);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Mask, TiesGoToLowestIndex) {
  const Cam<double> cam(3, 2, 2);
  const auto mask = segmentation_mask(cam, attention_map(cam, {4.0}, 4, 4), evenly_spaced_hues(3));
  EXPECT_TRUE((mask.classes == 0).all());
}

TEST(Mask, PaletteMismatch) {
  const Cam<double> cam = random_cam(3, 2, 2, 4);
  EXPECT_THROW(segmentation_mask(cam, attention_map(cam, {4.0}, 4, 4), evenly_spaced_hues(2)), ParameterError);
}

TEST(Mask, ArgmaxInvariantUnderPerPixelShift) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Cam<double> cam = random_cam(4, 5, 5, seed);
    Cam<double> shifted = cam;
    std::mt19937_64 rng(seed + 1000);
    std::uniform_real_distribution<double> u(-10, 10);
    for (Index p = 0; p < 25; ++p) shifted.values.col(p) += u(rng);
    const AttentionMap attn = attention_map(cam, {4.0}, 20, 20);
    const auto a = segmentation_mask(cam, attn, evenly_spaced_hues(4));
    const auto b = segmentation_mask(shifted, attn, evenly_spaced_hues(4));
    // Bilinear upsampling is linear, so the shift carries through to every pixel.
    EXPECT_TRUE((a.classes == b.classes).all());
  }
}

TEST(Mask, PaletteIsEvenlySpaced) {
  const auto h = evenly_spaced_hues(4);
  EXPECT_EQ(h, (std::vector<double>{0, 90, 180, 270}));
}
