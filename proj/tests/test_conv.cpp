#include <gtest/gtest.h>

#include "savp/conv.hpp"
#include "savp/rng.hpp"
#include "testutil.hpp"

using savp::Pad;
using savp::Shape;
using savp::Tensor;
using testutil::finite_diff_check;
using testutil::random_tensor;

using D = Tensor<double>;

TEST(Conv2d, HandArithmetic) {
  auto input = D::from_values({1, 1, 2, 2}, {1, 2, 3, 4});
  auto kernel = D::from_values({1, 1, 2, 2}, {1, 0, 0, 1});
  auto out = savp::conv2d<double>(input, kernel, nullptr, 1, Pad::valid);
  EXPECT_EQ(out.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(out.value(), 5.0);
}

TEST(Conv2d, DeltaKernelIsIdentity) {
  savp::Rng rng(1);
  auto input = random_tensor({2, 1, 5, 5}, rng);
  auto kernel = D({1, 1, 3, 3}, 0.0);
  kernel.data()[4] = 1.0;  // center tap
  auto out = savp::conv2d<double>(input, kernel, nullptr, 1, Pad::same);
  EXPECT_EQ(out.values(), input.values());
}

TEST(Conv2d, MatchesNestedLoopOracleBitExact) {
  savp::Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    int64_t b = 1 + rng.index(2), cin = 1 + rng.index(3), cout = 1 + rng.index(3);
    int64_t h = 3 + rng.index(5), w = 3 + rng.index(5);
    int64_t k = 1 + rng.index(3);
    int64_t stride = 1 + rng.index(2);
    Pad pad = rng.bernoulli(0.5) ? Pad::same : Pad::valid;
    if (pad == Pad::valid && (k > h || k > w)) pad = Pad::same;
    auto input = random_tensor({b, cin, h, w}, rng);
    auto weight = random_tensor({cout, cin, k, k}, rng);
    auto bias = random_tensor({cout}, rng);
    auto got = savp::conv2d(input, weight, &bias, stride, pad);
    auto want = testutil::conv2d_ref(input, weight, &bias, stride, pad);
    ASSERT_EQ(got.shape(), want.shape());
    for (int64_t i = 0; i < got.size(); ++i)
      ASSERT_EQ(got.data()[i], want.data()[i]) << "trial " << trial << " flat " << i;
  }
}

TEST(Conv2d, KernelLargerThanInputRejected) {
  auto input = D({1, 1, 2, 2}, 1.0);
  auto kernel = D({1, 1, 3, 3}, 1.0);
  EXPECT_THROW(savp::conv2d<double>(input, kernel, nullptr, 1, Pad::valid), savp::Error);
}

TEST(Conv2d, GradientVsFiniteDifferences) {
  savp::Rng rng(3);
  auto input = random_tensor({1, 2, 4, 4}, rng);
  auto weight = random_tensor({3, 2, 3, 3}, rng);
  auto bias = random_tensor({3}, rng);
  for (Pad pad : {Pad::same, Pad::valid}) {
    auto forward = [&]() {
      auto y = savp::conv2d(input, weight, &bias, 1, pad);
      return savp::sum_all(savp::square(y));
    };
    EXPECT_LT(finite_diff_check(forward, {&input, &weight, &bias}), 1e-5);
  }
  auto forward_s2 = [&]() {
    auto y = savp::conv2d(input, weight, &bias, 2, Pad::same);
    return savp::sum_all(savp::square(y));
  };
  EXPECT_LT(finite_diff_check(forward_s2, {&input, &weight, &bias}), 1e-5);
}

TEST(Conv3d, DeltaKernelIsIdentity) {
  savp::Rng rng(4);
  auto input = random_tensor({1, 1, 3, 4, 4}, rng);
  auto kernel = D({1, 1, 3, 3, 3}, 0.0);
  kernel.data()[13] = 1.0;  // center of 3x3x3
  auto out = savp::conv3d<double>(input, kernel, nullptr, 1, Pad::same);
  EXPECT_EQ(out.values(), input.values());
}

TEST(Conv3d, ConstantInputAllOnesKernel) {
  auto input = D({1, 1, 2, 2, 2}, 1.0);
  auto kernel = D({1, 1, 2, 2, 2}, 1.0);
  auto out = savp::conv3d<double>(input, kernel, nullptr, 1, Pad::valid);
  EXPECT_EQ(out.shape(), (Shape{1, 1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(out.value(), 8.0);
}

TEST(Conv3d, MatchesNestedLoopOracleBitExact) {
  savp::Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    int64_t cin = 1 + rng.index(2), cout = 1 + rng.index(2);
    int64_t t = 3 + rng.index(3), h = 3 + rng.index(3), w = 3 + rng.index(3);
    std::array<int64_t, 3> stride = {1 + rng.index(2), 1 + rng.index(2), 1};
    std::array<Pad, 3> pad = {rng.bernoulli(0.5) ? Pad::same : Pad::valid, Pad::same,
                              Pad::same};
    auto input = random_tensor({1, cin, t, h, w}, rng);
    auto weight = random_tensor({cout, cin, 3, 3, 3}, rng);
    auto got = savp::conv3d<double>(input, weight, nullptr, stride, pad);
    auto want = testutil::conv3d_ref(input, weight, nullptr, stride, pad);
    ASSERT_EQ(got.shape(), want.shape());
    for (int64_t i = 0; i < got.size(); ++i) ASSERT_EQ(got.data()[i], want.data()[i]);
  }
}

TEST(Conv3d, GradientVsFiniteDifferences) {
  savp::Rng rng(6);
  auto input = random_tensor({1, 1, 3, 3, 3}, rng);
  auto weight = random_tensor({2, 1, 2, 2, 2}, rng);
  auto bias = random_tensor({2}, rng);
  auto forward = [&]() {
    auto y = savp::conv3d(input, weight, &bias, {1, 1, 1},
                          {Pad::valid, Pad::same, Pad::same});
    return savp::sum_all(savp::square(y));
  };
  EXPECT_LT(finite_diff_check(forward, {&input, &weight, &bias}), 1e-5);
}

TEST(AvgPool, HandCaseAndConstant) {
  auto x = D::from_values({1, 1, 2, 2}, {1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(savp::avg_pool2d(x, 2).value(), 2.5);
  auto c = D({2, 3, 4, 4}, 0.3);
  auto pooled = savp::avg_pool2d(c, 2);
  for (double v : pooled.values()) EXPECT_DOUBLE_EQ(v, 0.3);
}

TEST(AvgPool, NonDivisibleExtentRejected) {
  EXPECT_THROW(savp::avg_pool2d(D({1, 1, 5, 4}, 1.0), 2), savp::Error);
}

TEST(AvgPool, GradientDistributesUniformly) {
  auto x = D({1, 1, 4, 4}, 1.0);
  savp::Tape<double> tape;
  savp::TapeScope<double> scope(tape);
  x.set_requires_grad(true);
  tape.backward(savp::sum_all(savp::avg_pool2d(x, 2)));
  auto g = tape.grad(x);
  for (double v : g.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Upsample, ConstantAndIdentity) {
  auto c = D({1, 2, 3, 3}, 0.4);
  auto up = savp::upsample_bilinear2d(c, 2);
  EXPECT_EQ(up.shape(), (Shape{1, 2, 6, 6}));
  for (double v : up.values()) EXPECT_DOUBLE_EQ(v, 0.4);
  savp::Rng rng(7);
  auto x = random_tensor({1, 1, 3, 3}, rng);
  EXPECT_EQ(savp::upsample_bilinear2d(x, 1).values(), x.values());
}

TEST(Upsample, CornerAlignedRamp) {
  auto x = D::from_values({1, 1, 2, 2}, {0, 1, 0, 1});
  auto up = savp::upsample_bilinear2d(x, 2);
  std::vector<double> expect_row = {0, 1.0 / 3, 2.0 / 3, 1};
  for (int64_t r = 0; r < 4; ++r)
    for (int64_t c = 0; c < 4; ++c) EXPECT_NEAR(up.at({0, 0, r, c}), expect_row[c], 1e-12);
}

TEST(Upsample, GradientVsFiniteDifferences) {
  savp::Rng rng(8);
  auto x = random_tensor({1, 2, 3, 3}, rng);
  auto w = random_tensor({1, 2, 6, 6}, rng);
  auto forward = [&]() {
    return savp::sum_all(savp::mul(savp::upsample_bilinear2d(x, 2), w));
  };
  EXPECT_LT(finite_diff_check(forward, {&x}), 1e-6);
}

TEST(CdnaWarp, DeltaKernelIsIdentityPerSample) {
  savp::Rng rng(9);
  auto img = random_tensor({2, 1, 5, 5}, rng);
  auto kernels = D({2, 3, 3, 3}, 0.0);
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t n = 0; n < 3; ++n) kernels.data()[(b * 3 + n) * 9 + 4] = 1.0;
  auto out = savp::cdna_warp(img, kernels);
  EXPECT_EQ(out.shape(), (Shape{2, 3, 1, 5, 5}));
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t n = 0; n < 3; ++n)
      for (int64_t p = 0; p < 25; ++p)
        ASSERT_EQ(out.data()[((b * 3 + n) * 1) * 25 + p], img.data()[b * 25 + p]);
}

TEST(CdnaWarp, ShiftKernelTranslatesImage) {
  // A kernel with its mass one tap right of center pulls pixels from the
  // right, shifting content left by one.
  auto img = D({1, 1, 1, 4}, 0.0);
  img.data()[2] = 1.0;
  auto kernels = D({1, 1, 3, 3}, 0.0);
  kernels.data()[5] = 1.0;  // (ky=1, kx=2)
  auto out = savp::cdna_warp(img, kernels);
  EXPECT_DOUBLE_EQ(out.data()[1], 1.0);
  EXPECT_DOUBLE_EQ(out.data()[2], 0.0);
}

TEST(CdnaWarp, MatchesPerSampleConv2dOracle) {
  savp::Rng rng(10);
  auto img = random_tensor({3, 2, 6, 6}, rng);
  auto kernels = random_tensor({3, 4, 3, 3}, rng);
  auto out = savp::cdna_warp(img, kernels);
  for (int64_t b = 0; b < 3; ++b)
    for (int64_t n = 0; n < 4; ++n) {
      // one (sample, kernel) pair as a standard depth-1 convolution per channel
      for (int64_t c = 0; c < 2; ++c) {
        std::vector<double> chan(36), kk(9);
        for (int64_t i = 0; i < 36; ++i) chan[i] = img.data()[(b * 2 + c) * 36 + i];
        for (int64_t i = 0; i < 9; ++i) kk[i] = kernels.data()[(b * 4 + n) * 9 + i];
        auto ref = testutil::conv2d_ref(D::from_values({1, 1, 6, 6}, chan),
                                        D::from_values({1, 1, 3, 3}, kk), nullptr, 1,
                                        Pad::same);
        for (int64_t p = 0; p < 36; ++p)
          ASSERT_NEAR(out.data()[((b * 4 + n) * 2 + c) * 36 + p], ref.data()[p], 1e-13);
      }
    }
}

TEST(CdnaWarp, GradientVsFiniteDifferences) {
  savp::Rng rng(11);
  auto img = random_tensor({1, 1, 4, 4}, rng);
  auto kernels = random_tensor({1, 2, 3, 3}, rng);
  auto w = random_tensor({1, 2, 1, 4, 4}, rng);
  auto forward = [&]() {
    return savp::sum_all(savp::mul(savp::cdna_warp(img, kernels), w));
  };
  EXPECT_LT(finite_diff_check(forward, {&img, &kernels}), 1e-5);
}
