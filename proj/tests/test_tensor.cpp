#include <gtest/gtest.h>

#include "savp/ops.hpp"
#include "savp/rng.hpp"
#include "savp/tensor.hpp"
#include "testutil.hpp"

using savp::Shape;
using savp::Tensor;
using testutil::finite_diff_check;
using testutil::random_tensor;

using D = Tensor<double>;

TEST(Elementwise, AddBasic) {
  auto a = D::from_values({2}, {1, 2});
  auto b = D::from_values({2}, {3, 4});
  auto c = savp::add(a, b);
  EXPECT_EQ(c.values(), (std::vector<double>{4, 6}));
}

TEST(Elementwise, AbsValueAndGradient) {
  auto x = D::from_values({3}, {-0.5, -0.5, -0.5});
  savp::Tape<double> tape;
  savp::TapeScope<double> scope(tape);
  x.set_requires_grad(true);
  auto y = savp::abs(x);
  EXPECT_EQ(y.values(), (std::vector<double>{0.5, 0.5, 0.5}));
  tape.backward(savp::sum_all(y));
  EXPECT_EQ(tape.grad(x).values(), (std::vector<double>{-1, -1, -1}));
}

TEST(Elementwise, AbsSubgradientZeroAtZero) {
  auto x = D::from_values({3}, {-1.0, 0.0, 2.0});
  savp::Tape<double> tape;
  savp::TapeScope<double> scope(tape);
  x.set_requires_grad(true);
  tape.backward(savp::sum_all(savp::abs(x)));
  EXPECT_EQ(tape.grad(x).values(), (std::vector<double>{-1, 0, 1}));
}

TEST(Elementwise, SquareGradient) {
  auto x = D::from_values({3}, {1, 2, 3});
  savp::Tape<double> tape;
  savp::TapeScope<double> scope(tape);
  x.set_requires_grad(true);
  tape.backward(savp::sum_all(savp::square(x)));
  EXPECT_EQ(tape.grad(x).values(), (std::vector<double>{2, 4, 6}));
}

TEST(Elementwise, ShapeMismatchNamesBothShapes) {
  auto a = D({2, 3});
  auto b = D({4});
  try {
    savp::add(a, b);
    FAIL() << "expected shape error";
  } catch (const savp::Error& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4]"), std::string::npos) << msg;
  }
}

TEST(Elementwise, LogDomainError) {
  auto x = D::from_values({2}, {1.0, -0.5});
  EXPECT_THROW(savp::log(x), savp::Error);
  auto z = D::from_values({2}, {1.0, 0.0});
  EXPECT_THROW(savp::divide(x, z), savp::Error);
}

// Broadcasting oracle: materialize both operands on the output shape by
// explicit index arithmetic, then combine.
namespace {
std::vector<double> tile_to(const D& t, const Shape& out) {
  auto strides = savp::detail::broadcast_strides(t.shape(), out);
  std::vector<int64_t> zero(out.size(), 0);
  std::vector<double> res(savp::numel(out));
  savp::detail::broadcast_walk(out, strides, zero,
                               [&](int64_t o, int64_t i, int64_t) { res[o] = t.data()[i]; });
  return res;
}

std::vector<Shape> enumerate_shapes(int max_rank, const std::vector<int64_t>& extents) {
  std::vector<Shape> shapes;
  std::function<void(Shape&, int)> go = [&](Shape& cur, int depth) {
    if (!cur.empty()) shapes.push_back(cur);
    if (depth == max_rank) return;
    for (int64_t e : extents) {
      cur.push_back(e);
      go(cur, depth + 1);
      cur.pop_back();
    }
  };
  Shape cur;
  go(cur, 0);
  return shapes;
}
}  // namespace

TEST(Broadcast, MatchesExplicitTilingExhaustiveSmall) {
  savp::Rng rng(7);
  auto shapes = enumerate_shapes(3, {1, 2, 3});
  int checked = 0;
  for (const auto& sa : shapes)
    for (const auto& sb : shapes) {
      Shape out;
      try {
        out = savp::detail::broadcast_shape(sa, sb);
      } catch (const savp::Error&) {
        continue;
      }
      auto a = random_tensor(sa, rng);
      auto b = random_tensor(sb, rng);
      auto ta = tile_to(a, out);
      auto tb = tile_to(b, out);
      auto sum = savp::add(a, b);
      auto prod = savp::mul(a, b);
      ASSERT_EQ(sum.shape(), out);
      for (int64_t i = 0; i < sum.size(); ++i) {
        ASSERT_EQ(sum.data()[i], ta[i] + tb[i]);
        ASSERT_EQ(prod.data()[i], ta[i] * tb[i]);
      }
      ++checked;
    }
  EXPECT_GT(checked, 800);
}

TEST(Broadcast, MatchesExplicitTilingRandomRank5) {
  savp::Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    Shape out;
    int rank = 1 + static_cast<int>(rng.index(5));
    for (int i = 0; i < rank; ++i) out.push_back(1 + rng.index(4));
    // Derive compatible operand shapes by degrading random axes to 1 and
    // trimming leading axes.
    auto derive = [&]() {
      Shape s = out;
      for (auto& e : s)
        if (rng.bernoulli(0.3)) e = 1;
      int64_t drop = rng.index(rank + 1);
      s.erase(s.begin(), s.begin() + drop);
      if (s.empty()) s = {1};
      return s;
    };
    Shape sa = derive(), sb = derive();
    Shape real_out = savp::detail::broadcast_shape(sa, sb);
    auto a = random_tensor(sa, rng);
    auto b = random_tensor(sb, rng);
    auto ta = tile_to(a, real_out);
    auto tb = tile_to(b, real_out);
    auto sum = savp::add(a, b);
    for (int64_t i = 0; i < sum.size(); ++i) ASSERT_EQ(sum.data()[i], ta[i] + tb[i]);
  }
}

TEST(Broadcast, GradientReducesOverExpandedAxes) {
  savp::Rng rng(3);
  auto a = random_tensor({3, 1, 2}, rng);
  auto b = random_tensor({4, 2}, rng);
  auto forward = [&]() { return savp::sum_all(savp::mul(savp::add(a, b), b)); };
  EXPECT_LT(finite_diff_check(forward, {&a, &b}), 1e-7);
}

TEST(Matmul, IdentityAndHandCase) {
  auto eye = D::from_values({2, 2}, {1, 0, 0, 1});
  auto m = D::from_values({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(savp::matmul(eye, m).values(), m.values());
  auto a = D::from_values({1, 2}, {1, 0});
  auto b = D::from_values({2, 1}, {2, 3});
  EXPECT_EQ(savp::matmul(a, b).values(), (std::vector<double>{2}));
}

TEST(Matmul, DimensionMismatch) {
  EXPECT_THROW(savp::matmul(D({2, 3}), D({2, 3})), savp::Error);
}

TEST(Matmul, GradientVsFiniteDifferences) {
  savp::Rng rng(5);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 2}, rng);
  auto w = random_tensor({3, 2}, rng);  // weights the output so grads differ per cell
  auto forward = [&]() { return savp::sum_all(savp::mul(savp::matmul(a, b), w)); };
  EXPECT_LT(finite_diff_check(forward, {&a, &b}), 1e-6);
}

TEST(Activations, GoldenValues) {
  auto z = D::from_values({1}, {0.0});
  EXPECT_DOUBLE_EQ(savp::sigmoid(z).value(), 0.5);
  auto s = savp::softmax(D::from_values({3}, {0, 0, 0}), 0);
  for (double v : s.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
  auto l = savp::leaky_relu(D::from_values({1}, {-1.0}), 0.2);
  EXPECT_DOUBLE_EQ(l.value(), -0.2);
}

TEST(Activations, SoftmaxSumsToOneLargeInputs) {
  savp::Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_tensor({4, 6}, rng, -50.0, 50.0);
    auto y = savp::softmax(x, 1);
    for (int64_t r = 0; r < 4; ++r) {
      double s = 0;
      for (int64_t c = 0; c < 6; ++c) s += y.at({r, c});
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Activations, SoftmaxAxisChoices) {
  savp::Rng rng(19);
  auto x = random_tensor({2, 3, 4}, rng);
  auto y0 = savp::softmax(x, 0);
  double s = 0;
  for (int64_t i = 0; i < 2; ++i) s += y0.at({i, 1, 2});
  EXPECT_NEAR(s, 1.0, 1e-12);
  EXPECT_THROW(savp::softmax(x, 3), savp::Error);
}

TEST(InstanceNorm, ConstantChannelGivesZeros) {
  // 0.5 is exactly representable, so mean subtraction cancels exactly.
  auto x = D({1, 2, 3, 3}, 0.5);
  auto y = savp::instance_norm<double>(x, 1e-8);
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 0.0);
  // Non-representable constants land within rounding noise of zero.
  auto x2 = D({1, 2, 3, 3}, 0.7);
  auto y2 = savp::instance_norm<double>(x2, 1e-8);
  for (double v : y2.values()) EXPECT_NEAR(v, 0.0, 1e-9);
}

TEST(InstanceNorm, NormalizesMeanAndVariance) {
  savp::Rng rng(23);
  auto x = random_tensor({2, 3, 4, 4}, rng, -2.0, 2.0);
  auto y = savp::instance_norm<double>(x, 1e-12);
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t c = 0; c < 3; ++c) {
      double mean = 0, var = 0;
      for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 4; ++j) mean += y.at({b, c, i, j});
      mean /= 16;
      for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 4; ++j) {
          double d = y.at({b, c, i, j}) - mean;
          var += d * d;
        }
      var /= 16;
      EXPECT_NEAR(mean, 0.0, 1e-6);
      EXPECT_NEAR(var, 1.0, 1e-6);
    }
}

TEST(InstanceNorm, SizeOneGroupIsError) {
  auto x = D({2, 3, 1, 1}, 1.0);
  EXPECT_THROW(savp::instance_norm<double>(x, 1e-8), savp::Error);
}

TEST(InstanceNorm, GradientVsFiniteDifferences) {
  savp::Rng rng(29);
  auto x = random_tensor({2, 2, 3, 3}, rng);
  auto gamma = random_tensor({2}, rng, 0.5, 1.5);
  auto beta = random_tensor({2}, rng, -0.5, 0.5);
  auto w = random_tensor({2, 2, 3, 3}, rng);
  auto forward = [&]() {
    return savp::sum_all(savp::mul(savp::instance_norm<double>(x, 1e-5, &gamma, &beta), w));
  };
  EXPECT_LT(finite_diff_check(forward, {&x, &gamma, &beta}), 1e-5);
}

TEST(Backward, SumOfSquaresGradient) {
  auto x = D::from_values({4}, {1, -2, 3, 0.5});
  savp::Tape<double> tape;
  savp::TapeScope<double> scope(tape);
  x.set_requires_grad(true);
  tape.backward(savp::sum_all(savp::square(x)));
  auto g = tape.grad(x);
  for (int64_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(g.data()[i], 2 * x.data()[i]);
}

TEST(Backward, LeafOffPathGetsZeroGradient) {
  auto x = D::from_values({2}, {1, 2});
  auto unused = D::from_values({3}, {5, 6, 7});
  savp::Tape<double> tape;
  savp::TapeScope<double> scope(tape);
  x.set_requires_grad(true);
  unused.set_requires_grad(true);
  tape.backward(savp::sum_all(savp::square(x)));
  EXPECT_EQ(tape.grad(unused).values(), (std::vector<double>{0, 0, 0}));
}

TEST(Backward, NonScalarLossRejected) {
  auto x = D::from_values({2}, {1, 2});
  savp::Tape<double> tape;
  savp::TapeScope<double> scope(tape);
  x.set_requires_grad(true);
  auto y = savp::square(x);
  EXPECT_THROW(tape.backward(y), savp::Error);
}

TEST(Backward, DetachedLossRejected) {
  auto x = D::from_values({1}, {2.0});
  savp::Tape<double> tape;
  auto y = savp::square(x);  // no active tape: nothing recorded
  EXPECT_THROW(tape.backward(y), savp::Error);
}

TEST(Backward, DetachBlocksGradientFlow) {
  auto x = D::from_values({2}, {1, 2});
  savp::Tape<double> tape;
  savp::TapeScope<double> scope(tape);
  x.set_requires_grad(true);
  auto y = savp::square(x);
  auto z = savp::sum_all(savp::mul(y.detach(), x));
  tape.backward(z);
  // d/dx of detach(x^2)*x is x^2 only.
  EXPECT_EQ(tape.grad(x).values(), (std::vector<double>{1, 4}));
}

TEST(Backward, AccumulatesOverMultiplePaths) {
  auto x = D::from_values({1}, {3.0});
  savp::Tape<double> tape;
  savp::TapeScope<double> scope(tape);
  x.set_requires_grad(true);
  auto y = savp::add(savp::square(x), savp::mul(x, x));  // 2x^2
  tape.backward(savp::sum_all(y));
  EXPECT_DOUBLE_EQ(tape.grad(x).value(), 12.0);
}

// Every differentiable elementwise/shape op against central differences.
TEST(Backward, FiniteDifferenceSuiteOverOps) {
  savp::Rng rng(31);
  auto x = random_tensor({2, 3}, rng, 0.2, 2.0);  // positive: log/div-safe
  auto b = random_tensor({2, 3}, rng, 0.5, 1.5);
  auto w = random_tensor({2, 3}, rng);

  std::vector<std::pair<const char*, std::function<Tensor<double>()>>> cases = {
      {"add", [&]() { return savp::sum_all(savp::mul(savp::add(x, b), w)); }},
      {"sub", [&]() { return savp::sum_all(savp::mul(savp::sub(x, b), w)); }},
      {"mul", [&]() { return savp::sum_all(savp::mul(savp::mul(x, b), w)); }},
      {"div", [&]() { return savp::sum_all(savp::mul(savp::divide(x, b), w)); }},
      {"neg", [&]() { return savp::sum_all(savp::mul(savp::neg(x), w)); }},
      {"abs", [&]() { return savp::sum_all(savp::mul(savp::abs(x), w)); }},
      {"exp", [&]() { return savp::sum_all(savp::mul(savp::exp(x), w)); }},
      {"log", [&]() { return savp::sum_all(savp::mul(savp::log(x), w)); }},
      {"square", [&]() { return savp::sum_all(savp::mul(savp::square(x), w)); }},
      {"scale", [&]() { return savp::sum_all(savp::mul(savp::scale(x, 2.5), w)); }},
      {"relu", [&]() { return savp::sum_all(savp::mul(savp::relu(x), w)); }},
      {"leaky_relu", [&]() { return savp::sum_all(savp::mul(savp::leaky_relu(x, 0.2), w)); }},
      {"sigmoid", [&]() { return savp::sum_all(savp::mul(savp::sigmoid(x), w)); }},
      {"tanh", [&]() { return savp::sum_all(savp::mul(savp::tanh(x), w)); }},
      {"softplus", [&]() { return savp::sum_all(savp::mul(savp::softplus(x), w)); }},
      {"softmax", [&]() { return savp::sum_all(savp::mul(savp::softmax(x, 1), w)); }},
      {"clamp", [&]() { return savp::sum_all(savp::mul(savp::clamp(x, 0.4, 1.6), w)); }},
      {"reshape", [&]() { return savp::sum_all(savp::mul(savp::reshape(savp::square(x), {6, 1}),
                                                         savp::reshape(w, {6, 1}))); }},
      {"mean_all", [&]() { return savp::mean_all(savp::square(x)); }},
  };
  for (auto& [name, fwd] : cases) {
    EXPECT_LT(finite_diff_check(fwd, {&x}), 1e-5) << name;
  }
}

TEST(Backward, ConcatSliceExpandGradients) {
  savp::Rng rng(37);
  auto a = random_tensor({2, 2, 2, 2}, rng);
  auto b = random_tensor({2, 3, 2, 2}, rng);
  auto w = random_tensor({2, 5, 2, 2}, rng);
  auto fwd_concat = [&]() {
    return savp::sum_all(savp::mul(savp::concat<double>({a, b}, 1), w));
  };
  EXPECT_LT(finite_diff_check(fwd_concat, {&a, &b}), 1e-7);

  auto ws = random_tensor({2, 2, 2, 2}, rng);
  auto fwd_slice = [&]() {
    return savp::sum_all(savp::mul(savp::slice_axis(savp::square(b), 1, 1, 2), ws));
  };
  EXPECT_LT(finite_diff_check(fwd_slice, {&b}), 1e-6);

  auto v = random_tensor({3, 4}, rng);
  auto wx = random_tensor({3, 4, 2, 2}, rng);
  auto fwd_expand = [&]() {
    return savp::sum_all(savp::mul(savp::expand_hw(savp::square(v), 2, 2), wx));
  };
  EXPECT_LT(finite_diff_check(fwd_expand, {&v}), 1e-6);
}

TEST(Tensor, GradShapeMatchesTensorShape) {
  savp::Rng rng(41);
  auto x = random_tensor({2, 3, 4}, rng);
  savp::Tape<double> tape;
  savp::TapeScope<double> scope(tape);
  x.set_requires_grad(true);
  tape.backward(savp::sum_all(savp::square(x)));
  EXPECT_EQ(tape.grad(x).shape(), x.shape());
}

TEST(Tensor, InvariantShapeMatchesDataLength) {
  auto t = D({3, 4, 5});
  EXPECT_EQ(t.size(), 60);
  EXPECT_THROW(D::from_values({2, 2}, {1, 2, 3}), savp::Error);
}
