#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "rpdetect/error.hpp"
#include "rpdetect/layers.hpp"
#include "rpdetect/ops.hpp"
#include "rpdetect/tape.hpp"

using namespace rpdetect;

namespace {

BNLayer random_bn(int c, std::mt19937& rng) {
  BNLayer bn = BNLayer::identity(c);
  bn.gamma = oracle::random_tensor({1, c, 1, 1}, rng, 0.5f, 1.5f);
  bn.beta = oracle::random_tensor({1, c, 1, 1}, rng, -0.5f, 0.5f);
  bn.running_mean = oracle::random_tensor({1, c, 1, 1}, rng, -0.3f, 0.3f);
  bn.running_var = oracle::random_tensor({1, c, 1, 1}, rng, 0.5f, 2.0f);
  return bn;
}

}  // namespace

TEST(Tensor, HandlesAliasAndCloneCopies) {
  Tensor a(Shape{1, 2, 2, 2}, 1.0f);
  Tensor b = a;
  b.mutable_data()[0] = 5.0f;
  EXPECT_EQ(a.data()[0], 5.0f);
  EXPECT_TRUE(a.same(b));
  Tensor c = a.clone();
  c.mutable_data()[0] = 7.0f;
  EXPECT_EQ(a.data()[0], 5.0f);
  EXPECT_EQ(a.numel(), 8);
}

TEST(Tensor, RejectsMismatchedValueCount) {
  EXPECT_THROW(Tensor(Shape{1, 1, 2, 2}, std::vector<float>(3)), ShapeError);
}

TEST(Conv2d, MatchesNaiveLoopsAcrossGeometries) {
  std::mt19937 rng(1);
  struct G { int cin, cout, k, stride, pad, groups; };
  const G cases[] = {{3, 4, 3, 1, 1, 1}, {4, 6, 3, 2, 1, 2}, {4, 4, 5, 1, 2, 4},
                     {2, 3, 1, 1, 0, 1}, {6, 6, 3, 2, 0, 3}, {1, 2, 5, 2, 2, 1}};
  for (const G& g : cases) {
    ConvLayer l = ConvLayer::random(g.cin, g.cout, g.k, rng, g.stride, g.pad, g.groups, true);
    l.bias = oracle::random_tensor({1, g.cout, 1, 1}, rng);
    const Tensor x = oracle::random_tensor({2, g.cin, 9, 7}, rng);
    const Tensor y = conv2d(x, l);
    const std::vector<double> ref = oracle::conv2d(x, l);
    ASSERT_EQ(y.numel(), static_cast<std::int64_t>(ref.size()));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-5);
  }
}

TEST(Conv2d, RejectsChannelMismatch) {
  std::mt19937 rng(2);
  ConvLayer l = ConvLayer::random(3, 4, 3, rng, 1, 1);
  EXPECT_THROW(conv2d(Tensor(Shape{1, 2, 8, 8}), l), ShapeError);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  std::mt19937 rng(3);
  ConvLayer l = ConvLayer::random(4, 4, 3, rng, 2, 1, 2, true);
  l.bias = oracle::random_tensor({1, 4, 1, 1}, rng);
  Tensor x = oracle::random_tensor({2, 4, 7, 6}, rng);
  auto f = [&] { return conv2d(x, l); };
  EXPECT_LT(oracle::check_gradient(x, f, 20, rng).worst, 1e-3);
  EXPECT_LT(oracle::check_gradient(l.weight, f, 20, rng).worst, 1e-3);
  EXPECT_LT(oracle::check_gradient(*l.bias, f, 4, rng).worst, 1e-3);
}

TEST(Conv2d, CountsFlopsByConvention) {
  std::mt19937 rng(4);
  ConvLayer l = ConvLayer::random(4, 6, 3, rng, 1, 1, 2, true);
  FlopCounter counter;
  conv2d(Tensor(Shape{1, 4, 5, 5}), l);
  // 2*K*K*(I/g)*O*Ho*Wo + O*Ho*Wo
  EXPECT_DOUBLE_EQ(counter.total(), 2.0 * 9 * 2 * 6 * 25 + 6 * 25);
}

TEST(BatchNorm, InferenceMatchesFormula) {
  std::mt19937 rng(5);
  const BNLayer bn = random_bn(3, rng);
  const Tensor x = oracle::random_tensor({2, 3, 4, 4}, rng);
  const Tensor y = batchnorm_infer(x, bn);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int h = 0; h < 4; ++h)
        for (int w = 0; w < 4; ++w) {
          const double ref = (x.at(n, c, h, w) - bn.running_mean.data()[c]) * bn.gamma.data()[c] /
                                 std::sqrt(bn.running_var.data()[c] + bn.eps) +
                             bn.beta.data()[c];
          EXPECT_NEAR(y.at(n, c, h, w), ref, 1e-5);
        }
}

TEST(BatchNorm, TrainingUsesBatchStatisticsAndUpdatesRunningOnes) {
  std::mt19937 rng(6);
  BNLayer bn = BNLayer::identity(2);
  const Tensor x = oracle::random_tensor({3, 2, 3, 3}, rng);
  const Tensor y = batchnorm_train(x, bn);
  for (int c = 0; c < 2; ++c) {
    double mean = 0, sq = 0;
    const int m = 3 * 9;
    for (int n = 0; n < 3; ++n)
      for (int i = 0; i < 9; ++i) mean += x.at(n, c, i / 3, i % 3);
    mean /= m;
    for (int n = 0; n < 3; ++n)
      for (int i = 0; i < 9; ++i) sq += std::pow(x.at(n, c, i / 3, i % 3) - mean, 2);
    const double var = sq / m;
    EXPECT_NEAR(y.at(1, c, 2, 1), (x.at(1, c, 2, 1) - mean) / std::sqrt(var + bn.eps), 1e-5);
    EXPECT_NEAR(bn.running_mean.data()[c], 0.1 * mean, 1e-6);
    EXPECT_NEAR(bn.running_var.data()[c], 0.9 + 0.1 * sq / (m - 1), 1e-6);
  }
}

TEST(BatchNorm, TrainingGradientsMatchFiniteDifferences) {
  std::mt19937 rng(7);
  BNLayer bn = random_bn(3, rng);
  Tensor x = oracle::random_tensor({2, 3, 3, 4}, rng);
  auto f = [&] { return batchnorm_train(x, bn); };
  EXPECT_LT(oracle::check_gradient(x, f, 20, rng).worst, 1e-3);
  EXPECT_LT(oracle::check_gradient(bn.gamma, f, 3, rng).worst, 1e-3);
  EXPECT_LT(oracle::check_gradient(bn.beta, f, 3, rng).worst, 1e-3);
  auto g = [&] { return batchnorm_infer(x, bn); };
  EXPECT_LT(oracle::check_gradient(x, g, 10, rng).worst, 1e-3);
}

TEST(Activation, ValuesMatchReference) {
  std::mt19937 rng(8);
  const Tensor x = oracle::random_tensor({1, 1, 1, 4001}, rng, -30.0f, 30.0f);
  const Tensor s = activation(x, Activation::sigmoid);
  const Tensor si = activation(x, Activation::silu);
  const Tensor r = activation(x, Activation::relu);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double v = x.data()[i];
    const double sig = 1.0 / (1.0 + std::exp(-v));
    EXPECT_NEAR(s.data()[i], sig, 1e-6 * sig + 1e-30);
    EXPECT_NEAR(si.data()[i], v * sig, 1e-6 * std::abs(v * sig) + 1e-30);
    EXPECT_EQ(r.data()[i], v > 0 ? static_cast<float>(v) : 0.0f);
  }
}

TEST(Activation, GradientsMatchFiniteDifferences) {
  std::mt19937 rng(9);
  Tensor x = oracle::random_tensor({1, 2, 4, 4}, rng, -3.0f, 3.0f);
  for (float& v : x.mutable_data()) {
    if (std::abs(v) < 0.25f) v = 0.5f;  // keep relu probes off the kink
  }
  for (Activation a : {Activation::relu, Activation::sigmoid, Activation::silu}) {
    EXPECT_LT(oracle::check_gradient(x, [&] { return activation(x, a); }, 16, rng).worst,
              1e-3);
  }
}

TEST(Pooling, AveragePoolCountsPaddingInDivisor) {
  Tensor x(Shape{1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  const Tensor y = avgpool2d(x, 3, 1, 1);
  EXPECT_FLOAT_EQ(y.at(0, 0, 0, 0), 10.0f / 9.0f);
}

TEST(Pooling, MaxPoolAndResamplingValues) {
  Tensor x(Shape{1, 1, 2, 4}, std::vector<float>{1, 5, 2, 0, 3, 4, 8, 7});
  const Tensor m = maxpool2d(x, 2, 2);
  EXPECT_EQ(m.at(0, 0, 0, 0), 5.0f);
  EXPECT_EQ(m.at(0, 0, 0, 1), 8.0f);
  const Tensor u = upsample_nearest2x(x);
  EXPECT_EQ(u.shape(), (Shape{1, 1, 4, 8}));
  EXPECT_EQ(u.at(0, 0, 3, 5), x.at(0, 0, 1, 2));
  const Tensor d = downsample_stride2(x);
  EXPECT_EQ(d.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_EQ(d.at(0, 0, 0, 1), 2.0f);
}

TEST(Pooling, GradientsMatchFiniteDifferences) {
  std::mt19937 rng(10);
  Tensor x(Shape{1, 2, 6, 6});
  std::vector<float> vals(72);
  for (int i = 0; i < 72; ++i) vals[i] = 0.25f * i;
  std::shuffle(vals.begin(), vals.end(), rng);  // distinct, well separated for maxpool
  std::copy(vals.begin(), vals.end(), x.mutable_data().begin());
  EXPECT_LT(oracle::check_gradient(x, [&] { return avgpool2d(x, 3, 2, 1); }, 12, rng).worst, 1e-3);
  EXPECT_LT(oracle::check_gradient(x, [&] { return maxpool2d(x, 2, 2); }, 12, rng).worst, 1e-3);
  EXPECT_LT(oracle::check_gradient(x, [&] { return upsample_nearest2x(x); }, 12, rng).worst, 1e-3);
  EXPECT_LT(oracle::check_gradient(x, [&] { return downsample_stride2(x); }, 12, rng).worst, 1e-3);
}

TEST(Structural, AddConcatSliceGradients) {
  std::mt19937 rng(11);
  Tensor a = oracle::random_tensor({2, 2, 3, 3}, rng);
  Tensor b = oracle::random_tensor({2, 3, 3, 3}, rng);
  auto f = [&] { return slice_channels(concat_channels({a, b, a}), 1, 5); };
  EXPECT_LT(oracle::check_gradient(a, f, 10, rng).worst, 1e-3);
  EXPECT_LT(oracle::check_gradient(b, f, 10, rng).worst, 1e-3);
  Tensor c = oracle::random_tensor({2, 2, 3, 3}, rng);
  auto residual = [&] { return add(c, activation(c, Activation::silu)); };
  EXPECT_LT(oracle::check_gradient(c, residual, 10, rng).worst, 1e-3);
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(slice_channels(a, 1, 2), ShapeError);
}

TEST(Tape, FanOutAccumulates) {
  Tensor x(Shape{1, 1, 1, 3}, std::vector<float>{1, 2, 3});
  x.set_requires_grad(true);
  oracle::backward_of([&] { return sum(add(x, x)); });
  for (float g : x.grad()) EXPECT_EQ(g, 2.0f);
}

TEST(Tape, NoGradScopeRecordsNothing) {
  Tensor x(Shape{1, 1, 1, 3}, 1.0f);
  x.set_requires_grad(true);
  GradTape tape;
  TapeScope scope(tape);
  {
    NoGradScope ng;
    sum(x);
  }
  EXPECT_TRUE(tape.empty());
  sum(x);
  EXPECT_EQ(tape.size(), 1u);
}

TEST(Tape, BackwardNeedsScalar) {
  Tensor x(Shape{1, 1, 1, 3}, 1.0f);
  x.set_requires_grad(true);
  GradTape tape;
  Tensor y;
  {
    TapeScope scope(tape);
    y = add(x, x);
  }
  EXPECT_THROW(tape.backward(y), ShapeError);
}
