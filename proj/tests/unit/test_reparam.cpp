#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "rpdetect/cost.hpp"
#include "rpdetect/dbb.hpp"
#include "rpdetect/detector.hpp"
#include "rpdetect/error.hpp"
#include "rpdetect/ops.hpp"
#include "rpdetect/reparam.hpp"

using namespace rpdetect;

namespace {

Tensor from_doubles(Shape s, const std::vector<double>& v) {
  std::vector<float> f(v.begin(), v.end());
  return Tensor(s, std::move(f));
}

Shape conv_out(const Tensor& x, const ConvLayer& l) { return l.output_shape(x.shape()); }

std::vector<double> bn_ref(const std::vector<double>& y, Shape s, const BNLayer& bn) {
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const int c = static_cast<int>((i / s.plane()) % s.c);
    out[i] = (y[i] - bn.running_mean.data()[c]) * bn.gamma.data()[c] /
                 std::sqrt(static_cast<double>(bn.running_var.data()[c]) + bn.eps) +
             bn.beta.data()[c];
  }
  return out;
}

BNLayer random_bn(int c, std::mt19937& rng) {
  BNLayer bn = BNLayer::identity(c);
  bn.gamma = oracle::random_tensor({1, c, 1, 1}, rng, 0.5f, 1.5f);
  bn.beta = oracle::random_tensor({1, c, 1, 1}, rng, -0.5f, 0.5f);
  bn.running_mean = oracle::random_tensor({1, c, 1, 1}, rng, -0.3f, 0.3f);
  bn.running_var = oracle::random_tensor({1, c, 1, 1}, rng, 0.5f, 2.0f);
  return bn;
}

double max_diff(const Tensor& y, const std::vector<double>& ref) {
  double worst = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(y.data()[i] - ref[i]));
  return worst;
}

}  // namespace

TEST(FuseConvBn, MatchesConvThenBn) {
  std::mt19937 rng(1);
  ConvLayer conv = ConvLayer::random(4, 6, 3, rng, 2, 1, 2, true);
  conv.bias = oracle::random_tensor({1, 6, 1, 1}, rng);
  const BNLayer bn = random_bn(6, rng);
  const Tensor x = oracle::random_tensor({2, 4, 7, 7}, rng);
  const ConvLayer fused = fuse_conv_bn(conv, bn);
  const std::vector<double> ref = bn_ref(oracle::conv2d(x, conv), conv_out(x, conv), bn);
  EXPECT_LT(max_diff(conv2d(x, fused), ref), 1e-5);
}

TEST(MergeParallel, SumsBranches) {
  std::mt19937 rng(2);
  std::vector<ConvLayer> layers;
  for (int i = 0; i < 3; ++i) layers.push_back(ConvLayer::random(3, 5, 3, rng, 1, 1, 1, true));
  const Tensor x = oracle::random_tensor({1, 3, 6, 6}, rng);
  std::vector<double> ref(static_cast<std::size_t>(conv_out(x, layers[0]).numel()), 0.0);
  for (const ConvLayer& l : layers) {
    const auto y = oracle::conv2d(x, l);
    for (std::size_t i = 0; i < y.size(); ++i) ref[i] += y[i];
  }
  EXPECT_LT(max_diff(conv2d(x, merge_parallel(layers)), ref), 1e-5);
  layers[1].stride = 2;
  EXPECT_THROW(merge_parallel(layers), ShapeError);
}

TEST(PadKernel, PreservesOutput) {
  std::mt19937 rng(3);
  const ConvLayer one = ConvLayer::random(3, 4, 1, rng, 2, 0, 1, true);
  const Tensor x = oracle::random_tensor({1, 3, 7, 7}, rng);
  const ConvLayer padded = pad_kernel_to(one, 5);
  EXPECT_EQ(padded.kernel(), 5);
  EXPECT_EQ(padded.padding, 2);
  EXPECT_LT(max_diff(conv2d(x, padded), oracle::conv2d(x, one)), 1e-6);
}

TEST(MergeSequential, OneByOneThenKxK) {
  std::mt19937 rng(4);
  for (int groups : {1, 2}) {
    ConvLayer first = ConvLayer::random(4, 6, 1, rng, 1, 1, groups, true);
    first.bias = oracle::random_tensor({1, 6, 1, 1}, rng);
    ConvLayer second = ConvLayer::random(6, 4, 3, rng, 2, 0, groups, true);
    second.bias = oracle::random_tensor({1, 4, 1, 1}, rng);
    const Tensor x = oracle::random_tensor({2, 4, 8, 8}, rng);
    const Tensor mid = from_doubles(conv_out(x, first), oracle::conv2d(x, first));
    const std::vector<double> ref = oracle::conv2d(mid, second);
    EXPECT_LT(max_diff(conv2d(x, merge_sequential_1x1_kxk(first, second)), ref), 1e-5);
  }
}

TEST(MergeSequential, RejectsPaddedSecondConv) {
  std::mt19937 rng(5);
  const ConvLayer first = ConvLayer::random(2, 2, 1, rng, 1, 1);
  const ConvLayer second = ConvLayer::random(2, 2, 3, rng, 1, 1);
  EXPECT_THROW(merge_sequential_1x1_kxk(first, second), ShapeError);
}

TEST(AvgPoolConv, MatchesWindowMean) {
  std::mt19937 rng(6);
  const Tensor x = oracle::random_tensor({1, 3, 6, 5}, rng);
  for (int stride : {1, 2}) {
    const ConvLayer l = avgpool_to_conv(3, 3, stride, 1, 1);
    const Tensor y = conv2d(x, l);
    const Shape s = y.shape();
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < s.h; ++i)
        for (int j = 0; j < s.w; ++j) {
          double acc = 0;
          for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) {
              const int yy = i * stride - 1 + a, xx = j * stride - 1 + b;
              if (yy >= 0 && xx >= 0 && yy < 6 && xx < 5) acc += x.at(0, c, yy, xx);
            }
          EXPECT_NEAR(y.at(0, c, i, j), acc / 9.0, 1e-6);
        }
  }
}

TEST(IdentityConv, IsIdentity) {
  std::mt19937 rng(7);
  const Tensor x = oracle::random_tensor({1, 4, 5, 5}, rng);
  for (int groups : {1, 4}) {
    EXPECT_EQ(max_abs_diff(conv2d(x, identity_to_conv(4, 3, groups)), x), 0.0f);
  }
}

TEST(DBBBlock, TrainFormForwardIsSumOfBranches) {
  std::mt19937 rng(8);
  DBBConfig cfg{4, 6, 3, 2, 2, 0, 1e-3f};
  DBBBlock block(cfg, rng);
  oracle::randomize_bn(block, rng);
  const Tensor x = oracle::random_tensor({2, 4, 9, 9}, rng);
  auto& b = block.branches();
  const Tensor kxk = batchnorm_infer(conv2d(x, b.kxk), b.kxk_bn);
  const Tensor one = batchnorm_infer(conv2d(x, b.one), b.one_bn);
  const Tensor seq = batchnorm_infer(
      conv2d(batchnorm_infer(conv2d(x, b.seq_first), b.seq_first_bn), b.seq_second), b.seq_second_bn);
  const Tensor avg_in = batchnorm_infer(conv2d(x, b.avg_first), b.avg_first_bn);
  const Tensor avg = batchnorm_infer(avgpool2d(avg_in, 3, 2, 0), b.avg_bn);
  const Tensor ref = add(add(kxk, one), add(seq, avg));
  EXPECT_LT(max_abs_diff(block.forward(x, Mode::eval), ref), 1e-5f);
}

TEST(DBBBlock, DeployFormMatchesTrainFormOnRandomConfigs) {
  std::mt19937 rng(9);
  std::uniform_int_distribution<int> ch(1, 8);
  float worst = 0.0f;
  for (int trial = 0; trial < 60; ++trial) {
    const int k = trial % 2 ? 5 : 3;
    const int c = ch(rng);
    const bool depthwise = trial % 3 == 0;
    DBBConfig cfg{c, depthwise ? c : ch(rng), k, 1 + trial % 2, depthwise ? c : 1, 0, 1e-3f};
    DBBBlock block(cfg, rng);
    oracle::randomize_bn(block, rng);
    const Tensor x = oracle::random_tensor({2, c, 11, 10}, rng);
    const Tensor train_out = block.forward(x, Mode::eval);
    const DBBBlock deployed = reparameterize_dbb(block);
    ASSERT_TRUE(deployed.deployed());
    DBBBlock d = deployed.clone();
    worst = std::max(worst, max_abs_diff(d.forward(x, Mode::eval), train_out));
  }
  EXPECT_LE(worst, 1e-4f);
}

TEST(DBBBlock, SwitchIsIdempotent) {
  std::mt19937 rng(10);
  DBBBlock block(DBBConfig{3, 3, 3, 1, 1, 0, 1e-3f}, rng);
  EXPECT_TRUE(block.switch_to_deploy());
  const Tensor w = block.merged().weight.clone();
  EXPECT_FALSE(block.switch_to_deploy());
  EXPECT_EQ(max_abs_diff(block.merged().weight, w), 0.0f);
  const DBBBlock again = reparameterize_dbb(block);
  EXPECT_EQ(max_abs_diff(again.merged().weight, w), 0.0f);
}

TEST(DBBBlock, CostCollapsesToPlainConv) {
  std::mt19937 rng(11);
  for (int k : {3, 5}) {
    for (int groups : {1, 4}) {
      DBBConfig cfg{4, 4, k, 1, groups, 0, 1e-3f};
      DBBBlock block(cfg, rng);
      const Shape in{1, 4, 16, 16};
      const std::int64_t p_train = count_params(block);
      const double f_train = count_flops(block, in);
      block.switch_to_deploy();
      EXPECT_LT(count_params(block), p_train);
      const double f_deploy = count_flops(block, in);
      EXPECT_LT(f_deploy, f_train);
      const ConvLayer plain = ConvLayer::zeros(4, 4, k, 1, (k - 1) / 2, groups, true);
      EXPECT_EQ(f_deploy, count_flops(plain, in));
      EXPECT_EQ(f_deploy, 2.0 * k * k * (4 / groups) * 4 * 256 + 4 * 256);
    }
  }
}

TEST(DBBBlock, TrainFormGradientsMatchFiniteDifferences) {
  std::mt19937 rng(12);
  DBBBlock block(DBBConfig{2, 3, 3, 1, 1, 0, 1e-3f}, rng);
  Tensor x = oracle::random_tensor({2, 2, 5, 5}, rng);
  auto f = [&] { return block.forward(x, Mode::train); };
  EXPECT_LT(oracle::check_gradient(x, f, 12, rng).worst, 1e-3);
  EXPECT_LT(oracle::check_gradient(block.branches().seq_first.weight, f, 6, rng).worst, 1e-3);
}

TEST(Detector, ReparameterizedModelKeepsLogits) {
  DetectorConfig cfg;
  cfg.dbb = true;
  cfg.dbb_units = 2;
  cfg.head = HeadKind::improved;
  cfg.neck = NeckKind::bifpn;
  cfg.input_size = 64;
  auto net = build_detector(cfg);
  std::mt19937 rng(13);
  oracle::randomize_bn(*net, rng);
  auto deploy = net->clone();
  EXPECT_GT(reparameterize_model(*deploy), 0);
  EXPECT_TRUE(deploy->deployed());
  EXPECT_FALSE(net->deployed());
  EXPECT_LE(max_logit_deviation(*net, *deploy, probe_batch(2, 64, 1)), 1e-3f);
  EXPECT_LT(count_params(*deploy), count_params(*net));
  EXPECT_LT(count_flops(*deploy, 64), count_flops(*net, 64));
  EXPECT_EQ(reparameterize_model(*deploy), 0);
}

TEST(Detector, BaselineHasNothingToReparameterize) {
  DetectorConfig cfg;
  cfg.input_size = 64;
  auto net = build_detector(cfg);
  EXPECT_EQ(reparameterize_model(*net), 0);
  EXPECT_FALSE(net->deployed());
}
