#pragma once

#include <optional>
#include <random>

#include "rpdetect/tensor.hpp"

namespace rpdetect {

/// 2-D convolution parameters. weight is (out, in/groups, k, k); the optional
/// bias is (1, out, 1, 1). Padding is zero-fill on all four sides.
struct ConvLayer {
  Tensor weight;
  std::optional<Tensor> bias;
  int stride = 1;
  int padding = 0;
  int groups = 1;

  int out_channels() const { return weight.shape().n; }
  int in_channels() const { return weight.shape().c * groups; }
  int kernel() const { return weight.shape().h; }

  /// Throws ShapeError on inconsistent geometry.
  void validate() const;
  /// Output shape for `input`; throws ShapeError naming the offending dimension.
  Shape output_shape(const Shape& input) const;

  ConvLayer clone() const;

  static ConvLayer zeros(int in_channels, int out_channels, int kernel, int stride = 1,
                         int padding = 0, int groups = 1, bool with_bias = true);
  /// He-uniform weights, zero bias.
  static ConvLayer random(int in_channels, int out_channels, int kernel, std::mt19937& rng,
                          int stride = 1, int padding = 0, int groups = 1,
                          bool with_bias = true);
};

/// Batch normalization over channels. All four vectors are (1, C, 1, 1).
/// Running statistics are buffers: never touched by the optimizer.
struct BNLayer {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  float eps = 1e-3f;
  float momentum = 0.1f;

  int channels() const { return gamma.shape().c; }
  void validate() const;
  BNLayer clone() const;

  /// gamma = 1, beta = 0, mean = 0, var = 1.
  static BNLayer identity(int channels, float eps = 1e-3f);
};

/// Marks the trainable tensors of a layer.
void set_trainable(ConvLayer& conv, bool flag = true);
void set_trainable(BNLayer& bn, bool flag = true);

}  // namespace rpdetect
