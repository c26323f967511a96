#pragma once

#include <vector>

#include "rpdetect/layers.hpp"
#include "rpdetect/tensor.hpp"

namespace rpdetect {

// Forward operators. Every operator is a pure function of its operands and
// records a backward closure when a tape is active (see tape.hpp).

/// Cross-correlation (no kernel flip) with zero padding.
Tensor conv2d(const Tensor& input, const ConvLayer& layer);

/// (x - running_mean) * gamma / sqrt(running_var + eps) + beta, per channel.
Tensor batchnorm_infer(const Tensor& input, const BNLayer& bn);

/// Normalizes with batch statistics over (N, H, W) and updates the running
/// statistics with bn.momentum (unbiased variance, as is conventional).
Tensor batchnorm_train(const Tensor& input, BNLayer& bn);

/// Window mean with zero padding counted in the divisor (always k*k).
Tensor avgpool2d(const Tensor& input, int kernel, int stride, int padding = 0);
Tensor maxpool2d(const Tensor& input, int kernel, int stride);

Tensor upsample_nearest2x(const Tensor& input);
/// Keeps every second row and column starting at index 0.
Tensor downsample_stride2(const Tensor& input);

enum class Activation { identity, relu, sigmoid, silu };
Tensor activation(const Tensor& input, Activation kind);

Tensor add(const Tensor& a, const Tensor& b);
Tensor concat_channels(const std::vector<Tensor>& parts);
Tensor slice_channels(const Tensor& input, int begin, int count);

/// Scalar sum of all elements.
Tensor sum(const Tensor& input);
/// Scalar sum of input * weights; `weights` is treated as a constant.
Tensor dot(const Tensor& input, const Tensor& weights);

}  // namespace rpdetect
