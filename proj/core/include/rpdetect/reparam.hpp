#pragma once

#include <vector>

#include "rpdetect/layers.hpp"

namespace rpdetect {

// Parameter-space rewrites. Each returns a fresh ConvLayer whose forward pass
// reproduces the composed original; none of them touches its arguments.

/// Folds inference-mode BN into the preceding convolution:
///   w' = w * gamma / sqrt(var + eps)   (per out-channel)
///   b' = beta + (b - mean) * gamma / sqrt(var + eps)
ConvLayer fuse_conv_bn(const ConvLayer& conv, const BNLayer& bn);

/// Sums layers of identical geometry: conv(x, merged) == sum_i conv(x, layers[i]).
ConvLayer merge_parallel(const std::vector<ConvLayer>& layers);

/// Zero-pads the kernel centrally to `target` x `target` and raises the
/// padding by (target - k) / 2, leaving the forward output unchanged.
ConvLayer pad_kernel_to(const ConvLayer& layer, int target);

/// Collapses a 1x1 conv followed by a KxK conv into one KxK conv. The 1x1 conv
/// carries the zero padding (its padded border evaluates to its bias); the
/// KxK conv must be unpadded, otherwise the border identity breaks. Grouped
/// layers are merged block by block.
ConvLayer merge_sequential_1x1_kxk(const ConvLayer& first, const ConvLayer& second);

/// Convolution that computes avgpool2d(x, kernel, stride, padding) exactly:
/// every tap on a channel's own input is 1 / kernel^2.
ConvLayer avgpool_to_conv(int channels, int kernel, int stride, int groups, int padding = 0);

/// Dirac kernel with padding (kernel - 1) / 2: the forward pass is identity.
ConvLayer identity_to_conv(int channels, int kernel, int groups);

}  // namespace rpdetect
