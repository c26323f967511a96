#include "rpdetect/reparam.hpp"

#include <cmath>

#include "rpdetect/error.hpp"

namespace rpdetect {

namespace {

std::string geometry(const ConvLayer& l) {
  return "(out=" + std::to_string(l.out_channels()) + ", in=" + std::to_string(l.in_channels()) +
         ", k=" + std::to_string(l.kernel()) + ", stride=" + std::to_string(l.stride) +
         ", pad=" + std::to_string(l.padding) + ", groups=" + std::to_string(l.groups) + ")";
}

float bias_at(const ConvLayer& l, int o) { return l.bias ? l.bias->data()[o] : 0.0f; }

}  // namespace

ConvLayer fuse_conv_bn(const ConvLayer& conv, const BNLayer& bn) {
  conv.validate();
  bn.validate();
  if (conv.out_channels() != bn.channels()) {
    throw ShapeError("fuse_conv_bn: conv out-channels " + std::to_string(conv.out_channels()) +
                     " != bn channels " + std::to_string(bn.channels()));
  }
  ConvLayer fused = ConvLayer::zeros(conv.in_channels(), conv.out_channels(), conv.kernel(),
                                     conv.stride, conv.padding, conv.groups, true);
  const std::int64_t per_out = conv.weight.numel() / conv.out_channels();
  auto w = conv.weight.data();
  auto fw = fused.weight.mutable_data();
  auto fb = fused.bias->mutable_data();
  auto gamma = bn.gamma.data();
  auto beta = bn.beta.data();
  auto mean = bn.running_mean.data();
  auto var = bn.running_var.data();
  for (int o = 0; o < conv.out_channels(); ++o) {
    const double denom = static_cast<double>(var[o]) + bn.eps;
    if (!(denom > 0.0)) throw ValidationError("fuse_conv_bn: running_var + eps must be positive");
    const double scale = gamma[o] / std::sqrt(denom);
    for (std::int64_t i = 0; i < per_out; ++i) {
      fw[o * per_out + i] = static_cast<float>(w[o * per_out + i] * scale);
    }
    fb[o] = static_cast<float>(beta[o] + (static_cast<double>(bias_at(conv, o)) - mean[o]) * scale);
  }
  return fused;
}

ConvLayer merge_parallel(const std::vector<ConvLayer>& layers) {
  if (layers.empty()) throw ShapeError("merge_parallel: no layers");
  const ConvLayer& ref = layers.front();
  ref.validate();
  bool any_bias = false;
  for (const ConvLayer& l : layers) {
    l.validate();
    if (l.weight.shape() != ref.weight.shape() || l.stride != ref.stride ||
        l.padding != ref.padding || l.groups != ref.groups) {
      throw ShapeError("merge_parallel: geometry " + geometry(l) + " differs from " +
                       geometry(ref));
    }
    any_bias = any_bias || l.bias.has_value();
  }
  ConvLayer merged = ConvLayer::zeros(ref.in_channels(), ref.out_channels(), ref.kernel(),
                                      ref.stride, ref.padding, ref.groups, any_bias);
  std::vector<double> w(static_cast<std::size_t>(ref.weight.numel()), 0.0);
  std::vector<double> b(static_cast<std::size_t>(ref.out_channels()), 0.0);
  for (const ConvLayer& l : layers) {
    auto lw = l.weight.data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += lw[i];
    for (int o = 0; o < ref.out_channels(); ++o) b[o] += bias_at(l, o);
  }
  auto mw = merged.weight.mutable_data();
  for (std::size_t i = 0; i < w.size(); ++i) mw[i] = static_cast<float>(w[i]);
  if (any_bias) {
    auto mb = merged.bias->mutable_data();
    for (int o = 0; o < ref.out_channels(); ++o) mb[o] = static_cast<float>(b[o]);
  }
  return merged;
}

ConvLayer pad_kernel_to(const ConvLayer& layer, int target) {
  layer.validate();
  const int k = layer.kernel();
  if (target < k || (target - k) % 2 != 0) {
    throw ShapeError("pad_kernel_to: cannot pad kernel " + std::to_string(k) + " to " +
                     std::to_string(target) + " symmetrically");
  }
  if (target == k) return layer.clone();
  const int offset = (target - k) / 2;
  ConvLayer padded = ConvLayer::zeros(layer.in_channels(), layer.out_channels(), target,
                                      layer.stride, layer.padding + offset, layer.groups,
                                      layer.bias.has_value());
  const Shape s = layer.weight.shape();
  auto src = layer.weight.data();
  auto dst = padded.weight.mutable_data();
  for (int o = 0; o < s.n; ++o) {
    for (int i = 0; i < s.c; ++i) {
      for (int kh = 0; kh < k; ++kh) {
        for (int kw = 0; kw < k; ++kw) {
          dst[((static_cast<std::int64_t>(o) * s.c + i) * target + kh + offset) * target + kw +
              offset] = src[((static_cast<std::int64_t>(o) * s.c + i) * k + kh) * k + kw];
        }
      }
    }
  }
  if (layer.bias) {
    auto b = layer.bias->data();
    std::copy(b.begin(), b.end(), padded.bias->mutable_data().begin());
  }
  return padded;
}

ConvLayer merge_sequential_1x1_kxk(const ConvLayer& first, const ConvLayer& second) {
  first.validate();
  second.validate();
  if (first.kernel() != 1) {
    throw ShapeError("merge_sequential: first layer must be 1x1, got kernel " +
                     std::to_string(first.kernel()));
  }
  if (first.stride != 1) throw ShapeError("merge_sequential: first layer must have stride 1");
  if (second.padding != 0) {
    throw ShapeError(
        "merge_sequential: second layer has padding " + std::to_string(second.padding) +
        "; move the padding onto the 1x1 layer, the border identity does not hold otherwise");
  }
  if (first.out_channels() != second.in_channels()) {
    throw ShapeError("merge_sequential: first out-channels " +
                     std::to_string(first.out_channels()) + " != second in-channels " +
                     std::to_string(second.in_channels()));
  }
  if (first.groups != second.groups) {
    throw ShapeError("merge_sequential: group counts differ (" + std::to_string(first.groups) +
                     " vs " + std::to_string(second.groups) + ")");
  }
  const int groups = first.groups;
  const int k = second.kernel();
  const int cin_g = first.weight.shape().c;     // input channels per group
  const int mid_g = second.weight.shape().c;    // intermediate channels per group
  const int out_g = second.out_channels() / groups;
  if (first.out_channels() / groups != mid_g) {
    throw ShapeError("merge_sequential: intermediate channels per group disagree");
  }

  ConvLayer merged = ConvLayer::zeros(first.in_channels(), second.out_channels(), k, second.stride,
                                      first.padding, groups, true);
  auto w1 = first.weight.data();   // (mid, cin_g, 1, 1)
  auto w2 = second.weight.data();  // (out, mid_g, k, k)
  auto mw = merged.weight.mutable_data();
  auto mb = merged.bias->mutable_data();
  const int taps = k * k;
  for (int grp = 0; grp < groups; ++grp) {
    for (int ol = 0; ol < out_g; ++ol) {
      const int o = grp * out_g + ol;
      double bias = bias_at(second, o);
      for (int i = 0; i < cin_g; ++i) {
        for (int t = 0; t < taps; ++t) {
          double acc = 0.0;
          for (int m = 0; m < mid_g; ++m) {
            const int mid = grp * mid_g + m;
            acc += static_cast<double>(w2[(static_cast<std::int64_t>(o) * mid_g + m) * taps + t]) *
                   w1[static_cast<std::int64_t>(mid) * cin_g + i];
          }
          mw[(static_cast<std::int64_t>(o) * cin_g + i) * taps + t] = static_cast<float>(acc);
        }
      }
      for (int m = 0; m < mid_g; ++m) {
        const double b1 = bias_at(first, grp * mid_g + m);
        if (b1 == 0.0) continue;
        double ksum = 0.0;
        for (int t = 0; t < taps; ++t) {
          ksum += w2[(static_cast<std::int64_t>(o) * mid_g + m) * taps + t];
        }
        bias += ksum * b1;
      }
      mb[o] = static_cast<float>(bias);
    }
  }
  return merged;
}

ConvLayer avgpool_to_conv(int channels, int kernel, int stride, int groups, int padding) {
  if (channels <= 0 || kernel <= 0 || groups <= 0 || channels % groups != 0) {
    throw ShapeError("avgpool_to_conv: invalid channels/kernel/groups");
  }
  ConvLayer layer = ConvLayer::zeros(channels, channels, kernel, stride, padding, groups, false);
  const int per_group = channels / groups;
  const float tap = 1.0f / static_cast<float>(kernel * kernel);
  auto w = layer.weight.mutable_data();
  for (int o = 0; o < channels; ++o) {
    const int i = o % per_group;
    for (int t = 0; t < kernel * kernel; ++t) {
      w[(static_cast<std::int64_t>(o) * per_group + i) * kernel * kernel + t] = tap;
    }
  }
  return layer;
}

ConvLayer identity_to_conv(int channels, int kernel, int groups) {
  if (kernel % 2 == 0) throw ShapeError("identity_to_conv: kernel must be odd");
  if (channels <= 0 || groups <= 0 || channels % groups != 0) {
    throw ShapeError("identity_to_conv: invalid channels/groups");
  }
  ConvLayer layer =
      ConvLayer::zeros(channels, channels, kernel, 1, (kernel - 1) / 2, groups, true);
  const int per_group = channels / groups;
  const int center = (kernel / 2) * kernel + kernel / 2;
  auto w = layer.weight.mutable_data();
  for (int o = 0; o < channels; ++o) {
    w[(static_cast<std::int64_t>(o) * per_group + o % per_group) * kernel * kernel + center] = 1.0f;
  }
  return layer;
}

}  // namespace rpdetect
