#include "rpdetect/layers.hpp"

#include <cmath>

#include "rpdetect/error.hpp"

namespace rpdetect {

void ConvLayer::validate() const {
  if (!weight.defined()) throw ShapeError("conv: weight is undefined");
  const Shape& w = weight.shape();
  if (w.n <= 0 || w.c <= 0 || w.h <= 0 || w.w <= 0) {
    throw ShapeError("conv: weight shape " + w.str() + " has an empty extent");
  }
  if (w.h != w.w) throw ShapeError("conv: kernel must be square, got " + w.str());
  if (groups <= 0) throw ShapeError("conv: groups must be positive");
  if (w.n % groups != 0) {
    throw ShapeError("conv: out-channels " + std::to_string(w.n) + " not divisible by groups " +
                     std::to_string(groups));
  }
  if (stride <= 0) throw ShapeError("conv: stride must be positive");
  if (padding < 0) throw ShapeError("conv: padding must be non-negative");
  if (bias && bias->shape() != Shape{1, w.n, 1, 1}) {
    throw ShapeError("conv: bias shape " + bias->shape().str() + " does not match out-channels " +
                     std::to_string(w.n));
  }
}

Shape ConvLayer::output_shape(const Shape& input) const {
  validate();
  if (input.c != in_channels()) {
    throw ShapeError("conv: input channels " + std::to_string(input.c) + " != layer in-channels " +
                     std::to_string(in_channels()));
  }
  const int k = kernel();
  const int ph = input.h + 2 * padding - k;
  const int pw = input.w + 2 * padding - k;
  if (ph < 0) {
    throw ShapeError("conv: input height " + std::to_string(input.h) + " with padding " +
                     std::to_string(padding) + " is smaller than kernel " + std::to_string(k));
  }
  if (pw < 0) {
    throw ShapeError("conv: input width " + std::to_string(input.w) + " with padding " +
                     std::to_string(padding) + " is smaller than kernel " + std::to_string(k));
  }
  return Shape{input.n, out_channels(), ph / stride + 1, pw / stride + 1};
}

ConvLayer ConvLayer::clone() const {
  ConvLayer copy;
  copy.weight = weight.clone();
  if (bias) copy.bias = bias->clone();
  copy.stride = stride;
  copy.padding = padding;
  copy.groups = groups;
  return copy;
}

ConvLayer ConvLayer::zeros(int in_channels, int out_channels, int kernel, int stride, int padding,
                           int groups, bool with_bias) {
  if (groups <= 0 || in_channels % groups != 0) {
    throw ShapeError("conv: in-channels " + std::to_string(in_channels) +
                     " not divisible by groups " + std::to_string(groups));
  }
  ConvLayer layer;
  layer.weight = Tensor(Shape{out_channels, in_channels / groups, kernel, kernel});
  if (with_bias) layer.bias = Tensor(Shape{1, out_channels, 1, 1});
  layer.stride = stride;
  layer.padding = padding;
  layer.groups = groups;
  layer.validate();
  return layer;
}

ConvLayer ConvLayer::random(int in_channels, int out_channels, int kernel, std::mt19937& rng,
                            int stride, int padding, int groups, bool with_bias) {
  ConvLayer layer = zeros(in_channels, out_channels, kernel, stride, padding, groups, with_bias);
  const double fan_in = static_cast<double>(in_channels / groups) * kernel * kernel;
  const float bound = static_cast<float>(std::sqrt(6.0 / fan_in));
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (float& v : layer.weight.mutable_data()) v = dist(rng);
  return layer;
}

void BNLayer::validate() const {
  const Shape expected{1, gamma.shape().c, 1, 1};
  for (const Tensor* t : {&gamma, &beta, &running_mean, &running_var}) {
    if (!t->defined() || t->shape() != expected) {
      throw ShapeError("bn: parameter vectors must all be " + expected.str());
    }
  }
  if (!(eps >= 0.0f)) throw ValidationError("bn: eps must be non-negative");
  for (float v : running_var.data()) {
    if (!(v >= 0.0f)) throw ValidationError("bn: running_var must be non-negative");
  }
}

BNLayer BNLayer::clone() const {
  BNLayer copy;
  copy.gamma = gamma.clone();
  copy.beta = beta.clone();
  copy.running_mean = running_mean.clone();
  copy.running_var = running_var.clone();
  copy.eps = eps;
  copy.momentum = momentum;
  return copy;
}

BNLayer BNLayer::identity(int channels, float eps) {
  BNLayer bn;
  const Shape s{1, channels, 1, 1};
  bn.gamma = Tensor(s, 1.0f);
  bn.beta = Tensor(s, 0.0f);
  bn.running_mean = Tensor(s, 0.0f);
  bn.running_var = Tensor(s, 1.0f);
  bn.eps = eps;
  return bn;
}

void set_trainable(ConvLayer& conv, bool flag) {
  conv.weight.set_requires_grad(flag);
  if (conv.bias) conv.bias->set_requires_grad(flag);
}

void set_trainable(BNLayer& bn, bool flag) {
  bn.gamma.set_requires_grad(flag);
  bn.beta.set_requires_grad(flag);
}

}  // namespace rpdetect
