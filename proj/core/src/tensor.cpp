#include "rpdetect/tensor.hpp"

#include <algorithm>
#include <cmath>

#include <malloc.h>

#include "rpdetect/error.hpp"

namespace rpdetect {

const char* to_string(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::shape: return "shape";
    case ErrorCategory::config: return "config";
    case ErrorCategory::io: return "io";
    case ErrorCategory::format: return "format";
    case ErrorCategory::validation: return "validation";
    case ErrorCategory::state: return "state";
  }
  return "unknown";
}

std::string Shape::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " +
         std::to_string(w) + ")";
}

namespace {
void check_extents(const Shape& shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("negative extent in shape " + shape.str());
  }
}
}  // namespace

namespace {
// Activation buffers are allocated and freed at a high rate during training.
// Keeping them on the heap instead of fresh mmap regions avoids paying page
// faults and kernel zeroing on every operator call.
const bool heap_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  return true;
}();
}  // namespace

Tensor::Tensor(Shape shape, float fill) : impl_(std::make_shared<detail::TensorImpl>()) {
  check_extents(shape);
  impl_->shape = shape;
  impl_->data.assign(static_cast<std::size_t>(shape.numel()), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  check_extents(shape);
  if (static_cast<std::int64_t>(values.size()) != shape.numel()) {
    throw ShapeError("tensor of shape " + shape.str() + " needs " + std::to_string(shape.numel()) +
                     " values, got " + std::to_string(values.size()));
  }
  impl_->shape = shape;
  impl_->data = std::move(values);
}

float Tensor::at(int n, int c, int h, int w) const {
  const Shape& s = impl_->shape;
  return impl_->data[((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w];
}

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  return *this;
}

std::span<float> Tensor::mutable_grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::clone() const {
  Tensor copy(impl_->shape, impl_->data);
  copy.impl_->requires_grad = impl_->requires_grad;
  return copy;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + a.shape().str() + " vs " + b.shape().str());
  }
  float worst = 0.0f;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::fabs(x[i] - y[i]));
  return worst;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](float v) { return std::isfinite(v); });
}

}  // namespace rpdetect
