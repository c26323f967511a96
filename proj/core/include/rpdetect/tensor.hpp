#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rpdetect {

/// Extents of a rank-4 (N, C, H, W) array. Convolution weights reuse the same
/// type as (out-channels, in-channels-per-group, kernel-h, kernel-w).
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::int64_t numel() const {
    return static_cast<std::int64_t>(n) * c * h * w;
  }
  std::int64_t plane() const { return static_cast<std::int64_t>(h) * w; }

  friend bool operator==(const Shape&, const Shape&) = default;
  std::string str() const;
};

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until a gradient reaches this tensor
  bool requires_grad = false;
};
}  // namespace detail

/// Shared handle to a dense row-major float32 array. Copies alias the same
/// storage; use clone() for a deep copy. Operator outputs are never written
/// after the operator returns, so handles to them can be shared freely.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor scalar(float value) { return Tensor(Shape{1, 1, 1, 1}, value); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t numel() const { return impl_->shape.numel(); }

  std::span<const float> data() const { return impl_->data; }
  // Write access for leaves (parameters, inputs) and for operators filling
  // a freshly allocated result.
  std::span<float> mutable_data() { return impl_->data; }

  float at(int n, int c, int h, int w) const;
  float item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag);

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  /// Empty span when no gradient has been accumulated.
  std::span<const float> grad() const { return impl_->grad; }
  /// Allocates a zero gradient buffer on first use. Const on the handle: the
  /// gradient buffer is shared state that backward closures accumulate into.
  std::span<float> mutable_grad() const;
  void zero_grad();

  Tensor clone() const;
  /// True when both handles refer to the same storage.
  bool same(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Elementwise max |a - b|; shapes must match.
float max_abs_diff(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);

}  // namespace rpdetect
