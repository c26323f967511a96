#pragma once

#include <cstdint>

#include "rpdetect/dataset.hpp"

namespace rpdetect {

/// Shape kinds; the class id of an object is its kind.
enum class ShapeKind { rectangle, ellipse, triangle, diamond, cross };
inline constexpr int kMaxSyntheticClasses = 5;
const char* to_string(ShapeKind kind);

struct SyntheticConfig {
  std::uint64_t seed = 0;
  int n_images = 200;
  int size = 256;
  int num_classes = 2;
  int min_scale = 12;  // longer side of an object, pixels
  int max_scale = 96;
  /// Share of objects per image drawn with longer side < size / 8.
  float small_fraction = 0.6f;
  int min_objects = 2;
  int max_objects = 6;

  void validate() const;
};

/// Deterministic dataset of flat-colored shapes on a textured background.
///
/// Background channels stay in [40, 110]; every object gets a color unique
/// within its image with at least one channel >= 150, so object pixels are
/// identifiable by color alone. Objects may be clipped by the image border
/// and partially covered by later objects; each ground-truth box is the
/// tight box (exclusive x2/y2) of the pixels that remain visible. Images are
/// generated in parallel from per-image seeds, so output does not depend on
/// the worker count.
Dataset generate_synthetic(const SyntheticConfig& config);

/// Per-image seed derived from the dataset seed and the image index.
std::uint64_t image_seed(std::uint64_t seed, int index);

}  // namespace rpdetect
