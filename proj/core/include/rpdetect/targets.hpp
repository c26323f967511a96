#pragma once

#include <array>
#include <vector>

#include "rpdetect/boxes.hpp"
#include "rpdetect/pyramid.hpp"

namespace rpdetect {

/// One positive cell: the ground truth it is responsible for and where it sits.
struct PositiveTarget {
  int image = 0;
  int level = 0;  // index into kPyramidStrides
  int cell_y = 0;
  int cell_x = 0;
  int gt_index = 0;  // index within the image's ground-truth list
  GroundTruth gt;
  friend bool operator==(const PositiveTarget&, const PositiveTarget&) = default;
};

struct TrainingTargets {
  int batch = 0;
  int input_size = 0;
  std::array<int, kPyramidLevels> grid{};  // cells per side, per level
  std::vector<PositiveTarget> positives;    // ordered by (image, level, y, x)
};

/// Level for a box: longer side < 64 * size/256 -> stride 8, < 128 * size/256
/// -> stride 16, otherwise stride 32.
int assign_level(const Box& box, int input_size);

/// Builds per-level targets. Each ground truth gets exactly one positive cell:
/// floor(center / stride) on its level, clamped to the grid. When two ground
/// truths of an image claim the same cell, they are processed by ascending
/// area (ties by index) and a displaced one moves to the nearest free cell of
/// the same level (Chebyshev rings, row-major within a ring).
TrainingTargets assign_targets(const std::vector<std::vector<GroundTruth>>& gts, int input_size);

}  // namespace rpdetect
