#include "rpdetect/targets.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <utility>

#include "rpdetect/error.hpp"

namespace rpdetect {

int assign_level(const Box& box, int input_size) {
  const float longer = std::max(box.width(), box.height());
  const float scale = static_cast<float>(input_size) / 256.0f;
  if (longer < 64.0f * scale) return 0;
  if (longer < 128.0f * scale) return 1;
  return 2;
}

namespace {

std::pair<int, int> nearest_free(const std::set<std::pair<int, int>>& taken, int y, int x,
                                 int grid) {
  for (int r = 1; r < grid; ++r) {
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx) {
        if (std::max(std::abs(dy), std::abs(dx)) != r) continue;
        const int cy = y + dy;
        const int cx = x + dx;
        if (cy < 0 || cx < 0 || cy >= grid || cx >= grid) continue;
        if (!taken.count({cy, cx})) return {cy, cx};
      }
    }
  }
  throw ValidationError("assign_targets: more ground truths than cells on one level");
}

}  // namespace

TrainingTargets assign_targets(const std::vector<std::vector<GroundTruth>>& gts, int input_size) {
  if (input_size <= 0 || input_size % 32 != 0) {
    throw ConfigError("assign_targets: input size must be a positive multiple of 32");
  }
  TrainingTargets t;
  t.batch = static_cast<int>(gts.size());
  t.input_size = input_size;
  for (int l = 0; l < kPyramidLevels; ++l) t.grid[l] = input_size / kPyramidStrides[l];

  for (int img = 0; img < t.batch; ++img) {
    const std::vector<GroundTruth>& list = gts[img];
    std::vector<int> order(list.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return list[a].box.area() < list[b].box.area(); });
    std::array<std::set<std::pair<int, int>>, kPyramidLevels> taken;
    std::vector<PositiveTarget> image_positives;
    for (int i : order) {
      const GroundTruth& g = list[i];
      if (!(g.box.x2 > g.box.x1 && g.box.y2 > g.box.y1)) {
        throw ValidationError("assign_targets: empty box for ground truth " + std::to_string(i));
      }
      const int level = assign_level(g.box, input_size);
      const int stride = kPyramidStrides[level];
      const int grid = t.grid[level];
      int cy = std::clamp(static_cast<int>(std::floor(g.box.center_y() / stride)), 0, grid - 1);
      int cx = std::clamp(static_cast<int>(std::floor(g.box.center_x() / stride)), 0, grid - 1);
      if (taken[level].count({cy, cx})) std::tie(cy, cx) = nearest_free(taken[level], cy, cx, grid);
      taken[level].insert({cy, cx});
      image_positives.push_back({img, level, cy, cx, i, g});
    }
    std::sort(image_positives.begin(), image_positives.end(),
              [](const PositiveTarget& a, const PositiveTarget& b) {
                return std::tie(a.level, a.cell_y, a.cell_x) < std::tie(b.level, b.cell_y, b.cell_x);
              });
    t.positives.insert(t.positives.end(), image_positives.begin(), image_positives.end());
  }
  return t;
}

}  // namespace rpdetect
