#include "rpdetect/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rpdetect/error.hpp"

namespace rpdetect {

namespace {
float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }
}  // namespace

Box cell_box(const float raw[4], int cell_y, int cell_x, int stride) {
  const float cx = (static_cast<float>(cell_x) + 0.5f) * static_cast<float>(stride);
  const float cy = (static_cast<float>(cell_y) + 0.5f) * static_cast<float>(stride);
  const float s = static_cast<float>(stride);
  return {cx - decode_distance(raw[0]) * s, cy - decode_distance(raw[1]) * s,
          cx + decode_distance(raw[2]) * s, cy + decode_distance(raw[3]) * s};
}

std::vector<Detection> decode(const HeadOutput& head, int image, int image_size,
                              float conf_threshold) {
  std::vector<Detection> out;
  const float limit = static_cast<float>(image_size);
  for (const LevelOutput& level : head.levels) {
    const Shape s = level.objectness.shape();
    if (image < 0 || image >= s.n) throw ShapeError("decode: image index out of range");
    const int nc = level.class_logits.shape().c;
    const std::int64_t plane = s.plane();
    const float* obj = level.objectness.data().data() + image * plane;
    const float* cls = level.class_logits.data().data() + image * nc * plane;
    const float* reg = level.box_regression.data().data() + image * 4 * plane;
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        const std::int64_t i = static_cast<std::int64_t>(y) * s.w + x;
        int best = 0;
        for (int c = 1; c < nc; ++c) {
          if (cls[c * plane + i] > cls[best * plane + i]) best = c;
        }
        const float score = sigmoid(obj[i]) * sigmoid(cls[best * plane + i]);
        if (!(score >= conf_threshold)) continue;
        const float raw[4] = {reg[i], reg[plane + i], reg[2 * plane + i], reg[3 * plane + i]};
        Box b = cell_box(raw, y, x, level.stride);
        b.x1 = std::clamp(b.x1, 0.0f, limit);
        b.y1 = std::clamp(b.y1, 0.0f, limit);
        b.x2 = std::clamp(b.x2, 0.0f, limit);
        b.y2 = std::clamp(b.y2, 0.0f, limit);
        if (!(b.x2 > b.x1 && b.y2 > b.y1)) continue;
        out.push_back({b, std::clamp(score, 0.0f, 1.0f), best});
      }
    }
  }
  return out;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, float iou_threshold) {
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return dets[a].score > dets[b].score; });
  std::vector<Detection> kept;
  for (int i : order) {
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (k.class_id == dets[i].class_id && iou(k.box, dets[i].box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(dets[i]);
  }
  return kept;
}

std::vector<std::vector<Detection>> postprocess(const HeadOutput& head, int image_size,
                                                const PostprocessOptions& options) {
  if (head.levels.empty()) return {};
  const int batch = head.levels.front().objectness.shape().n;
  std::vector<std::vector<Detection>> out(batch);
  for (int n = 0; n < batch; ++n) {
    out[n] = nms(decode(head, n, image_size, options.conf_threshold), options.iou_threshold);
    if (static_cast<int>(out[n].size()) > options.max_detections) {
      out[n].resize(options.max_detections);
    }
  }
  return out;
}

}  // namespace rpdetect
