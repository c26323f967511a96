#pragma once

#include <vector>

#include "rpdetect/boxes.hpp"
#include "rpdetect/head.hpp"

namespace rpdetect {

/// Box predicted by one cell before clipping: center ((x+0.5)s, (y+0.5)s)
/// minus/plus the decoded left/top/right/bottom distances times the stride.
Box cell_box(const float raw[4], int cell_y, int cell_x, int stride);

/// Per-cell detections of image `image` whose score sigmoid(obj) *
/// max_c sigmoid(cls_c) reaches `conf_threshold`. Boxes are clipped to
/// [0, image_size]; cells whose clipped box is empty are dropped.
std::vector<Detection> decode(const HeadOutput& head, int image, int image_size,
                              float conf_threshold);

/// Greedy class-wise suppression. Candidates are visited by descending score
/// (ties: lower input index first); a candidate is dropped when its IoU with
/// an already kept box of the same class exceeds `iou_threshold`. Output is
/// in visiting order.
std::vector<Detection> nms(const std::vector<Detection>& dets, float iou_threshold);

struct PostprocessOptions {
  float conf_threshold = 0.25f;
  float iou_threshold = 0.6f;
  int max_detections = 100;
};

/// decode + nms + top-k for every image of the batch.
std::vector<std::vector<Detection>> postprocess(const HeadOutput& head, int image_size,
                                                const PostprocessOptions& options);

}  // namespace rpdetect
