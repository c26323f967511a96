#pragma once

#include <algorithm>

namespace rpdetect {

/// Axis-aligned box in pixel coordinates; x2/y2 are exclusive edges, so a box
/// covering pixel columns 3..5 is x1=3, x2=6.
struct Box {
  float x1 = 0.0f;
  float y1 = 0.0f;
  float x2 = 0.0f;
  float y2 = 0.0f;

  float width() const { return x2 - x1; }
  float height() const { return y2 - y1; }
  float area() const { return std::max(0.0f, width()) * std::max(0.0f, height()); }
  float center_x() const { return 0.5f * (x1 + x2); }
  float center_y() const { return 0.5f * (y1 + y2); }
  friend bool operator==(const Box&, const Box&) = default;
};

struct GroundTruth {
  int class_id = 0;
  Box box;
  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

struct Detection {
  Box box;
  float score = 0.0f;
  int class_id = 0;
};

/// Intersection over union; 0 when the union is empty.
inline double iou(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min<double>(a.x2, b.x2) - std::max<double>(a.x1, b.x1));
  const double ih = std::max(0.0, std::min<double>(a.y2, b.y2) - std::max<double>(a.y1, b.y1));
  const double inter = iw * ih;
  auto area = [](const Box& b) {
    return std::max(0.0, static_cast<double>(b.width())) * std::max(0.0, static_cast<double>(b.height()));
  };
  const double uni = area(a) + area(b) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace rpdetect
