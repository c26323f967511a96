#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rpdetect/boxes.hpp"

namespace rpdetect {

struct MatchResult {
  std::vector<bool> true_positive;  // aligned with the input detections
  int false_negatives = 0;
};

/// Greedy matching within one image. Detections are visited by descending
/// score (ties: lower index first); each claims the unmatched ground truth of
/// its class with the highest IoU >= iou_threshold (ties: lower index).
MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<GroundTruth>& gts, double iou_threshold);

struct ScoredMatch {
  float score = 0.0f;
  bool true_positive = false;
};

struct PRPoint {
  double recall = 0.0;
  double precision = 0.0;
};

/// Area under the precision envelope (all-point interpolation). `matches`
/// are ranked by descending score, ties keeping their given order. 0 when
/// num_gt is 0.
double average_precision(const std::vector<ScoredMatch>& matches, int num_gt);

/// One point per ranked detection: its recall and the envelope precision
/// max_{j >= i} precision_j. Recall is non-decreasing, precision non-increasing.
std::vector<PRPoint> precision_envelope(const std::vector<ScoredMatch>& matches, int num_gt);

inline const std::vector<double>& coco_thresholds() {
  static const std::vector<double> t{0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95};
  return t;
}

using ImageDetections = std::vector<std::vector<Detection>>;
using ImageGroundTruths = std::vector<std::vector<GroundTruth>>;

/// Ranked matches of one class over all images (ties: image, then detection index).
std::vector<ScoredMatch> class_matches(const ImageDetections& dets, const ImageGroundTruths& gts,
                                       int class_id, double iou_threshold);

/// Mean over thresholds of the mean per-class AP. Classes without ground
/// truth are left out of the class mean; 0 when no class has ground truth.
double map_at(const ImageDetections& dets, const ImageGroundTruths& gts, int num_classes,
              const std::vector<double>& thresholds);

struct PRCurve {
  int class_id = 0;
  double iou_threshold = 0.5;
  std::vector<PRPoint> points;
};

struct DetectionMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double map50 = 0.0;
  double map50_95 = 0.0;
  std::vector<double> ap50_per_class;  // -1 for classes without ground truth
  std::vector<PRCurve> curves;         // classes with ground truth, at curve_iou
};

struct EvalOptions {
  /// Operating point for precision and recall.
  float conf_threshold = 0.25f;
  double pr_iou = 0.5;
  double curve_iou = 0.5;
};

/// Precision and recall are macro averages over classes with ground truth at
/// `conf_threshold` and IoU `pr_iou`; a class without detections above the
/// threshold has precision 0.
DetectionMetrics evaluate_detections(const ImageDetections& dets, const ImageGroundTruths& gts,
                                     int num_classes, const EvalOptions& options = {});

struct FpsStats {
  double min = 0.0;
  double median = 0.0;
  double max = 0.0;
};

struct MetricsReport {
  double precision = 0.0;
  double recall = 0.0;
  double map50 = 0.0;
  double map50_95 = 0.0;
  double gflops = 0.0;
  std::int64_t params = 0;
  FpsStats fps;

  /// `key=value` lines in a fixed order.
  std::string to_key_values() const;
  static std::string csv_header();
  std::string to_csv_row() const;
  /// Range checks plus mAP@0.5:0.95 <= mAP@0.5; throws StateError.
  void validate() const;
};

/// CSV with header class,iou_threshold,recall,precision.
std::string pr_curves_csv(const std::vector<PRCurve>& curves);
void write_pr_curves(const std::string& path, const std::vector<PRCurve>& curves);

}  // namespace rpdetect
