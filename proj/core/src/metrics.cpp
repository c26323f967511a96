#include "rpdetect/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "rpdetect/error.hpp"

namespace rpdetect {

MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<GroundTruth>& gts, double iou_threshold) {
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return dets[a].score > dets[b].score; });
  MatchResult r;
  r.true_positive.assign(dets.size(), false);
  std::vector<bool> taken(gts.size(), false);
  int matched = 0;
  for (int i : order) {
    int best = -1;
    double best_iou = iou_threshold;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].class_id != dets[i].class_id) continue;
      const double v = iou(dets[i].box, gts[g].box);
      if (v >= best_iou && (best < 0 || v > best_iou)) {
        best = static_cast<int>(g);
        best_iou = v;
      }
    }
    if (best >= 0) {
      taken[best] = true;
      r.true_positive[i] = true;
      ++matched;
    }
  }
  r.false_negatives = static_cast<int>(gts.size()) - matched;
  return r;
}

namespace {

std::vector<ScoredMatch> ranked(const std::vector<ScoredMatch>& matches) {
  std::vector<ScoredMatch> out = matches;
  std::stable_sort(out.begin(), out.end(),
                   [](const ScoredMatch& a, const ScoredMatch& b) { return a.score > b.score; });
  return out;
}

}  // namespace

std::vector<PRPoint> precision_envelope(const std::vector<ScoredMatch>& matches, int num_gt) {
  const std::vector<ScoredMatch> r = ranked(matches);
  std::vector<PRPoint> pts(r.size());
  int tp = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r[i].true_positive) ++tp;
    pts[i].recall = num_gt > 0 ? static_cast<double>(tp) / num_gt : 0.0;
    pts[i].precision = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  for (std::size_t i = pts.size(); i-- > 1;) {
    pts[i - 1].precision = std::max(pts[i - 1].precision, pts[i].precision);
  }
  return pts;
}

double average_precision(const std::vector<ScoredMatch>& matches, int num_gt) {
  if (num_gt <= 0) return 0.0;
  const std::vector<PRPoint> pts = precision_envelope(matches, num_gt);
  double ap = 0.0, prev_recall = 0.0;
  for (const PRPoint& p : pts) {
    ap += (p.recall - prev_recall) * p.precision;
    prev_recall = p.recall;
  }
  return ap;
}

std::vector<ScoredMatch> class_matches(const ImageDetections& dets, const ImageGroundTruths& gts,
                                       int class_id, double iou_threshold) {
  if (dets.size() != gts.size()) {
    throw ShapeError("metrics: " + std::to_string(dets.size()) + " detection lists for " +
                     std::to_string(gts.size()) + " images");
  }
  std::vector<ScoredMatch> out;
  for (std::size_t img = 0; img < dets.size(); ++img) {
    std::vector<Detection> d;
    std::vector<GroundTruth> g;
    for (const Detection& x : dets[img]) {
      if (x.class_id == class_id) d.push_back(x);
    }
    for (const GroundTruth& x : gts[img]) {
      if (x.class_id == class_id) g.push_back(x);
    }
    const MatchResult m = match_detections(d, g, iou_threshold);
    for (std::size_t i = 0; i < d.size(); ++i) out.push_back({d[i].score, m.true_positive[i]});
  }
  return ranked(out);
}

namespace {

std::vector<int> gt_counts(const ImageDetections& dets, const ImageGroundTruths& gts,
                           int num_classes) {
  if (dets.size() != gts.size()) {
    throw ShapeError("metrics: " + std::to_string(dets.size()) + " detection lists for " +
                     std::to_string(gts.size()) + " images");
  }
  std::vector<int> counts(num_classes, 0);
  for (const auto& list : gts) {
    for (const GroundTruth& g : list) {
      if (g.class_id < 0 || g.class_id >= num_classes) {
        throw ValidationError("metrics: class id " + std::to_string(g.class_id) + " out of range");
      }
      ++counts[g.class_id];
    }
  }
  return counts;
}

double mean_ap(const ImageDetections& dets, const ImageGroundTruths& gts,
               const std::vector<int>& counts, double threshold) {
  double total = 0.0;
  int classes = 0;
  for (int c = 0; c < static_cast<int>(counts.size()); ++c) {
    if (counts[c] == 0) continue;
    total += average_precision(class_matches(dets, gts, c, threshold), counts[c]);
    ++classes;
  }
  return classes > 0 ? total / classes : 0.0;
}

}  // namespace

double map_at(const ImageDetections& dets, const ImageGroundTruths& gts, int num_classes,
              const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw ValidationError("map_at: no thresholds");
  const std::vector<int> counts = gt_counts(dets, gts, num_classes);
  double total = 0.0;
  for (double t : thresholds) total += mean_ap(dets, gts, counts, t);
  return total / static_cast<double>(thresholds.size());
}

DetectionMetrics evaluate_detections(const ImageDetections& dets, const ImageGroundTruths& gts,
                                     int num_classes, const EvalOptions& options) {
  const std::vector<int> counts = gt_counts(dets, gts, num_classes);
  DetectionMetrics m;
  m.ap50_per_class.assign(num_classes, -1.0);
  double p_sum = 0.0, r_sum = 0.0;
  int classes = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) continue;
    ++classes;
    const auto at50 = class_matches(dets, gts, c, 0.5);
    m.ap50_per_class[c] = average_precision(at50, counts[c]);

    const auto& pr = options.pr_iou == 0.5 ? at50 : class_matches(dets, gts, c, options.pr_iou);
    int kept = 0, tp = 0;
    for (const ScoredMatch& s : pr) {
      if (s.score < options.conf_threshold) continue;
      ++kept;
      if (s.true_positive) ++tp;
    }
    p_sum += kept > 0 ? static_cast<double>(tp) / kept : 0.0;
    r_sum += static_cast<double>(tp) / counts[c];

    const auto& curve =
        options.curve_iou == 0.5 ? at50 : class_matches(dets, gts, c, options.curve_iou);
    m.curves.push_back({c, options.curve_iou, precision_envelope(curve, counts[c])});
  }
  if (classes > 0) {
    m.precision = p_sum / classes;
    m.recall = r_sum / classes;
  }
  double total = 0.0;
  for (double t : coco_thresholds()) {
    const double v = mean_ap(dets, gts, counts, t);
    if (t == 0.5) m.map50 = v;
    total += v;
  }
  m.map50_95 = total / static_cast<double>(coco_thresholds().size());
  return m;
}

std::string MetricsReport::to_key_values() const {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "precision=%.6f\nrecall=%.6f\nmap50=%.6f\nmap50_95=%.6f\ngflops=%.6f\n"
                "params=%lld\nfps_min=%.3f\nfps_median=%.3f\nfps_max=%.3f\n",
                precision, recall, map50, map50_95, gflops, static_cast<long long>(params),
                fps.min, fps.median, fps.max);
  return buf;
}

std::string MetricsReport::csv_header() {
  return "precision,recall,map50,map50_95,gflops,params,fps_min,fps_median,fps_max";
}

std::string MetricsReport::to_csv_row() const {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f,%.6f,%lld,%.3f,%.3f,%.3f", precision,
                recall, map50, map50_95, gflops, static_cast<long long>(params), fps.min,
                fps.median, fps.max);
  return buf;
}

void MetricsReport::validate() const {
  auto unit = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw StateError(std::string("metrics: ") + name + " outside [0, 1]: " + std::to_string(v));
    }
  };
  unit(precision, "precision");
  unit(recall, "recall");
  unit(map50, "map50");
  unit(map50_95, "map50_95");
  if (map50_95 > map50) {
    throw StateError("metrics: mAP@0.5:0.95 " + std::to_string(map50_95) + " exceeds mAP@0.5 " +
                     std::to_string(map50));
  }
  if (gflops < 0.0 || params < 0) throw StateError("metrics: negative cost");
  if (fps.min < 0.0 || fps.min > fps.median || fps.median > fps.max) {
    throw StateError("metrics: inconsistent fps dispersion");
  }
}

std::string pr_curves_csv(const std::vector<PRCurve>& curves) {
  std::string out = "class,iou_threshold,recall,precision\n";
  char buf[128];
  for (const PRCurve& c : curves) {
    for (const PRPoint& p : c.points) {
      std::snprintf(buf, sizeof(buf), "%d,%.2f,%.6f,%.6f\n", c.class_id, c.iou_threshold, p.recall,
                    p.precision);
      out += buf;
    }
  }
  return out;
}

void write_pr_curves(const std::string& path, const std::vector<PRCurve>& curves) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << pr_curves_csv(curves);
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace rpdetect
