#pragma once

#include "rpdetect/config.hpp"
#include "rpdetect/head.hpp"
#include "rpdetect/targets.hpp"

namespace rpdetect {

struct LossBreakdown {
  double objectness = 0.0;      // weighted, normalized
  double classification = 0.0;  // weighted, normalized
  double box = 0.0;             // weighted, normalized
  int positives = 0;
};

/// Numerically stable binary cross-entropy on a logit.
double bce_with_logits(double logit, double target);

/// Gradient of IoU(pred, gt) with respect to pred's (x1, y1, x2, y2). Zero
/// when the boxes do not overlap.
void iou_gradient(const Box& pred, const Box& gt, double grad[4]);

/// Scalar detection loss:
///
///   L = ( w_obj * sum_{all cells} BCE(obj, 1[positive])
///       + w_cls * sum_{positives} sum_c BCE(cls_c, 1[c = class])
///       + w_box * sum_{positives} (1 - IoU(pred, gt)) ) / max(1, positives)
///
/// Records an analytic backward into the objectness, class and box maps.
Tensor detection_loss(const HeadOutput& head, const TrainingTargets& targets,
                      const LossWeights& weights, LossBreakdown* breakdown = nullptr);

}  // namespace rpdetect
