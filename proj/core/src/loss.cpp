#include "rpdetect/loss.hpp"

#include <algorithm>
#include <cmath>

#include "rpdetect/error.hpp"
#include "rpdetect/postprocess.hpp"
#include "rpdetect/tape.hpp"

namespace rpdetect {

double bce_with_logits(double z, double t) {
  return std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
}

void iou_gradient(const Box& p, const Box& g, double grad[4]) {
  std::fill(grad, grad + 4, 0.0);
  const double ix1 = std::max<double>(p.x1, g.x1), ix2 = std::min<double>(p.x2, g.x2);
  const double iy1 = std::max<double>(p.y1, g.y1), iy2 = std::min<double>(p.y2, g.y2);
  const double iw = ix2 - ix1, ih = iy2 - iy1;
  if (iw <= 0.0 || ih <= 0.0) return;
  const double inter = iw * ih;
  const double pw = static_cast<double>(p.x2) - p.x1, ph = static_cast<double>(p.y2) - p.y1;
  const double uni = pw * ph + static_cast<double>(g.area()) - inter;
  if (uni <= 0.0) return;
  const double d_inter[4] = {p.x1 > g.x1 ? -ih : 0.0, p.y1 > g.y1 ? -iw : 0.0,
                             p.x2 < g.x2 ? ih : 0.0, p.y2 < g.y2 ? iw : 0.0};
  const double d_area[4] = {-ph, -pw, ph, pw};
  for (int k = 0; k < 4; ++k) {
    const double d_uni = d_area[k] - d_inter[k];
    grad[k] = (d_inter[k] * uni - inter * d_uni) / (uni * uni);
  }
}

Tensor detection_loss(const HeadOutput& head, const TrainingTargets& targets,
                      const LossWeights& weights, LossBreakdown* breakdown) {
  if (static_cast<int>(head.levels.size()) != kPyramidLevels) {
    throw ShapeError("loss: head has " + std::to_string(head.levels.size()) + " levels");
  }
  const int nc = head.num_classes;
  for (int l = 0; l < kPyramidLevels; ++l) {
    const LevelOutput& lv = head.levels[l];
    const Shape s = lv.objectness.shape();
    if (s.n != targets.batch || s.h != targets.grid[l] || s.w != targets.grid[l] ||
        lv.class_logits.shape().c != nc || lv.box_regression.shape().c != 4) {
      throw ShapeError("loss: level " + std::to_string(l) + " maps " + s.str() +
                       " do not match targets");
    }
  }
  const double norm = std::max<std::size_t>(1, targets.positives.size());

  std::vector<std::vector<float>> d_obj(kPyramidLevels), d_cls(kPyramidLevels),
      d_reg(kPyramidLevels);
  double obj_sum = 0.0, cls_sum = 0.0, box_sum = 0.0;

  // Objectness over every cell; positives flip their target to 1 below.
  for (int l = 0; l < kPyramidLevels; ++l) {
    auto z = head.levels[l].objectness.data();
    d_obj[l].resize(z.size());
    d_cls[l].assign(head.levels[l].class_logits.numel(), 0.0f);
    d_reg[l].assign(head.levels[l].box_regression.numel(), 0.0f);
    for (std::size_t i = 0; i < z.size(); ++i) {
      obj_sum += bce_with_logits(z[i], 0.0);
      d_obj[l][i] = static_cast<float>(weights.objectness / (1.0 + std::exp(-z[i])) / norm);
    }
  }

  for (const PositiveTarget& p : targets.positives) {
    const LevelOutput& lv = head.levels[p.level];
    const Shape s = lv.objectness.shape();
    const std::int64_t plane = s.plane();
    const std::int64_t cell = static_cast<std::int64_t>(p.cell_y) * s.w + p.cell_x;

    const std::int64_t oi = p.image * plane + cell;
    const double z = lv.objectness.data()[oi];
    obj_sum += bce_with_logits(z, 1.0) - bce_with_logits(z, 0.0);
    d_obj[p.level][oi] = static_cast<float>(weights.objectness * (1.0 / (1.0 + std::exp(-z)) - 1.0) / norm);

    if (p.gt.class_id < 0 || p.gt.class_id >= nc) {
      throw ValidationError("loss: class id " + std::to_string(p.gt.class_id) + " out of range");
    }
    for (int c = 0; c < nc; ++c) {
      const std::int64_t ci = (static_cast<std::int64_t>(p.image) * nc + c) * plane + cell;
      const double zc = lv.class_logits.data()[ci];
      const double t = c == p.gt.class_id ? 1.0 : 0.0;
      cls_sum += bce_with_logits(zc, t);
      d_cls[p.level][ci] += static_cast<float>(weights.classification * (1.0 / (1.0 + std::exp(-zc)) - t) / norm);
    }

    float raw[4];
    std::int64_t ri[4];
    for (int k = 0; k < 4; ++k) {
      ri[k] = (static_cast<std::int64_t>(p.image) * 4 + k) * plane + cell;
      raw[k] = lv.box_regression.data()[ri[k]];
    }
    const Box pred = cell_box(raw, p.cell_y, p.cell_x, lv.stride);
    box_sum += 1.0 - iou(pred, p.gt.box);
    double g[4];
    iou_gradient(pred, p.gt.box, g);
    // x1 = cx - s e^{r0}, y1 = cy - s e^{r1}, x2 = cx + s e^{r2}, y2 = cy + s e^{r3}
    const double sign[4] = {-1.0, -1.0, 1.0, 1.0};
    for (int k = 0; k < 4; ++k) {
      if (raw[k] < -kMaxLogDistance || raw[k] > kMaxLogDistance) continue;
      const double dcoord = sign[k] * lv.stride * decode_distance(raw[k]);
      d_reg[p.level][ri[k]] += static_cast<float>(-weights.box * g[k] * dcoord / norm);
    }
  }

  const double obj_term = weights.objectness * obj_sum / norm;
  const double cls_term = weights.classification * cls_sum / norm;
  const double box_term = weights.box * box_sum / norm;
  if (breakdown) {
    breakdown->objectness = obj_term;
    breakdown->classification = cls_term;
    breakdown->box = box_term;
    breakdown->positives = static_cast<int>(targets.positives.size());
  }
  Tensor out = Tensor::scalar(static_cast<float>(obj_term + cls_term + box_term));

  std::vector<Tensor> maps = head.maps();
  if (GradTape* tape = tape_for(out, maps)) {
    tape->record([maps, out, d_obj = std::move(d_obj), d_cls = std::move(d_cls),
                  d_reg = std::move(d_reg)]() mutable {
      if (!out.has_grad()) return;
      const float dy = out.grad()[0];
      for (int l = 0; l < kPyramidLevels; ++l) {
        const std::vector<float>* grads[3] = {&d_obj[l], &d_cls[l], &d_reg[l]};
        for (int m = 0; m < 3; ++m) {
          const Tensor& t = maps[3 * l + m];
          if (!t.requires_grad()) continue;
          auto dx = t.mutable_grad();
          const std::vector<float>& gsrc = *grads[m];
          for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy * gsrc[i];
        }
      }
    });
  }
  return out;
}

}  // namespace rpdetect
