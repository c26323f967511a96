#include "rpdetect/head.hpp"

#include <algorithm>
#include <cmath>

#include "rpdetect/error.hpp"

namespace rpdetect {

std::vector<Tensor> HeadOutput::maps() const {
  std::vector<Tensor> out;
  for (const LevelOutput& l : levels) {
    out.push_back(l.objectness);
    out.push_back(l.class_logits);
    out.push_back(l.box_regression);
  }
  return out;
}

float decode_distance(float raw) {
  return std::exp(std::clamp(raw, -kMaxLogDistance, kMaxLogDistance));
}

const char* to_string(HeadKind kind) {
  return kind == HeadKind::coupled ? "coupled" : "improved";
}

CoupledHead::CoupledHead(const std::array<int, kPyramidLevels>& widths, int num_classes,
                         std::mt19937& rng, float bn_eps)
    : num_classes_(num_classes) {
  for (int l = 0; l < kPyramidLevels; ++l) {
    towers_.emplace_back(widths[l], widths[l], 3, 1, rng, Activation::silu, bn_eps);
    predictors_.push_back(ConvLayer::random(widths[l], 5 + num_classes, 1, rng));
  }
}

HeadOutput CoupledHead::forward(const PyramidFeatures& features, Mode mode) {
  features.validate(kPyramidLevels);
  HeadOutput out;
  out.num_classes = num_classes_;
  for (int l = 0; l < kPyramidLevels; ++l) {
    Tensor y = conv2d(towers_[l].forward(features.levels[l].features, mode), predictors_[l]);
    out.levels.push_back({features.levels[l].stride, slice_channels(y, 0, 1),
                          slice_channels(y, 1, num_classes_),
                          slice_channels(y, 1 + num_classes_, 4)});
  }
  return out;
}

std::vector<ConvLayer*> CoupledHead::prediction_layers() {
  std::vector<ConvLayer*> out;
  for (ConvLayer& p : predictors_) out.push_back(&p);
  return out;
}

namespace {
void scale_weights(ConvLayer& layer, float scale) {
  for (float& v : layer.weight.mutable_data()) v *= scale;
}
}  // namespace

void CoupledHead::init_priors(float objectness_bias, float weight_scale) {
  for (ConvLayer& p : predictors_) {
    scale_weights(p, weight_scale);
    p.bias->mutable_data()[0] = objectness_bias;
  }
}

void CoupledHead::visit(LayerVisitor& v, const std::string& prefix) {
  for (int l = 0; l < kPyramidLevels; ++l) {
    const std::string level = join_name(prefix, "level" + std::to_string(l));
    towers_[l].visit(v, join_name(level, "tower"));
    v.conv(join_name(level, "pred"), predictors_[l]);
  }
}

ImprovedHead::ImprovedHead(const std::array<int, kPyramidLevels>& widths, int num_classes,
                           std::mt19937& rng, float fusion_eps, float bn_eps)
    : num_classes_(num_classes), fusion_eps_(fusion_eps) {
  for (int l = 0; l < kPyramidLevels; ++l) {
    int edges = 1;
    if (l + 1 < kPyramidLevels) {
      from_coarser_.push_back(std::make_unique<ConvBNAct>(widths[l + 1], widths[l], 1, 1, rng,
                                                          Activation::silu, bn_eps));
      ++edges;
    } else {
      from_coarser_.push_back(nullptr);
    }
    if (l > 0) {
      from_finer_.push_back(std::make_unique<ConvBNAct>(widths[l - 1], widths[l], 1, 1, rng,
                                                        Activation::silu, bn_eps));
      ++edges;
    } else {
      from_finer_.push_back(nullptr);
    }
    transfer_weights_.emplace_back(Shape{1, edges, 1, 1}, 1.0f);
    cls_towers_.emplace_back(widths[l], widths[l], 3, 1, rng, Activation::silu, bn_eps);
    reg_towers_.emplace_back(widths[l], widths[l], 3, 1, rng, Activation::silu, bn_eps);
    cls_predictors_.push_back(ConvLayer::random(widths[l], num_classes, 1, rng));
    reg_predictors_.push_back(ConvLayer::random(widths[l], 5, 1, rng));
  }
}

HeadOutput ImprovedHead::forward(const PyramidFeatures& features, Mode mode) {
  features.validate(kPyramidLevels);
  HeadOutput out;
  out.num_classes = num_classes_;
  for (int l = 0; l < kPyramidLevels; ++l) {
    std::vector<Tensor> context{features.levels[l].features};
    if (from_coarser_[l]) {
      context.push_back(
          upsample_nearest2x(from_coarser_[l]->forward(features.levels[l + 1].features, mode)));
    }
    if (from_finer_[l]) {
      context.push_back(
          from_finer_[l]->forward(downsample_stride2(features.levels[l - 1].features), mode));
    }
    const Tensor x = fuse_weighted(context, transfer_weights_[l], fusion_eps_);
    Tensor cls = conv2d(cls_towers_[l].forward(x, mode), cls_predictors_[l]);
    Tensor reg = conv2d(reg_towers_[l].forward(x, mode), reg_predictors_[l]);
    out.levels.push_back({features.levels[l].stride, slice_channels(reg, 4, 1), cls,
                          slice_channels(reg, 0, 4)});
  }
  return out;
}

std::vector<ConvLayer*> ImprovedHead::prediction_layers() {
  std::vector<ConvLayer*> out;
  for (int l = 0; l < kPyramidLevels; ++l) {
    out.push_back(&cls_predictors_[l]);
    out.push_back(&reg_predictors_[l]);
  }
  return out;
}

void ImprovedHead::init_priors(float objectness_bias, float weight_scale) {
  for (int l = 0; l < kPyramidLevels; ++l) {
    scale_weights(cls_predictors_[l], weight_scale);
    scale_weights(reg_predictors_[l], weight_scale);
    reg_predictors_[l].bias->mutable_data()[4] = objectness_bias;
  }
}

void ImprovedHead::visit(LayerVisitor& v, const std::string& prefix) {
  for (int l = 0; l < kPyramidLevels; ++l) {
    const std::string level = join_name(prefix, "level" + std::to_string(l));
    if (from_coarser_[l]) from_coarser_[l]->visit(v, join_name(level, "from_coarser"));
    if (from_finer_[l]) from_finer_[l]->visit(v, join_name(level, "from_finer"));
    v.tensor(join_name(level, "transfer_weight"), transfer_weights_[l]);
    cls_towers_[l].visit(v, join_name(level, "cls_tower"));
    v.conv(join_name(level, "cls_pred"), cls_predictors_[l]);
    reg_towers_[l].visit(v, join_name(level, "reg_tower"));
    v.conv(join_name(level, "reg_pred"), reg_predictors_[l]);
  }
}

}  // namespace rpdetect
