#pragma once

#include <array>
#include <memory>
#include <random>
#include <vector>

#include "rpdetect/blocks.hpp"
#include "rpdetect/pyramid.hpp"

namespace rpdetect {

/// Raw head maps for one pyramid level. Box regression holds log-distances
/// from the cell center to the left/top/right/bottom edges in stride units;
/// decode_distance() maps them to non-negative distances.
struct LevelOutput {
  int stride = 0;
  Tensor objectness;      // (N, 1, H, W) logits
  Tensor class_logits;    // (N, classes, H, W)
  Tensor box_regression;  // (N, 4, H, W)
};

struct HeadOutput {
  std::vector<LevelOutput> levels;
  int num_classes = 0;

  /// Every map of every level, in a fixed order (for equivalence checks).
  std::vector<Tensor> maps() const;
};

inline constexpr float kMaxLogDistance = 8.0f;

/// exp(clamp(raw, -8, 8)).
float decode_distance(float raw);

enum class HeadKind { coupled, improved };

const char* to_string(HeadKind kind);

class Head : public Module {
 public:
  virtual HeadOutput forward(const PyramidFeatures& features, Mode mode) = 0;
  /// Final 1x1 prediction convs.
  virtual std::vector<ConvLayer*> prediction_layers() = 0;
  /// Scales prediction weights by `weight_scale` and sets every objectness
  /// bias to `objectness_bias` (a low prior keeps early objectness loss small).
  virtual void init_priors(float objectness_bias, float weight_scale) = 0;
};

/// Baseline YOLO-style head: one shared 3x3 tower per level and a single 1x1
/// conv emitting objectness, class and box channels together.
class CoupledHead : public Head {
 public:
  CoupledHead(const std::array<int, kPyramidLevels>& widths, int num_classes, std::mt19937& rng,
              float bn_eps = 1e-3f);

  HeadOutput forward(const PyramidFeatures& features, Mode mode) override;
  std::vector<ConvLayer*> prediction_layers() override;
  void init_priors(float objectness_bias, float weight_scale) override;
  void visit(LayerVisitor& visitor, const std::string& prefix) override;

 private:
  int num_classes_;
  std::vector<ConvBNAct> towers_;
  std::vector<ConvLayer> predictors_;
};

/// Revised detection pipeline. Stage one (information transfer) injects
/// adjacent-level context into every level: the coarser neighbour is
/// projected and upsampled, the finer one subsampled and projected, and both
/// are mixed with the level itself by normalized weighted fusion. Stage two
/// runs decoupled classification and regression towers; objectness is
/// predicted from the regression tower.
class ImprovedHead : public Head {
 public:
  ImprovedHead(const std::array<int, kPyramidLevels>& widths, int num_classes, std::mt19937& rng,
               float fusion_eps = 1e-4f, float bn_eps = 1e-3f);

  HeadOutput forward(const PyramidFeatures& features, Mode mode) override;
  std::vector<ConvLayer*> prediction_layers() override;
  void init_priors(float objectness_bias, float weight_scale) override;
  void visit(LayerVisitor& visitor, const std::string& prefix) override;

  /// Context-transfer fusion weights of `level`: (1, E, 1, 1).
  Tensor& transfer_weights(int level) { return transfer_weights_[level]; }

 private:
  int num_classes_;
  float fusion_eps_;
  std::vector<std::unique_ptr<ConvBNAct>> from_coarser_;  // level l <- l+1
  std::vector<std::unique_ptr<ConvBNAct>> from_finer_;    // level l <- l-1
  std::vector<Tensor> transfer_weights_;
  std::vector<ConvBNAct> cls_towers_;
  std::vector<ConvBNAct> reg_towers_;
  std::vector<ConvLayer> cls_predictors_;
  std::vector<ConvLayer> reg_predictors_;  // 4 box channels + 1 objectness
};

}  // namespace rpdetect
