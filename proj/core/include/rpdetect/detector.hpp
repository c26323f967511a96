#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <random>
#include <vector>

#include "rpdetect/blocks.hpp"
#include "rpdetect/config.hpp"
#include "rpdetect/head.hpp"
#include "rpdetect/pyramid.hpp"

namespace rpdetect {

/// Channel widths of stem + four stages before the width multiple is applied.
inline constexpr std::array<int, 5> kBaseWidths{16, 32, 64, 128, 128};
/// Bottlenecks per C2f stage before the depth multiple is applied.
inline constexpr std::array<int, 4> kBaseDepths{3, 6, 6, 3};

int scaled_width(int base, float multiple);
int scaled_depth(int base, float multiple);

/// Stem conv (stride 2) followed by four stride-2 stages, each a downsampling
/// ConvBNAct and a C2f (C2f-DBB when DBB is enabled). The last three stages
/// emit the stride 8/16/32 pyramid.
class Backbone : public Module {
 public:
  Backbone(const DetectorConfig& config, std::mt19937& rng);

  PyramidFeatures forward(const Tensor& images, Mode mode);
  std::array<int, kPyramidLevels> pyramid_widths() const { return pyramid_widths_; }

  void visit(LayerVisitor& visitor, const std::string& prefix) override;

 private:
  std::unique_ptr<ConvBNAct> stem_;
  std::vector<std::unique_ptr<ConvBNAct>> down_;
  std::vector<std::unique_ptr<C2f>> stages_;
  std::array<int, kPyramidLevels> pyramid_widths_{};
};

inline constexpr float kObjectnessPrior = -4.6f;  // sigmoid ~ 0.01
inline constexpr float kPredictionWeightScale = 0.1f;

class Detector : public Module {
 public:
  explicit Detector(const DetectorConfig& config);

  /// `images` is (N, 3, H, W), H and W multiples of 32, values in [0, 1].
  /// Training uses H = W = config.input_size.
  HeadOutput forward(const Tensor& images, Mode mode);

  const DetectorConfig& config() const { return config_; }
  Backbone& backbone() { return *backbone_; }
  Neck& neck() { return *neck_; }
  Head& head() { return *head_; }

  /// True once any DBB block has been collapsed.
  bool deployed();
  /// Deep copy with identical parameters, buffers and form.
  std::unique_ptr<Detector> clone();

  void visit(LayerVisitor& visitor, const std::string& prefix) override;

 private:
  DetectorConfig config_;
  std::unique_ptr<Backbone> backbone_;
  std::unique_ptr<Neck> neck_;
  std::unique_ptr<Head> head_;
};

/// Validates `config` and builds a detector deterministically from config.seed.
std::unique_ptr<Detector> build_detector(const DetectorConfig& config);

/// Collapses every train-form DBB block of `net` in place. Returns how many
/// blocks were rewritten; 0 for a network without train-form blocks.
int reparameterize_model(Module& net);

/// Copies every parameter and buffer of `from` into `to`; the two must have
/// identical layer manifests (ShapeError otherwise).
void copy_state(Module& from, Module& to);

/// Deterministic (N, 3, S, S) batch with values uniform in [0, 1).
Tensor probe_batch(int n, int size, std::uint64_t seed);

/// Largest absolute difference between any two corresponding eval-mode
/// head outputs of `a` and `b` on `images`.
float max_logit_deviation(Detector& a, Detector& b, const Tensor& images);

}  // namespace rpdetect
