#include "rpdetect/detector.hpp"

#include <algorithm>
#include <cmath>

#include "rpdetect/dbb.hpp"
#include "rpdetect/error.hpp"
#include "rpdetect/tape.hpp"

namespace rpdetect {

int scaled_width(int base, float multiple) {
  return std::max(4, static_cast<int>(std::lround(base * multiple)));
}

int scaled_depth(int base, float multiple) {
  return std::max(1, static_cast<int>(std::lround(base * multiple)));
}

Backbone::Backbone(const DetectorConfig& config, std::mt19937& rng) {
  std::array<int, 5> w{};
  for (int i = 0; i < 5; ++i) w[i] = scaled_width(kBaseWidths[i], config.width_multiple);
  const int dbb_units = config.dbb ? config.dbb_units : 0;
  stem_ = std::make_unique<ConvBNAct>(3, w[0], 3, 2, rng, Activation::silu, config.bn_eps);
  for (int s = 0; s < 4; ++s) {
    down_.push_back(
        std::make_unique<ConvBNAct>(w[s], w[s + 1], 3, 2, rng, Activation::silu, config.bn_eps));
    stages_.push_back(std::make_unique<C2f>(w[s + 1], w[s + 1],
                                            scaled_depth(kBaseDepths[s], config.depth_multiple),
                                            true, dbb_units, rng, config.bn_eps));
  }
  pyramid_widths_ = {w[2], w[3], w[4]};
}

PyramidFeatures Backbone::forward(const Tensor& images, Mode mode) {
  Tensor x = stem_->forward(images, mode);
  PyramidFeatures out;
  for (int s = 0; s < 4; ++s) {
    x = stages_[s]->forward(down_[s]->forward(x, mode), mode);
    if (s >= 1) out.levels.push_back({kPyramidStrides[s - 1], x});
  }
  return out;
}

void Backbone::visit(LayerVisitor& v, const std::string& prefix) {
  stem_->visit(v, join_name(prefix, "stem"));
  for (int s = 0; s < 4; ++s) {
    const std::string stage = join_name(prefix, "stage" + std::to_string(s + 1));
    down_[s]->visit(v, join_name(stage, "down"));
    stages_[s]->visit(v, join_name(stage, "c2f"));
  }
}

Detector::Detector(const DetectorConfig& config) : config_(config) {
  config_.validate();
  std::mt19937 rng(static_cast<std::mt19937::result_type>(config_.seed));
  backbone_ = std::make_unique<Backbone>(config_, rng);
  const auto widths = backbone_->pyramid_widths();
  neck_ = std::make_unique<Neck>(config_.neck, widths, rng, config_.fusion_eps,
                                 config_.neck_repeats, config_.bn_eps);
  if (config_.head == HeadKind::coupled) {
    head_ = std::make_unique<CoupledHead>(widths, config_.num_classes, rng, config_.bn_eps);
  } else {
    head_ = std::make_unique<ImprovedHead>(widths, config_.num_classes, rng, config_.fusion_eps,
                                           config_.bn_eps);
  }
  head_->init_priors(kObjectnessPrior, kPredictionWeightScale);
}

HeadOutput Detector::forward(const Tensor& images, Mode mode) {
  const Shape s = images.shape();
  if (s.c != 3 || s.h <= 0 || s.w <= 0 || s.h % 32 != 0 || s.w % 32 != 0) {
    throw ShapeError("detector: expected (N, 3, H, W) images with H and W multiples of 32, got " +
                     s.str());
  }
  return head_->forward(neck_->forward(backbone_->forward(images, mode), mode), mode);
}

bool Detector::deployed() {
  for (DBBBlock* b : dbb_blocks(*this)) {
    if (b->deployed()) return true;
  }
  return false;
}

std::unique_ptr<Detector> Detector::clone() {
  auto copy = std::make_unique<Detector>(config_);
  if (deployed()) reparameterize_model(*copy);
  copy_state(*this, *copy);
  return copy;
}

void Detector::visit(LayerVisitor& v, const std::string& prefix) {
  backbone_->visit(v, join_name(prefix, "backbone"));
  neck_->visit(v, join_name(prefix, "neck"));
  head_->visit(v, join_name(prefix, "head"));
}

std::unique_ptr<Detector> build_detector(const DetectorConfig& config) {
  return std::make_unique<Detector>(config);
}

int reparameterize_model(Module& net) {
  int rewritten = 0;
  for (DBBBlock* b : dbb_blocks(net)) {
    if (b->switch_to_deploy()) ++rewritten;
  }
  return rewritten;
}

void copy_state(Module& from, Module& to) {
  const std::vector<NamedTensor> src = named_tensors(from);
  std::vector<NamedTensor> dst = named_tensors(to);
  if (src.size() != dst.size()) {
    throw ShapeError("copy_state: " + std::to_string(src.size()) + " tensors vs " +
                     std::to_string(dst.size()));
  }
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].name != dst[i].name || src[i].tensor.shape() != dst[i].tensor.shape()) {
      throw ShapeError("copy_state: '" + src[i].name + "' " + src[i].tensor.shape().str() +
                       " vs '" + dst[i].name + "' " + dst[i].tensor.shape().str());
    }
    auto s = src[i].tensor.data();
    std::copy(s.begin(), s.end(), dst[i].tensor.mutable_data().begin());
  }
}

Tensor probe_batch(int n, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor t(Shape{n, 3, size, size});
  for (float& v : t.mutable_data()) v = u(rng);
  return t;
}

float max_logit_deviation(Detector& a, Detector& b, const Tensor& images) {
  NoGradScope no_grad;
  const std::vector<Tensor> ma = a.forward(images, Mode::eval).maps();
  const std::vector<Tensor> mb = b.forward(images, Mode::eval).maps();
  if (ma.size() != mb.size()) throw ShapeError("max_logit_deviation: head layouts differ");
  float worst = 0.0f;
  for (std::size_t i = 0; i < ma.size(); ++i) worst = std::max(worst, max_abs_diff(ma[i], mb[i]));
  return worst;
}

}  // namespace rpdetect
