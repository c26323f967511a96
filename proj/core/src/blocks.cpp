#include "rpdetect/blocks.hpp"

#include <algorithm>

#include "rpdetect/error.hpp"

namespace rpdetect {

ConvBNAct::ConvBNAct(int in_channels, int out_channels, int kernel, int stride, std::mt19937& rng,
                     Activation act_kind, float bn_eps)
    : conv(ConvLayer::random(in_channels, out_channels, kernel, rng, stride, (kernel - 1) / 2, 1,
                             false)),
      bn(BNLayer::identity(out_channels, bn_eps)),
      act(act_kind) {}

Tensor ConvBNAct::forward(const Tensor& input, Mode mode) {
  Tensor y = conv2d(input, conv);
  y = mode == Mode::train ? batchnorm_train(y, bn) : batchnorm_infer(y, bn);
  return activation(y, act);
}

void ConvBNAct::visit(LayerVisitor& v, const std::string& prefix) {
  v.conv(join_name(prefix, "conv"), conv);
  v.bn(join_name(prefix, "bn"), bn);
}

DBBUnit::DBBUnit(const DBBConfig& config, std::mt19937& rng, Activation act_kind)
    : dbb(config, rng), act(act_kind) {}

Tensor DBBUnit::forward(const Tensor& input, Mode mode) {
  return activation(dbb.forward(input, mode), act);
}

void DBBUnit::visit(LayerVisitor& v, const std::string& prefix) {
  dbb.visit(v, join_name(prefix, "dbb"));
}

namespace {
std::unique_ptr<Block> make_unit(int channels, bool use_dbb, std::mt19937& rng, float bn_eps) {
  if (use_dbb) {
    DBBConfig cfg;
    cfg.in_channels = channels;
    cfg.out_channels = channels;
    cfg.kernel = 3;
    cfg.bn_eps = bn_eps;
    return std::make_unique<DBBUnit>(cfg, rng);
  }
  return std::make_unique<ConvBNAct>(channels, channels, 3, 1, rng, Activation::silu, bn_eps);
}
}  // namespace

Bottleneck::Bottleneck(int channels, bool shortcut, int dbb_units, std::mt19937& rng,
                       float bn_eps)
    : shortcut_(shortcut) {
  if (dbb_units < 0 || dbb_units > 2) throw ConfigError("bottleneck: dbb_units must be 0, 1 or 2");
  cv1_ = make_unit(channels, dbb_units >= 2, rng, bn_eps);
  cv2_ = make_unit(channels, dbb_units >= 1, rng, bn_eps);
}

Tensor Bottleneck::forward(const Tensor& input, Mode mode) {
  Tensor y = cv2_->forward(cv1_->forward(input, mode), mode);
  return shortcut_ ? add(input, y) : y;
}

void Bottleneck::visit(LayerVisitor& v, const std::string& prefix) {
  cv1_->visit(v, join_name(prefix, "cv1"));
  cv2_->visit(v, join_name(prefix, "cv2"));
}

C2f::C2f(int in_channels, int out_channels, int n, bool shortcut, int dbb_units,
         std::mt19937& rng, float bn_eps)
    : hidden_(std::max(1, out_channels / 2)),
      out_channels_(out_channels),
      cv1_(in_channels, 2 * hidden_, 1, 1, rng, Activation::silu, bn_eps),
      cv2_(ConvBNAct((2 + n) * hidden_, out_channels, 1, 1, rng, Activation::silu, bn_eps)) {
  if (n < 1) throw ConfigError("c2f: needs at least one bottleneck");
  m_.reserve(n);
  for (int i = 0; i < n; ++i) m_.emplace_back(hidden_, shortcut, dbb_units, rng, bn_eps);
}

Tensor C2f::forward(const Tensor& input, Mode mode) {
  Tensor y = cv1_.forward(input, mode);
  std::vector<Tensor> parts{slice_channels(y, 0, hidden_), slice_channels(y, hidden_, hidden_)};
  for (Bottleneck& b : m_) parts.push_back(b.forward(parts.back(), mode));
  return cv2_.forward(concat_channels(parts), mode);
}

void C2f::visit(LayerVisitor& v, const std::string& prefix) {
  cv1_.visit(v, join_name(prefix, "cv1"));
  for (std::size_t i = 0; i < m_.size(); ++i) m_[i].visit(v, join_name(prefix, "m" + std::to_string(i)));
  cv2_.visit(v, join_name(prefix, "cv2"));
}

}  // namespace rpdetect
