#include "rpdetect/dbb.hpp"

#include "rpdetect/error.hpp"
#include "rpdetect/ops.hpp"
#include "rpdetect/reparam.hpp"

namespace rpdetect {

namespace {

Tensor apply_bn(const Tensor& x, BNLayer& bn, Mode mode) {
  return mode == Mode::train ? batchnorm_train(x, bn) : batchnorm_infer(x, bn);
}

// 1x1 initialized to the identity within each group when widths allow.
ConvLayer identity_1x1(int in_channels, int out_channels, int padding, int groups,
                       std::mt19937& rng) {
  ConvLayer layer = ConvLayer::random(in_channels, out_channels, 1, rng, 1, padding, groups, false);
  if (in_channels == out_channels) {
    const int per_group = in_channels / groups;
    auto w = layer.weight.mutable_data();
    std::fill(w.begin(), w.end(), 0.0f);
    for (int o = 0; o < out_channels; ++o) w[o * per_group + o % per_group] = 1.0f;
  }
  return layer;
}

}  // namespace

DBBBlock::DBBBlock(const DBBConfig& config, std::mt19937& rng) : config_(config) {
  DBBConfig& c = config_;
  if (c.mid_channels == 0) c.mid_channels = c.in_channels;
  if (c.in_channels <= 0 || c.out_channels <= 0) throw ConfigError("dbb: channels must be positive");
  if (c.kernel <= 0 || c.kernel % 2 == 0) throw ConfigError("dbb: kernel must be odd");
  if (c.groups <= 0 || c.in_channels % c.groups != 0 || c.out_channels % c.groups != 0 ||
      c.mid_channels % c.groups != 0) {
    throw ConfigError("dbb: channel counts must be divisible by groups");
  }
  const int pad = (c.kernel - 1) / 2;
  Branches b;
  b.kxk = ConvLayer::random(c.in_channels, c.out_channels, c.kernel, rng, c.stride, pad, c.groups,
                            false);
  b.kxk_bn = BNLayer::identity(c.out_channels, c.bn_eps);
  b.one = ConvLayer::random(c.in_channels, c.out_channels, 1, rng, c.stride, 0, c.groups, false);
  b.one_bn = BNLayer::identity(c.out_channels, c.bn_eps);
  b.seq_first = identity_1x1(c.in_channels, c.mid_channels, pad, c.groups, rng);
  b.seq_first_bn = BNLayer::identity(c.mid_channels, c.bn_eps);
  b.seq_second = ConvLayer::random(c.mid_channels, c.out_channels, c.kernel, rng, c.stride, 0,
                                   c.groups, false);
  b.seq_second_bn = BNLayer::identity(c.out_channels, c.bn_eps);
  b.avg_first = ConvLayer::random(c.in_channels, c.out_channels, 1, rng, 1, pad, c.groups, false);
  b.avg_first_bn = BNLayer::identity(c.out_channels, c.bn_eps);
  b.avg_bn = BNLayer::identity(c.out_channels, c.bn_eps);
  branches_ = std::move(b);
}

DBBBlock::Branches& DBBBlock::branches() {
  if (!branches_) throw StateError("dbb: block is in deploy form; branches are retired");
  return *branches_;
}

const DBBBlock::Branches& DBBBlock::branches() const {
  if (!branches_) throw StateError("dbb: block is in deploy form; branches are retired");
  return *branches_;
}

const ConvLayer& DBBBlock::merged() const {
  if (!merged_) throw StateError("dbb: block is in train form; no merged conv");
  return *merged_;
}

Tensor DBBBlock::forward(const Tensor& input, Mode mode) {
  if (merged_) return conv2d(input, *merged_);
  Branches& b = *branches_;
  const int k = config_.kernel;
  Tensor out = apply_bn(conv2d(input, b.kxk), b.kxk_bn, mode);
  out = add(out, apply_bn(conv2d(input, b.one), b.one_bn, mode));
  Tensor seq = apply_bn(conv2d(input, b.seq_first), b.seq_first_bn, mode);
  out = add(out, apply_bn(conv2d(seq, b.seq_second), b.seq_second_bn, mode));
  Tensor avg = apply_bn(conv2d(input, b.avg_first), b.avg_first_bn, mode);
  out = add(out, apply_bn(avgpool2d(avg, k, config_.stride, 0), b.avg_bn, mode));
  return out;
}

ConvLayer DBBBlock::merged_conv() const {
  if (merged_) return merged_->clone();
  const Branches& b = *branches_;
  const int k = config_.kernel;
  const ConvLayer kxk = fuse_conv_bn(b.kxk, b.kxk_bn);
  const ConvLayer one = pad_kernel_to(fuse_conv_bn(b.one, b.one_bn), k);
  const ConvLayer seq = merge_sequential_1x1_kxk(fuse_conv_bn(b.seq_first, b.seq_first_bn),
                                                 fuse_conv_bn(b.seq_second, b.seq_second_bn));
  const ConvLayer pool = avgpool_to_conv(config_.out_channels, k, config_.stride, config_.groups);
  const ConvLayer avg = merge_sequential_1x1_kxk(fuse_conv_bn(b.avg_first, b.avg_first_bn),
                                                 fuse_conv_bn(pool, b.avg_bn));
  return merge_parallel({kxk, one, seq, avg});
}

bool DBBBlock::switch_to_deploy() {
  if (merged_) return false;
  merged_ = merged_conv();
  branches_.reset();
  return true;
}

DBBBlock DBBBlock::clone() const {
  DBBBlock copy;
  copy.config_ = config_;
  if (merged_) copy.merged_ = merged_->clone();
  if (branches_) {
    const Branches& b = *branches_;
    copy.branches_ = Branches{b.kxk.clone(),          b.kxk_bn.clone(),
                              b.one.clone(),          b.one_bn.clone(),
                              b.seq_first.clone(),    b.seq_first_bn.clone(),
                              b.seq_second.clone(),   b.seq_second_bn.clone(),
                              b.avg_first.clone(),    b.avg_first_bn.clone(),
                              b.avg_bn.clone()};
  }
  return copy;
}

void DBBBlock::visit(LayerVisitor& v, const std::string& prefix) {
  v.dbb(prefix, *this);
  if (merged_) {
    v.conv(join_name(prefix, "merged"), *merged_);
    return;
  }
  Branches& b = *branches_;
  v.conv(join_name(prefix, "kxk"), b.kxk);
  v.bn(join_name(prefix, "kxk_bn"), b.kxk_bn);
  v.conv(join_name(prefix, "one"), b.one);
  v.bn(join_name(prefix, "one_bn"), b.one_bn);
  v.conv(join_name(prefix, "seq_first"), b.seq_first);
  v.bn(join_name(prefix, "seq_first_bn"), b.seq_first_bn);
  v.conv(join_name(prefix, "seq_second"), b.seq_second);
  v.bn(join_name(prefix, "seq_second_bn"), b.seq_second_bn);
  v.conv(join_name(prefix, "avg_first"), b.avg_first);
  v.bn(join_name(prefix, "avg_first_bn"), b.avg_first_bn);
  v.bn(join_name(prefix, "avg_bn"), b.avg_bn);
}

DBBBlock reparameterize_dbb(const DBBBlock& block) {
  DBBBlock copy = block.clone();
  copy.switch_to_deploy();
  return copy;
}

}  // namespace rpdetect
