#pragma once

#include <memory>
#include <random>
#include <vector>

#include "rpdetect/dbb.hpp"
#include "rpdetect/module.hpp"
#include "rpdetect/ops.hpp"

namespace rpdetect {

/// A module mapping one tensor to one tensor.
class Block : public Module {
 public:
  virtual Tensor forward(const Tensor& input, Mode mode) = 0;
};

/// conv (no bias, "same" padding) -> BN -> activation.
class ConvBNAct : public Block {
 public:
  ConvBNAct(int in_channels, int out_channels, int kernel, int stride, std::mt19937& rng,
            Activation act = Activation::silu, float bn_eps = 1e-3f);

  Tensor forward(const Tensor& input, Mode mode) override;
  void visit(LayerVisitor& visitor, const std::string& prefix) override;

  ConvLayer conv;
  BNLayer bn;
  Activation act;
};

/// DBB block followed by an activation.
class DBBUnit : public Block {
 public:
  DBBUnit(const DBBConfig& config, std::mt19937& rng, Activation act = Activation::silu);

  Tensor forward(const Tensor& input, Mode mode) override;
  void visit(LayerVisitor& visitor, const std::string& prefix) override;

  DBBBlock dbb;
  Activation act;
};

/// Two 3x3 units with an optional residual add. `dbb_units` of the two units
/// (counted from the last) are DBB units; 0 gives the plain bottleneck.
class Bottleneck : public Block {
 public:
  Bottleneck(int channels, bool shortcut, int dbb_units, std::mt19937& rng, float bn_eps = 1e-3f);

  Tensor forward(const Tensor& input, Mode mode) override;
  void visit(LayerVisitor& visitor, const std::string& prefix) override;

 private:
  std::unique_ptr<Block> cv1_;
  std::unique_ptr<Block> cv2_;
  bool shortcut_;
};

/// Split-transform-concat block: a 1x1 entry conv splits into two halves, n
/// bottlenecks extend the chain from the second half, and a 1x1 exit conv
/// maps all partial outputs to out_channels. With dbb_units > 0 this is the
/// C2f-DBB variant.
class C2f : public Block {
 public:
  C2f(int in_channels, int out_channels, int n, bool shortcut, int dbb_units, std::mt19937& rng,
      float bn_eps = 1e-3f);

  Tensor forward(const Tensor& input, Mode mode) override;
  void visit(LayerVisitor& visitor, const std::string& prefix) override;

  int out_channels() const { return out_channels_; }

 private:
  int hidden_;
  int out_channels_;
  ConvBNAct cv1_;
  std::vector<Bottleneck> m_;
  ConvBNAct cv2_;
};

}  // namespace rpdetect
