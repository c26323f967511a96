#pragma once

#include <optional>
#include <random>

#include "rpdetect/layers.hpp"
#include "rpdetect/module.hpp"

namespace rpdetect {

struct DBBConfig {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int groups = 1;
  /// Width of the 1x1 -> KxK branch; 0 means in_channels.
  int mid_channels = 0;
  float bn_eps = 1e-3f;
};

/// Diverse branch block. In train form the output is the sum of four
/// conv+BN branches sharing geometry:
///
///   kxk:  KxK conv (pad p, stride s) -> BN
///   1x1:  1x1 conv (stride s) -> BN
///   seq:  1x1 conv (pad p) -> BN -> KxK conv (stride s) -> BN
///   avg:  1x1 conv (pad p) -> BN -> KxK avgpool (stride s) -> BN
///
/// where p = (K - 1) / 2. The two composite branches pad before their 1x1
/// layer so that every branch collapses exactly into one KxK conv. No
/// activation is applied here; callers add their own.
class DBBBlock : public Module {
 public:
  struct Branches {
    ConvLayer kxk;
    BNLayer kxk_bn;
    ConvLayer one;
    BNLayer one_bn;
    ConvLayer seq_first;
    BNLayer seq_first_bn;
    ConvLayer seq_second;
    BNLayer seq_second_bn;
    ConvLayer avg_first;
    BNLayer avg_first_bn;
    BNLayer avg_bn;
  };

  DBBBlock(const DBBConfig& config, std::mt19937& rng);

  const DBBConfig& config() const { return config_; }
  bool deployed() const { return merged_.has_value(); }

  Branches& branches();
  const Branches& branches() const;
  const ConvLayer& merged() const;

  Tensor forward(const Tensor& input, Mode mode);

  /// Collapses the branches into a single conv using running BN statistics.
  /// Returns false (and changes nothing) when the block is already deployed.
  bool switch_to_deploy();

  /// The single conv equivalent to the train-form branches (inference mode).
  ConvLayer merged_conv() const;

  DBBBlock clone() const;

  void visit(LayerVisitor& visitor, const std::string& prefix) override;

 private:
  DBBBlock() = default;

  DBBConfig config_;
  std::optional<Branches> branches_;
  std::optional<ConvLayer> merged_;
};

/// Deploy-form copy of `block`. Already-deployed blocks come back unchanged.
DBBBlock reparameterize_dbb(const DBBBlock& block);

}  // namespace rpdetect
