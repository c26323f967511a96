#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rpdetect/layers.hpp"

namespace rpdetect {

/// Forward regime. `train` uses batch statistics in BN and updates running
/// statistics; `eval` uses running statistics only.
enum class Mode { train, eval };

class DBBBlock;

/// Walks the layers of a network in a fixed order. Names are dotted paths
/// ("backbone.stage2.c2f.m0.cv2"), stable across runs.
class LayerVisitor {
 public:
  virtual ~LayerVisitor() = default;
  virtual void conv(const std::string& /*name*/, ConvLayer& /*layer*/) {}
  virtual void bn(const std::string& /*name*/, BNLayer& /*layer*/) {}
  /// Free-standing learnable tensors, e.g. fusion weights.
  virtual void tensor(const std::string& /*name*/, Tensor& /*value*/) {}
  /// Called before the block's own layers are visited.
  virtual void dbb(const std::string& /*name*/, DBBBlock& /*block*/) {}
};

class Module {
 public:
  virtual ~Module() = default;
  virtual void visit(LayerVisitor& visitor, const std::string& prefix) = 0;
};

std::string join_name(const std::string& prefix, const std::string& name);

enum class TensorKind {
  conv_weight,
  conv_bias,
  bn_gamma,
  bn_beta,
  bn_running_mean,
  bn_running_var,
  free_weight,
};

const char* to_string(TensorKind kind);

struct NamedTensor {
  std::string name;
  TensorKind kind;
  Tensor tensor;
  bool trainable;
};

/// Every parameter and buffer in visit order.
std::vector<NamedTensor> named_tensors(Module& module);
/// Trainable tensors only, in visit order.
std::vector<Tensor> parameters(Module& module);
/// Total scalar count of trainable tensors (BN running statistics excluded).
std::int64_t count_params(Module& module);
/// Marks every trainable tensor as requiring a gradient.
void enable_gradients(Module& module);
/// Collects DBB blocks in visit order.
std::vector<DBBBlock*> dbb_blocks(Module& module);

}  // namespace rpdetect
