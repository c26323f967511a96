#include "rpdetect/module.hpp"

namespace rpdetect {

std::string join_name(const std::string& prefix, const std::string& name) {
  if (prefix.empty()) return name;
  if (name.empty()) return prefix;
  return prefix + "." + name;
}

const char* to_string(TensorKind kind) {
  switch (kind) {
    case TensorKind::conv_weight: return "conv.weight";
    case TensorKind::conv_bias: return "conv.bias";
    case TensorKind::bn_gamma: return "bn.gamma";
    case TensorKind::bn_beta: return "bn.beta";
    case TensorKind::bn_running_mean: return "bn.running_mean";
    case TensorKind::bn_running_var: return "bn.running_var";
    case TensorKind::free_weight: return "weight";
  }
  return "unknown";
}

namespace {

class Collector : public LayerVisitor {
 public:
  std::vector<NamedTensor> out;

  void conv(const std::string& name, ConvLayer& layer) override {
    out.push_back({join_name(name, "weight"), TensorKind::conv_weight, layer.weight, true});
    if (layer.bias) out.push_back({join_name(name, "bias"), TensorKind::conv_bias, *layer.bias, true});
  }
  void bn(const std::string& name, BNLayer& layer) override {
    out.push_back({join_name(name, "gamma"), TensorKind::bn_gamma, layer.gamma, true});
    out.push_back({join_name(name, "beta"), TensorKind::bn_beta, layer.beta, true});
    out.push_back(
        {join_name(name, "running_mean"), TensorKind::bn_running_mean, layer.running_mean, false});
    out.push_back(
        {join_name(name, "running_var"), TensorKind::bn_running_var, layer.running_var, false});
  }
  void tensor(const std::string& name, Tensor& value) override {
    out.push_back({name, TensorKind::free_weight, value, true});
  }
};

class DBBCollector : public LayerVisitor {
 public:
  std::vector<DBBBlock*> blocks;
  void dbb(const std::string&, DBBBlock& block) override { blocks.push_back(&block); }
};

}  // namespace

std::vector<NamedTensor> named_tensors(Module& module) {
  Collector c;
  module.visit(c, "");
  return std::move(c.out);
}

std::vector<Tensor> parameters(Module& module) {
  std::vector<Tensor> out;
  for (auto& nt : named_tensors(module)) {
    if (nt.trainable) out.push_back(nt.tensor);
  }
  return out;
}

std::int64_t count_params(Module& module) {
  std::int64_t total = 0;
  for (auto& nt : named_tensors(module)) {
    if (nt.trainable) total += nt.tensor.numel();
  }
  return total;
}

void enable_gradients(Module& module) {
  for (Tensor& t : parameters(module)) t.set_requires_grad(true);
}

std::vector<DBBBlock*> dbb_blocks(Module& module) {
  DBBCollector c;
  module.visit(c, "");
  return std::move(c.blocks);
}

}  // namespace rpdetect
