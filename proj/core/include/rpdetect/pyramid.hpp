#pragma once

#include <array>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "rpdetect/blocks.hpp"
#include "rpdetect/module.hpp"

namespace rpdetect {

struct PyramidLevel {
  int stride = 0;
  Tensor features;
};

/// Per-stride feature maps, finest first (strides 8, 16, 32).
struct PyramidFeatures {
  std::vector<PyramidLevel> levels;

  /// Strides strictly increasing and spatial extents exactly halving.
  void validate(std::size_t expected_levels = 3) const;
};

inline constexpr int kPyramidLevels = 3;
inline constexpr std::array<int, kPyramidLevels> kPyramidStrides{8, 16, 32};

/// Relu-gated fast-normalized fusion:
///   out = sum_i relu(w_i) / (sum_j relu(w_j) + eps) * inputs[i]
/// `raw_weights` is (1, E, 1, 1) for E inputs and receives gradients.
Tensor fuse_weighted(const std::vector<Tensor>& inputs, const Tensor& raw_weights, float eps);

/// relu(w_i) / (sum_j relu(w_j) + eps).
std::vector<float> normalized_fusion_weights(const Tensor& raw_weights, float eps);

enum class Resample { none, up, down };

struct FusionEdge {
  std::string source;  // "in<level>" or the name of an earlier node
  Resample resample = Resample::none;
};

struct FusionNodeSpec {
  std::string name;
  int level = 0;
  std::vector<FusionEdge> edges;
};

enum class FusionRule { concat, weighted };

/// One node of a pyramid graph: per-edge adapters (projection / strided conv),
/// the fusion itself (channel concat or weighted sum), and a post-fusion 3x3
/// ConvBNAct producing the level width.
class FusionNode : public Module {
 public:
  FusionNode(FusionNodeSpec spec, FusionRule rule, const std::array<int, kPyramidLevels>& widths,
             float eps, std::mt19937& rng, float bn_eps = 1e-3f);

  Tensor forward(const std::map<std::string, Tensor>& values, Mode mode);

  const FusionNodeSpec& spec() const { return spec_; }
  FusionRule rule() const { return rule_; }
  float eps() const { return eps_; }
  /// (1, E, 1, 1); undefined for concat nodes.
  Tensor& raw_weights() { return raw_weights_; }
  ConvBNAct& post() { return *post_; }

  void visit(LayerVisitor& visitor, const std::string& prefix) override;

 private:
  int source_width(const std::string& source) const;

  FusionNodeSpec spec_;
  FusionRule rule_;
  std::array<int, kPyramidLevels> widths_;
  float eps_;
  std::vector<std::unique_ptr<ConvBNAct>> adapters_;  // null: pass-through
  Tensor raw_weights_;
  std::unique_ptr<ConvBNAct> post_;
};

enum class NeckKind { pafpn, bifpn };

const char* to_string(NeckKind kind);

/// The detector neck. `pafpn` reproduces the unidirectional top-down then
/// bottom-up path aggregation with concat fusion; `bifpn` adds same-level skip
/// edges from the original inputs and uses learnable normalized fusion.
class Neck : public Module {
 public:
  Neck(NeckKind kind, const std::array<int, kPyramidLevels>& widths, std::mt19937& rng,
       float fusion_eps = 1e-4f, int repeats = 1, float bn_eps = 1e-3f);

  PyramidFeatures forward(const PyramidFeatures& features, Mode mode);

  NeckKind kind() const { return kind_; }
  /// Total fusion edges across all nodes.
  int edge_count() const;
  std::vector<FusionNode>& nodes() { return nodes_; }

  void visit(LayerVisitor& visitor, const std::string& prefix) override;

  /// The node list of one pass, in evaluation order.
  static std::vector<FusionNodeSpec> graph(NeckKind kind);

 private:
  NeckKind kind_;
  int repeats_;
  std::vector<FusionNode> nodes_;  // repeats_ passes back to back
};

/// Top-down then bottom-up concat fusion. `neck` must be a pafpn neck.
PyramidFeatures pafpn_forward(Neck& neck, const PyramidFeatures& features, Mode mode);
/// Bidirectional weighted fusion. `neck` must be a bifpn neck.
PyramidFeatures bifpn_forward(Neck& neck, const PyramidFeatures& features, Mode mode);

}  // namespace rpdetect
