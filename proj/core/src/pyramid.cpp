#include "rpdetect/pyramid.hpp"

#include <cmath>

#include "rpdetect/error.hpp"
#include "rpdetect/tape.hpp"

namespace rpdetect {

void PyramidFeatures::validate(std::size_t expected_levels) const {
  if (levels.size() != expected_levels) {
    throw ShapeError("pyramid: expected " + std::to_string(expected_levels) + " levels, got " +
                     std::to_string(levels.size()));
  }
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (!levels[i].features.defined()) {
      throw ShapeError("pyramid: level " + std::to_string(i) + " has no features");
    }
    if (i == 0) continue;
    const PyramidLevel& fine = levels[i - 1];
    const PyramidLevel& coarse = levels[i];
    if (coarse.stride <= fine.stride) {
      throw ShapeError("pyramid: strides must increase strictly (level " + std::to_string(i) + ")");
    }
    const Shape a = fine.features.shape();
    const Shape b = coarse.features.shape();
    if (a.n != b.n || a.h != 2 * b.h || a.w != 2 * b.w) {
      throw ShapeError("pyramid: level " + std::to_string(i) + " extent " + b.str() +
                       " is not half of " + a.str());
    }
  }
}

std::vector<float> normalized_fusion_weights(const Tensor& raw_weights, float eps) {
  auto w = raw_weights.data();
  double total = 0.0;
  for (float v : w) total += std::max(v, 0.0f);
  std::vector<float> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    out[i] = static_cast<float>(std::max(w[i], 0.0f) / (total + eps));
  }
  return out;
}

Tensor fuse_weighted(const std::vector<Tensor>& inputs, const Tensor& raw_weights, float eps) {
  if (inputs.empty()) throw ShapeError("fuse_weighted: no inputs");
  const Shape s = inputs.front().shape();
  for (const Tensor& t : inputs) {
    if (t.shape() != s) {
      throw ShapeError("fuse_weighted: input " + t.shape().str() + " does not match " + s.str());
    }
  }
  const int edges = static_cast<int>(inputs.size());
  if (raw_weights.shape() != Shape{1, edges, 1, 1}) {
    throw ShapeError("fuse_weighted: weights " + raw_weights.shape().str() + " for " +
                     std::to_string(edges) + " inputs");
  }
  if (!(eps >= 0.0f)) throw ValidationError("fuse_weighted: eps must be non-negative");

  const std::vector<float> alpha = normalized_fusion_weights(raw_weights, eps);
  double total = 0.0;
  for (float a : alpha) {
    if (!(a >= 0.0f && a <= 1.0f)) throw StateError("fuse_weighted: normalized weight outside [0,1]");
    total += a;
  }
  if (total > 1.0 + 1e-6) throw StateError("fuse_weighted: normalized weights sum above 1");

  Tensor out(s);
  auto y = out.mutable_data();
  for (int e = 0; e < edges; ++e) {
    auto x = inputs[e].data();
    const float a = alpha[e];
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
  }
  FlopCounter::add(2.0 * edges * static_cast<double>(s.numel()));

  std::vector<Tensor> operands = inputs;
  operands.push_back(raw_weights);
  if (GradTape* tape = tape_for(out, operands)) {
    tape->record([inputs, raw_weights, out, alpha, eps]() mutable {
      if (!out.has_grad()) return;
      auto dy = out.grad();
      const int edges = static_cast<int>(inputs.size());
      for (int e = 0; e < edges; ++e) {
        if (!inputs[e].requires_grad()) continue;
        auto dx = inputs[e].mutable_grad();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += alpha[e] * dy[i];
      }
      if (!raw_weights.requires_grad()) return;
      // d alpha_i / d w_k = 1[w_k > 0] (delta_ik - alpha_i) / (S + eps)
      auto w = raw_weights.data();
      double total = 0.0;
      for (float v : w) total += std::max(v, 0.0f);
      std::vector<double> g(edges, 0.0);
      for (int e = 0; e < edges; ++e) {
        auto x = inputs[e].data();
        double acc = 0.0;
        for (std::size_t i = 0; i < dy.size(); ++i) acc += static_cast<double>(dy[i]) * x[i];
        g[e] = acc;
      }
      double mix = 0.0;
      for (int e = 0; e < edges; ++e) mix += alpha[e] * g[e];
      auto dw = raw_weights.mutable_grad();
      for (int k = 0; k < edges; ++k) {
        if (w[k] > 0.0f) dw[k] += static_cast<float>((g[k] - mix) / (total + eps));
      }
    });
  }
  return out;
}

FusionNode::FusionNode(FusionNodeSpec spec, FusionRule rule,
                       const std::array<int, kPyramidLevels>& widths, float eps, std::mt19937& rng,
                       float bn_eps)
    : spec_(std::move(spec)), rule_(rule), widths_(widths), eps_(eps) {
  const int target = widths_[spec_.level];
  int fused_channels = 0;
  for (const FusionEdge& e : spec_.edges) {
    const int src = source_width(e.source);
    std::unique_ptr<ConvBNAct> adapter;
    int width = src;
    if (e.resample == Resample::down) {
      const int out = rule_ == FusionRule::concat ? src : target;
      adapter = std::make_unique<ConvBNAct>(src, out, 3, 2, rng, Activation::silu, bn_eps);
      width = out;
    } else if (rule_ == FusionRule::weighted && src != target) {
      adapter = std::make_unique<ConvBNAct>(src, target, 1, 1, rng, Activation::silu, bn_eps);
      width = target;
    }
    adapters_.push_back(std::move(adapter));
    fused_channels += width;
  }
  if (rule_ == FusionRule::weighted) {
    fused_channels = target;
    raw_weights_ = Tensor(Shape{1, static_cast<int>(spec_.edges.size()), 1, 1}, 1.0f);
  }
  post_ = std::make_unique<ConvBNAct>(fused_channels, target, 3, 1, rng, Activation::silu, bn_eps);
}

int FusionNode::source_width(const std::string& source) const {
  if (source.rfind("in", 0) == 0) return widths_.at(std::stoi(source.substr(2)));
  // Node outputs always carry their level's width; names end in the level digit.
  return widths_.at(source.back() - '0');
}

Tensor FusionNode::forward(const std::map<std::string, Tensor>& values, Mode mode) {
  std::vector<Tensor> inputs;
  inputs.reserve(spec_.edges.size());
  for (std::size_t i = 0; i < spec_.edges.size(); ++i) {
    const FusionEdge& e = spec_.edges[i];
    auto it = values.find(e.source);
    if (it == values.end()) throw StateError("pyramid: missing value '" + e.source + "'");
    Tensor x = it->second;
    if (e.resample == Resample::down) {
      x = adapters_[i]->forward(x, mode);
    } else {
      if (adapters_[i]) x = adapters_[i]->forward(x, mode);
      if (e.resample == Resample::up) x = upsample_nearest2x(x);
    }
    inputs.push_back(std::move(x));
  }
  Tensor fused = rule_ == FusionRule::weighted ? fuse_weighted(inputs, raw_weights_, eps_)
                                               : concat_channels(inputs);
  return post_->forward(fused, mode);
}

void FusionNode::visit(LayerVisitor& v, const std::string& prefix) {
  for (std::size_t i = 0; i < adapters_.size(); ++i) {
    if (adapters_[i]) adapters_[i]->visit(v, join_name(prefix, "edge" + std::to_string(i)));
  }
  if (rule_ == FusionRule::weighted) v.tensor(join_name(prefix, "fusion_weight"), raw_weights_);
  post_->visit(v, join_name(prefix, "post"));
}

const char* to_string(NeckKind kind) { return kind == NeckKind::pafpn ? "pafpn" : "bifpn"; }

std::vector<FusionNodeSpec> Neck::graph(NeckKind kind) {
  using R = Resample;
  if (kind == NeckKind::pafpn) {
    return {
        {"td1", 1, {{"in1", R::none}, {"in2", R::up}}},
        {"out0", 0, {{"in0", R::none}, {"td1", R::up}}},
        {"out1", 1, {{"out0", R::down}, {"td1", R::none}}},
        {"out2", 2, {{"out1", R::down}, {"in2", R::none}}},
    };
  }
  return {
      {"td1", 1, {{"in1", R::none}, {"in2", R::up}}},
      {"out0", 0, {{"in0", R::none}, {"td1", R::up}}},
      {"out1", 1, {{"in1", R::none}, {"td1", R::none}, {"out0", R::down}}},
      {"out2", 2, {{"in2", R::none}, {"out1", R::down}}},
  };
}

Neck::Neck(NeckKind kind, const std::array<int, kPyramidLevels>& widths, std::mt19937& rng,
           float fusion_eps, int repeats, float bn_eps)
    : kind_(kind), repeats_(repeats) {
  if (repeats < 1) throw ConfigError("neck: repeats must be at least 1");
  const FusionRule rule = kind == NeckKind::pafpn ? FusionRule::concat : FusionRule::weighted;
  const std::vector<FusionNodeSpec> specs = graph(kind);
  for (int r = 0; r < repeats; ++r) {
    for (const FusionNodeSpec& s : specs) {
      nodes_.emplace_back(s, rule, widths, fusion_eps, rng, bn_eps);
    }
  }
}

int Neck::edge_count() const {
  int total = 0;
  for (const FusionNode& n : nodes_) total += static_cast<int>(n.spec().edges.size());
  return total;
}

PyramidFeatures Neck::forward(const PyramidFeatures& features, Mode mode) {
  features.validate(kPyramidLevels);
  std::map<std::string, Tensor> values;
  for (int l = 0; l < kPyramidLevels; ++l) values["in" + std::to_string(l)] = features.levels[l].features;
  const std::size_t per_pass = nodes_.size() / repeats_;
  for (int r = 0; r < repeats_; ++r) {
    for (std::size_t i = 0; i < per_pass; ++i) {
      FusionNode& node = nodes_[r * per_pass + i];
      values[node.spec().name] = node.forward(values, mode);
    }
    for (int l = 0; l < kPyramidLevels; ++l) {
      values["in" + std::to_string(l)] = values.at("out" + std::to_string(l));
    }
  }
  PyramidFeatures out;
  for (int l = 0; l < kPyramidLevels; ++l) {
    out.levels.push_back({features.levels[l].stride, values.at("in" + std::to_string(l))});
  }
  return out;
}

void Neck::visit(LayerVisitor& v, const std::string& prefix) {
  const std::size_t per_pass = nodes_.size() / repeats_;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    std::string name = nodes_[i].spec().name;
    if (repeats_ > 1) name = "pass" + std::to_string(i / per_pass) + "." + name;
    nodes_[i].visit(v, join_name(prefix, name));
  }
}

PyramidFeatures pafpn_forward(Neck& neck, const PyramidFeatures& features, Mode mode) {
  if (neck.kind() != NeckKind::pafpn) throw ConfigError("pafpn_forward: neck is bifpn");
  return neck.forward(features, mode);
}

PyramidFeatures bifpn_forward(Neck& neck, const PyramidFeatures& features, Mode mode) {
  if (neck.kind() != NeckKind::bifpn) throw ConfigError("bifpn_forward: neck is pafpn");
  return neck.forward(features, mode);
}

}  // namespace rpdetect
