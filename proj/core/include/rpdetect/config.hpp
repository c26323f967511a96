#pragma once

#include <cstdint>
#include <string>

#include "rpdetect/head.hpp"
#include "rpdetect/pyramid.hpp"

namespace rpdetect {

struct LossWeights {
  float objectness = 1.0f;
  float classification = 0.5f;
  float box = 2.0f;
};

/// Everything needed to rebuild and train a detector. Serialized as
/// `key=value` lines; key names equal the field names below.
struct DetectorConfig {
  int input_size = 256;
  int num_classes = 2;
  float width_multiple = 0.25f;
  float depth_multiple = 0.33f;
  NeckKind neck = NeckKind::pafpn;
  HeadKind head = HeadKind::coupled;
  bool dbb = false;
  int dbb_units = 1;  // DBB units per C2f bottleneck when dbb is on (1 or 2)
  int neck_repeats = 1;
  float fusion_eps = 1e-4f;
  float bn_eps = 1e-3f;

  int epochs = 100;
  int batch_size = 16;
  float learning_rate = 0.01f;
  float momentum = 0.9f;
  std::uint64_t seed = 0;
  LossWeights loss;

  /// Throws ConfigError naming the first offending key.
  void validate() const;
};

/// Parses `key=value` lines; `#` starts a comment. Unknown keys and malformed
/// values raise ConfigError with the line number. Keys not mentioned keep the
/// values already in `base`.
DetectorConfig parse_config(const std::string& text, DetectorConfig base = {});
DetectorConfig load_config(const std::string& path, DetectorConfig base = {});
/// Every key, one per line, in a fixed order. parse_config(format_config(c)) == c.
std::string format_config(const DetectorConfig& config);

/// Cumulative ablation rows: baseline, +dbb, +dbb+head, +dbb+head+bifpn.
/// Sets dbb/head/neck on `config`; throws ConfigError on an unknown token.
void apply_ablation(DetectorConfig& config, const std::string& token);
/// Ablation token describing the dbb/head/neck switches, or "custom".
std::string ablation_name(const DetectorConfig& config);

}  // namespace rpdetect
