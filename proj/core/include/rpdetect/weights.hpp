#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rpdetect/detector.hpp"

namespace rpdetect {

/// Binary weight file, all integers and floats little-endian:
///
///   "RPDT"  u32 version (1)  u8 form (0 train, 1 deploy)
///   u32 config_bytes  config text (key=value lines)
///   u32 entries, then per entry: u16 name_bytes, name, u8 kind, 4 x u32 extents
///   float32 payloads, one per entry in manifest order
struct ArchiveEntry {
  std::string name;
  TensorKind kind = TensorKind::conv_weight;
  Shape shape;
  friend bool operator==(const ArchiveEntry&, const ArchiveEntry&) = default;
};

struct WeightArchive {
  std::uint32_t version = 1;
  bool deploy = false;
  std::string config_text;
  std::vector<ArchiveEntry> manifest;
  std::vector<std::vector<float>> payloads;
};

inline constexpr char kWeightMagic[4] = {'R', 'P', 'D', 'T'};
inline constexpr std::uint32_t kWeightVersion = 1;

WeightArchive make_archive(Module& net, const std::string& config_text, bool deploy);
std::vector<std::uint8_t> encode_archive(const WeightArchive& archive);
/// FormatError on bad magic/version, truncation or trailing bytes.
WeightArchive decode_archive(const std::vector<std::uint8_t>& bytes);

/// Copies archive payloads into `net`. A manifest that differs from the
/// network's raises ShapeError listing the first differences.
void load_state(const WeightArchive& archive, Module& net);

void save_weights(const std::string& path, Detector& net);
/// Rebuilds the detector from the stored config and form, then loads it.
std::unique_ptr<Detector> load_weights(const std::string& path);
WeightArchive read_archive(const std::string& path);

}  // namespace rpdetect
