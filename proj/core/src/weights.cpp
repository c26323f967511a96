#include "rpdetect/weights.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "rpdetect/error.hpp"

namespace rpdetect {

namespace {

class Writer {
 public:
  std::vector<std::uint8_t> bytes;

  void u8(std::uint8_t v) { bytes.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

 private:
  void le(std::uint32_t v, int n) {
    for (int i = 0; i < n; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(le(1, what)); }
  std::uint16_t u16(const char* what) { return static_cast<std::uint16_t>(le(2, what)); }
  std::uint32_t u32(const char* what) { return le(4, what); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("weights: truncated while reading ") + what + " (need " +
                        std::to_string(n) + " bytes at offset " + std::to_string(pos_) +
                        ", file has " + std::to_string(bytes_.size()) + ")");
    }
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::uint32_t le(int n, const char* what) {
    need(n, what);
    std::uint32_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

constexpr int kKindCount = static_cast<int>(TensorKind::free_weight) + 1;

}  // namespace

WeightArchive make_archive(Module& net, const std::string& config_text, bool deploy) {
  WeightArchive a;
  a.deploy = deploy;
  a.config_text = config_text;
  for (const NamedTensor& nt : named_tensors(net)) {
    a.manifest.push_back({nt.name, nt.kind, nt.tensor.shape()});
    auto d = nt.tensor.data();
    a.payloads.emplace_back(d.begin(), d.end());
  }
  return a;
}

std::vector<std::uint8_t> encode_archive(const WeightArchive& a) {
  if (a.manifest.size() != a.payloads.size()) {
    throw StateError("weights: manifest and payload counts differ");
  }
  Writer w;
  w.raw(kWeightMagic, 4);
  w.u32(a.version);
  w.u8(a.deploy ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(a.config_text.size()));
  w.raw(a.config_text.data(), a.config_text.size());
  w.u32(static_cast<std::uint32_t>(a.manifest.size()));
  for (const ArchiveEntry& e : a.manifest) {
    if (e.name.size() > 0xffff) throw StateError("weights: tensor name too long");
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.raw(e.name.data(), e.name.size());
    w.u8(static_cast<std::uint8_t>(e.kind));
    for (int d : {e.shape.n, e.shape.c, e.shape.h, e.shape.w}) w.u32(static_cast<std::uint32_t>(d));
  }
  for (std::size_t i = 0; i < a.payloads.size(); ++i) {
    if (static_cast<std::int64_t>(a.payloads[i].size()) != a.manifest[i].shape.numel()) {
      throw StateError("weights: payload size mismatch for " + a.manifest[i].name);
    }
    for (float v : a.payloads[i]) w.f32(v);
  }
  return std::move(w.bytes);
}

WeightArchive decode_archive(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(4, "magic") != std::string(kWeightMagic, 4)) {
    throw FormatError("weights: bad magic (not an RPDT archive)");
  }
  WeightArchive a;
  a.version = r.u32("version");
  if (a.version != kWeightVersion) {
    throw FormatError("weights: unsupported version " + std::to_string(a.version));
  }
  const std::uint8_t form = r.u8("form");
  if (form > 1) throw FormatError("weights: bad form byte " + std::to_string(form));
  a.deploy = form == 1;
  a.config_text = r.str(r.u32("config length"), "config");
  const std::uint32_t count = r.u32("entry count");
  std::uint64_t floats = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    ArchiveEntry e;
    e.name = r.str(r.u16("name length"), "name");
    const std::uint8_t kind = r.u8("kind");
    if (kind >= kKindCount) throw FormatError("weights: bad tensor kind for " + e.name);
    e.kind = static_cast<TensorKind>(kind);
    std::uint32_t dims[4];
    for (auto& d : dims) {
      d = r.u32("extent");
      if (d > (1u << 24)) throw FormatError("weights: implausible extent for " + e.name);
    }
    e.shape = {static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]),
               static_cast<int>(dims[3])};
    floats += static_cast<std::uint64_t>(e.shape.numel());
    a.manifest.push_back(std::move(e));
  }
  if (r.remaining() != floats * 4) {
    throw FormatError("weights: payload is " + std::to_string(r.remaining()) +
                      " bytes, manifest requires " + std::to_string(floats * 4) +
                      (r.remaining() < floats * 4 ? " (truncated)" : " (trailing bytes)"));
  }
  for (const ArchiveEntry& e : a.manifest) {
    std::vector<float> p(static_cast<std::size_t>(e.shape.numel()));
    for (float& v : p) v = std::bit_cast<float>(r.u32("payload"));
    a.payloads.push_back(std::move(p));
  }
  return a;
}

void load_state(const WeightArchive& a, Module& net) {
  std::vector<NamedTensor> dst = named_tensors(net);
  std::string diff;
  int differences = 0;
  const std::size_t common = std::min(dst.size(), a.manifest.size());
  for (std::size_t i = 0; i < common && differences < 3; ++i) {
    const ArchiveEntry& e = a.manifest[i];
    if (e.name != dst[i].name || e.kind != dst[i].kind || e.shape != dst[i].tensor.shape()) {
      diff += "\n  #" + std::to_string(i) + ": archive " + e.name + " " + e.shape.str() +
              " vs model " + dst[i].name + " " + dst[i].tensor.shape().str();
      ++differences;
    }
  }
  if (differences > 0 || dst.size() != a.manifest.size()) {
    throw ShapeError("weights: manifest differs from model (archive " +
                     std::to_string(a.manifest.size()) + " tensors, model " +
                     std::to_string(dst.size()) + ")" + diff);
  }
  for (std::size_t i = 0; i < dst.size(); ++i) {
    std::copy(a.payloads[i].begin(), a.payloads[i].end(), dst[i].tensor.mutable_data().begin());
  }
}

void save_weights(const std::string& path, Detector& net) {
  const auto bytes = encode_archive(make_archive(net, format_config(net.config()), net.deployed()));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

WeightArchive read_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_archive(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

std::unique_ptr<Detector> load_weights(const std::string& path) {
  const WeightArchive a = read_archive(path);
  auto net = build_detector(parse_config(a.config_text));
  if (a.deploy) reparameterize_model(*net);
  load_state(a, *net);
  return net;
}

}  // namespace rpdetect
