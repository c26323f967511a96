#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <stdexcept>

#include <unistd.h>

#include "oracles.hpp"
#include "rpdetect/dataset.hpp"
#include "rpdetect/detector.hpp"
#include "rpdetect/error.hpp"
#include "rpdetect/parallel.hpp"
#include "rpdetect/pixmap.hpp"
#include "rpdetect/synthetic.hpp"
#include "rpdetect/weights.hpp"

using namespace rpdetect;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("rpdetect_data_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_text(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

template <class E, class F>
std::string error_of(F&& f) {
  try {
    f();
  } catch (const E& e) {
    return e.what();
  }
  return "<no error>";
}

class ScopedEnv {
 public:
  ScopedEnv(const char* name, const char* value) : name_(name) {
    if (const char* old = std::getenv(name)) old_ = old;
    ::setenv(name, value, 1);
  }
  ~ScopedEnv() {
    if (old_.empty()) {
      ::unsetenv(name_);
    } else {
      ::setenv(name_, old_.c_str(), 1);
    }
  }

 private:
  const char* name_;
  std::string old_;
};

SyntheticConfig small_synthetic(std::uint64_t seed, int n) {
  SyntheticConfig c;
  c.seed = seed;
  c.n_images = n;
  c.size = 96;
  c.min_scale = 5;
  c.max_scale = 60;
  return c;
}

DetectorConfig net_config(bool dbb) {
  DetectorConfig c;
  c.input_size = 64;
  c.dbb = dbb;
  c.head = HeadKind::improved;
  c.neck = NeckKind::bifpn;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(Ppm, RoundTripAndStrictHeader) {
  Image img(5, 3, {1, 2, 3});
  img.set(4, 2, {255, 0, 128});
  const std::vector<std::uint8_t> bytes = encode_ppm(img);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 11), "P6\n5 3\n255\n");
  EXPECT_EQ(bytes.size(), 11u + 5 * 3 * 3);
  EXPECT_EQ(decode_ppm(bytes), img);

  TempDir dir;
  write_ppm(dir.file("a.ppm"), img);
  EXPECT_EQ(read_ppm(dir.file("a.ppm")), img);

  std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 1);
  EXPECT_THROW(decode_ppm(truncated), FormatError);
  const std::string p3 = "P3\n1 1\n255\n0 0 0\n";
  EXPECT_THROW(decode_ppm({p3.begin(), p3.end()}), FormatError);
  const std::string deep = "P6\n1 1\n65535\n";
  EXPECT_THROW(decode_ppm({deep.begin(), deep.end()}), FormatError);
  EXPECT_THROW(read_ppm(dir.file("missing.ppm")), IoError);
}

TEST(Ppm, HeaderCommentsAreSkipped) {
  const std::string text = "P6\n# made by hand\n1 1\n255\n";
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  bytes.insert(bytes.end(), {9, 8, 7});
  EXPECT_EQ(decode_ppm(bytes).get(0, 0), (Rgb{9, 8, 7}));
}

TEST(Drawing, RectangleOutlineIsClipped) {
  Image img(6, 6);
  draw_rect(img, 1, 1, 4, 5, {255, 255, 255});
  int lit = 0;
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) lit += img.get(x, y)[0] == 255;
  EXPECT_EQ(lit, 2 * 3 + 2 * 2);  // 3 wide, 4 tall, one pixel thick
  EXPECT_EQ(img.get(2, 2)[0], 0);
  Image edge(4, 4);
  EXPECT_NO_THROW(draw_rect(edge, -3, -3, 10, 10, {1, 1, 1}));
  EXPECT_NO_THROW(draw_text(edge, 2, 2, "0.87", {1, 1, 1}));
}

TEST(Annotations, JsonRoundTripIsLossless) {
  AnnotationSet set;
  set.num_classes = 3;
  set.images.push_back({"images/a.ppm", 40, 30, {{0, {0.5f, 1, 10, 12.25f}}, {2, {0, 0, 40, 30}}}});
  set.images.push_back({"images/b.ppm", 8, 8, {}});
  EXPECT_EQ(annotations_from_json(annotations_to_json(set)), set);
  TempDir dir;
  save_annotations(dir.file("ann.json"), set);
  EXPECT_EQ(load_annotations(dir.file("ann.json")), set);
}

TEST(Annotations, ParseErrorsNameLineAndColumn) {
  const std::string msg = error_of<FormatError>([] { annotations_from_json("{\n  \"images\": [\n    {,\n"); });
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("column"), std::string::npos) << msg;
}

TEST(Annotations, SchemaErrorsNameTheField) {
  const std::string missing = error_of<FormatError>([] {
    annotations_from_json(R"({"images": [{"file": "a", "width": 4, "height": 4,
                              "objects": [{"class": 0, "x1": 0, "y1": 0, "x2": 1}]}]})");
  });
  EXPECT_NE(missing.find("images[0].objects[0].y2"), std::string::npos) << missing;
  const std::string typed = error_of<FormatError>(
      [] { annotations_from_json(R"({"images": [{"file": 7, "width": 4, "height": 4, "objects": []}]})"); });
  EXPECT_NE(typed.find("images[0].file"), std::string::npos) << typed;
}

TEST(Annotations, OutOfBoundsBoxIsRejectedNotClamped) {
  const std::string text = R"({"classes": 2, "images": [{"file": "a", "width": 10, "height": 10,
      "objects": [{"class": 0, "x1": 2, "y1": 2, "x2": 11, "y2": 5}]}]})";
  EXPECT_THROW(annotations_from_json(text), ValidationError);
  TempDir dir;
  write_text(dir.file("bad.json"), text);
  const std::string msg = error_of<ValidationError>([&] { load_annotations(dir.file("bad.json")); });
  EXPECT_NE(msg.find("bad.json"), std::string::npos) << msg;
  EXPECT_NE(msg.find("images[0].objects[0]"), std::string::npos) << msg;
  const std::string bad_class = R"({"classes": 2, "images": [{"file": "a", "width": 10, "height": 10,
      "objects": [{"class": 2, "x1": 2, "y1": 2, "x2": 5, "y2": 5}]}]})";
  EXPECT_THROW(annotations_from_json(bad_class), ValidationError);
  EXPECT_THROW(load_annotations(dir.file("nope.json")), IoError);
}

TEST(Synthetic, SameSeedIsByteIdenticalRegardlessOfThreads) {
  const SyntheticConfig cfg = small_synthetic(9, 12);
  Dataset one, many;
  {
    ScopedEnv env(kThreadsEnv, "1");
    one = generate_synthetic(cfg);
  }
  {
    ScopedEnv env(kThreadsEnv, "4");
    many = generate_synthetic(cfg);
  }
  ASSERT_EQ(one.size(), 12u);
  EXPECT_EQ(one.annotations(), many.annotations());
  for (std::size_t i = 0; i < one.size(); ++i) EXPECT_EQ(one.items[i].image, many.items[i].image);
  const Dataset other = generate_synthetic(small_synthetic(10, 12));
  EXPECT_NE(one.annotations(), other.annotations());
}

TEST(Synthetic, EmptyDatasetIsValid) {
  const Dataset d = generate_synthetic(small_synthetic(1, 0));
  EXPECT_TRUE(d.empty());
  EXPECT_EQ(d.num_classes, 2);
  TempDir dir;
  save_dataset(dir.file("empty"), d);
  const Dataset back = load_dataset(dir.file("empty"));
  EXPECT_TRUE(back.empty());
  EXPECT_EQ(back.num_classes, 2);
}

TEST(Synthetic, BoxesMatchMaskScan) {
  const Dataset d = generate_synthetic(small_synthetic(3, 30));
  int objects = 0;
  for (const AnnotatedImage& it : d.items) {
    std::vector<Box> scanned = oracle::mask_scan_boxes(it.image);
    std::vector<Box> labelled;
    for (const GroundTruth& g : it.record.objects) labelled.push_back(g.box);
    auto key = [](const Box& b) { return std::make_tuple(b.x1, b.y1, b.x2, b.y2); };
    auto by_key = [&](const Box& a, const Box& b) { return key(a) < key(b); };
    std::sort(scanned.begin(), scanned.end(), by_key);
    std::sort(labelled.begin(), labelled.end(), by_key);
    EXPECT_EQ(scanned, labelled) << it.record.file;
    objects += static_cast<int>(labelled.size());
  }
  EXPECT_GT(objects, 30);
  EXPECT_NO_THROW(validate_annotations(d.annotations()));
}

TEST(Synthetic, MostObjectsAreSmall) {
  SyntheticConfig cfg;
  cfg.n_images = 100;
  const Dataset d = generate_synthetic(cfg);
  int small = 0, total = 0;
  std::set<int> classes;
  for (const AnnotatedImage& it : d.items) {
    for (const GroundTruth& g : it.record.objects) {
      small += std::max(g.box.width(), g.box.height()) < cfg.size / 8.0f;
      ++total;
      classes.insert(g.class_id);
    }
  }
  EXPECT_GE(static_cast<double>(small) / total, 0.5) << small << "/" << total;
  EXPECT_EQ(classes, (std::set<int>{0, 1}));
}

TEST(Synthetic, RejectsBadConfigs) {
  SyntheticConfig c;
  c.size = 16;
  EXPECT_THROW(generate_synthetic(c), ConfigError);
  c = {};
  c.num_classes = kMaxSyntheticClasses + 1;
  EXPECT_THROW(generate_synthetic(c), ConfigError);
  c = {};
  c.min_scale = 40;
  EXPECT_THROW(generate_synthetic(c), ConfigError);
  c = {};
  c.n_images = -1;
  EXPECT_THROW(generate_synthetic(c), ConfigError);
}

TEST(Dataset, SaveLoadRoundTrip) {
  const Dataset d = generate_synthetic(small_synthetic(4, 3));
  TempDir dir;
  save_dataset(dir.file("set"), d);
  const Dataset back = load_dataset(dir.file("set"));
  EXPECT_EQ(back.annotations(), d.annotations());
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(back.items[i].image, d.items[i].image);
  const Tensor batch = to_batch(back, {2, 0});
  EXPECT_EQ(batch.shape(), (Shape{2, 3, 96, 96}));
  EXPECT_FLOAT_EQ(oracle::at(batch, 1, 2, 5, 7), d.items[0].image.get(7, 5)[2] / 255.0f);
  EXPECT_THROW(to_batch(back, {}), ShapeError);
  EXPECT_THROW(load_dataset(dir.file("nowhere")), IoError);
}

TEST(Weights, SaveLoadSaveIsBitIdentical) {
  auto net = build_detector(net_config(true));
  std::mt19937 rng(1);
  oracle::randomize_bn(*net, rng);
  TempDir dir;
  save_weights(dir.file("a.rpdt"), *net);
  auto back = load_weights(dir.file("a.rpdt"));
  save_weights(dir.file("b.rpdt"), *back);
  EXPECT_EQ(read_bytes(dir.file("a.rpdt")), read_bytes(dir.file("b.rpdt")));
  const auto ta = named_tensors(*net), tb = named_tensors(*back);
  ASSERT_EQ(ta.size(), tb.size());
  for (std::size_t i = 0; i < ta.size(); ++i) {
    EXPECT_EQ(ta[i].name, tb[i].name);
    EXPECT_TRUE(std::equal(ta[i].tensor.data().begin(), ta[i].tensor.data().end(), tb[i].tensor.data().begin()));
  }
}

TEST(Weights, PayloadLengthMatchesManifest) {
  auto net = build_detector(net_config(false));
  const WeightArchive a = make_archive(*net, format_config(net->config()), false);
  const std::vector<std::uint8_t> bytes = encode_archive(a);
  std::size_t header = 4 + 4 + 1 + 4 + a.config_text.size() + 4, payload = 0;
  for (const ArchiveEntry& e : a.manifest) {
    header += 2 + e.name.size() + 1 + 16;
    payload += static_cast<std::size_t>(e.shape.numel()) * 4;
  }
  EXPECT_EQ(bytes.size(), header + payload);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "RPDT");
  EXPECT_EQ(bytes[4], 1u);  // little-endian version
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0u);
}

TEST(Weights, CorruptArchivesAreRejected) {
  auto net = build_detector(net_config(false));
  const std::vector<std::uint8_t> good = encode_archive(make_archive(*net, "", false));
  EXPECT_NO_THROW(decode_archive(good));
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, good.size() / 2, good.size() - 1}) {
    const std::string msg = error_of<FormatError>(
        [&] { decode_archive(std::vector<std::uint8_t>(good.begin(), good.begin() + cut)); });
    EXPECT_NE(msg, "<no error>") << cut;
  }
  std::vector<std::uint8_t> trailing = good;
  trailing.push_back(0);
  EXPECT_THROW(decode_archive(trailing), FormatError);
  std::vector<std::uint8_t> magic = good;
  magic[0] = 'X';
  EXPECT_THROW(decode_archive(magic), FormatError);
  std::vector<std::uint8_t> version = good;
  version[4] = 2;
  EXPECT_THROW(decode_archive(version), FormatError);

  TempDir dir;
  write_bytes(dir.file("cut.rpdt"), std::vector<std::uint8_t>(good.begin(), good.end() - 5));
  const std::string msg = error_of<FormatError>([&] { load_weights(dir.file("cut.rpdt")); });
  EXPECT_NE(msg.find("cut.rpdt"), std::string::npos) << msg;
  EXPECT_NE(msg.find("truncated"), std::string::npos) << msg;
  EXPECT_THROW(load_weights(dir.file("absent.rpdt")), IoError);
}

TEST(Weights, MismatchedArchitectureReportsManifestDiff) {
  auto small = build_detector(net_config(false));
  DetectorConfig wide_cfg = net_config(false);
  wide_cfg.width_multiple = 0.5f;
  auto wide = build_detector(wide_cfg);
  const WeightArchive a = make_archive(*small, "", false);
  const std::string msg = error_of<ShapeError>([&] { load_state(a, *wide); });
  EXPECT_NE(msg.find("manifest"), std::string::npos) << msg;
}

TEST(Weights, DeployArchiveIsSmaller) {
  auto net = build_detector(net_config(true));
  TempDir dir;
  save_weights(dir.file("train.rpdt"), *net);
  reparameterize_model(*net);
  save_weights(dir.file("deploy.rpdt"), *net);
  EXPECT_LT(fs::file_size(dir.file("deploy.rpdt")), fs::file_size(dir.file("train.rpdt")));
  const WeightArchive a = read_archive(dir.file("deploy.rpdt"));
  EXPECT_TRUE(a.deploy);
  auto back = load_weights(dir.file("deploy.rpdt"));
  EXPECT_TRUE(back->deployed());
  EXPECT_EQ(count_params(*back), count_params(*net));
}

TEST(Parallel, EveryIndexRunsOnceAndErrorsPropagate) {
  ScopedEnv env(kThreadsEnv, "3");
  EXPECT_EQ(worker_count(), 3);
  std::vector<std::atomic<int>> hits(100);
  parallel_for(100, [&](int i) { ++hits[i]; });
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  EXPECT_THROW(parallel_for(10, [](int i) {
                 if (i == 7) throw std::runtime_error("boom");
               }),
               std::runtime_error);
  EXPECT_NO_THROW(parallel_for(0, [](int) { throw std::runtime_error("never"); }));
  ScopedEnv bad(kThreadsEnv, "zero");
  EXPECT_GE(worker_count(), 1);
}
