#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "rpdetect/config.hpp"
#include "rpdetect/error.hpp"

using namespace rpdetect;

namespace {

std::string error_text(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "<no error>";
}

}  // namespace

TEST(Config, FormatParseRoundTrip) {
  DetectorConfig c;
  c.input_size = 320;
  c.num_classes = 4;
  c.width_multiple = 0.375f;
  c.neck = NeckKind::bifpn;
  c.head = HeadKind::improved;
  c.dbb = true;
  c.dbb_units = 2;
  c.learning_rate = 0.0123f;
  c.seed = 18446744073709551615ull;
  c.loss = {1.5f, 0.25f, 3.0f};
  const std::string text = format_config(c);
  EXPECT_EQ(format_config(parse_config(text)), text);
  EXPECT_NE(text.find("neck=bifpn\n"), std::string::npos);
  EXPECT_NE(text.find("head=improved\n"), std::string::npos);
  EXPECT_NE(text.find("seed=18446744073709551615\n"), std::string::npos);
  const DetectorConfig back = parse_config(text);
  EXPECT_EQ(back.learning_rate, c.learning_rate);
  EXPECT_EQ(back.width_multiple, c.width_multiple);
  EXPECT_EQ(back.loss.box, 3.0f);
}

TEST(Config, CommentsBlanksAndBaseValues) {
  DetectorConfig base;
  base.epochs = 7;
  const DetectorConfig c = parse_config("# header\n\n  input_size = 128  # trailing\nneck=bifpn\n", base);
  EXPECT_EQ(c.input_size, 128);
  EXPECT_EQ(c.neck, NeckKind::bifpn);
  EXPECT_EQ(c.epochs, 7);
}

TEST(Config, ErrorsNameLineAndKey) {
  std::string msg = error_text("epochs=3\n\nbogus_key=1\n");
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("bogus_key"), std::string::npos) << msg;
  msg = error_text("epochs=three\n");
  EXPECT_NE(msg.find("line 1"), std::string::npos) << msg;
  EXPECT_NE(msg.find("epochs"), std::string::npos) << msg;
  msg = error_text("neck=fpn\n");
  EXPECT_NE(msg.find("neck"), std::string::npos) << msg;
  EXPECT_NE(error_text("no equals sign\n").find("key=value"), std::string::npos);
  EXPECT_THROW(load_config("/nonexistent/config.txt"), IoError);
}

TEST(Config, ValidateRejectsOutOfRangeValues) {
  const auto rejects = [](auto mutate, const std::string& key) {
    DetectorConfig c;
    mutate(c);
    try {
      c.validate();
    } catch (const ConfigError& e) {
      return std::string(e.what()).find(key) != std::string::npos;
    }
    return false;
  };
  EXPECT_NO_THROW(DetectorConfig{}.validate());
  EXPECT_TRUE(rejects([](DetectorConfig& c) { c.input_size = 250; }, "input_size"));
  EXPECT_TRUE(rejects([](DetectorConfig& c) { c.num_classes = 0; }, "num_classes"));
  EXPECT_TRUE(rejects([](DetectorConfig& c) { c.dbb_units = 3; }, "dbb_units"));
  EXPECT_TRUE(rejects([](DetectorConfig& c) { c.fusion_eps = 0; }, "fusion_eps"));
  EXPECT_TRUE(rejects([](DetectorConfig& c) { c.momentum = 1; }, "momentum"));
  EXPECT_TRUE(rejects([](DetectorConfig& c) { c.batch_size = 0; }, "batch_size"));
  EXPECT_TRUE(rejects([](DetectorConfig& c) { c.loss.box = -1; }, "loss"));
}

TEST(Config, AblationRowsAreCumulative) {
  const char* rows[] = {"baseline", "+dbb", "+dbb+head", "+dbb+head+bifpn"};
  DetectorConfig c;
  for (const char* row : rows) {
    apply_ablation(c, row);
    EXPECT_EQ(ablation_name(c), row);
  }
  apply_ablation(c, "+dbb+head");
  EXPECT_TRUE(c.dbb);
  EXPECT_EQ(c.head, HeadKind::improved);
  EXPECT_EQ(c.neck, NeckKind::pafpn);
  c.dbb = false;
  EXPECT_EQ(ablation_name(c), "custom");
  EXPECT_THROW(apply_ablation(c, "+bifpn"), ConfigError);
}

TEST(Config, LoadsFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "rpdetect_config_test.txt";
  std::ofstream(path) << "epochs=5\nhead=improved\n";
  const DetectorConfig c = load_config(path.string());
  std::filesystem::remove(path);
  EXPECT_EQ(c.epochs, 5);
  EXPECT_EQ(c.head, HeadKind::improved);
}
