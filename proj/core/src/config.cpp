#include "rpdetect/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "rpdetect/error.hpp"

namespace rpdetect {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

template <typename T>
bool parse_number(const std::string& text, T& out) {
  const char* first = text.data();
  const char* last = first + text.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

template <typename T>
std::string format_number(T value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

struct Field {
  std::string key;
  std::function<bool(DetectorConfig&, const std::string&)> parse;
  std::function<std::string(const DetectorConfig&)> format;
};

template <typename T>
Field number_field(std::string key, T DetectorConfig::*member) {
  return {key,
          [member](DetectorConfig& c, const std::string& v) { return parse_number(v, c.*member); },
          [member](const DetectorConfig& c) { return format_number(c.*member); }};
}

Field loss_field(std::string key, float LossWeights::*member) {
  return {key,
          [member](DetectorConfig& c, const std::string& v) {
            return parse_number(v, c.loss.*member);
          },
          [member](const DetectorConfig& c) { return format_number(c.loss.*member); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      number_field("input_size", &DetectorConfig::input_size),
      number_field("num_classes", &DetectorConfig::num_classes),
      number_field("width_multiple", &DetectorConfig::width_multiple),
      number_field("depth_multiple", &DetectorConfig::depth_multiple),
      {"neck",
       [](DetectorConfig& c, const std::string& v) {
         if (v == "pafpn") c.neck = NeckKind::pafpn;
         else if (v == "bifpn") c.neck = NeckKind::bifpn;
         else return false;
         return true;
       },
       [](const DetectorConfig& c) { return std::string(to_string(c.neck)); }},
      {"head",
       [](DetectorConfig& c, const std::string& v) {
         if (v == "coupled") c.head = HeadKind::coupled;
         else if (v == "improved") c.head = HeadKind::improved;
         else return false;
         return true;
       },
       [](const DetectorConfig& c) { return std::string(to_string(c.head)); }},
      {"dbb",
       [](DetectorConfig& c, const std::string& v) {
         if (v == "true" || v == "1" || v == "on") c.dbb = true;
         else if (v == "false" || v == "0" || v == "off") c.dbb = false;
         else return false;
         return true;
       },
       [](const DetectorConfig& c) { return std::string(c.dbb ? "true" : "false"); }},
      number_field("dbb_units", &DetectorConfig::dbb_units),
      number_field("neck_repeats", &DetectorConfig::neck_repeats),
      number_field("fusion_eps", &DetectorConfig::fusion_eps),
      number_field("bn_eps", &DetectorConfig::bn_eps),
      number_field("epochs", &DetectorConfig::epochs),
      number_field("batch_size", &DetectorConfig::batch_size),
      number_field("learning_rate", &DetectorConfig::learning_rate),
      number_field("momentum", &DetectorConfig::momentum),
      number_field("seed", &DetectorConfig::seed),
      loss_field("loss_objectness", &LossWeights::objectness),
      loss_field("loss_classification", &LossWeights::classification),
      loss_field("loss_box", &LossWeights::box),
  };
  return table;
}

}  // namespace

void DetectorConfig::validate() const {
  if (input_size < 32 || input_size % 32 != 0) {
    throw ConfigError("input_size must be a positive multiple of 32, got " +
                      std::to_string(input_size));
  }
  if (num_classes < 1) throw ConfigError("num_classes must be at least 1");
  if (!(width_multiple > 0.0f)) throw ConfigError("width_multiple must be positive");
  if (!(depth_multiple > 0.0f)) throw ConfigError("depth_multiple must be positive");
  if (dbb_units < 1 || dbb_units > 2) throw ConfigError("dbb_units must be 1 or 2");
  if (neck_repeats < 1) throw ConfigError("neck_repeats must be at least 1");
  if (!(fusion_eps > 0.0f)) throw ConfigError("fusion_eps must be positive");
  if (!(bn_eps > 0.0f)) throw ConfigError("bn_eps must be positive");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(learning_rate >= 0.0f)) throw ConfigError("learning_rate must be non-negative");
  if (!(momentum >= 0.0f && momentum < 1.0f)) throw ConfigError("momentum must be in [0, 1)");
  if (!(loss.objectness >= 0.0f && loss.classification >= 0.0f && loss.box >= 0.0f)) {
    throw ConfigError("loss weights must be non-negative");
  }
}

DetectorConfig parse_config(const std::string& text, DetectorConfig base) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Field* field = nullptr;
    for (const Field& f : fields()) {
      if (f.key == key) field = &f;
    }
    if (!field) {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (!field->parse(base, value)) {
      throw ConfigError("line " + std::to_string(line_no) + ": invalid value '" + value +
                        "' for " + key);
    }
  }
  return base;
}

DetectorConfig load_config(const std::string& path, DetectorConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), base);
}

std::string format_config(const DetectorConfig& config) {
  std::string out;
  for (const Field& f : fields()) out += f.key + "=" + f.format(config) + "\n";
  return out;
}

void apply_ablation(DetectorConfig& config, const std::string& token) {
  if (token == "baseline") {
    config.dbb = false;
    config.head = HeadKind::coupled;
    config.neck = NeckKind::pafpn;
  } else if (token == "+dbb") {
    config.dbb = true;
    config.head = HeadKind::coupled;
    config.neck = NeckKind::pafpn;
  } else if (token == "+dbb+head") {
    config.dbb = true;
    config.head = HeadKind::improved;
    config.neck = NeckKind::pafpn;
  } else if (token == "+dbb+head+bifpn") {
    config.dbb = true;
    config.head = HeadKind::improved;
    config.neck = NeckKind::bifpn;
  } else {
    throw ConfigError("unknown ablation '" + token +
                      "' (expected baseline, +dbb, +dbb+head or +dbb+head+bifpn)");
  }
}

std::string ablation_name(const DetectorConfig& c) {
  if (!c.dbb && c.head == HeadKind::coupled && c.neck == NeckKind::pafpn) return "baseline";
  if (c.dbb && c.head == HeadKind::coupled && c.neck == NeckKind::pafpn) return "+dbb";
  if (c.dbb && c.head == HeadKind::improved && c.neck == NeckKind::pafpn) return "+dbb+head";
  if (c.dbb && c.head == HeadKind::improved && c.neck == NeckKind::bifpn) return "+dbb+head+bifpn";
  return "custom";
}

}  // namespace rpdetect
