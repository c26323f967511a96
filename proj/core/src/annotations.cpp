#include <fstream>
#include <sstream>

#include <json.hpp>

#include "rpdetect/dataset.hpp"
#include "rpdetect/error.hpp"

namespace rpdetect {

using nlohmann::json;

void validate_annotations(const AnnotationSet& set) {
  if (set.num_classes < 0) throw ValidationError("annotations: negative class count");
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    const ImageRecord& r = set.images[i];
    const std::string where = "images[" + std::to_string(i) + "]";
    if (r.width <= 0 || r.height <= 0) {
      throw ValidationError(where + ": non-positive extent " + std::to_string(r.width) + "x" +
                            std::to_string(r.height));
    }
    for (std::size_t j = 0; j < r.objects.size(); ++j) {
      const GroundTruth& g = r.objects[j];
      const std::string obj = where + ".objects[" + std::to_string(j) + "]";
      if (g.class_id < 0 || (set.num_classes > 0 && g.class_id >= set.num_classes)) {
        throw ValidationError(obj + ".class: " + std::to_string(g.class_id) + " out of range");
      }
      const Box& b = g.box;
      if (!(b.x1 >= 0.0f && b.y1 >= 0.0f && b.x2 <= static_cast<float>(r.width) &&
            b.y2 <= static_cast<float>(r.height))) {
        throw ValidationError(obj + ": box outside image bounds " + std::to_string(r.width) +
                              "x" + std::to_string(r.height));
      }
      if (!(b.x2 > b.x1 && b.y2 > b.y1)) throw ValidationError(obj + ": empty box");
    }
  }
}

std::string annotations_to_json(const AnnotationSet& set) {
  json images = json::array();
  for (const ImageRecord& r : set.images) {
    json objects = json::array();
    for (const GroundTruth& g : r.objects) {
      objects.push_back({{"class", g.class_id},
                         {"x1", g.box.x1},
                         {"y1", g.box.y1},
                         {"x2", g.box.x2},
                         {"y2", g.box.y2}});
    }
    images.push_back(
        {{"file", r.file}, {"width", r.width}, {"height", r.height}, {"objects", objects}});
  }
  json root;
  if (set.num_classes > 0) root["classes"] = set.num_classes;
  root["images"] = images;
  return root.dump(1) + "\n";
}

namespace {

const json& field(const json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) throw FormatError(path + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw FormatError(path + "." + key + ": missing");
  return *it;
}

int int_field(const json& obj, const char* key, const std::string& path) {
  const json& v = field(obj, key, path);
  if (!v.is_number_integer()) throw FormatError(path + "." + key + ": expected an integer");
  return v.get<int>();
}

float number_field(const json& obj, const char* key, const std::string& path) {
  const json& v = field(obj, key, path);
  if (!v.is_number()) throw FormatError(path + "." + key + ": expected a number");
  return v.get<float>();
}

}  // namespace

AnnotationSet annotations_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("annotations: ") + e.what());
  }
  AnnotationSet set;
  if (!root.is_object()) throw FormatError("annotations: top level must be an object");
  if (root.contains("classes")) set.num_classes = int_field(root, "classes", "");
  const json& images = field(root, "images", "");
  if (!images.is_array()) throw FormatError("images: expected an array");
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string path = "images[" + std::to_string(i) + "]";
    const json& im = images[i];
    ImageRecord r;
    const json& file = field(im, "file", path);
    if (!file.is_string()) throw FormatError(path + ".file: expected a string");
    r.file = file.get<std::string>();
    r.width = int_field(im, "width", path);
    r.height = int_field(im, "height", path);
    const json& objects = field(im, "objects", path);
    if (!objects.is_array()) throw FormatError(path + ".objects: expected an array");
    for (std::size_t j = 0; j < objects.size(); ++j) {
      const std::string op = path + ".objects[" + std::to_string(j) + "]";
      const json& o = objects[j];
      GroundTruth g;
      g.class_id = int_field(o, "class", op);
      g.box = {number_field(o, "x1", op), number_field(o, "y1", op), number_field(o, "x2", op),
               number_field(o, "y2", op)};
      r.objects.push_back(g);
    }
    set.images.push_back(std::move(r));
  }
  validate_annotations(set);
  return set;
}

void save_annotations(const std::string& path, const AnnotationSet& set) {
  validate_annotations(set);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << annotations_to_json(set);
  if (!out) throw IoError("write failed: " + path);
}

AnnotationSet load_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return annotations_from_json(buf.str());
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

}  // namespace rpdetect
