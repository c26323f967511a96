#pragma once

#include <string>
#include <vector>

#include "rpdetect/boxes.hpp"
#include "rpdetect/pixmap.hpp"
#include "rpdetect/tensor.hpp"

namespace rpdetect {

/// Annotation of one image. `file` is relative to the dataset directory.
struct ImageRecord {
  std::string file;
  int width = 0;
  int height = 0;
  std::vector<GroundTruth> objects;
  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

/// On-disk annotation file:
///
///   {"classes": 2,
///    "images": [{"file": "images/000000.ppm", "width": 256, "height": 256,
///                "objects": [{"class": 0, "x1": 3, "y1": 4, "x2": 20, "y2": 18}]}]}
///
/// x2/y2 are exclusive. "classes" is optional; when present every class id
/// must be below it.
struct AnnotationSet {
  int num_classes = 0;  // 0: unspecified
  std::vector<ImageRecord> images;
  friend bool operator==(const AnnotationSet&, const AnnotationSet&) = default;
};

/// Throws ValidationError naming the image and object for any box outside
/// [0, width] x [0, height], any empty box, or a class id out of range.
void validate_annotations(const AnnotationSet& set);

std::string annotations_to_json(const AnnotationSet& set);
/// Parse errors name the line and column; schema errors name the field path
/// (e.g. images[3].objects[1].x2).
AnnotationSet annotations_from_json(const std::string& text);
void save_annotations(const std::string& path, const AnnotationSet& set);
AnnotationSet load_annotations(const std::string& path);

struct AnnotatedImage {
  ImageRecord record;
  Image image;
};

struct Dataset {
  int num_classes = 0;
  std::vector<AnnotatedImage> items;

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
  AnnotationSet annotations() const;
};

inline constexpr const char* kAnnotationFile = "annotations.json";

/// Writes <dir>/annotations.json and every image under its record's file name.
void save_dataset(const std::string& dir, const Dataset& data);
/// Reads <dir>/annotations.json and the images it names; image extents must
/// match the annotation.
Dataset load_dataset(const std::string& dir);

/// Stacks the selected images into (N, 3, H, W) with values scaled to [0, 1].
Tensor to_batch(const Dataset& data, const std::vector<int>& indices);
std::vector<std::vector<GroundTruth>> batch_targets(const Dataset& data,
                                                    const std::vector<int>& indices);

}  // namespace rpdetect
