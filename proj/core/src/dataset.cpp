#include "rpdetect/dataset.hpp"

#include <filesystem>

#include "rpdetect/error.hpp"

namespace fs = std::filesystem;

namespace rpdetect {

AnnotationSet Dataset::annotations() const {
  AnnotationSet set;
  set.num_classes = num_classes;
  for (const AnnotatedImage& it : items) set.images.push_back(it.record);
  return set;
}

void save_dataset(const std::string& dir, const Dataset& data) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  for (const AnnotatedImage& it : data.items) {
    const fs::path file = fs::path(dir) / it.record.file;
    fs::create_directories(file.parent_path(), ec);
    if (ec) throw IoError("cannot create " + file.parent_path().string() + ": " + ec.message());
    write_ppm(file.string(), it.image);
  }
  save_annotations((fs::path(dir) / kAnnotationFile).string(), data.annotations());
}

Dataset load_dataset(const std::string& dir) {
  const AnnotationSet set = load_annotations((fs::path(dir) / kAnnotationFile).string());
  Dataset data;
  data.num_classes = set.num_classes;
  for (const ImageRecord& r : set.images) {
    AnnotatedImage it{r, read_ppm((fs::path(dir) / r.file).string())};
    if (it.image.width != r.width || it.image.height != r.height) {
      throw ValidationError(r.file + ": image is " + std::to_string(it.image.width) + "x" +
                            std::to_string(it.image.height) + ", annotation says " +
                            std::to_string(r.width) + "x" + std::to_string(r.height));
    }
    data.items.push_back(std::move(it));
  }
  return data;
}

Tensor to_batch(const Dataset& data, const std::vector<int>& indices) {
  if (indices.empty()) throw ShapeError("to_batch: no images selected");
  const Image& first = data.items.at(indices.front()).image;
  const int h = first.height, w = first.width;
  Tensor out(Shape{static_cast<int>(indices.size()), 3, h, w});
  float* y = out.mutable_data().data();
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const Image& img = data.items.at(indices[n]).image;
    if (img.width != w || img.height != h) {
      throw ShapeError("to_batch: mixed image extents in one batch");
    }
    float* yn = y + static_cast<std::int64_t>(n) * 3 * plane;
    for (std::int64_t p = 0; p < plane; ++p) {
      for (int c = 0; c < 3; ++c) yn[c * plane + p] = img.pixels[p * 3 + c] / 255.0f;
    }
  }
  return out;
}

std::vector<std::vector<GroundTruth>> batch_targets(const Dataset& data,
                                                    const std::vector<int>& indices) {
  std::vector<std::vector<GroundTruth>> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(data.items.at(i).record.objects);
  return out;
}

}  // namespace rpdetect
