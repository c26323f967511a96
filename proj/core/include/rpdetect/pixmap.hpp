#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace rpdetect {

using Rgb = std::array<std::uint8_t, 3>;

/// Interleaved 8-bit RGB raster, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // width * height * 3

  Image() = default;
  Image(int w, int h, Rgb fill = {0, 0, 0});

  Rgb get(int x, int y) const;
  void set(int x, int y, Rgb c);
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
  friend bool operator==(const Image&, const Image&) = default;
};

/// Binary P6 with maxval 255.
void write_ppm(const std::string& path, const Image& image);
Image read_ppm(const std::string& path);
std::vector<std::uint8_t> encode_ppm(const Image& image);
Image decode_ppm(const std::vector<std::uint8_t>& bytes);

/// One-pixel rectangle outline along the border of [x1, x2) x [y1, y2),
/// clipped to the image.
void draw_rect(Image& image, int x1, int y1, int x2, int y2, Rgb color);

/// Renders digits, '.', and '-' with a 3x5 bitmap font at (x, y) (top-left),
/// clipped to the image. Other characters advance the cursor only.
void draw_text(Image& image, int x, int y, const std::string& text, Rgb color);

}  // namespace rpdetect
