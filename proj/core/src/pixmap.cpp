#include "rpdetect/pixmap.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iterator>

#include "rpdetect/error.hpp"

namespace rpdetect {

Image::Image(int w, int h, Rgb fill) : width(w), height(h) {
  if (w < 0 || h < 0) throw ValidationError("image: negative extent");
  pixels.resize(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < pixels.size(); i += 3) {
    pixels[i] = fill[0];
    pixels[i + 1] = fill[1];
    pixels[i + 2] = fill[2];
  }
}

Rgb Image::get(int x, int y) const {
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  return {pixels[i], pixels[i + 1], pixels[i + 2]};
}

void Image::set(int x, int y, Rgb c) {
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  pixels[i] = c[0];
  pixels[i + 1] = c[1];
  pixels[i + 2] = c[2];
}

std::vector<std::uint8_t> encode_ppm(const Image& image) {
  const std::string header =
      "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

Image decode_ppm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&](const char* what) {
    skip_space();
    long value = 0;
    const std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(bytes[pos]) && pos - start < 9) {
      value = value * 10 + (bytes[pos] - '0');
      ++pos;
    }
    if (pos == start) throw FormatError(std::string("ppm: missing ") + what);
    return static_cast<int>(value);
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw FormatError("ppm: not a binary P6 file");
  }
  pos = 2;
  const int w = read_int("width");
  const int h = read_int("height");
  const int maxval = read_int("maxval");
  if (maxval != 255) throw FormatError("ppm: only maxval 255 is supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("ppm: bad header");
  ++pos;
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (bytes.size() - pos != need) {
    throw FormatError("ppm: expected " + std::to_string(need) + " pixel bytes, found " +
                      std::to_string(bytes.size() - pos));
  }
  Image img(w, h);
  std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end(), img.pixels.begin());
  return img;
}

void write_ppm(const std::string& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const auto bytes = encode_ppm(image);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_ppm(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void draw_rect(Image& image, int x1, int y1, int x2, int y2, Rgb color) {
  if (x2 <= x1 || y2 <= y1) return;
  for (int x = x1; x < x2; ++x) {
    if (image.contains(x, y1)) image.set(x, y1, color);
    if (image.contains(x, y2 - 1)) image.set(x, y2 - 1, color);
  }
  for (int y = y1; y < y2; ++y) {
    if (image.contains(x1, y)) image.set(x1, y, color);
    if (image.contains(x2 - 1, y)) image.set(x2 - 1, y, color);
  }
}

namespace {
// 3x5 glyphs, one row per entry, bit 2 = leftmost column.
constexpr std::array<std::array<std::uint8_t, 5>, 12> kGlyphs{{
    {7, 5, 5, 5, 7},  // 0
    {2, 6, 2, 2, 7},  // 1
    {7, 1, 7, 4, 7},  // 2
    {7, 1, 7, 1, 7},  // 3
    {5, 5, 7, 1, 1},  // 4
    {7, 4, 7, 1, 7},  // 5
    {7, 4, 7, 5, 7},  // 6
    {7, 1, 1, 1, 1},  // 7
    {7, 5, 7, 5, 7},  // 8
    {7, 5, 7, 1, 7},  // 9
    {0, 0, 0, 0, 2},  // .
    {0, 0, 7, 0, 0},  // -
}};
}  // namespace

void draw_text(Image& image, int x, int y, const std::string& text, Rgb color) {
  for (char ch : text) {
    int glyph = -1;
    if (ch >= '0' && ch <= '9') glyph = ch - '0';
    else if (ch == '.') glyph = 10;
    else if (ch == '-') glyph = 11;
    if (glyph >= 0) {
      for (int r = 0; r < 5; ++r) {
        for (int c = 0; c < 3; ++c) {
          if ((kGlyphs[glyph][r] >> (2 - c)) & 1) {
            if (image.contains(x + c, y + r)) image.set(x + c, y + r, color);
          }
        }
      }
    }
    x += 4;
  }
}

}  // namespace rpdetect
