#include "rpdetect/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "rpdetect/error.hpp"
#include "rpdetect/parallel.hpp"

namespace rpdetect {

const char* to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::rectangle: return "rectangle";
    case ShapeKind::ellipse: return "ellipse";
    case ShapeKind::triangle: return "triangle";
    case ShapeKind::diamond: return "diamond";
    case ShapeKind::cross: return "cross";
  }
  return "unknown";
}

void SyntheticConfig::validate() const {
  if (n_images < 0) throw ConfigError("synthetic: n_images must be non-negative");
  if (size < 32) throw ConfigError("synthetic: size must be at least 32");
  if (num_classes < 1 || num_classes > kMaxSyntheticClasses) {
    throw ConfigError("synthetic: classes must be in [1, " + std::to_string(kMaxSyntheticClasses) +
                      "]");
  }
  if (min_scale < 4 || min_scale >= size / 8) {
    throw ConfigError("synthetic: min_scale must be in [4, size/8)");
  }
  if (max_scale < size / 8 || max_scale > size) {
    throw ConfigError("synthetic: max_scale must be in [size/8, size]");
  }
  if (!(small_fraction >= 0.0f && small_fraction <= 1.0f)) {
    throw ConfigError("synthetic: small_fraction must be in [0, 1]");
  }
  if (min_objects < 0 || max_objects < min_objects) {
    throw ConfigError("synthetic: need 0 <= min_objects <= max_objects");
  }
}

std::uint64_t image_seed(std::uint64_t seed, int index) {
  // splitmix64 finalizer over the combined key
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

constexpr int kMinVisiblePixels = 12;
constexpr double kMaxCoveredShare = 0.3;

struct Placement {
  ShapeKind kind;
  int x0, y0, w, h;  // nominal box, may extend past the border
  Rgb color;
};

bool inside(ShapeKind kind, const Placement& p, int px, int py) {
  const double u = (px + 0.5 - p.x0) / p.w;  // [0, 1) across the nominal box
  const double v = (py + 0.5 - p.y0) / p.h;
  if (u < 0.0 || u >= 1.0 || v < 0.0 || v >= 1.0) return false;
  const double du = u - 0.5, dv = v - 0.5;
  switch (kind) {
    case ShapeKind::rectangle: return true;
    case ShapeKind::ellipse: return du * du + dv * dv <= 0.25;
    case ShapeKind::triangle: return std::abs(du) <= 0.5 * v;
    case ShapeKind::diamond: return std::abs(du) + std::abs(dv) <= 0.5;
    case ShapeKind::cross: return std::abs(du) <= 1.0 / 6 || std::abs(dv) <= 1.0 / 6;
  }
  return false;
}

double covered_share(const Placement& a, const Placement& b) {
  const int iw = std::min(a.x0 + a.w, b.x0 + b.w) - std::max(a.x0, b.x0);
  const int ih = std::min(a.y0 + a.h, b.y0 + b.h) - std::max(a.y0, b.y0);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double smaller = std::min(a.w * a.h, b.w * b.h);
  return static_cast<double>(iw) * ih / smaller;
}

AnnotatedImage render_image(const SyntheticConfig& cfg, int index) {
  std::mt19937_64 rng(image_seed(cfg.seed, index));
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto uniform = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  const int size = cfg.size;

  // Background: per-image base tone, low-frequency waves and pixel noise.
  Image bg(size, size);
  double base[3], amp[3], fx[3], fy[3], phase[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = uniform(55.0, 95.0);
    amp[c] = uniform(4.0, 12.0);
    fx[c] = uniform(0.02, 0.15);
    fy[c] = uniform(0.02, 0.15);
    phase[c] = uniform(0.0, 6.2831853);
  }
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      Rgb px{};
      for (int c = 0; c < 3; ++c) {
        const double wave = amp[c] * std::sin(fx[c] * x + fy[c] * y + phase[c]);
        const double v = base[c] + wave + uniform_int(-6, 6);
        px[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 40L, 110L));
      }
      bg.set(x, y, px);
    }
  }

  const int count = uniform_int(cfg.min_objects, cfg.max_objects);
  const int small = static_cast<int>(std::ceil(cfg.small_fraction * count - 1e-9));
  const int small_limit = size / 8 - 1;  // longer side < size / 8
  std::vector<Placement> placed;
  for (int k = 0; k < count; ++k) {
    const bool is_small = k < small;
    for (int attempt = 0; attempt < 100; ++attempt) {
      Placement p;
      p.kind = static_cast<ShapeKind>(uniform_int(0, cfg.num_classes - 1));
      const int longer = is_small ? uniform_int(cfg.min_scale, small_limit)
                                  : uniform_int(size / 8, cfg.max_scale);
      const int shorter = std::max(4, static_cast<int>(std::lround(longer * uniform(0.6, 1.0))));
      if (uniform_int(0, 1)) {
        p.w = longer;
        p.h = shorter;
      } else {
        p.w = shorter;
        p.h = longer;
      }
      // Centers keep at least a quarter of each side inside the image.
      const int cx = uniform_int(p.w / 4, size - p.w / 4);
      const int cy = uniform_int(p.h / 4, size - p.h / 4);
      p.x0 = cx - p.w / 2;
      p.y0 = cy - p.h / 2;
      bool ok = true;
      for (const Placement& q : placed) {
        if (covered_share(p, q) > kMaxCoveredShare) ok = false;
      }
      if (!ok) continue;
      for (;;) {
        p.color = {static_cast<std::uint8_t>(uniform_int(0, 255)),
                   static_cast<std::uint8_t>(uniform_int(0, 255)),
                   static_cast<std::uint8_t>(uniform_int(0, 255))};
        p.color[uniform_int(0, 2)] = static_cast<std::uint8_t>(uniform_int(150, 255));
        bool unique = true;
        for (const Placement& q : placed) unique = unique && q.color != p.color;
        if (unique) break;
      }
      placed.push_back(p);
      break;
    }
  }

  // Painter's order; label map records the topmost object per pixel.
  std::vector<int> label(static_cast<std::size_t>(size) * size, -1);
  for (std::size_t i = 0; i < placed.size(); ++i) {
    const Placement& p = placed[i];
    for (int y = std::max(0, p.y0); y < std::min(size, p.y0 + p.h); ++y) {
      for (int x = std::max(0, p.x0); x < std::min(size, p.x0 + p.w); ++x) {
        if (inside(p.kind, p, x, y)) label[static_cast<std::size_t>(y) * size + x] = static_cast<int>(i);
      }
    }
  }

  struct Extent {
    int x1 = 1 << 30, y1 = 1 << 30, x2 = -1, y2 = -1, pixels = 0;
  };
  std::vector<Extent> extent(placed.size());
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const int l = label[static_cast<std::size_t>(y) * size + x];
      if (l < 0) continue;
      Extent& e = extent[l];
      e.x1 = std::min(e.x1, x);
      e.y1 = std::min(e.y1, y);
      e.x2 = std::max(e.x2, x + 1);
      e.y2 = std::max(e.y2, y + 1);
      ++e.pixels;
    }
  }

  AnnotatedImage out;
  out.image = bg;
  char name[32];
  std::snprintf(name, sizeof(name), "images/%06d.ppm", index);
  out.record.file = name;
  out.record.width = size;
  out.record.height = size;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const int l = label[static_cast<std::size_t>(y) * size + x];
      // Barely visible objects are dropped entirely (left as background).
      if (l >= 0 && extent[l].pixels >= kMinVisiblePixels) out.image.set(x, y, placed[l].color);
    }
  }
  for (std::size_t i = 0; i < placed.size(); ++i) {
    const Extent& e = extent[i];
    if (e.pixels < kMinVisiblePixels) continue;
    out.record.objects.push_back(
        {static_cast<int>(placed[i].kind),
         Box{static_cast<float>(e.x1), static_cast<float>(e.y1), static_cast<float>(e.x2),
             static_cast<float>(e.y2)}});
  }
  return out;
}

}  // namespace

Dataset generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  Dataset data;
  data.num_classes = config.num_classes;
  data.items.resize(config.n_images);
  parallel_for(config.n_images, [&](int i) { data.items[i] = render_image(config, i); });
  return data;
}

}  // namespace rpdetect
