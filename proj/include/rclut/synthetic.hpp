#pragma once

// Procedural test scenes: gradients, disks, rings, rotated boxes, stripe
// patches and strokes, antialiased by 4x4 supersampling.

#include <rclut/imagecore.hpp>
#include <rclut/plane.hpp>
#include <rclut/random.hpp>

#include <array>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

namespace rclut {

namespace detail {

struct Shape {
  int type = 0;
  double cx = 0, cy = 0, a = 0, b = 0, angle = 0, freq = 0, phase = 0;
  std::array<double, 3> color{};
  std::array<double, 3> color2{};
};

inline std::array<double, 3> random_color(Rng& rng, bool color) {
  const double g = rng.uniform(0.0, 255.0);
  if (!color) return {g, g, g};
  return {rng.uniform(0.0, 255.0), rng.uniform(0.0, 255.0), rng.uniform(0.0, 255.0)};
}

/// Colour of a shape at (x, y), or nothing when the point is outside.
inline bool shade(const Shape& s, double x, double y, std::array<double, 3>& out) {
  const double dx = x - s.cx, dy = y - s.cy;
  const double c = std::cos(s.angle), sn = std::sin(s.angle);
  const double u = c * dx + sn * dy, v = -sn * dx + c * dy;
  switch (s.type) {
    case 0:  // disk
      if (dx * dx + dy * dy > s.a * s.a) return false;
      out = s.color;
      return true;
    case 1: {  // ring
      const double r = std::sqrt(dx * dx + dy * dy);
      if (r > s.a || r < s.a - s.b) return false;
      out = s.color;
      return true;
    }
    case 2:  // rotated box
      if (std::fabs(u) > s.a || std::fabs(v) > s.b) return false;
      out = s.color;
      return true;
    case 3: {  // square-wave stripes inside a disk
      if (dx * dx + dy * dy > s.a * s.a) return false;
      const double t = std::sin(2 * std::numbers::pi * s.freq * u + s.phase);
      out = t >= 0 ? s.color : s.color2;
      return true;
    }
    case 4:  // stroke
      if (std::fabs(u) > s.a || std::fabs(v) > s.b * 0.15 + 0.6) return false;
      out = s.color;
      return true;
    default: {  // smooth sinusoid inside a box
      if (std::fabs(u) > s.a || std::fabs(v) > s.b) return false;
      const double t = 0.5 + 0.5 * std::sin(2 * std::numbers::pi * s.freq * v + s.phase);
      for (int k = 0; k < 3; ++k) out[k] = t * s.color[k] + (1 - t) * s.color2[k];
      return true;
    }
  }
}

}  // namespace detail

/// One random scene. Gray scenes have one channel.
inline Image synth_image(int w, int h, Rng& rng, bool color = false) {
  using detail::Shape;
  const auto bg0 = detail::random_color(rng, color), bg1 = detail::random_color(rng, color);
  const double bg_angle = rng.uniform(0.0, 2 * std::numbers::pi);
  const int count = 4 + static_cast<int>(rng.below(6));
  const double extent = std::max(w, h);
  std::vector<Shape> shapes(count);
  for (auto& s : shapes) {
    s.type = static_cast<int>(rng.below(6));
    s.cx = rng.uniform(0.0, w);
    s.cy = rng.uniform(0.0, h);
    s.a = rng.uniform(0.05, 0.35) * extent;
    s.b = s.type == 1 ? rng.uniform(1.0, 0.3 * s.a + 1.0) : rng.uniform(0.03, 0.3) * extent;
    s.angle = rng.uniform(0.0, std::numbers::pi);
    s.freq = rng.uniform(0.03, 0.3);
    s.phase = rng.uniform(0.0, 2 * std::numbers::pi);
    s.color = detail::random_color(rng, color);
    s.color2 = detail::random_color(rng, color);
  }

  const int ch = color ? 3 : 1;
  Image img(w, h, ch, color ? Colorspace::RGB : Colorspace::Gray);
  constexpr int ss = 4;
  const double bc = std::cos(bg_angle), bs = std::sin(bg_angle);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::array<double, 3> acc{};
      for (int sy = 0; sy < ss; ++sy)
        for (int sx = 0; sx < ss; ++sx) {
          const double px = x + (sx + 0.5) / ss, py = y + (sy + 0.5) / ss;
          const double t = std::clamp(0.5 + ((px - 0.5 * w) * bc + (py - 0.5 * h) * bs) / extent, 0.0, 1.0);
          std::array<double, 3> c{};
          for (int k = 0; k < 3; ++k) c[k] = (1 - t) * bg0[k] + t * bg1[k];
          std::array<double, 3> sc{};
          for (const auto& s : shapes)
            if (detail::shade(s, px, py, sc)) c = sc;
          for (int k = 0; k < 3; ++k) acc[k] += c[k];
        }
      for (int k = 0; k < ch; ++k) img.at(y, x, k) = detail::round_level(acc[k] / (ss * ss));
    }
  return img;
}

/// Writes `count` scenes as <prefix>NNN.png; returns the written paths.
inline std::vector<std::filesystem::path> write_synthetic_set(const std::filesystem::path& dir, int count, int w,
                                                              int h, std::uint64_t seed, bool color = false,
                                                              const std::string& prefix = "synth") {
  std::filesystem::create_directories(dir);
  Rng rng(seed);
  std::vector<std::filesystem::path> paths;
  for (int i = 0; i < count; ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "%s%03d.png", prefix.c_str(), i);
    const auto p = dir / name;
    save_png(synth_image(w, h, rng, color), p);
    paths.push_back(p);
  }
  return paths;
}

}  // namespace rclut
