#pragma once

// Image primitives shared by training, evaluation and inference: PNG I/O,
// BT.601 colour conversion, bicubic resampling, replicate padding, rotation.

#include <rclut/error.hpp>
#include <rclut/plane.hpp>

#include <png.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace rclut {

// ---------------------------------------------------------------------------
// PNG I/O

inline Image load_png(const std::filesystem::path& path) {
  std::error_code ec;
  require(std::filesystem::is_regular_file(path, ec), ErrorCode::Io,
          "cannot open '" + path.string() + "'");

  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    std::string msg = png.message;
    png_image_free(&png);
    fail(ErrorCode::CorruptImage, "'" + path.string() + "': " + msg);
  }
  if (png.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&png);
    fail(ErrorCode::UnsupportedBitDepth, "'" + path.string() + "' is a 16-bit PNG");
  }

  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image img(static_cast<int>(png.width), static_cast<int>(png.height), color ? 3 : 1,
            color ? Colorspace::RGB : Colorspace::Gray);
  if (!png_image_finish_read(&png, nullptr, img.data.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    fail(ErrorCode::CorruptImage, "'" + path.string() + "': " + msg);
  }
  return img;
}

inline void save_png(const Image& image, const std::filesystem::path& path) {
  require(image.valid(), ErrorCode::InvalidArgument, "image invariants violated");
  require(image.width > 0 && image.height > 0, ErrorCode::EmptyImage, "cannot save an empty image");
  require(image.colorspace != Colorspace::YCbCr, ErrorCode::WrongColorspace,
          "PNG output must be RGB or Gray");

  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.data.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    fail(ErrorCode::Io, "cannot write '" + path.string() + "': " + msg);
  }
}

// ---------------------------------------------------------------------------
// Colour conversion (BT.601 full range)

namespace detail {
inline std::uint8_t round_level(double v) noexcept {
  double r = std::floor(v + 0.5);
  if (r <= 0.0) return 0;
  if (r >= 255.0) return 255;
  return static_cast<std::uint8_t>(r);
}
}  // namespace detail

inline std::array<std::uint8_t, 3> rgb_to_ycbcr(std::uint8_t r, std::uint8_t g, std::uint8_t b) noexcept {
  const double R = r, G = g, B = b;
  return {detail::round_level(0.299 * R + 0.587 * G + 0.114 * B),
          detail::round_level(128.0 - 0.168736 * R - 0.331264 * G + 0.5 * B),
          detail::round_level(128.0 + 0.5 * R - 0.418688 * G - 0.081312 * B)};
}

inline std::array<std::uint8_t, 3> ycbcr_to_rgb(std::uint8_t y, std::uint8_t cb, std::uint8_t cr) noexcept {
  const double Y = y, Cb = cb - 128.0, Cr = cr - 128.0;
  return {detail::round_level(Y + 1.402 * Cr),
          detail::round_level(Y - 0.344136 * Cb - 0.714136 * Cr),
          detail::round_level(Y + 1.772 * Cb)};
}

inline Image rgb_to_ycbcr(const Image& image) {
  require(image.colorspace == Colorspace::RGB, ErrorCode::WrongColorspace, "expected an RGB image");
  Image out = image;
  out.colorspace = Colorspace::YCbCr;
  for (std::size_t i = 0; i + 2 < out.data.size(); i += 3) {
    auto px = rgb_to_ycbcr(image.data[i], image.data[i + 1], image.data[i + 2]);
    out.data[i] = px[0];
    out.data[i + 1] = px[1];
    out.data[i + 2] = px[2];
  }
  return out;
}

inline Image ycbcr_to_rgb(const Image& image) {
  require(image.colorspace == Colorspace::YCbCr, ErrorCode::WrongColorspace, "expected a YCbCr image");
  Image out = image;
  out.colorspace = Colorspace::RGB;
  for (std::size_t i = 0; i + 2 < out.data.size(); i += 3) {
    auto px = ycbcr_to_rgb(image.data[i], image.data[i + 1], image.data[i + 2]);
    out.data[i] = px[0];
    out.data[i + 1] = px[1];
    out.data[i + 2] = px[2];
  }
  return out;
}

inline QuantPlane extract_channel(const Image& image, int channel) {
  require(channel >= 0 && channel < image.channels, ErrorCode::InvalidArgument, "channel out of range");
  QuantPlane p(image.width, image.height);
  for (std::size_t i = 0; i < p.size(); ++i) p.data()[i] = image.data[i * image.channels + channel];
  return p;
}

/// Luma of an RGB, YCbCr or Gray image as 8-bit levels.
inline QuantPlane luma_plane(const Image& image) {
  switch (image.colorspace) {
    case Colorspace::Gray:
    case Colorspace::YCbCr: return extract_channel(image, 0);
    case Colorspace::RGB: return extract_channel(rgb_to_ycbcr(image), 0);
  }
  return {};
}

inline Image gray_image(const QuantPlane& plane) {
  Image img(plane.width(), plane.height(), 1, Colorspace::Gray);
  std::copy(plane.data().begin(), plane.data().end(), img.data.begin());
  return img;
}

inline Image merge_channels(const std::vector<QuantPlane>& planes, Colorspace cs) {
  require(planes.size() == 1 || planes.size() == 3, ErrorCode::InvalidArgument, "1 or 3 planes");
  const int ch = static_cast<int>(planes.size());
  Image img(planes[0].width(), planes[0].height(), ch, cs);
  for (int c = 0; c < ch; ++c) {
    require(planes[c].same_shape(planes[0]), ErrorCode::ShapeMismatch, "channel planes differ in size");
    for (std::size_t i = 0; i < planes[c].size(); ++i) img.data[i * ch + c] = planes[c].data()[i];
  }
  return img;
}

// ---------------------------------------------------------------------------
// Bicubic resampling: Keys kernel a = -0.5, half-pixel centres, edge replicate.
// When shrinking, the kernel is stretched by the inverse scale (antialiased,
// imresize-style). Accumulation is in double regardless of T.

inline double keys_cubic(double x) noexcept {
  x = std::fabs(x);
  if (x <= 1.0) return (1.5 * x - 2.5) * x * x + 1.0;
  if (x < 2.0) return ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0;
  return 0.0;
}

struct ResampleAxis {
  int taps = 0;
  std::vector<int> index;     // out * taps, already clamped to [0, in)
  std::vector<double> weight; // out * taps, normalised per output sample
};

inline ResampleAxis resample_axis(int in, int out) {
  const double scale = static_cast<double>(out) / in;
  const double stretch = std::min(1.0, scale);
  const double support = 2.0 / stretch;
  ResampleAxis ax;
  ax.taps = static_cast<int>(std::ceil(2.0 * support)) + 2;
  ax.index.resize(static_cast<std::size_t>(out) * ax.taps);
  ax.weight.resize(ax.index.size());
  for (int o = 0; o < out; ++o) {
    const double u = (o + 0.5) / scale - 0.5;
    const int left = static_cast<int>(std::floor(u - support));
    double sum = 0.0;
    for (int t = 0; t < ax.taps; ++t) {
      const int src = left + t;
      const double w = stretch * keys_cubic(stretch * (u - src));
      ax.index[o * ax.taps + t] = std::clamp(src, 0, in - 1);
      ax.weight[o * ax.taps + t] = w;
      sum += w;
    }
    for (int t = 0; t < ax.taps; ++t) ax.weight[o * ax.taps + t] /= sum;
  }
  return ax;
}

template <class T>
Plane<T> resize_bicubic(const Plane<T>& src, int out_w, int out_h, T lo = T(0), T hi = T(1)) {
  require(out_w >= 1 && out_h >= 1, ErrorCode::InvalidArgument, "resize output must be at least 1x1");
  require(!src.empty(), ErrorCode::EmptyImage, "cannot resize an empty plane");
  const ResampleAxis ax = resample_axis(src.width(), out_w);
  const ResampleAxis ay = resample_axis(src.height(), out_h);

  std::vector<double> tmp(static_cast<std::size_t>(src.height()) * out_w);
  for (int y = 0; y < src.height(); ++y) {
    const T* row = src.row(y);
    for (int x = 0; x < out_w; ++x) {
      double acc = 0.0;
      for (int t = 0; t < ax.taps; ++t)
        acc += ax.weight[x * ax.taps + t] * static_cast<double>(row[ax.index[x * ax.taps + t]]);
      tmp[static_cast<std::size_t>(y) * out_w + x] = acc;
    }
  }
  Plane<T> out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      double acc = 0.0;
      for (int t = 0; t < ay.taps; ++t)
        acc += ay.weight[y * ay.taps + t] *
               tmp[static_cast<std::size_t>(ay.index[y * ay.taps + t]) * out_w + x];
      out(y, x) = static_cast<T>(std::clamp(acc, static_cast<double>(lo), static_cast<double>(hi)));
    }
  }
  return out;
}

/// Spec-level entry point on unit-range planes.
inline FloatPlane bicubic_resize(const FloatPlane& plane, int out_w, int out_h) {
  return resize_bicubic<float>(plane, out_w, out_h, 0.0f, 1.0f);
}

/// Resizes 8-bit levels. Intermediate math stays in double on raw levels, so
/// integer upscales by 2 or 4 are computed exactly (all weights are dyadic).
inline QuantPlane resize_levels(const QuantPlane& src, int out_w, int out_h) {
  Plane<double> resized = resize_bicubic<double>(plane_cast<std::uint8_t, double>(src), out_w, out_h,
                                                 0.0, 255.0);
  QuantPlane out(out_w, out_h);
  std::transform(resized.data().begin(), resized.data().end(), out.data().begin(), detail::round_level);
  return out;
}

inline Image resize_image(const Image& image, int out_w, int out_h) {
  std::vector<QuantPlane> planes;
  for (int c = 0; c < image.channels; ++c)
    planes.push_back(resize_levels(extract_channel(image, c), out_w, out_h));
  return merge_channels(planes, image.colorspace);
}

// ---------------------------------------------------------------------------
// Geometry

template <class T>
Plane<T> pad_replicate(const Plane<T>& src, int top, int left, int bottom, int right) {
  require(top >= 0 && left >= 0 && bottom >= 0 && right >= 0, ErrorCode::InvalidArgument,
          "negative padding");
  if (top == 0 && left == 0 && bottom == 0 && right == 0) return src;
  require(!src.empty(), ErrorCode::EmptyImage, "cannot pad an empty plane");
  Plane<T> out(src.width() + left + right, src.height() + top + bottom);
  for (int y = 0; y < out.height(); ++y) {
    const T* row = src.row(std::clamp(y - top, 0, src.height() - 1));
    T* dst = out.row(y);
    for (int x = 0; x < out.width(); ++x) dst[x] = row[std::clamp(x - left, 0, src.width() - 1)];
  }
  return out;
}

/// Adjoint of pad_replicate: folds the gradient of the replicated border back
/// onto the edge pixels it was copied from.
template <class T>
Plane<T> pad_replicate_backward(const Plane<T>& grad, int top, int left, int bottom, int right) {
  Plane<T> out(grad.width() - left - right, grad.height() - top - bottom);
  for (int y = 0; y < grad.height(); ++y) {
    const int sy = std::clamp(y - top, 0, out.height() - 1);
    for (int x = 0; x < grad.width(); ++x)
      out(sy, std::clamp(x - left, 0, out.width() - 1)) += grad(y, x);
  }
  return out;
}

template <class T>
Plane<T> crop(const Plane<T>& src, int x0, int y0, int w, int h) {
  require(x0 >= 0 && y0 >= 0 && w >= 0 && h >= 0 && x0 + w <= src.width() && y0 + h <= src.height(),
          ErrorCode::InvalidArgument, "crop window outside the plane");
  Plane<T> out(w, h);
  for (int y = 0; y < h; ++y) std::copy_n(src.row(y0 + y) + x0, w, out.row(y));
  return out;
}

/// Counter-clockwise rotation by k * 90 degrees.
template <class T>
Plane<T> rotate90(const Plane<T>& src, int k) {
  k = ((k % 4) + 4) % 4;
  if (k == 0) return src;
  const int H = src.height(), W = src.width();
  Plane<T> out = (k == 2) ? Plane<T>(W, H) : Plane<T>(H, W);
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      switch (k) {
        case 1: out(W - 1 - c, r) = src(r, c); break;
        case 2: out(H - 1 - r, W - 1 - c) = src(r, c); break;
        default: out(c, H - 1 - r) = src(r, c); break;
      }
    }
  }
  return out;
}

template <class T>
Plane<T> flip_horizontal(const Plane<T>& src) {
  Plane<T> out(src.width(), src.height());
  for (int r = 0; r < src.height(); ++r)
    std::reverse_copy(src.row(r), src.row(r) + src.width(), out.row(r));
  return out;
}

/// One of the 8 dihedral transforms: t & 3 quarter turns, preceded by a
/// horizontal flip when t >= 4.
template <class T>
Plane<T> dihedral(const Plane<T>& src, int t) {
  return rotate90(t >= 4 ? flip_horizontal(src) : src, t & 3);
}

inline Image rotate90(const Image& image, int k) {
  std::vector<QuantPlane> planes;
  for (int c = 0; c < image.channels; ++c) planes.push_back(rotate90(extract_channel(image, c), k));
  return merge_channels(planes, image.colorspace);
}

/// Centre crop so both dimensions are multiples of r.
inline Image crop_to_multiple(const Image& image, int r) {
  const int w = image.width / r * r, h = image.height / r * r;
  if (w == image.width && h == image.height) return image;
  const int x0 = (image.width - w) / 2, y0 = (image.height - h) / 2;
  Image out(w, h, image.channels, image.colorspace);
  for (int y = 0; y < h; ++y)
    std::copy_n(image.data.begin() + ((static_cast<std::size_t>(y0 + y) * image.width + x0) * image.channels),
                static_cast<std::size_t>(w) * image.channels,
                out.data.begin() + static_cast<std::size_t>(y) * w * image.channels);
  return out;
}

template <class T>
Plane<T> crop_to_multiple(const Plane<T>& p, int r) {
  const int w = p.width() / r * r, h = p.height() / r * r;
  return crop(p, (p.width() - w) / 2, (p.height() - h) / 2, w, h);
}

}  // namespace rclut
