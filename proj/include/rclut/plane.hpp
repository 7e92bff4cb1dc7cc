#pragma once

#include <rclut/error.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace rclut {

/// Single-channel raster, row-major. Indexing is (row, col).
template <class T>
class Plane {
 public:
  using value_type = T;

  Plane() = default;
  Plane(int width, int height, T fill = T{}) : width_(width), height_(height) {
    require(width >= 0 && height >= 0, ErrorCode::InvalidArgument, "negative plane size");
    data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
  }
  Plane(int width, int height, std::vector<T> data)
      : width_(width), height_(height), data_(std::move(data)) {
    require(width >= 0 && height >= 0 &&
                data_.size() == static_cast<std::size_t>(width) * static_cast<std::size_t>(height),
            ErrorCode::ShapeMismatch, "plane data length does not match its dimensions");
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int row, int col) noexcept {
    return data_[static_cast<std::size_t>(row) * width_ + col];
  }
  const T& operator()(int row, int col) const noexcept {
    return data_[static_cast<std::size_t>(row) * width_ + col];
  }

  T* row(int r) noexcept { return data_.data() + static_cast<std::size_t>(r) * width_; }
  const T* row(int r) const noexcept { return data_.data() + static_cast<std::size_t>(r) * width_; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  bool same_shape(const Plane& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_;
  }

  friend bool operator==(const Plane&, const Plane&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using FloatPlane = Plane<float>;
using QuantPlane = Plane<std::uint8_t>;

/// Dense row-major array with an arbitrary shape. The network uses rank-3
/// (height, width, channels) tensors.
template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, T fill = T{}) : shape_(std::move(shape)) {
    data_.assign(count(shape_), fill);
  }
  Tensor(std::vector<int> shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    require(data_.size() == count(shape_), ErrorCode::ShapeMismatch,
            "tensor data length does not match its shape");
  }

  const std::vector<int>& shape() const noexcept { return shape_; }
  int extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  T& operator()(int h, int w, int c) noexcept {
    return data_[(static_cast<std::size_t>(h) * shape_[1] + w) * shape_[2] + c];
  }
  const T& operator()(int h, int w, int c) const noexcept {
    return data_[(static_cast<std::size_t>(h) * shape_[1] + w) * shape_[2] + c];
  }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static std::size_t count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int e : shape) {
      require(e >= 0, ErrorCode::InvalidArgument, "negative tensor extent");
      n *= static_cast<std::size_t>(e);
    }
    return n;
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

enum class Colorspace { Gray, RGB, YCbCr };

/// 8-bit raster, channel-interleaved.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  Colorspace colorspace = Colorspace::Gray;
  std::vector<std::uint8_t> data;

  Image() = default;
  Image(int w, int h, int ch, Colorspace cs) : width(w), height(h), channels(ch), colorspace(cs) {
    require(w >= 0 && h >= 0, ErrorCode::InvalidArgument, "negative image size");
    require(ch == 1 || ch == 3, ErrorCode::InvalidArgument, "images have 1 or 3 channels");
    require(ch != 1 || cs == Colorspace::Gray, ErrorCode::InvalidArgument,
            "single-channel images must be Gray");
    require(ch != 3 || cs != Colorspace::Gray, ErrorCode::InvalidArgument,
            "Gray images have one channel");
    data.assign(static_cast<std::size_t>(w) * h * ch, 0);
  }

  std::uint8_t& at(int row, int col, int ch) noexcept {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
  std::uint8_t at(int row, int col, int ch) const noexcept {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }

  bool valid() const noexcept {
    return (channels == 1 || channels == 3) && (channels != 1 || colorspace == Colorspace::Gray) &&
           (channels != 3 || colorspace != Colorspace::Gray) && width >= 0 && height >= 0 &&
           data.size() == static_cast<std::size_t>(width) * height * channels;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

// 8-bit <-> unit-interval conversions shared by every module; the LUT transfer
// and the network must see identical floats for a given level.
template <class T>
inline T level_to_unit(std::uint8_t v) noexcept {
  return static_cast<T>(v) / static_cast<T>(255);
}

/// round-half-up(255 * v), clamped to [0, 255].
template <class T>
inline std::uint8_t unit_to_level(T v) noexcept {
  T scaled = std::floor(static_cast<T>(255) * v + static_cast<T>(0.5));
  if (!(scaled > 0)) return 0;
  if (scaled >= 255) return 255;
  return static_cast<std::uint8_t>(scaled);
}

/// Simulated 8-bit storage: round(255 v) / 255.
template <class T>
inline T quantize_unit(T v) noexcept {
  return level_to_unit<T>(unit_to_level(v));
}

template <class T>
inline Plane<T> to_unit_plane(const QuantPlane& q) {
  Plane<T> out(q.width(), q.height());
  std::transform(q.data().begin(), q.data().end(), out.data().begin(), level_to_unit<T>);
  return out;
}

template <class T>
inline QuantPlane to_level_plane(const Plane<T>& p) {
  QuantPlane out(p.width(), p.height());
  std::transform(p.data().begin(), p.data().end(), out.data().begin(), unit_to_level<T>);
  return out;
}

template <class T, class U>
inline Plane<U> plane_cast(const Plane<T>& p) {
  Plane<U> out(p.width(), p.height());
  std::transform(p.data().begin(), p.data().end(), out.data().begin(),
                 [](T v) { return static_cast<U>(v); });
  return out;
}

}  // namespace rclut
