#pragma once

// Integer LUT inference. All lookup arithmetic is integral, so results are
// identical on every platform and for every thread count.

#include <rclut/error.hpp>
#include <rclut/imagecore.hpp>
#include <rclut/lutpack.hpp>
#include <rclut/plane.hpp>

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <span>
#include <thread>
#include <vector>

namespace rclut {

// ---------------------------------------------------------------------------
// Threading

namespace detail {
inline int& thread_override() {
  static int n = 0;
  return n;
}
}  // namespace detail

/// 0 restores the default (RCLUT_THREADS, else the hardware concurrency).
inline void set_thread_count(int n) { detail::thread_override() = std::max(0, n); }

inline int thread_count() {
  if (detail::thread_override() > 0) return detail::thread_override();
  if (const char* env = std::getenv("RCLUT_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(begin, end) over contiguous chunks of [0, n). Chunks write disjoint
/// outputs, so the result does not depend on the schedule.
inline void parallel_for(int n, const std::function<void(int, int)>& fn) {
  const int threads = std::min(thread_count(), n);
  if (threads <= 1) {
    if (n > 0) fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  const int chunk = (n + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const int b = t * chunk, e = std::min(n, b + chunk);
    if (b < e) pool.emplace_back(fn, b, e);
  }
  for (auto& th : pool) th.join();
}

// ---------------------------------------------------------------------------
// Lookups

/// Round-half-up integer division for non-negative sums.
constexpr std::int64_t div_round(std::int64_t sum, std::int64_t d) noexcept { return (2 * sum + d) / (2 * d); }

/// One 1D lookup. Sampled tables interpolate between levels 16j and 16(j+1)
/// (the last one cached at 255) with weights summing to 16.
inline int lut1d_lookup(const Lut1D& t, int v) noexcept {
  if (t.sample_count() == kFullCount) return t.entries[v];
  const int j = v >> 4, f = v & 15;
  if (f == 0) return t.entries[j];
  return ((16 - f) * t.entries[j] + f * t.entries[j + 1] + 8) >> 4;
}

/// Average of the N^2 lookups of one window (row-major offsets).
inline std::uint8_t lut1d_eval(std::span<const std::uint8_t> window, const std::vector<Lut1D>& tables) {
  require(window.size() == tables.size() && !tables.empty(), ErrorCode::ShapeMismatch,
          "lut1d_eval: window and table counts differ");
  std::int64_t sum = 0;
  for (std::size_t o = 0; o < tables.size(); ++o) sum += lut1d_lookup(tables[o], window[o]);
  return static_cast<std::uint8_t>(div_round(sum, static_cast<std::int64_t>(tables.size())));
}

/// Vertices are corner bitmasks (bit k set: axis k at base + 1).
struct SimplexWeights {
  std::array<int, 5> vertex{};
  std::array<int, 5> weight{};
  friend bool operator==(const SimplexWeights&, const SimplexWeights&) = default;
};

/// Sorted-fraction simplex of the 4D cell; ties keep axis order.
inline SimplexWeights simplex_weights(const std::array<int, 4>& f) noexcept {
  std::array<int, 4> order{0, 1, 2, 3};
  for (int i = 1; i < 4; ++i)
    for (int j = i; j > 0 && f[order[j]] > f[order[j - 1]]; --j) std::swap(order[j], order[j - 1]);
  SimplexWeights s;
  int corner = 0, prev = 16;
  for (int k = 0; k < 4; ++k) {
    s.vertex[k] = corner;
    s.weight[k] = prev - f[order[k]];
    prev = f[order[k]];
    corner |= 1 << order[k];
  }
  s.vertex[4] = corner;
  s.weight[4] = prev;
  return s;
}

inline constexpr std::array<int, 4> kStride4D{kSampleCount * kSampleCount * kSampleCount,
                                               kSampleCount * kSampleCount, kSampleCount, 1};

/// Cell offset (in cells, not bytes) of corner bitmask `mask`.
constexpr int corner_offset(int mask) noexcept {
  int off = 0;
  for (int k = 0; k < 4; ++k)
    if (mask & (1 << k)) off += kStride4D[k];
  return off;
}

/// Interpolated 4D lookup; writes out_channels values.
inline void lut4d_eval(std::uint8_t i0, std::uint8_t i1, std::uint8_t i2, std::uint8_t i3, const BlockLut& t,
                       std::uint8_t* out) noexcept {
  const std::array<int, 4> v{i0, i1, i2, i3};
  std::array<int, 4> f{};
  int base = 0;
  for (int k = 0; k < 4; ++k) {
    base += (v[k] >> 4) * kStride4D[k];
    f[k] = v[k] & 15;
  }
  const SimplexWeights s = simplex_weights(f);
  const int oc = t.out_channels;
  std::array<const std::uint8_t*, 5> e{};
  for (int k = 0; k < 5; ++k) e[k] = t.entries.data() + static_cast<std::size_t>(base + corner_offset(s.vertex[k])) * oc;
  for (int c = 0; c < oc; ++c) {
    int acc = 8;
    for (int k = 0; k < 5; ++k) acc += s.weight[k] * e[k][c];
    out[c] = static_cast<std::uint8_t>(acc >> 4);
  }
}

inline std::vector<std::uint8_t> lut4d_eval(std::uint8_t i0, std::uint8_t i1, std::uint8_t i2, std::uint8_t i3,
                                            const BlockLut& t) {
  std::vector<std::uint8_t> out(t.out_channels);
  lut4d_eval(i0, i1, i2, i3, t, out.data());
  return out;
}

// ---------------------------------------------------------------------------
// Stages

namespace detail {

/// V' plane of one branch: the RC lookup average over every N x N window.
inline QuantPlane rc_plane(const QuantPlane& padded, const BranchLut& b) {
  const int N = b.rc_size;
  const int H = padded.height() - N + 1, W = padded.width() - N + 1;
  std::vector<std::array<int, 256>> table(b.rc.size());
  for (std::size_t o = 0; o < b.rc.size(); ++o)
    for (int v = 0; v < 256; ++v) table[o][v] = lut1d_lookup(b.rc[o], v);
  const std::int64_t count = static_cast<std::int64_t>(N) * N;
  QuantPlane out(W, H);
  parallel_for(H, [&](int m0, int m1) {
    std::vector<std::int64_t> sum(W);
    for (int m = m0; m < m1; ++m) {
      std::fill(sum.begin(), sum.end(), 0);
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) {
          const auto& t = table[i * N + j];
          const std::uint8_t* src = padded.row(m + i) + j;
          for (int n = 0; n < W; ++n) sum[n] += t[src[n]];
        }
      for (int n = 0; n < W; ++n) out(m, n) = static_cast<std::uint8_t>(div_round(sum[n], count));
    }
  });
  return out;
}

/// Block outputs for an H x W site grid; the final stage writes the r x r
/// sub-pixel block of each site.
inline QuantPlane block_plane(const QuantPlane& v, const BlockLut& t, int H, int W, int r, bool final_stage) {
  const int oc = t.out_channels;
  QuantPlane out(final_stage ? W * r : W, final_stage ? H * r : H);
  parallel_for(H, [&](int m0, int m1) {
    std::vector<std::uint8_t> cell(oc);
    for (int m = m0; m < m1; ++m) {
      for (int n = 0; n < W; ++n) {
        if (t.kind == BlockKind::In1Out4) {
          const std::uint8_t* e = t.entries.data() + static_cast<std::size_t>(v(m, n)) * oc;
          std::copy(e, e + oc, cell.begin());
        } else {
          lut4d_eval(v(m, n), v(m, n + 1), v(m + 1, n), v(m + 1, n + 1), t, cell.data());
        }
        if (final_stage) {
          for (int k = 0; k < oc; ++k) out(m * r + k / r, n * r + k % r) = cell[k];
        } else {
          out(m, n) = cell[0];
        }
      }
    }
  });
  return out;
}

}  // namespace detail

/// Quantised mirror of the reference stage. Every (rotation, branch) result is
/// summed in wide integers and divided once, with round-half-up.
inline QuantPlane engine_stage(const QuantPlane& in, const std::vector<BranchLut>& branches, bool final_stage,
                               int scale, bool rotation_ensemble) {
  require(!in.empty(), ErrorCode::EmptyImage, "engine_stage: empty plane");
  require(!branches.empty(), ErrorCode::TopologyMismatch, "engine_stage: stage has no branches");
  const int rotations = rotation_ensemble ? 4 : 1;
  const int out_w = final_stage ? in.width() * scale : in.width();
  const int out_h = final_stage ? in.height() * scale : in.height();
  for (const auto& b : branches)
    require(b.block.out_channels == (final_stage ? scale * scale : 1), ErrorCode::TopologyMismatch,
            "engine_stage: block channels do not match the stage position");
  Plane<std::int32_t> acc(out_w, out_h);

  for (int k = 0; k < rotations; ++k) {
    const QuantPlane rot = rotate90(in, k);
    for (const auto& b : branches) {
      const int win = block_window(b.block.kind);
      const int margin = (std::max(b.rc_size, 1) - 1) + (win - 1);
      const QuantPlane padded = pad_replicate(rot, 0, 0, margin, margin);
      const QuantPlane v = b.rc_size > 0 ? detail::rc_plane(padded, b) : padded;
      const QuantPlane y = detail::block_plane(v, b.block, rot.height(), rot.width(), scale, final_stage);
      const QuantPlane back = rotate90(y, -k);
      for (std::size_t i = 0; i < acc.size(); ++i) acc.data()[i] += back.data()[i];
    }
  }
  const std::int64_t count = static_cast<std::int64_t>(rotations) * static_cast<std::int64_t>(branches.size());
  QuantPlane out(out_w, out_h);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = static_cast<std::uint8_t>(div_round(acc.data()[i], count));
  return out;
}

/// Full staged pipeline on one luma plane; output is r times larger.
inline QuantPlane engine_forward(const QuantPlane& in, const LutPack& pack) {
  QuantPlane x = in;
  for (std::size_t s = 0; s < pack.stages.size(); ++s)
    x = engine_stage(x, pack.stages[s], s + 1 == pack.stages.size(), pack.scale, pack.rotation_ensemble);
  return x;
}

/// RGB: luma through the LUTs, chroma by bicubic. Gray: luma only.
inline Image upscale(const Image& image, const LutPack& pack) {
  require(image.valid(), ErrorCode::InvalidArgument, "upscale: malformed image");
  require(image.width > 0 && image.height > 0, ErrorCode::EmptyImage, "upscale: empty image");
  require(image.colorspace != Colorspace::YCbCr, ErrorCode::WrongColorspace, "upscale expects RGB or Gray input");
  const int r = pack.scale;
  if (image.channels == 1) return gray_image(engine_forward(extract_channel(image, 0), pack));
  const Image ycc = rgb_to_ycbcr(image);
  std::vector<QuantPlane> planes;
  planes.push_back(engine_forward(extract_channel(ycc, 0), pack));
  for (int c = 1; c < 3; ++c)
    planes.push_back(resize_levels(extract_channel(ycc, c), image.width * r, image.height * r));
  return ycbcr_to_rgb(merge_channels(planes, Colorspace::YCbCr));
}

}  // namespace rclut
