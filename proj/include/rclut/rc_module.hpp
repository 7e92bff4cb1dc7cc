#pragma once

// Reconstructed convolution: every offset (i, j) of an N x N window owns a
// private 1 -> C -> 1 linear map; the clamped per-offset responses are
// averaged. Because the map has no interior nonlinearity it collapses to a
// scalar affine response a*x + c per offset, which is what forward evaluation
// and LUT transfer both use.

#include <rclut/error.hpp>
#include <rclut/plane.hpp>
#include <rclut/random.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

namespace rclut {

template <class T>
struct RcParams {
  int size = 0;      // N
  int channels = 0;  // C
  std::vector<T> up_weight;    // [N*N][C]
  std::vector<T> up_bias;      // [N*N][C]
  std::vector<T> down_weight;  // [N*N][C]
  std::vector<T> down_bias;    // [N*N]

  RcParams() = default;
  RcParams(int n, int c)
      : size(n),
        channels(c),
        up_weight(static_cast<std::size_t>(n) * n * c),
        up_bias(up_weight.size()),
        down_weight(up_weight.size()),
        down_bias(static_cast<std::size_t>(n) * n) {
    require(n >= 1 && c >= 1, ErrorCode::InvalidArgument, "RC module needs N >= 1 and C >= 1");
  }

  int offsets() const noexcept { return size * size; }

  T slope(int o) const noexcept {
    T a = 0;
    for (int c = 0; c < channels; ++c) a += down_weight[o * channels + c] * up_weight[o * channels + c];
    return a;
  }
  T intercept(int o) const noexcept {
    T b = 0;
    for (int c = 0; c < channels; ++c) b += down_weight[o * channels + c] * up_bias[o * channels + c];
    return b + down_bias[o];
  }

  friend bool operator==(const RcParams&, const RcParams&) = default;
};

/// Per-offset collapsed affine maps.
template <class T>
struct RcAffine {
  std::vector<T> slope, intercept;

  explicit RcAffine(const RcParams<T>& p) : slope(p.offsets()), intercept(p.offsets()) {
    for (int o = 0; o < p.offsets(); ++o) {
      slope[o] = p.slope(o);
      intercept[o] = p.intercept(o);
    }
  }
};

template <class T>
inline T rc_clamp(T z) noexcept {
  return std::min(std::max(z, T(0)), T(1));
}

/// Clamped response of offset `o` to input value x; this is the value a 1D
/// LUT caches.
template <class T>
inline T rc_offset_response(const RcParams<T>& p, int o, T x) noexcept {
  return rc_clamp(p.slope(o) * x + p.intercept(o));
}

/// Output (m, n) averages the clamped responses over the window anchored at
/// its top-left corner; the output is N-1 smaller per axis.
template <class T>
Plane<T> rc_forward(const Plane<T>& padded, const RcParams<T>& p) {
  const int N = p.size;
  require(padded.width() >= N && padded.height() >= N, ErrorCode::ShapeMismatch,
          "plane smaller than the RC window");
  const RcAffine<T> aff(p);
  const int H = padded.height() - N + 1, W = padded.width() - N + 1;
  Plane<T> out(W, H);
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) {
      const int o = i * N + j;
      const T a = aff.slope[o], c = aff.intercept[o];
      for (int m = 0; m < H; ++m) {
        const T* src = padded.row(m + i) + j;
        T* dst = out.row(m);
        for (int n = 0; n < W; ++n) dst[n] += rc_clamp(a * src[n] + c);
      }
    }
  }
  const T count = static_cast<T>(N * N);
  for (T& v : out.data()) v /= count;
  return out;
}

/// Gradients of the collapsed maps, accumulated over calls.
template <class T>
struct RcAffineGrad {
  std::vector<T> slope, intercept;
  explicit RcAffineGrad(int offsets) : slope(offsets, T(0)), intercept(offsets, T(0)) {}
};

/// Accumulates input and affine gradients for one plane. The clamp passes a
/// unit gradient strictly inside (0, 1) and zero elsewhere.
template <class T>
void rc_backward_accumulate(const Plane<T>& padded, const RcParams<T>& p, const Plane<T>& upstream,
                            Plane<T>& input_grad, RcAffineGrad<T>& affine_grad) {
  const int N = p.size;
  const int H = padded.height() - N + 1, W = padded.width() - N + 1;
  require(upstream.width() == W && upstream.height() == H && input_grad.same_shape(padded),
          ErrorCode::ShapeMismatch, "rc_backward: shapes do not match the forward pass");
  const RcAffine<T> aff(p);
  const T count = static_cast<T>(N * N);
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) {
      const int o = i * N + j;
      const T a = aff.slope[o], c = aff.intercept[o];
      T da = 0, dc = 0;
      for (int m = 0; m < H; ++m) {
        const T* src = padded.row(m + i) + j;
        T* dx = input_grad.row(m + i) + j;
        const T* g = upstream.row(m);
        for (int n = 0; n < W; ++n) {
          const T z = a * src[n] + c;
          if (z > T(0) && z < T(1)) {
            const T gz = g[n] / count;
            dx[n] += gz * a;
            da += gz * src[n];
            dc += gz;
          }
        }
      }
      affine_grad.slope[o] += da;
      affine_grad.intercept[o] += dc;
    }
  }
}

/// Chain rule from the collapsed maps back to W, b, W', b'.
template <class T>
void rc_expand_grads(const RcParams<T>& p, const RcAffineGrad<T>& ag, RcParams<T>& grads) {
  const int C = p.channels;
  for (int o = 0; o < p.offsets(); ++o) {
    const T da = ag.slope[o], dc = ag.intercept[o];
    for (int c = 0; c < C; ++c) {
      const std::size_t k = static_cast<std::size_t>(o) * C + c;
      grads.up_weight[k] += p.down_weight[k] * da;
      grads.down_weight[k] += p.up_weight[k] * da + p.up_bias[k] * dc;
      grads.up_bias[k] += p.down_weight[k] * dc;
    }
    grads.down_bias[o] += dc;
  }
}

template <class T>
struct RcBackwardResult {
  Plane<T> input_grad;
  RcParams<T> param_grads;
};

template <class T>
RcBackwardResult<T> rc_backward(const Plane<T>& padded, const RcParams<T>& p, const Plane<T>& upstream) {
  RcBackwardResult<T> r{Plane<T>(padded.width(), padded.height()), RcParams<T>(p.size, p.channels)};
  RcAffineGrad<T> ag(p.offsets());
  rc_backward_accumulate(padded, p, upstream, r.input_grad, ag);
  rc_expand_grads(p, ag, r.param_grads);
  return r;
}

/// Random internal parameterisation whose collapsed map is the identity
/// (a = 1, c = 0) at every offset, so an untrained module is a box filter.
template <class T>
RcParams<T> init_rc(int n, int c, Rng& rng) {
  RcParams<T> p(n, c);
  for (int o = 0; o < p.offsets(); ++o) {
    double norm = 0;
    for (int k = 0; k < c; ++k) {
      const std::size_t idx = static_cast<std::size_t>(o) * c + k;
      p.up_weight[idx] = static_cast<T>(rng.uniform(-1.0, 1.0));
      p.up_bias[idx] = static_cast<T>(rng.uniform(-0.1, 0.1));
      norm += static_cast<double>(p.up_weight[idx]) * p.up_weight[idx];
    }
    double bias_dot = 0;
    for (int k = 0; k < c; ++k) {
      const std::size_t idx = static_cast<std::size_t>(o) * c + k;
      p.down_weight[idx] = static_cast<T>(p.up_weight[idx] / norm);
      bias_dot += static_cast<double>(p.down_weight[idx]) * p.up_bias[idx];
    }
    p.down_bias[o] = static_cast<T>(-bias_dot);
  }
  return p;
}

}  // namespace rclut
