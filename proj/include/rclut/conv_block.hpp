#pragma once

// Small per-site MLP that follows each RC module. In4* kinds mix a 2x2 window,
// In1Out4 maps a single pixel. Layers: `hidden_depth` rectified layers of
// width `hidden_width` (the first one mixes the inputs), then an affine head
// whose outputs are clamped to [0, 1]. With depth 0 the block is one affine map.
//
// Every row is evaluated with a fixed accumulation order that does not depend
// on how many rows are processed together, so a site evaluated during LUT
// transfer and the same site evaluated inside a network pass agree bit for bit.

#include <rclut/config.hpp>
#include <rclut/error.hpp>
#include <rclut/plane.hpp>
#include <rclut/random.hpp>

#include <cmath>
#include <span>
#include <vector>

namespace rclut {

template <class T>
struct DenseLayer {
  int inputs = 0;
  int outputs = 0;
  std::vector<T> weight;  // [inputs][outputs]
  std::vector<T> bias;    // [outputs]

  DenseLayer() = default;
  DenseLayer(int in, int out)
      : inputs(in), outputs(out), weight(static_cast<std::size_t>(in) * out), bias(out) {}

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

template <class T>
struct ConvBlockParams {
  BlockKind kind = BlockKind::In4Out1;
  int hidden_width = 64;
  int hidden_depth = 3;
  int head_channels = 1;
  std::vector<DenseLayer<T>> layers;

  ConvBlockParams() = default;
  ConvBlockParams(BlockKind k, int width, int depth, int head)
      : kind(k), hidden_width(width), hidden_depth(depth), head_channels(head) {
    require(width >= 1 && depth >= 0 && head >= 1, ErrorCode::InvalidArgument, "invalid block shape");
    require(k != BlockKind::In4Out1 || head == 1, ErrorCode::InvalidArgument, "In4Out1 emits one value");
    int in = block_inputs(k);
    for (int l = 0; l < depth; ++l) {
      layers.emplace_back(in, width);
      in = width;
    }
    layers.emplace_back(in, head);
  }

  int inputs() const noexcept { return block_inputs(kind); }
  int window() const noexcept { return block_window(kind); }

  friend bool operator==(const ConvBlockParams&, const ConvBlockParams&) = default;
};

/// Activations recorded for backward, one row per site.
template <class T>
struct BlockTape {
  std::size_t rows = 0;
  std::vector<T> input;                    // rows x inputs
  std::vector<std::vector<T>> activations; // per hidden layer: rows x width (post-ReLU)
  std::vector<T> head;                     // rows x head, pre-clamp
};

namespace detail {

template <class T>
inline void dense_row(const DenseLayer<T>& layer, const T* x, T* y) noexcept {
  const int out = layer.outputs;
  std::copy(layer.bias.begin(), layer.bias.end(), y);
  for (int i = 0; i < layer.inputs; ++i) {
    const T xi = x[i];
    if (xi == T(0)) continue;
    const T* w = layer.weight.data() + static_cast<std::size_t>(i) * out;
    for (int o = 0; o < out; ++o) y[o] += xi * w[o];
  }
}

}  // namespace detail

/// Evaluates `rows` sites. `input` holds rows x inputs values; `output`
/// receives rows x head clamped values. If `tape` is non-null the
/// intermediate activations are recorded.
template <class T>
void block_forward_rows(const ConvBlockParams<T>& p, std::span<const T> input, std::size_t rows,
                        std::span<T> output, BlockTape<T>* tape = nullptr) {
  const int in0 = p.inputs();
  const int head = p.head_channels;
  require(input.size() == rows * in0 && output.size() == rows * head, ErrorCode::ShapeMismatch,
          "block_forward_rows: buffer sizes do not match");
  const std::size_t depth = p.layers.size() - 1;
  if (tape) {
    tape->rows = rows;
    tape->input.assign(input.begin(), input.end());
    tape->activations.assign(depth, {});
    for (std::size_t l = 0; l < depth; ++l) tape->activations[l].resize(rows * p.hidden_width);
    tape->head.resize(rows * head);
  }
  std::vector<T> a(p.hidden_width), b(p.hidden_width), z(head);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = input.data() + r * in0;
    for (std::size_t l = 0; l < depth; ++l) {
      detail::dense_row(p.layers[l], x, b.data());
      for (T& v : b) v = v > T(0) ? v : T(0);
      if (tape) std::copy(b.begin(), b.end(), tape->activations[l].begin() + r * p.hidden_width);
      std::swap(a, b);
      x = a.data();
    }
    detail::dense_row(p.layers.back(), x, z.data());
    if (tape) std::copy(z.begin(), z.end(), tape->head.begin() + r * head);
    for (int c = 0; c < head; ++c) output[r * head + c] = std::min(std::max(z[c], T(0)), T(1));
  }
}

/// Backward through the rows recorded in `tape`. `upstream` is rows x head.
/// Parameter gradients are accumulated into `grads` in row order; if
/// `input_grad` is non-empty it receives rows x inputs values.
template <class T>
void block_backward_rows(const ConvBlockParams<T>& p, const BlockTape<T>& tape, std::span<const T> upstream,
                         ConvBlockParams<T>& grads, std::span<T> input_grad) {
  const int in0 = p.inputs();
  const int head = p.head_channels;
  const std::size_t rows = tape.rows;
  require(upstream.size() == rows * head, ErrorCode::ShapeMismatch, "block_backward_rows: upstream size");
  require(input_grad.empty() || input_grad.size() == rows * in0, ErrorCode::ShapeMismatch,
          "block_backward_rows: input_grad size");
  const std::size_t L = p.layers.size();

  // Transposed weights so the input-gradient product runs over contiguous memory.
  std::vector<std::vector<T>> wt(L);
  for (std::size_t l = 0; l < L; ++l) {
    const auto& layer = p.layers[l];
    wt[l].resize(layer.weight.size());
    for (int i = 0; i < layer.inputs; ++i)
      for (int o = 0; o < layer.outputs; ++o)
        wt[l][static_cast<std::size_t>(o) * layer.inputs + i] = layer.weight[static_cast<std::size_t>(i) * layer.outputs + o];
  }

  const int widest = std::max({p.hidden_width, head, in0});
  std::vector<T> dz(widest), da(widest);
  for (std::size_t r = 0; r < rows; ++r) {
    for (int c = 0; c < head; ++c) {
      const T zc = tape.head[r * head + c];
      dz[c] = (zc > T(0) && zc < T(1)) ? upstream[r * head + c] : T(0);
    }
    for (std::size_t l = L; l-- > 0;) {
      const auto& layer = p.layers[l];
      auto& gl = grads.layers[l];
      const T* a_in = l == 0 ? tape.input.data() + r * in0 : tape.activations[l - 1].data() + r * p.hidden_width;
      for (int o = 0; o < layer.outputs; ++o) gl.bias[o] += dz[o];
      for (int i = 0; i < layer.inputs; ++i) {
        const T ai = a_in[i];
        if (ai == T(0)) continue;
        T* gw = gl.weight.data() + static_cast<std::size_t>(i) * layer.outputs;
        for (int o = 0; o < layer.outputs; ++o) gw[o] += ai * dz[o];
      }
      if (l == 0 && input_grad.empty()) break;
      std::fill(da.begin(), da.begin() + layer.inputs, T(0));
      for (int o = 0; o < layer.outputs; ++o) {
        const T g = dz[o];
        if (g == T(0)) continue;
        const T* w = wt[l].data() + static_cast<std::size_t>(o) * layer.inputs;
        for (int i = 0; i < layer.inputs; ++i) da[i] += g * w[i];
      }
      if (l == 0) {
        std::copy(da.begin(), da.begin() + in0, input_grad.begin() + r * in0);
      } else {
        for (int i = 0; i < layer.inputs; ++i) dz[i] = a_in[i] > T(0) ? da[i] : T(0);
      }
    }
  }
}

/// Gathers the block input rows from a plane: In4 kinds read the 2x2 window
/// (v00, v01, v10, v11) anchored at each site, In1Out4 reads the site itself.
template <class T>
void gather_block_rows(const Plane<T>& plane, BlockKind kind, std::vector<T>& rows) {
  const int win = block_window(kind);
  const int H = plane.height() - win + 1, W = plane.width() - win + 1;
  const std::size_t start = rows.size();
  rows.resize(start + static_cast<std::size_t>(H) * W * block_inputs(kind));
  T* out = rows.data() + start;
  for (int m = 0; m < H; ++m) {
    for (int n = 0; n < W; ++n) {
      if (win == 1) {
        *out++ = plane(m, n);
      } else {
        *out++ = plane(m, n);
        *out++ = plane(m, n + 1);
        *out++ = plane(m + 1, n);
        *out++ = plane(m + 1, n + 1);
      }
    }
  }
}

/// Adjoint of gather_block_rows for one plane whose rows start at `rows`.
template <class T>
void scatter_block_rows(const T* rows, BlockKind kind, Plane<T>& grad) {
  const int win = block_window(kind);
  const int H = grad.height() - win + 1, W = grad.width() - win + 1;
  for (int m = 0; m < H; ++m) {
    for (int n = 0; n < W; ++n) {
      if (win == 1) {
        grad(m, n) += *rows++;
      } else {
        grad(m, n) += *rows++;
        grad(m, n + 1) += *rows++;
        grad(m + 1, n) += *rows++;
        grad(m + 1, n + 1) += *rows++;
      }
    }
  }
}

/// Plane-level forward: output tensor (H_out, W_out, head). In4 kinds shrink
/// each axis by one.
template <class T>
Tensor<T> convblock_forward(const Plane<T>& plane, const ConvBlockParams<T>& p) {
  const int win = p.window();
  require(plane.width() >= win && plane.height() >= win, ErrorCode::ShapeMismatch,
          "input smaller than the block window");
  std::vector<T> rows;
  gather_block_rows(plane, p.kind, rows);
  const int H = plane.height() - win + 1, W = plane.width() - win + 1;
  Tensor<T> out({H, W, p.head_channels});
  block_forward_rows<T>(p, rows, static_cast<std::size_t>(H) * W, out.data());
  return out;
}

template <class T>
ConvBlockParams<T> zeros_like(const ConvBlockParams<T>& p) {
  ConvBlockParams<T> g = p;
  for (auto& l : g.layers) {
    std::fill(l.weight.begin(), l.weight.end(), T(0));
    std::fill(l.bias.begin(), l.bias.end(), T(0));
  }
  return g;
}

template <class T>
struct BlockBackwardResult {
  Plane<T> input_grad;
  ConvBlockParams<T> param_grads;
};

template <class T>
BlockBackwardResult<T> convblock_backward(const Plane<T>& plane, const ConvBlockParams<T>& p,
                                          const Tensor<T>& upstream) {
  const int win = p.window();
  const int H = plane.height() - win + 1, W = plane.width() - win + 1;
  require(upstream.shape() == std::vector<int>{H, W, p.head_channels}, ErrorCode::ShapeMismatch,
          "convblock_backward: upstream shape");
  std::vector<T> rows;
  gather_block_rows(plane, p.kind, rows);
  const std::size_t n = static_cast<std::size_t>(H) * W;
  BlockTape<T> tape;
  std::vector<T> out(n * p.head_channels);
  block_forward_rows<T>(p, rows, n, out, &tape);
  BlockBackwardResult<T> r{Plane<T>(plane.width(), plane.height()), zeros_like(p)};
  std::vector<T> dx(n * p.inputs());
  block_backward_rows<T>(p, tape, upstream.data(), r.param_grads, dx);
  scatter_block_rows(dx.data(), p.kind, r.input_grad);
  return r;
}

/// Fan-in scaled uniform initialisation. The head starts small around mid-gray
/// so few outputs begin in the clamped (zero-gradient) region.
template <class T>
ConvBlockParams<T> init_block(const BranchConfig& b, Rng& rng) {
  ConvBlockParams<T> p(b.block, b.hidden_width, b.hidden_depth, b.head_channels);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& layer = p.layers[l];
    const bool last = l + 1 == p.layers.size();
    const double bound = last ? 0.1 * std::sqrt(1.0 / layer.inputs) : std::sqrt(6.0 / layer.inputs);
    for (T& w : layer.weight) w = static_cast<T>(rng.uniform(-bound, bound));
    std::fill(layer.bias.begin(), layer.bias.end(), last ? T(0.5) : T(0));
  }
  return p;
}

}  // namespace rclut
