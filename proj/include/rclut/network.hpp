#pragma once

// Reference network: cascaded stages of parallel branches (RC module followed
// by a conv block), rotation ensemble, inter-stage 8-bit simulation and a
// pixel-shuffle head. Forward and backward are written by hand and operate on
// a batch of equally sized planes.

#include <rclut/config.hpp>
#include <rclut/conv_block.hpp>
#include <rclut/imagecore.hpp>
#include <rclut/plane.hpp>
#include <rclut/random.hpp>
#include <rclut/rc_module.hpp>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace rclut {

template <class T>
struct BranchParams {
  std::optional<RcParams<T>> rc;
  ConvBlockParams<T> block;
  friend bool operator==(const BranchParams&, const BranchParams&) = default;
};

template <class T>
struct NetworkParams {
  std::vector<std::vector<BranchParams<T>>> stages;
  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

template <class T>
NetworkParams<T> init_network(const NetworkConfig& config, Rng& rng) {
  validate(config);
  NetworkParams<T> p;
  for (const auto& stage : config.stages) {
    auto& sp = p.stages.emplace_back();
    for (const auto& b : stage.branches) {
      BranchParams<T> bp;
      if (b.rc_size > 0) bp.rc = init_rc<T>(b.rc_size, b.rc_channels, rng);
      bp.block = init_block<T>(b, rng);
      sp.push_back(std::move(bp));
    }
  }
  return p;
}

/// Visits every parameter array in a fixed order with a stable name. Works on
/// const and mutable parameter sets alike.
template <class Params, class Fn>
void for_each_array(Params& params, Fn&& fn) {
  for (std::size_t s = 0; s < params.stages.size(); ++s) {
    for (std::size_t b = 0; b < params.stages[s].size(); ++b) {
      auto& bp = params.stages[s][b];
      const std::string prefix = "s" + std::to_string(s) + ".b" + std::to_string(b) + ".";
      if (bp.rc) {
        auto& rc = *bp.rc;
        const int off = rc.offsets();
        fn(prefix + "rc.up_weight", std::span(rc.up_weight), std::vector<int>{off, rc.channels});
        fn(prefix + "rc.up_bias", std::span(rc.up_bias), std::vector<int>{off, rc.channels});
        fn(prefix + "rc.down_weight", std::span(rc.down_weight), std::vector<int>{off, rc.channels});
        fn(prefix + "rc.down_bias", std::span(rc.down_bias), std::vector<int>{off});
      }
      for (std::size_t l = 0; l < bp.block.layers.size(); ++l) {
        auto& layer = bp.block.layers[l];
        const std::string ln = prefix + "block.l" + std::to_string(l) + ".";
        fn(ln + "weight", std::span(layer.weight), std::vector<int>{layer.inputs, layer.outputs});
        fn(ln + "bias", std::span(layer.bias), std::vector<int>{layer.outputs});
      }
    }
  }
}

template <class T>
NetworkParams<T> zeros_like(const NetworkParams<T>& p) {
  NetworkParams<T> g = p;
  for_each_array(g, [](const std::string&, std::span<T> a, const std::vector<int>&) {
    std::fill(a.begin(), a.end(), T(0));
  });
  return g;
}

template <class T>
std::size_t parameter_count(const NetworkParams<T>& p) {
  std::size_t n = 0;
  for_each_array(p, [&](const std::string&, std::span<const T> a, const std::vector<int>&) { n += a.size(); });
  return n;
}

// ---------------------------------------------------------------------------
// Pixel shuffle

/// Channel k of cell (h, w) lands at (h*r + k/r, w*r + k%r).
template <class T>
Plane<T> pixel_shuffle(const Tensor<T>& t, int r) {
  require(t.shape().size() == 3 && t.extent(2) == r * r, ErrorCode::ShapeMismatch,
          "pixel_shuffle needs r*r channels");
  const int H = t.extent(0), W = t.extent(1);
  Plane<T> out(W * r, H * r);
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w)
      for (int k = 0; k < r * r; ++k) out(h * r + k / r, w * r + k % r) = t(h, w, k);
  return out;
}

template <class T>
Tensor<T> pixel_unshuffle(const Plane<T>& p, int r) {
  require(p.width() % r == 0 && p.height() % r == 0, ErrorCode::ShapeMismatch,
          "pixel_unshuffle needs dimensions divisible by r");
  const int H = p.height() / r, W = p.width() / r;
  Tensor<T> t({H, W, r * r});
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w)
      for (int k = 0; k < r * r; ++k) t(h, w, k) = p(h * r + k / r, w * r + k % r);
  return t;
}

// ---------------------------------------------------------------------------
// Stages

template <class T>
struct BranchPass {
  std::vector<Plane<T>> padded;    // rotated, padded input per element
  std::vector<Plane<T>> block_in;  // RC output (or the padded input) per element
  BlockTape<T> tape;
  int out_h = 0, out_w = 0;        // per-element site grid in the rotated frame
};

template <class T>
struct StageTape {
  std::vector<BranchPass<T>> passes;  // index: rotation * branches + branch
  int in_h = 0, in_w = 0;
};

template <class T>
struct NetworkTape {
  std::vector<StageTape<T>> stages;
};

namespace detail {

template <class T>
void add_scaled(Plane<T>& acc, const Plane<T>& v) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc.data()[i] += v.data()[i];
}

}  // namespace detail

/// One stage over a batch. Each branch pads bottom/right by its margin (top-left
/// anchor), applies RC and the block; the final stage pixel-shuffles its head.
/// With the rotation ensemble the branch stack runs on all four rotations and
/// the results are rotated back. All (rotation, branch) results are averaged.
/// Non-final stages are rounded to 8-bit levels when quantisation is enabled.
template <class T>
std::vector<Plane<T>> stage_forward(const std::vector<Plane<T>>& inputs, const NetworkConfig& config,
                                    std::size_t stage, const NetworkParams<T>& params,
                                    StageTape<T>* tape = nullptr) {
  require(!inputs.empty(), ErrorCode::InvalidArgument, "empty batch");
  const auto& sc = config.stages.at(stage);
  const bool final_stage = config.is_final(stage);
  const int r = config.scale;
  const int rotations = config.rotation_ensemble ? 4 : 1;
  const int branches = static_cast<int>(sc.branches.size());
  const int H = inputs[0].height(), W = inputs[0].width();
  for (const auto& x : inputs)
    require(x.width() == W && x.height() == H, ErrorCode::ShapeMismatch, "batch planes differ in size");

  const int out_w = final_stage ? W * r : W, out_h = final_stage ? H * r : H;
  std::vector<Plane<T>> outputs(inputs.size(), Plane<T>(out_w, out_h));
  if (tape) {
    tape->passes.assign(static_cast<std::size_t>(rotations) * branches, {});
    tape->in_h = H;
    tape->in_w = W;
  }

  for (int k = 0; k < rotations; ++k) {
    std::vector<Plane<T>> rotated;
    rotated.reserve(inputs.size());
    for (const auto& x : inputs) rotated.push_back(rotate90(x, k));
    const int hk = rotated[0].height(), wk = rotated[0].width();

    for (int b = 0; b < branches; ++b) {
      const auto& bc = sc.branches[b];
      const auto& bp = params.stages.at(stage).at(b);
      const int margin = bc.margin();
      BranchPass<T> local;
      BranchPass<T>& pass = tape ? tape->passes[k * branches + b] : local;
      pass.out_h = hk;
      pass.out_w = wk;

      std::vector<T> rows;
      for (const auto& x : rotated) {
        Plane<T> padded = pad_replicate(x, 0, 0, margin, margin);
        Plane<T> block_in = bp.rc ? rc_forward(padded, *bp.rc) : padded;
        gather_block_rows(block_in, bc.block, rows);
        if (tape) {
          pass.padded.push_back(std::move(padded));
          pass.block_in.push_back(std::move(block_in));
        }
      }
      const std::size_t sites = static_cast<std::size_t>(hk) * wk;
      const int head = bp.block.head_channels;
      std::vector<T> out(sites * inputs.size() * head);
      block_forward_rows<T>(bp.block, rows, sites * inputs.size(), out, tape ? &pass.tape : nullptr);

      for (std::size_t e = 0; e < inputs.size(); ++e) {
        std::vector<T> cell(out.begin() + e * sites * head, out.begin() + (e + 1) * sites * head);
        Plane<T> y = final_stage ? pixel_shuffle(Tensor<T>({hk, wk, head}, std::move(cell)), r)
                                 : Plane<T>(wk, hk, std::move(cell));
        detail::add_scaled(outputs[e], rotate90(y, -k));
      }
    }
  }

  const T count = static_cast<T>(rotations * branches);
  const bool quantize = !final_stage && config.quantize_between_stages;
  for (auto& o : outputs)
    for (T& v : o.data()) {
      v /= count;
      if (quantize) v = quantize_unit(v);
    }
  return outputs;
}

/// Backward of stage_forward. Quantisation uses a straight-through gradient.
/// Returns the input gradients when `want_input_grad` is set.
template <class T>
std::vector<Plane<T>> stage_backward(const StageTape<T>& tape, const NetworkConfig& config, std::size_t stage,
                                     const NetworkParams<T>& params, const std::vector<Plane<T>>& upstream,
                                     NetworkParams<T>& grads, bool want_input_grad) {
  const auto& sc = config.stages.at(stage);
  const bool final_stage = config.is_final(stage);
  const int r = config.scale;
  const int rotations = config.rotation_ensemble ? 4 : 1;
  const int branches = static_cast<int>(sc.branches.size());
  const T count = static_cast<T>(rotations * branches);
  const std::size_t batch = upstream.size();

  std::vector<Plane<T>> input_grads;
  if (want_input_grad) input_grads.assign(batch, Plane<T>(tape.in_w, tape.in_h));

  for (int k = 0; k < rotations; ++k) {
    for (int b = 0; b < branches; ++b) {
      const auto& bc = sc.branches[b];
      const auto& bp = params.stages.at(stage).at(b);
      auto& gp = grads.stages.at(stage).at(b);
      const BranchPass<T>& pass = tape.passes.at(k * branches + b);
      const int hk = pass.out_h, wk = pass.out_w;
      const int head = bp.block.head_channels;
      const std::size_t sites = static_cast<std::size_t>(hk) * wk;

      std::vector<T> dout(sites * batch * head);
      for (std::size_t e = 0; e < batch; ++e) {
        Plane<T> g = rotate90(upstream[e], k);
        for (T& v : g.data()) v /= count;
        if (final_stage) {
          Tensor<T> t = pixel_unshuffle(g, r);
          std::copy(t.data().begin(), t.data().end(), dout.begin() + e * sites * head);
        } else {
          std::copy(g.data().begin(), g.data().end(), dout.begin() + e * sites * head);
        }
      }

      const bool need_block_in = want_input_grad || bp.rc.has_value();
      std::vector<T> din(need_block_in ? sites * batch * bp.block.inputs() : 0);
      block_backward_rows<T>(bp.block, pass.tape, dout, gp.block, din);
      if (!need_block_in) continue;

      std::optional<RcAffineGrad<T>> ag;
      if (bp.rc) ag.emplace(bp.rc->offsets());
      for (std::size_t e = 0; e < batch; ++e) {
        Plane<T> d_block_in(pass.block_in[e].width(), pass.block_in[e].height());
        scatter_block_rows(din.data() + e * sites * bp.block.inputs(), bc.block, d_block_in);
        Plane<T> d_padded(pass.padded[e].width(), pass.padded[e].height());
        if (bp.rc) {
          rc_backward_accumulate(pass.padded[e], *bp.rc, d_block_in, d_padded, *ag);
        } else {
          d_padded = std::move(d_block_in);
        }
        if (want_input_grad) {
          const int margin = bc.margin();
          Plane<T> d_rot = pad_replicate_backward(d_padded, 0, 0, margin, margin);
          detail::add_scaled(input_grads[e], rotate90(d_rot, -k));
        }
      }
      if (bp.rc) rc_expand_grads(*bp.rc, *ag, *gp.rc);
    }
  }
  return input_grads;
}

/// Batched forward through all stages; the result is clamped to [0, 1].
template <class T>
std::vector<Plane<T>> network_forward_batch(const std::vector<Plane<T>>& inputs, const NetworkConfig& config,
                                            const NetworkParams<T>& params, NetworkTape<T>* tape = nullptr) {
  if (tape) tape->stages.assign(config.stages.size(), {});
  std::vector<Plane<T>> x = inputs;
  for (std::size_t s = 0; s < config.stages.size(); ++s)
    x = stage_forward(x, config, s, params, tape ? &tape->stages[s] : nullptr);
  for (auto& p : x)
    for (T& v : p.data()) v = std::min(std::max(v, T(0)), T(1));
  return x;
}

/// Accumulates parameter gradients into `grads`; returns input gradients when
/// requested.
template <class T>
std::vector<Plane<T>> network_backward(const NetworkTape<T>& tape, const NetworkConfig& config,
                                       const NetworkParams<T>& params, std::vector<Plane<T>> upstream,
                                       NetworkParams<T>& grads, bool want_input_grad = false) {
  for (std::size_t s = config.stages.size(); s-- > 0;)
    upstream = stage_backward(tape.stages[s], config, s, params, upstream, grads, s > 0 || want_input_grad);
  return upstream;
}

template <class T>
Plane<T> network_forward(const Plane<T>& input, const NetworkConfig& config, const NetworkParams<T>& params) {
  return network_forward_batch(std::vector<Plane<T>>{input}, config, params).front();
}

}  // namespace rclut
