#pragma once

// LUT-aware finetuning. Table entries become trainable floats in [0, 1]; the
// forward pass follows the integer engine (same indexing, same simplex, same
// rotation/branch averaging) without its intermediate rounding, and every
// re-indexed value passes gradients straight through its quantisation.
// Entries are rounded back to 8 bits at the end.

#include <rclut/error.hpp>
#include <rclut/imagecore.hpp>
#include <rclut/lutengine.hpp>
#include <rclut/lutpack.hpp>
#include <rclut/plane.hpp>
#include <rclut/random.hpp>
#include <rclut/trainer.hpp>

#include <bit>
#include <cmath>
#include <vector>

namespace rclut {

struct FloatBranch {
  int rc_size = 0;
  std::vector<std::vector<float>> rc;  // per offset, 17 or 256 unit values
  BlockKind kind = BlockKind::In4Out1;
  int out_channels = 1;
  std::vector<float> block;  // same layout as BlockLut::entries
};

struct FloatPack {
  int scale = 4;
  bool rotation_ensemble = true;
  std::vector<std::vector<FloatBranch>> stages;
};

inline FloatPack to_float_pack(const LutPack& p) {
  FloatPack f;
  f.scale = p.scale;
  f.rotation_ensemble = p.rotation_ensemble;
  for (const auto& s : p.stages) {
    auto& fs = f.stages.emplace_back();
    for (const auto& b : s) {
      FloatBranch fb;
      fb.rc_size = b.rc_size;
      for (const auto& t : b.rc) {
        auto& e = fb.rc.emplace_back(t.entries.size());
        std::transform(t.entries.begin(), t.entries.end(), e.begin(), level_to_unit<float>);
      }
      fb.kind = b.block.kind;
      fb.out_channels = b.block.out_channels;
      fb.block.resize(b.block.entries.size());
      std::transform(b.block.entries.begin(), b.block.entries.end(), fb.block.begin(), level_to_unit<float>);
      fs.push_back(std::move(fb));
    }
  }
  return f;
}

inline LutPack to_lut_pack(const FloatPack& f) {
  LutPack p;
  p.scale = f.scale;
  p.rotation_ensemble = f.rotation_ensemble;
  for (const auto& s : f.stages) {
    auto& ps = p.stages.emplace_back();
    for (const auto& fb : s) {
      BranchLut b;
      b.rc_size = fb.rc_size;
      for (std::size_t o = 0; o < fb.rc.size(); ++o) {
        Lut1D t{static_cast<int>(o), std::vector<std::uint8_t>(fb.rc[o].size())};
        std::transform(fb.rc[o].begin(), fb.rc[o].end(), t.entries.begin(), unit_to_level<float>);
        b.rc.push_back(std::move(t));
      }
      b.block.kind = fb.kind;
      b.block.out_channels = fb.out_channels;
      b.block.entries.resize(fb.block.size());
      std::transform(fb.block.begin(), fb.block.end(), b.block.entries.begin(), unit_to_level<float>);
      ps.push_back(std::move(b));
    }
  }
  return p;
}

inline FloatPack zeros_like(const FloatPack& f) {
  FloatPack g = f;
  for (auto& s : g.stages)
    for (auto& b : s) {
      for (auto& t : b.rc) std::fill(t.begin(), t.end(), 0.0f);
      std::fill(b.block.begin(), b.block.end(), 0.0f);
    }
  return g;
}

// ---------------------------------------------------------------------------
// Differentiable lookups

/// Linear interpolation of a 1D table at integer level v (unit-valued result).
inline float lut1d_interp(const std::vector<float>& e, int v) noexcept {
  if (e.size() == kFullCount) return e[v];
  const int j = v >> 4, f = v & 15;
  if (f == 0) return e[j];
  return (static_cast<float>(16 - f) * e[j] + static_cast<float>(f) * e[j + 1]) / 16.0f;
}

/// Adds upstream * interpolation weight to the entries that produced
/// lut1d_interp(e, v); returns the derivative of the lookup with respect to
/// its input in unit range (a straight-through slope for full tables).
inline float lut1d_interp_backward(const std::vector<float>& e, int v, float upstream, std::vector<float>& grad) {
  if (e.size() == kFullCount) {
    grad[v] += upstream;
    const int hi = std::min(v + 1, 255), lo = hi - 1;
    return 255.0f * (e[hi] - e[lo]);
  }
  const int j = v >> 4, f = v & 15;
  grad[j] += upstream * static_cast<float>(16 - f) / 16.0f;
  if (f != 0) grad[j + 1] += upstream * static_cast<float>(f) / 16.0f;
  return 255.0f * (e[j + 1] - e[j]) / 16.0f;
}

namespace detail {

struct Cell4D {
  int base = 0;
  SimplexWeights s;
};

inline Cell4D cell4d(const std::array<int, 4>& v) {
  Cell4D c;
  std::array<int, 4> f{};
  for (int k = 0; k < 4; ++k) {
    c.base += (v[k] >> 4) * kStride4D[k];
    f[k] = v[k] & 15;
  }
  c.s = simplex_weights(f);
  return c;
}

inline int vertex_cell(const Cell4D& c, int k) { return c.base + corner_offset(c.s.vertex[k]); }

/// Float 4D lookup of every channel.
inline void lut4d_interp(const std::vector<float>& e, int oc, const std::array<int, 4>& v, float* out) {
  const Cell4D c = cell4d(v);
  for (int ch = 0; ch < oc; ++ch) out[ch] = 0.0f;
  for (int k = 0; k < 5; ++k) {
    if (c.s.weight[k] == 0) continue;
    const float w = static_cast<float>(c.s.weight[k]) / 16.0f;
    const float* src = e.data() + static_cast<std::size_t>(vertex_cell(c, k)) * oc;
    for (int ch = 0; ch < oc; ++ch) out[ch] += w * src[ch];
  }
}

/// Entry gradients plus the unit-range input gradients of the four indices.
inline std::array<float, 4> lut4d_interp_backward(const std::vector<float>& e, int oc, const std::array<int, 4>& v,
                                                  const float* upstream, std::vector<float>& grad) {
  const Cell4D c = cell4d(v);
  for (int k = 0; k < 5; ++k) {
    if (c.s.weight[k] == 0) continue;
    const float w = static_cast<float>(c.s.weight[k]) / 16.0f;
    float* dst = grad.data() + static_cast<std::size_t>(vertex_cell(c, k)) * oc;
    for (int ch = 0; ch < oc; ++ch) dst[ch] += w * upstream[ch];
  }
  std::array<float, 4> dv{};
  for (int k = 0; k < 4; ++k) {
    const int axis = std::countr_zero(static_cast<unsigned>(c.s.vertex[k + 1] ^ c.s.vertex[k]));
    const float* lo = e.data() + static_cast<std::size_t>(vertex_cell(c, k)) * oc;
    const float* hi = e.data() + static_cast<std::size_t>(vertex_cell(c, k + 1)) * oc;
    float d = 0;
    for (int ch = 0; ch < oc; ++ch) d += upstream[ch] * (hi[ch] - lo[ch]);
    dv[axis] = 255.0f * d / 16.0f;
  }
  return dv;
}

struct FloatPass {
  Plane<int> padded;  // levels
  Plane<int> v;       // block input levels
};

struct FloatStageTape {
  Plane<int> input;
  std::vector<FloatPass> passes;  // rotation * branches + branch
};

inline int unit_level(float u) { return unit_to_level(u); }

}  // namespace detail

/// Float stage on integer input levels; returns unit-range outputs.
inline FloatPlane float_stage_forward(const Plane<int>& in, const std::vector<FloatBranch>& branches, bool final_stage,
                                      int r, bool ensemble, detail::FloatStageTape* tape) {
  const int rotations = ensemble ? 4 : 1;
  const int B = static_cast<int>(branches.size());
  FloatPlane acc(final_stage ? in.width() * r : in.width(), final_stage ? in.height() * r : in.height());
  if (tape) {
    tape->input = in;
    tape->passes.assign(static_cast<std::size_t>(rotations) * B, {});
  }
  for (int k = 0; k < rotations; ++k) {
    const Plane<int> rot = rotate90(in, k);
    const int H = rot.height(), W = rot.width();
    for (int b = 0; b < B; ++b) {
      const auto& br = branches[b];
      const int win = block_window(br.kind);
      const int margin = (std::max(br.rc_size, 1) - 1) + (win - 1);
      Plane<int> padded = pad_replicate(rot, 0, 0, margin, margin);
      Plane<int> v;
      if (br.rc_size > 0) {
        const int N = br.rc_size;
        v = Plane<int>(padded.width() - N + 1, padded.height() - N + 1);
        for (int m = 0; m < v.height(); ++m)
          for (int n = 0; n < v.width(); ++n) {
            float s = 0;
            for (int i = 0; i < N; ++i)
              for (int j = 0; j < N; ++j) s += lut1d_interp(br.rc[i * N + j], padded(m + i, n + j));
            v(m, n) = detail::unit_level(s / static_cast<float>(N * N));
          }
      } else {
        v = padded;
      }
      const int oc = br.out_channels;
      Plane<float> y(final_stage ? W * r : W, final_stage ? H * r : H);
      std::vector<float> cell(oc);
      for (int m = 0; m < H; ++m)
        for (int n = 0; n < W; ++n) {
          if (br.kind == BlockKind::In1Out4) {
            std::copy_n(br.block.begin() + static_cast<std::size_t>(v(m, n)) * oc, oc, cell.begin());
          } else {
            detail::lut4d_interp(br.block, oc, {v(m, n), v(m, n + 1), v(m + 1, n), v(m + 1, n + 1)}, cell.data());
          }
          if (final_stage)
            for (int c = 0; c < oc; ++c) y(m * r + c / r, n * r + c % r) = cell[c];
          else
            y(m, n) = cell[0];
        }
      const FloatPlane back = rotate90(y, -k);
      for (std::size_t i = 0; i < acc.size(); ++i) acc.data()[i] += back.data()[i];
      if (tape) tape->passes[k * B + b] = {std::move(padded), std::move(v)};
    }
  }
  const float count = static_cast<float>(rotations * B);
  for (float& x : acc.data()) x /= count;
  return acc;
}

/// Returns unit-range input gradients; entry gradients accumulate into grads.
inline FloatPlane float_stage_backward(const detail::FloatStageTape& tape, const std::vector<FloatBranch>& branches,
                                       bool final_stage, int r, bool ensemble, const FloatPlane& upstream,
                                       std::vector<FloatBranch>& grads) {
  const int rotations = ensemble ? 4 : 1;
  const int B = static_cast<int>(branches.size());
  const float count = static_cast<float>(rotations * B);
  FloatPlane din(tape.input.width(), tape.input.height());
  for (int k = 0; k < rotations; ++k) {
    FloatPlane g = rotate90(upstream, k);
    for (float& x : g.data()) x /= count;
    for (int b = 0; b < B; ++b) {
      const auto& br = branches[b];
      auto& gb = grads[b];
      const auto& pass = tape.passes[k * B + b];
      const Plane<int>& v = pass.v;
      const int H = final_stage ? g.height() / r : g.height();
      const int W = final_stage ? g.width() / r : g.width();
      const int oc = br.out_channels;
      FloatPlane dv(v.width(), v.height());
      std::vector<float> up(oc);
      for (int m = 0; m < H; ++m)
        for (int n = 0; n < W; ++n) {
          for (int c = 0; c < oc; ++c) up[c] = final_stage ? g(m * r + c / r, n * r + c % r) : g(m, n);
          if (br.kind == BlockKind::In1Out4) {
            const int lv = v(m, n);
            float d = 0;
            const int hi = std::min(lv + 1, 255), lo = hi - 1;
            for (int c = 0; c < oc; ++c) {
              gb.block[static_cast<std::size_t>(lv) * oc + c] += up[c];
              d += up[c] * (br.block[static_cast<std::size_t>(hi) * oc + c] - br.block[static_cast<std::size_t>(lo) * oc + c]);
            }
            dv(m, n) += 255.0f * d;
          } else {
            const auto d = detail::lut4d_interp_backward(br.block, oc, {v(m, n), v(m, n + 1), v(m + 1, n), v(m + 1, n + 1)},
                                                         up.data(), gb.block);
            dv(m, n) += d[0];
            dv(m, n + 1) += d[1];
            dv(m + 1, n) += d[2];
            dv(m + 1, n + 1) += d[3];
          }
        }
      FloatPlane dpad(pass.padded.width(), pass.padded.height());
      if (br.rc_size > 0) {
        const int N = br.rc_size;
        const float inv = 1.0f / static_cast<float>(N * N);
        for (int m = 0; m < dv.height(); ++m)
          for (int n = 0; n < dv.width(); ++n) {
            const float gv = dv(m, n) * inv;
            if (gv == 0.0f) continue;
            for (int i = 0; i < N; ++i)
              for (int j = 0; j < N; ++j) {
                const int o = i * N + j;
                dpad(m + i, n + j) += gv * lut1d_interp_backward(br.rc[o], pass.padded(m + i, n + j), gv, gb.rc[o]);
              }
          }
      } else {
        dpad = std::move(dv);
      }
      const int margin = (std::max(br.rc_size, 1) - 1) + (block_window(br.kind) - 1);
      const FloatPlane d_rot = pad_replicate_backward(dpad, 0, 0, margin, margin);
      const FloatPlane d_in = rotate90(d_rot, -k);
      for (std::size_t i = 0; i < din.size(); ++i) din.data()[i] += d_in.data()[i];
    }
  }
  return din;
}

struct FloatTape {
  std::vector<detail::FloatStageTape> stages;
};

/// Unit-range prediction for one LR plane.
inline FloatPlane float_pack_forward(const FloatPack& f, const QuantPlane& lr, FloatTape* tape = nullptr) {
  if (tape) tape->stages.assign(f.stages.size(), {});
  Plane<int> x = plane_cast<std::uint8_t, int>(lr);
  FloatPlane out;
  for (std::size_t s = 0; s < f.stages.size(); ++s) {
    const bool final_stage = s + 1 == f.stages.size();
    out = float_stage_forward(x, f.stages[s], final_stage, f.scale, f.rotation_ensemble, tape ? &tape->stages[s] : nullptr);
    if (!final_stage) {
      x = Plane<int>(out.width(), out.height());
      for (std::size_t i = 0; i < out.size(); ++i) x.data()[i] = unit_to_level(out.data()[i]);
    }
  }
  return out;
}

inline void float_pack_backward(const FloatPack& f, const FloatTape& tape, FloatPlane upstream, FloatPack& grads) {
  for (std::size_t s = f.stages.size(); s-- > 0;) {
    const bool final_stage = s + 1 == f.stages.size();
    upstream = float_stage_backward(tape.stages[s], f.stages[s], final_stage, f.scale, f.rotation_ensemble, upstream,
                                    grads.stages[s]);
  }
}

// ---------------------------------------------------------------------------
// Finetuning loop

struct FinetuneResult {
  LutPack pack;
  double initial_val_mse = 0;
  double best_val_mse = 0;
  std::uint64_t best_iteration = 0;
};

/// Mean squared error (unit range) of the integer engine on validation pairs.
inline double engine_mse(const LutPack& pack, const std::vector<TrainingPair>& pairs) {
  double sse = 0;
  std::size_t n = 0;
  for (const auto& p : pairs) {
    const QuantPlane sr = engine_forward(to_level_plane(p.lr), pack);
    require(sr.width() == p.hr.width() && sr.height() == p.hr.height(), ErrorCode::ShapeMismatch,
            "validation pair does not match the pack scale");
    for (std::size_t i = 0; i < sr.size(); ++i) {
      const double d = level_to_unit<double>(sr.data()[i]) - static_cast<double>(p.hr.data()[i]);
      sse += d * d;
    }
    n += sr.size();
  }
  return n ? sse / static_cast<double>(n) : 0.0;
}

/// Adam on every entry (unit range, clamped to [0, 1] after each step). The
/// validation error of the quantised pack is measured every `validate_every`
/// iterations and the best pack seen (including the input) is returned.
inline FinetuneResult lut_aware_finetune(const LutPack& pack, const std::vector<TrainingPair>& train,
                                         const std::vector<TrainingPair>& val, const TrainConfig& tcfg,
                                         std::uint64_t validate_every = 50) {
  check_pack(pack);
  validate(tcfg);
  const auto& val_set = val.empty() ? train : val;
  FinetuneResult res{pack, engine_mse(pack, val_set), 0, 0};
  res.best_val_mse = res.initial_val_mse;
  if (tcfg.iterations == 0) return res;

  FloatPack f = to_float_pack(pack);
  FloatPack m = zeros_like(f), v = zeros_like(f);
  Rng rng(tcfg.seed);
  auto spans = [](FloatPack& p) {
    std::vector<std::span<float>> out;
    for (auto& s : p.stages)
      for (auto& b : s) {
        for (auto& t : b.rc) out.emplace_back(t);
        out.emplace_back(b.block);
      }
    return out;
  };
  auto fp = spans(f), mp = spans(m), vp = spans(v);

  for (std::uint64_t it = 1; it <= tcfg.iterations; ++it) {
    const Batch batch = sample_batch(train, tcfg, pack.scale, rng);
    FloatPack g = zeros_like(f);
    std::size_t total = 0;
    for (const auto& h : batch.hr) total += h.size();
    for (std::size_t e = 0; e < batch.lr.size(); ++e) {
      FloatTape tape;
      const FloatPlane pred = float_pack_forward(f, to_level_plane(batch.lr[e]), &tape);
      FloatPlane up(pred.width(), pred.height());
      for (std::size_t i = 0; i < pred.size(); ++i)
        up.data()[i] = 2.0f * (pred.data()[i] - batch.hr[e].data()[i]) / static_cast<float>(total);
      float_pack_backward(f, tape, std::move(up), g);
    }
    auto gp = spans(g);
    for (std::size_t k = 0; k < fp.size(); ++k) {
      for (float x : gp[k])
        if (!std::isfinite(x)) fail(ErrorCode::NonFinite, "non-finite LUT gradient at iteration " + std::to_string(it));
      adam_update<float>(fp[k], gp[k], mp[k], vp[k], it, tcfg.lr);
      for (float& x : fp[k]) x = std::clamp(x, 0.0f, 1.0f);
    }
    if (it % validate_every == 0 || it == tcfg.iterations) {
      LutPack q = to_lut_pack(f);
      const double mse = engine_mse(q, val_set);
      if (mse < res.best_val_mse) {
        res.best_val_mse = mse;
        res.best_iteration = it;
        res.pack = std::move(q);
      }
    }
  }
  return res;
}

}  // namespace rclut
