#pragma once

// Helpers shared by the unit tests and the acceptance runner: scratch
// directories, random inputs, independent reference implementations and the
// finite-difference gradient checker.

#include <rclut/rclut.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <unistd.h>

namespace rclut::testing {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    path_ = fs::temp_directory_path() / ("rclut-" + tag + "-" + std::to_string(::getpid()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  const fs::path& path() const noexcept { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline QuantPlane random_levels(int w, int h, Rng& rng, int step = 1) {
  QuantPlane p(w, h);
  const int count = 255 / step + 1;
  for (auto& v : p.data()) v = static_cast<std::uint8_t>(std::min(255, static_cast<int>(rng.below(count)) * step));
  return p;
}

template <class T>
Plane<T> random_unit(int w, int h, Rng& rng) {
  Plane<T> p(w, h);
  for (auto& v : p.data()) v = static_cast<T>(rng.uniform());
  return p;
}

inline Image random_image(int w, int h, int channels, Rng& rng) {
  Image img(w, h, channels, channels == 1 ? Colorspace::Gray : Colorspace::RGB);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

// ---------------------------------------------------------------------------
// Reference implementations

/// 4D interpolation in double by the Kuhn decomposition: walk from the base
/// corner towards the far corner, one axis at a time in decreasing fraction
/// order, weighting each vertex by the drop in fraction.
inline double simplex_oracle(const BlockLut& t, const std::array<int, 4>& v, int channel) {
  std::array<double, 4> frac{};
  std::array<int, 4> base{};
  for (int k = 0; k < 4; ++k) {
    base[k] = v[k] / 16;
    frac[k] = (v[k] - 16.0 * base[k]) / 16.0;
  }
  std::array<int, 4> axes{0, 1, 2, 3};
  std::stable_sort(axes.begin(), axes.end(), [&](int a, int b) { return frac[a] > frac[b]; });
  auto entry = [&](const std::array<int, 4>& c) {
    const std::size_t cell = ((static_cast<std::size_t>(c[0]) * 17 + c[1]) * 17 + c[2]) * 17 + c[3];
    return static_cast<double>(t.entries[cell * t.out_channels + channel]);
  };
  std::array<int, 4> corner = base;
  double prev = 1.0, acc = 0.0;
  for (int a : axes) {
    acc += (prev - frac[a]) * entry(corner);
    prev = frac[a];
    if (corner[a] < 16) ++corner[a];
  }
  acc += prev * entry(corner);
  return acc;
}

/// RC forward written from the uncollapsed definition: each offset maps x
/// through C hidden channels and back, the response is clamped, and the N^2
/// responses are averaged.
inline Plane<double> rc_oracle(const Plane<double>& padded, const RcParams<double>& p) {
  const int N = p.size, C = p.channels;
  const int H = padded.height() - N + 1, W = padded.width() - N + 1;
  Plane<double> out(W, H);
  for (int m = 0; m < H; ++m)
    for (int n = 0; n < W; ++n) {
      double sum = 0;
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) {
          const int o = i * N + j;
          const double x = padded(m + i, n + j);
          double z = p.down_bias[o];
          for (int c = 0; c < C; ++c) {
            const double hidden = p.up_weight[o * C + c] * x + p.up_bias[o * C + c];
            z += p.down_weight[o * C + c] * hidden;
          }
          sum += std::clamp(z, 0.0, 1.0);
        }
      out(m, n) = sum / (N * N);
    }
  return out;
}

/// Direct 2D SSIM: 11x11 Gaussian window evaluated at every valid position.
inline double ssim_oracle(const QuantPlane& a, const QuantPlane& b) {
  double g[11][11];
  double total = 0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
      total += g[i][j];
    }
  const double C1 = 6.5025, C2 = 58.5225;
  double acc = 0;
  int count = 0;
  for (int y = 0; y + 11 <= a.height(); ++y)
    for (int x = 0; x + 11 <= a.width(); ++x) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double w = g[i][j] / total, p = a(y + i, x + j), q = b(y + i, x + j);
          mx += w * p;
          my += w * q;
          sxx += w * p * p;
          syy += w * q * q;
          sxy += w * p * q;
        }
      const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
      acc += ((2 * mx * my + C1) * (2 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
      ++count;
    }
  return acc / count;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking

inline constexpr double kFdStep = 1e-3;
inline constexpr double kGradRelTol = 1e-3;
/// Denominator floor of the relative error, so exact zeros compare in
/// absolute terms.
inline constexpr double kGradFloor = 1e-6;
inline constexpr double kKinkFloor = 1e-11;  // well above finite-difference roundoff in a slope

struct GradStats {
  double max_rel = 0;
  long checked = 0;
  long skipped = 0;  // probes whose +/-h interval crosses a kink

  void merge(const GradStats& o) {
    max_rel = std::max(max_rel, o.max_rel);
    checked += o.checked;
    skipped += o.skipped;
  }
};

/// Compares `analytic` with the central difference of `loss` in `x`. Network
/// layers are piecewise linear in any single coordinate, so when the forward
/// and backward one-sided differences disagree the probe straddles a
/// ReLU/clamp kink and is skipped. Smooth losses pass `piecewise_linear = false`.
inline void probe(const std::function<double()>& loss, double& x, double analytic, GradStats& st,
                  bool piecewise_linear = true) {
  const double x0 = x, h = kFdStep;
  const double f0 = loss();
  x = x0 + h;
  const double fp = loss();
  x = x0 - h;
  const double fm = loss();
  x = x0;
  const double fwd = (fp - f0) / h, bwd = (f0 - fm) / h;
  if (piecewise_linear && std::fabs(fwd - bwd) > 1e-7 * (std::fabs(fwd) + std::fabs(bwd)) + kKinkFloor) {
    ++st.skipped;
    return;
  }
  const double numeric = (fp - fm) / (2 * h);
  const double rel = std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), kGradFloor});
  st.max_rel = std::max(st.max_rel, rel);
  ++st.checked;
}

/// Random subset of indices into an array of size n.
inline std::vector<std::size_t> pick(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx;
  if (n <= k) {
    for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
    return idx;
  }
  for (std::size_t i = 0; i < k; ++i) idx.push_back(rng.below(n));
  return idx;
}

inline Plane<double> random_weights(int w, int h, Rng& rng) {
  Plane<double> p(w, h);
  for (auto& v : p.data()) v = rng.uniform(-1.0, 1.0);
  return p;
}

inline double dot(const Plane<double>& a, const Plane<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

inline RcParams<double> random_rc(int n, int c, Rng& rng) {
  RcParams<double> p(n, c);
  for (auto* arr : {&p.up_weight, &p.up_bias, &p.down_weight})
    for (double& v : *arr) v = rng.uniform(-1.0, 1.0) / std::sqrt(c);
  for (double& v : p.down_bias) v = rng.uniform(0.2, 0.6);
  return p;
}

/// RC module: parameters and input, loss = <w, rc_forward(x)>.
inline GradStats gradcheck_rc(int instances, std::uint64_t seed) {
  GradStats st;
  Rng rng(seed);
  for (int t = 0; t < instances; ++t) {
    const int N = 3 + 2 * static_cast<int>(rng.below(3));
    RcParams<double> p = random_rc(N, 4, rng);
    Plane<double> x = random_unit<double>(N + 4, N + 3, rng);
    const Plane<double> w = random_weights(5, 4, rng);
    auto loss = [&] { return dot(rc_forward(x, p), w); };
    const auto g = rc_backward(x, p, w);
    auto check = [&](std::vector<double>& a, const std::vector<double>& ga) {
      for (auto i : pick(a.size(), 6, rng)) probe(loss, a[i], ga[i], st);
    };
    check(p.up_weight, g.param_grads.up_weight);
    check(p.up_bias, g.param_grads.up_bias);
    check(p.down_weight, g.param_grads.down_weight);
    check(p.down_bias, g.param_grads.down_bias);
    check(x.storage(), g.input_grad.storage());
  }
  return st;
}

/// Conv block of the given kind: weights, biases and input.
inline GradStats gradcheck_block(BlockKind kind, int head, int instances, std::uint64_t seed) {
  GradStats st;
  Rng rng(seed);
  for (int t = 0; t < instances; ++t) {
    BranchConfig bc;
    bc.block = kind;
    bc.head_channels = head;
    bc.hidden_width = 6;
    bc.hidden_depth = 1 + static_cast<int>(rng.below(3));
    ConvBlockParams<double> p = init_block<double>(bc, rng);
    for (auto& l : p.layers)
      for (double& b : l.bias) b += rng.uniform(-0.2, 0.2);
    Plane<double> x = random_unit<double>(5, 4, rng);
    const int win = block_window(kind);
    Tensor<double> w({4 - win + 1, 5 - win + 1, head});
    for (double& v : w.data()) v = rng.uniform(-1.0, 1.0);
    auto loss = [&] {
      const Tensor<double> y = convblock_forward(x, p);
      double s = 0;
      for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * w.data()[i];
      return s;
    };
    auto g = convblock_backward(x, p, w);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      for (auto i : pick(p.layers[l].weight.size(), 5, rng))
        probe(loss, p.layers[l].weight[i], g.param_grads.layers[l].weight[i], st);
      for (auto i : pick(p.layers[l].bias.size(), 3, rng))
        probe(loss, p.layers[l].bias[i], g.param_grads.layers[l].bias[i], st);
    }
    for (auto i : pick(x.size(), 6, rng)) probe(loss, x.data()[i], g.input_grad.data()[i], st);
  }
  return st;
}

/// Pixel shuffle: the adjoint is pixel_unshuffle.
inline GradStats gradcheck_shuffle(int instances, std::uint64_t seed) {
  GradStats st;
  Rng rng(seed);
  for (int t = 0; t < instances; ++t) {
    const int r = 2 + static_cast<int>(rng.below(3));
    Tensor<double> x({3, 2, r * r});
    for (double& v : x.data()) v = rng.uniform();
    const Plane<double> w = random_weights(2 * r, 3 * r, rng);
    auto loss = [&] { return dot(pixel_shuffle(x, r), w); };
    const Tensor<double> g = pixel_unshuffle(w, r);
    for (auto i : pick(x.size(), 10, rng)) probe(loss, x.data()[i], g.data()[i], st);
  }
  return st;
}

/// Replicate padding (asymmetric margins).
inline GradStats gradcheck_pad(int instances, std::uint64_t seed) {
  GradStats st;
  Rng rng(seed);
  for (int t = 0; t < instances; ++t) {
    const int top = static_cast<int>(rng.below(3)), left = static_cast<int>(rng.below(3));
    const int bottom = static_cast<int>(rng.below(7)), right = static_cast<int>(rng.below(7));
    Plane<double> x = random_unit<double>(4, 3, rng);
    const Plane<double> w = random_weights(4 + left + right, 3 + top + bottom, rng);
    auto loss = [&] { return dot(pad_replicate(x, top, left, bottom, right), w); };
    const Plane<double> g = pad_replicate_backward(w, top, left, bottom, right);
    for (std::size_t i = 0; i < x.size(); ++i) probe(loss, x.data()[i], g.data()[i], st);
  }
  return st;
}

/// Mean squared error against a fixed target.
inline GradStats gradcheck_mse(int instances, std::uint64_t seed) {
  GradStats st;
  Rng rng(seed);
  for (int t = 0; t < instances; ++t) {
    Plane<double> x = random_unit<double>(5, 4, rng);
    const Plane<double> y = random_unit<double>(5, 4, rng);
    auto loss = [&] { return mse_loss(x, y).loss; };
    const auto g = mse_loss(x, y).grad;
    for (std::size_t i = 0; i < x.size(); ++i) probe(loss, x.data()[i], g.data()[i], st, false);
  }
  return st;
}

/// Small two-stage network with the rotation ensemble: covers rotation,
/// padding, RC, both block families, pixel shuffle and branch averaging
/// composed. Quantisation between stages is disabled because its
/// straight-through gradient is deliberately not the true derivative.
inline NetworkConfig gradcheck_network_config(int scale) {
  NetworkConfig c;
  c.name = "gradcheck";
  c.scale = scale;
  c.quantize_between_stages = false;
  auto br = [](int rc, BlockKind k, int head) {
    BranchConfig b = presets::branch(rc, k, head);
    b.rc_channels = 3;
    b.hidden_width = 5;
    b.hidden_depth = 1;
    return b;
  };
  c.stages.push_back({{br(3, BlockKind::In4Out1, 1), br(0, BlockKind::In4Out1, 1)}});
  c.stages.push_back({{br(0, BlockKind::In1Out4, scale * scale), br(3, BlockKind::In4OutHead, scale * scale)}});
  return c;
}

inline GradStats gradcheck_network(int instances, std::uint64_t seed) {
  GradStats st;
  Rng rng(seed);
  for (int t = 0; t < instances; ++t) {
    const NetworkConfig c = gradcheck_network_config(2);
    NetworkParams<double> p = init_network<double>(c, rng);
    for_each_array(p, [&](const std::string& name, std::span<double> a, const std::vector<int>&) {
      if (name.find("rc.") != std::string::npos)
        for (double& v : a) v += rng.uniform(-0.05, 0.05);
    });
    std::vector<Plane<double>> x{random_unit<double>(4, 3, rng), random_unit<double>(4, 3, rng)};
    std::vector<Plane<double>> w{random_weights(8, 6, rng), random_weights(8, 6, rng)};
    auto loss = [&] {
      const auto y = network_forward_batch(x, c, p);
      return dot(y[0], w[0]) + dot(y[1], w[1]);
    };
    NetworkTape<double> tape;
    network_forward_batch(x, c, p, &tape);
    NetworkParams<double> g = zeros_like(p);
    const auto gx = network_backward(tape, c, p, w, g, true);

    std::vector<std::span<double>> pa, ga;
    for_each_array(p, [&](const std::string&, std::span<double> a, const std::vector<int>&) { pa.push_back(a); });
    for_each_array(g, [&](const std::string&, std::span<double> a, const std::vector<int>&) { ga.push_back(a); });
    for (std::size_t k = 0; k < pa.size(); ++k)
      for (auto i : pick(pa[k].size(), 2, rng)) probe(loss, pa[k][i], ga[k][i], st);
    for (int e = 0; e < 2; ++e)
      for (auto i : pick(x[e].size(), 3, rng)) probe(loss, x[e].data()[i], gx[e].data()[i], st);
  }
  return st;
}

}  // namespace rclut::testing
