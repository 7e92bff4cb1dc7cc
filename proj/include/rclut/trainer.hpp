#pragma once

// Dataset preparation, patch sampling, MSE loss, Adam and the training loop.

#include <rclut/checkpoint.hpp>
#include <rclut/config.hpp>
#include <rclut/error.hpp>
#include <rclut/imagecore.hpp>
#include <rclut/network.hpp>
#include <rclut/plane.hpp>
#include <rclut/random.hpp>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

namespace rclut {

struct DatasetSpec {
  std::filesystem::path hr_dir;
  int scale = 4;
  std::filesystem::path cache_dir;  // empty: no caching
};

struct TrainConfig {
  std::uint64_t iterations = 200000;
  int batch_size = 32;
  double lr = 1e-4;
  int lr_patch = 24;
  std::uint64_t seed = 0;
  bool augment = true;
  std::uint64_t checkpoint_every = 0;  // 0: only the final checkpoint
  std::uint64_t log_every = 100;

  /// Training budget used for the published models.
  static TrainConfig paper() { return {}; }

  /// CPU-friendly profile for a few thousand iterations on a small image set.
  static TrainConfig desk() {
    TrainConfig c;
    c.iterations = 5000;
    c.batch_size = 8;
    c.lr = 1e-3;
    c.lr_patch = 16;
    return c;
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline void to_json(nlohmann::json& j, const TrainConfig& t) {
  j = {{"iterations", t.iterations}, {"batch_size", t.batch_size}, {"lr", t.lr},
       {"lr_patch", t.lr_patch},     {"seed", t.seed},             {"augment", t.augment},
       {"checkpoint_every", t.checkpoint_every}, {"log_every", t.log_every}};
}

/// Missing fields keep the values already in `t`, so a profile can be overlaid.
inline void from_json(const nlohmann::json& j, TrainConfig& t) {
  t.iterations = j.value("iterations", t.iterations);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.lr = j.value("lr", t.lr);
  t.lr_patch = j.value("lr_patch", t.lr_patch);
  t.seed = j.value("seed", t.seed);
  t.augment = j.value("augment", t.augment);
  t.checkpoint_every = j.value("checkpoint_every", t.checkpoint_every);
  t.log_every = j.value("log_every", t.log_every);
}

inline void validate(const TrainConfig& t) {
  auto bad = [](const std::string& m) { fail(ErrorCode::InvalidConfig, "train config: " + m); };
  if (t.batch_size < 1) bad("batch_size must be >= 1");
  if (!(t.lr > 0) || !std::isfinite(t.lr)) bad("lr must be positive and finite");
  if (t.lr_patch < 2) bad("lr_patch must be >= 2");
}

// ---------------------------------------------------------------------------
// Data

/// Luma pair in unit range. Values are exact multiples of 1/255.
struct TrainingPair {
  std::string name;
  FloatPlane lr;
  FloatPlane hr;
};

struct PrepareStats {
  int loaded = 0;
  int skipped = 0;     // undecodable files
  int resampled = 0;   // bicubic calls made
  int cache_hits = 0;
};

inline std::uint32_t crc32_bytes(const void* data, std::size_t n, std::uint32_t crc = 0) {
  const auto* p = static_cast<const Bytef*>(data);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = static_cast<std::uint32_t>(::crc32(crc, p, chunk));
    p += chunk;
    n -= chunk;
  }
  return crc;
}

/// Sorted list of *.png files in a directory.
inline std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) fail(ErrorCode::DataError, "not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

/// Builds an (LR, HR) luma pair from an 8-bit HR luma plane.
inline TrainingPair make_pair_from_luma(std::string name, const QuantPlane& hr_luma, int r,
                                        PrepareStats* stats = nullptr) {
  QuantPlane hr = crop_to_multiple(hr_luma, r);
  require(hr.width() >= r && hr.height() >= r, ErrorCode::DataError, name + ": image smaller than the scale");
  QuantPlane lr = resize_levels(hr, hr.width() / r, hr.height() / r);
  if (stats) ++stats->resampled;
  return {std::move(name), to_unit_plane<float>(lr), to_unit_plane<float>(hr)};
}

/// Loads every HR PNG, converts to luma, centre-crops to a multiple of r and
/// downsamples by bicubic. LR planes are cached as grayscale PNGs keyed by the
/// CRC-32 of the source file, so a warm cache needs no resampling.
inline std::vector<TrainingPair> prepare_pairs(const DatasetSpec& spec, PrepareStats* stats = nullptr) {
  namespace fs = std::filesystem;
  require(spec.scale >= 1, ErrorCode::InvalidConfig, "scale must be >= 1");
  const auto files = list_pngs(spec.hr_dir);
  if (files.empty()) fail(ErrorCode::DataError, "no PNG files in " + spec.hr_dir.string());
  if (!spec.cache_dir.empty()) fs::create_directories(spec.cache_dir);

  PrepareStats local;
  PrepareStats& st = stats ? *stats : local;
  std::vector<TrainingPair> pairs;
  for (const auto& f : files) {
    QuantPlane hr;
    std::uint32_t crc = 0;
    try {
      const std::string bytes = read_file_bytes(f);
      crc = crc32_bytes(bytes.data(), bytes.size());
      hr = crop_to_multiple(luma_plane(load_png(f)), spec.scale);
    } catch (const Error& e) {
      std::cerr << "warning: skipping " << f.filename().string() << ": " << e.what() << "\n";
      ++st.skipped;
      continue;
    }
    if (hr.width() < spec.scale || hr.height() < spec.scale) {
      std::cerr << "warning: skipping " << f.filename().string() << ": smaller than the scale\n";
      ++st.skipped;
      continue;
    }
    const std::string name = f.filename().string();
    char key[64];
    std::snprintf(key, sizeof key, "-%08x-x%d.png", crc, spec.scale);
    const fs::path cached = spec.cache_dir.empty() ? fs::path{} : spec.cache_dir / (f.stem().string() + key);

    QuantPlane lr;
    bool hit = false;
    if (!cached.empty() && fs::exists(cached)) {
      try {
        Image img = load_png(cached);
        if (img.channels == 1 && img.width == hr.width() / spec.scale && img.height == hr.height() / spec.scale) {
          lr = QuantPlane(img.width, img.height, std::move(img.data));
          hit = true;
        }
      } catch (const Error&) {
      }
    }
    if (hit) {
      ++st.cache_hits;
    } else {
      lr = resize_levels(hr, hr.width() / spec.scale, hr.height() / spec.scale);
      ++st.resampled;
      if (!cached.empty()) save_png(gray_image(lr), cached);
    }
    pairs.push_back({name, to_unit_plane<float>(lr), to_unit_plane<float>(hr)});
    ++st.loaded;
  }
  if (pairs.empty()) fail(ErrorCode::DataError, "no decodable images in " + spec.hr_dir.string());
  return pairs;
}

struct Batch {
  std::vector<FloatPlane> lr;
  std::vector<FloatPlane> hr;
};

/// Aligned random crops; with augmentation one of the 8 dihedral transforms is
/// drawn per element and applied to both crops.
inline Batch sample_batch(const std::vector<TrainingPair>& pairs, const TrainConfig& cfg, int scale, Rng& rng) {
  require(!pairs.empty(), ErrorCode::DataError, "no training pairs");
  const int p = cfg.lr_patch;
  Batch b;
  for (int i = 0; i < cfg.batch_size; ++i) {
    const auto& pair = pairs[rng.below(pairs.size())];
    require(pair.lr.width() >= p && pair.lr.height() >= p, ErrorCode::DataError,
            pair.name + ": patch larger than the LR image");
    const int x = static_cast<int>(rng.below(pair.lr.width() - p + 1));
    const int y = static_cast<int>(rng.below(pair.lr.height() - p + 1));
    FloatPlane lr = crop(pair.lr, x, y, p, p);
    FloatPlane hr = crop(pair.hr, x * scale, y * scale, p * scale, p * scale);
    if (cfg.augment) {
      const int t = static_cast<int>(rng.below(8));
      lr = dihedral(lr, t);
      hr = dihedral(hr, t);
    }
    b.lr.push_back(std::move(lr));
    b.hr.push_back(std::move(hr));
  }
  return b;
}

// ---------------------------------------------------------------------------
// Loss and optimiser

template <class T>
struct LossResult {
  double loss = 0;
  Plane<T> grad;
};

template <class T>
LossResult<T> mse_loss(const Plane<T>& pred, const Plane<T>& target) {
  require(pred.same_shape(target), ErrorCode::ShapeMismatch, "mse_loss: shapes differ");
  require(!pred.empty(), ErrorCode::EmptyImage, "mse_loss: empty planes");
  LossResult<T> r{0.0, Plane<T>(pred.width(), pred.height())};
  const double n = static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred.data()[i]) - static_cast<double>(target.data()[i]);
    r.loss += d * d;
    r.grad.data()[i] = static_cast<T>(2.0 * d / n);
  }
  r.loss /= n;
  return r;
}

/// Batch loss: mean over every pixel of every element.
template <class T>
double mse_loss_batch(const std::vector<Plane<T>>& pred, const std::vector<Plane<T>>& target,
                      std::vector<Plane<T>>& grads) {
  require(pred.size() == target.size() && !pred.empty(), ErrorCode::ShapeMismatch, "batch sizes differ");
  std::size_t total = 0;
  for (const auto& p : pred) total += p.size();
  double loss = 0;
  grads.clear();
  for (std::size_t e = 0; e < pred.size(); ++e) {
    require(pred[e].same_shape(target[e]), ErrorCode::ShapeMismatch, "mse_loss: shapes differ");
    Plane<T> g(pred[e].width(), pred[e].height());
    for (std::size_t i = 0; i < pred[e].size(); ++i) {
      const double d = static_cast<double>(pred[e].data()[i]) - static_cast<double>(target[e].data()[i]);
      loss += d * d;
      g.data()[i] = static_cast<T>(2.0 * d / static_cast<double>(total));
    }
    grads.push_back(std::move(g));
  }
  return loss / static_cast<double>(total);
}

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One Adam update of a flat array at step t (1-based), with bias correction.
template <class T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::uint64_t t,
                 double lr, const AdamHyper& h = {}) {
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = static_cast<double>(grad[i]);
    const double mi = h.beta1 * static_cast<double>(m[i]) + (1.0 - h.beta1) * g;
    const double vi = h.beta2 * static_cast<double>(v[i]) + (1.0 - h.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double mhat = mi / c1, vhat = vi / c2;
    param[i] = static_cast<T>(static_cast<double>(param[i]) - lr * mhat / (std::sqrt(vhat) + h.eps));
  }
}

template <class T>
std::vector<std::pair<std::string, std::span<T>>> flat_arrays(NetworkParams<T>& p) {
  std::vector<std::pair<std::string, std::span<T>>> out;
  for_each_array(p, [&](const std::string& name, std::span<T> a, const std::vector<int>&) { out.emplace_back(name, a); });
  return out;
}

/// Adam step on the whole network. Non-finite gradients abort the step before
/// anything is modified.
inline void adam_step(TrainState& s, NetworkParams<float>& grads, double lr, const AdamHyper& h = {}) {
  auto g = flat_arrays(grads);
  for (const auto& [name, a] : g)
    for (std::size_t i = 0; i < a.size(); ++i)
      if (!std::isfinite(a[i]))
        fail(ErrorCode::NonFinite, "non-finite gradient in " + name + "[" + std::to_string(i) + "] at iteration " +
                                       std::to_string(s.iteration + 1));
  auto p = flat_arrays(s.params);
  auto m = flat_arrays(s.m);
  auto v = flat_arrays(s.v);
  require(p.size() == g.size() && m.size() == g.size() && v.size() == g.size(), ErrorCode::ShapeMismatch,
          "adam_step: parameter sets are not congruent");
  ++s.iteration;
  for (std::size_t k = 0; k < p.size(); ++k)
    adam_update<float>(p[k].second, g[k].second, m[k].second, v[k].second, s.iteration, lr, h);
}

// ---------------------------------------------------------------------------
// Training loop

inline TrainState initial_state(const NetworkConfig& config, std::uint64_t seed) {
  validate(config);
  TrainState s;
  s.config = config;
  s.rng = Rng(seed);
  s.params = init_network<float>(config, s.rng);
  s.m = zeros_like(s.params);
  s.v = zeros_like(s.params);
  return s;
}

struct LossRecord {
  std::uint64_t iteration;
  double loss;
  double wall_ms;
};

struct TrainOptions {
  std::filesystem::path checkpoint;  // final (and periodic) checkpoint; empty: none
  std::filesystem::path loss_csv;    // empty: none
  std::function<void(const LossRecord&)> on_log;
};

inline void write_loss_csv(const std::vector<LossRecord>& log, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) fail(ErrorCode::Io, "cannot write " + path.string());
  f << "iteration,loss,wall_ms\n";
  char buf[96];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%llu,%.9g,%.3f\n", static_cast<unsigned long long>(r.iteration), r.loss,
                  r.wall_ms);
    f << buf;
  }
}

/// Forward, loss and backward for one batch; returns the loss and fills grads.
inline double train_batch(const TrainState& s, const Batch& batch, NetworkParams<float>& grads) {
  NetworkTape<float> tape;
  auto pred = network_forward_batch(batch.lr, s.config, s.params, &tape);
  std::vector<FloatPlane> upstream;
  const double loss = mse_loss_batch(pred, batch.hr, upstream);
  grads = zeros_like(s.params);
  network_backward(tape, s.config, s.params, std::move(upstream), grads);
  return loss;
}

/// Continues `state` until it reaches tcfg.iterations. The loss logged at an
/// iteration is the loss of the batch evaluated before that update.
inline std::vector<LossRecord> train_continue(TrainState& state, const TrainConfig& tcfg,
                                              const std::vector<TrainingPair>& pairs, const TrainOptions& opt = {}) {
  validate(tcfg);
  std::vector<LossRecord> log;
  const auto t0 = std::chrono::steady_clock::now();
  NetworkParams<float> grads;
  while (state.iteration < tcfg.iterations) {
    const std::uint64_t it = state.iteration;
    Batch batch = sample_batch(pairs, tcfg, state.config.scale, state.rng);
    const double loss = train_batch(state, batch, grads);
    if (!std::isfinite(loss)) fail(ErrorCode::NonFinite, "non-finite loss at iteration " + std::to_string(it));
    adam_step(state, grads, tcfg.lr);
    if (it == 0 || (tcfg.log_every > 0 && (it + 1) % tcfg.log_every == 0) || state.iteration == tcfg.iterations) {
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      log.push_back({it, loss, ms});
      if (opt.on_log) opt.on_log(log.back());
    }
    if (!opt.checkpoint.empty() && tcfg.checkpoint_every > 0 && state.iteration % tcfg.checkpoint_every == 0 &&
        state.iteration < tcfg.iterations)
      save_checkpoint(state, opt.checkpoint);
  }
  if (!opt.checkpoint.empty()) save_checkpoint(state, opt.checkpoint);
  if (!opt.loss_csv.empty()) write_loss_csv(log, opt.loss_csv);
  return log;
}

inline TrainState train(const NetworkConfig& config, const TrainConfig& tcfg, const std::vector<TrainingPair>& pairs,
                        const TrainOptions& opt = {}, std::vector<LossRecord>* log = nullptr) {
  TrainState s = initial_state(config, tcfg.seed);
  auto records = train_continue(s, tcfg, pairs, opt);
  if (log) *log = std::move(records);
  return s;
}

inline TrainState train(const NetworkConfig& config, const TrainConfig& tcfg, const DatasetSpec& spec,
                        const TrainOptions& opt = {}, std::vector<LossRecord>* log = nullptr) {
  require(spec.scale == config.scale, ErrorCode::InvalidConfig, "dataset scale differs from the network scale");
  return train(config, tcfg, prepare_pairs(spec), opt, log);
}

}  // namespace rclut
