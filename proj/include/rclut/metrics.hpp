#pragma once

#include <rclut/error.hpp>
#include <rclut/imagecore.hpp>
#include <rclut/plane.hpp>
#include <rclut/trainer.hpp>

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

namespace rclut {

inline constexpr double kPsnrCap = 100.0;

/// 8-bit luma of a Gray or RGB image.
inline QuantPlane luma_of(const Image& img) {
  return img.channels == 1 ? extract_channel(img, 0) : luma_plane(img);
}

namespace detail {

inline std::pair<QuantPlane, QuantPlane> cropped_luma(const Image& a, const Image& b, int crop) {
  require(a.width == b.width && a.height == b.height, ErrorCode::ShapeMismatch, "metric inputs differ in size");
  require(crop >= 0 && 2 * crop < a.width && 2 * crop < a.height, ErrorCode::InvalidArgument,
          "border crop leaves no pixels");
  const int w = a.width - 2 * crop, h = a.height - 2 * crop;
  return {rclut::crop(luma_of(a), crop, crop, w, h), rclut::crop(luma_of(b), crop, crop, w, h)};
}

}  // namespace detail

inline double psnr_from_mse(double mse) {
  if (mse <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

/// PSNR on the 8-bit Y plane after removing `crop` border pixels per side.
inline double psnr_y(const Image& a, const Image& b, int crop) {
  const auto [ya, yb] = detail::cropped_luma(a, b, crop);
  double sse = 0;
  for (std::size_t i = 0; i < ya.size(); ++i) {
    const double d = static_cast<double>(ya.data()[i]) - static_cast<double>(yb.data()[i]);
    sse += d * d;
  }
  return psnr_from_mse(sse / static_cast<double>(ya.size()));
}

/// Normalised 11-tap Gaussian, sigma 1.5.
inline std::array<double, 11> ssim_kernel() {
  std::array<double, 11> g{};
  double sum = 0;
  for (int i = 0; i < 11; ++i) {
    const double x = i - 5;
    g[i] = std::exp(-(x * x) / (2 * 1.5 * 1.5));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

/// Single-scale SSIM on the Y plane, mean over all fully contained 11x11
/// windows. K1 = 0.01, K2 = 0.03, L = 255.
inline double ssim_y(const Image& a, const Image& b, int crop) {
  const auto [ya, yb] = detail::cropped_luma(a, b, crop);
  const int W = ya.width(), H = ya.height();
  require(W >= 11 && H >= 11, ErrorCode::InvalidArgument, "ssim needs at least 11x11 pixels after the crop");
  const auto g = ssim_kernel();
  const double C1 = (0.01 * 255) * (0.01 * 255), C2 = (0.03 * 255) * (0.03 * 255);

  // Separable filtering of x, y, x^2, y^2, xy: horizontal pass first.
  const int Wo = W - 10, Ho = H - 10;
  std::array<std::vector<double>, 5> h;
  for (auto& v : h) v.assign(static_cast<std::size_t>(H) * Wo, 0.0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < Wo; ++x) {
      std::array<double, 5> acc{};
      for (int k = 0; k < 11; ++k) {
        const double p = ya(y, x + k), q = yb(y, x + k);
        acc[0] += g[k] * p;
        acc[1] += g[k] * q;
        acc[2] += g[k] * p * p;
        acc[3] += g[k] * q * q;
        acc[4] += g[k] * p * q;
      }
      for (int c = 0; c < 5; ++c) h[c][static_cast<std::size_t>(y) * Wo + x] = acc[c];
    }
  double total = 0;
  for (int y = 0; y < Ho; ++y)
    for (int x = 0; x < Wo; ++x) {
      std::array<double, 5> m{};
      for (int k = 0; k < 11; ++k)
        for (int c = 0; c < 5; ++c) m[c] += g[k] * h[c][static_cast<std::size_t>(y + k) * Wo + x];
      const double mx = m[0], my = m[1];
      const double vx = m[2] - mx * mx, vy = m[3] - my * my, cxy = m[4] - mx * my;
      total += ((2 * mx * my + C1) * (2 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
    }
  return total / (static_cast<double>(Wo) * Ho);
}

// ---------------------------------------------------------------------------
// Dataset evaluation

struct ImageScore {
  std::string name;
  double psnr = 0;
  double ssim = 0;
};

struct EvalReport {
  std::vector<ImageScore> images;
  double mean_psnr = 0;
  double mean_ssim = 0;

  void finalize() {
    mean_psnr = mean_ssim = 0;
    for (const auto& s : images) {
      mean_psnr += s.psnr;
      mean_ssim += s.ssim;
    }
    if (!images.empty()) {
      mean_psnr /= static_cast<double>(images.size());
      mean_ssim /= static_cast<double>(images.size());
    }
  }

  std::string to_csv() const {
    std::string out = "image,psnr,ssim\n";
    char buf[64];
    for (const auto& s : images) {
      std::snprintf(buf, sizeof buf, ",%.6f,%.6f\n", s.psnr, s.ssim);
      out += s.name + buf;
    }
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f\n", mean_psnr, mean_ssim);
    out += "mean" + std::string(buf);
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["images"] = nlohmann::json::array();
    for (const auto& s : images) j["images"].push_back({{"name", s.name}, {"psnr", s.psnr}, {"ssim", s.ssim}});
    j["mean_psnr"] = mean_psnr;
    j["mean_ssim"] = mean_ssim;
    return j;
  }

  /// Writes <stem>.csv and <stem>.json.
  void write(const std::filesystem::path& stem) const {
    std::filesystem::path csv = stem, js = stem;
    csv += ".csv";
    js += ".json";
    std::ofstream(csv) << to_csv();
    std::ofstream(js) << to_json().dump(2) << "\n";
    if (!std::filesystem::exists(csv) || !std::filesystem::exists(js))
      fail(ErrorCode::Io, "cannot write report " + stem.string());
  }
};

/// Super-resolves an LR image. The HR reference is passed for passthrough
/// baselines; real methods ignore it.
using SrFn = std::function<Image(const Image& lr, const Image& hr)>;

struct NamedImage {
  std::string name;
  Image image;
};

/// HR images are cropped to a multiple of r, downscaled by bicubic, upscaled by
/// sr_fn and scored on Y. crop < 0 means a border of r pixels.
inline EvalReport evaluate(const SrFn& sr_fn, const std::vector<NamedImage>& hr_images, int r, int crop = -1) {
  require(r >= 1, ErrorCode::InvalidArgument, "scale must be >= 1");
  if (crop < 0) crop = r;
  EvalReport rep;
  for (const auto& [name, original] : hr_images) {
    const Image hr = crop_to_multiple(original, r);
    require(hr.width >= r && hr.height >= r, ErrorCode::DataError, name + ": smaller than the scale");
    const Image lr = resize_image(hr, hr.width / r, hr.height / r);
    const Image sr = sr_fn(lr, hr);
    require(sr.width == hr.width && sr.height == hr.height, ErrorCode::ShapeMismatch,
            name + ": super-resolved image has the wrong size");
    rep.images.push_back({name, psnr_y(sr, hr, crop), ssim_y(sr, hr, crop)});
  }
  rep.finalize();
  return rep;
}

inline std::vector<NamedImage> load_dataset(const std::filesystem::path& dir) {
  std::vector<NamedImage> out;
  for (const auto& f : list_pngs(dir)) out.push_back({f.filename().string(), load_png(f)});
  if (out.empty()) fail(ErrorCode::DataError, "no PNG files in " + dir.string());
  return out;
}

inline EvalReport evaluate(const SrFn& sr_fn, const std::filesystem::path& dataset_dir, int r, int crop = -1) {
  return evaluate(sr_fn, load_dataset(dataset_dir), r, crop);
}

/// Baselines.
inline SrFn bicubic_sr(int r) {
  return [r](const Image& lr, const Image&) { return resize_image(lr, lr.width * r, lr.height * r); };
}
inline SrFn passthrough_sr() {
  return [](const Image&, const Image& hr) { return hr; };
}

}  // namespace rclut
