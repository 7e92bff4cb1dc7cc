#include "support.hpp"

#include <gtest/gtest.h>

#include <fstream>

namespace rclut {
namespace {

using testing::ScratchDir;

TEST(Png, GrayAndRgbRoundTrip) {
  ScratchDir dir("png");
  Rng rng(1);
  for (int ch : {1, 3}) {
    const Image img = testing::random_image(13, 7, ch, rng);
    const auto path = dir / ("img" + std::to_string(ch) + ".png");
    save_png(img, path);
    const Image back = load_png(path);
    EXPECT_EQ(back.width, 13);
    EXPECT_EQ(back.height, 7);
    EXPECT_EQ(back.channels, ch);
    EXPECT_EQ(back.data, img.data);
  }
}

TEST(Png, MissingAndCorruptFiles) {
  ScratchDir dir("png-bad");
  EXPECT_THROW(load_png(dir / "absent.png"), Error);
  {
    std::ofstream f(dir / "junk.png", std::ios::binary);
    f << "not a png at all";
  }
  try {
    load_png(dir / "junk.png");
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(e.code(), ErrorCode::InvalidArgument);
  }
}

TEST(Colour, YCbCrRoundTripWithinOneLevel) {
  Rng rng(2);
  for (int i = 0; i < 2000; ++i) {
    const auto r = static_cast<std::uint8_t>(rng.below(256)), g = static_cast<std::uint8_t>(rng.below(256)),
               b = static_cast<std::uint8_t>(rng.below(256));
    const auto ycc = rgb_to_ycbcr(r, g, b);
    const auto rgb = ycbcr_to_rgb(ycc[0], ycc[1], ycc[2]);
    EXPECT_LE(std::abs(rgb[0] - r), 2);
    EXPECT_LE(std::abs(rgb[1] - g), 2);
    EXPECT_LE(std::abs(rgb[2] - b), 2);
  }
  // Grays map to neutral chroma exactly.
  for (int v = 0; v < 256; ++v) {
    const auto ycc = rgb_to_ycbcr(v, v, v);
    EXPECT_EQ(ycc[0], v);
    EXPECT_EQ(ycc[1], 128);
    EXPECT_EQ(ycc[2], 128);
  }
}

TEST(Colour, WrongColorspaceRejected) {
  Image gray(4, 4, 1, Colorspace::Gray);
  EXPECT_THROW(rgb_to_ycbcr(gray), Error);
}

TEST(Bicubic, KeysKernelValues) {
  EXPECT_DOUBLE_EQ(keys_cubic(0.0), 1.0);
  EXPECT_DOUBLE_EQ(keys_cubic(1.0), 0.0);
  EXPECT_DOUBLE_EQ(keys_cubic(2.0), 0.0);
  EXPECT_DOUBLE_EQ(keys_cubic(0.5), 0.5625);
  EXPECT_DOUBLE_EQ(keys_cubic(1.5), -0.0625);
  EXPECT_DOUBLE_EQ(keys_cubic(-0.5), keys_cubic(0.5));
}

TEST(Bicubic, ConstantPlanesStayConstant) {
  for (auto [w, h, ow, oh] : {std::array{9, 7, 36, 28}, std::array{40, 32, 10, 8}, std::array{5, 5, 13, 3}}) {
    QuantPlane p(w, h, 173);
    const QuantPlane out = resize_levels(p, ow, oh);
    for (auto v : out.data()) EXPECT_EQ(v, 173);
  }
}

TEST(Bicubic, UpscaleInteriorMatchesDirectFormula) {
  Rng rng(3);
  const QuantPlane src = testing::random_levels(12, 10, rng);
  const QuantPlane out = resize_levels(src, 48, 40);
  // Output (y, x) samples source coordinate (x + 0.5) / 4 - 0.5; taps at
  // floor(u) - 1 .. floor(u) + 2 weighted by the Keys kernel.
  for (int y = 8; y < 32; ++y)
    for (int x = 8; x < 40; ++x) {
      const double u = (x + 0.5) / 4 - 0.5, v = (y + 0.5) / 4 - 0.5;
      const int x0 = static_cast<int>(std::floor(u)), y0 = static_cast<int>(std::floor(v));
      double acc = 0;
      for (int j = -1; j <= 2; ++j)
        for (int i = -1; i <= 2; ++i)
          acc += keys_cubic(v - (y0 + j)) * keys_cubic(u - (x0 + i)) * src(y0 + j, x0 + i);
      EXPECT_EQ(out(y, x), detail::round_level(std::clamp(acc, 0.0, 255.0))) << y << "," << x;
    }
}

TEST(Bicubic, DownscaleIsAntialiased) {
  // A one-pixel checkerboard averages to mid-gray when shrunk by 4.
  QuantPlane p(64, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) p(y, x) = ((x + y) & 1) ? 255 : 0;
  const QuantPlane out = resize_levels(p, 16, 16);
  for (int y = 2; y < 14; ++y)
    for (int x = 2; x < 14; ++x) EXPECT_NEAR(out(y, x), 128, 2);
}

TEST(Geometry, RotationCycle) {
  Rng rng(4);
  const QuantPlane p = testing::random_levels(5, 3, rng);
  const QuantPlane r1 = rotate90(p, 1);
  EXPECT_EQ(r1.width(), 3);
  EXPECT_EQ(r1.height(), 5);
  // Counter-clockwise: the top-right corner moves to the top-left.
  EXPECT_EQ(r1(0, 0), p(0, 4));
  EXPECT_EQ(rotate90(rotate90(p, 1), -1), p);
  EXPECT_EQ(rotate90(rotate90(p, 2), 2), p);
  EXPECT_EQ(rotate90(p, 4), p);
  EXPECT_EQ(rotate90(p, 3), rotate90(p, -1));
}

TEST(Geometry, DihedralGroupHasEightDistinctElements) {
  Rng rng(5);
  const QuantPlane p = testing::random_levels(4, 4, rng);
  std::vector<QuantPlane> seen;
  for (int t = 0; t < 8; ++t) {
    const QuantPlane d = dihedral(p, t);
    for (const auto& s : seen) EXPECT_NE(s, d) << t;
    seen.push_back(d);
  }
}

TEST(Geometry, ReplicatePaddingAndAdjoint) {
  Rng rng(6);
  const Plane<double> x = testing::random_unit<double>(4, 3, rng);
  const Plane<double> padded = pad_replicate(x, 1, 2, 3, 4);
  EXPECT_EQ(padded.width(), 10);
  EXPECT_EQ(padded.height(), 7);
  EXPECT_EQ(padded(0, 0), x(0, 0));
  EXPECT_EQ(padded(6, 9), x(2, 3));
  EXPECT_EQ(padded(3, 5), x(2, 3));
  // <pad(x), w> == <x, pad^T(w)>
  const Plane<double> w = testing::random_weights(10, 7, rng);
  EXPECT_NEAR(testing::dot(padded, w), testing::dot(x, pad_replicate_backward(w, 1, 2, 3, 4)), 1e-12);
  EXPECT_THROW(pad_replicate(x, -1, 0, 0, 0), Error);
}

TEST(Geometry, CropToMultipleIsCentred) {
  Rng rng(7);
  const Image img = testing::random_image(11, 10, 3, rng);
  const Image c = crop_to_multiple(img, 4);
  EXPECT_EQ(c.width, 8);
  EXPECT_EQ(c.height, 8);
  EXPECT_EQ(c.at(0, 0, 1), img.at(1, 1, 1));
  EXPECT_THROW(crop(QuantPlane(3, 3), 1, 1, 3, 1), Error);
}

TEST(Conversions, UnitLevelRoundTrip) {
  for (int v = 0; v < 256; ++v) {
    EXPECT_EQ(unit_to_level(level_to_unit<float>(static_cast<std::uint8_t>(v))), v);
    EXPECT_EQ(unit_to_level(level_to_unit<double>(static_cast<std::uint8_t>(v))), v);
  }
  EXPECT_EQ(unit_to_level(-0.3f), 0);
  EXPECT_EQ(unit_to_level(1.7f), 255);
  EXPECT_EQ(unit_to_level(0.5 / 255.0), 1);  // half rounds up
}

}  // namespace
}  // namespace rclut
