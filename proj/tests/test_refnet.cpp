#include "support.hpp"

#include <gtest/gtest.h>

namespace rclut {
namespace {

TEST(RcModule, CollapsedForwardMatchesUncollapsedOracle) {
  Rng rng(1);
  for (int n : {1, 3, 5, 7}) {
    const RcParams<double> p = testing::random_rc(n, 6, rng);
    const Plane<double> x = testing::random_unit<double>(n + 6, n + 4, rng);
    const Plane<double> got = rc_forward(x, p), want = testing::rc_oracle(x, p);
    ASSERT_TRUE(got.same_shape(want));
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got.data()[i], want.data()[i], 1e-12);
  }
}

TEST(RcModule, InitialisationIsAnIdentityBoxFilter) {
  Rng rng(2);
  const RcParams<double> p = init_rc<double>(5, 64, rng);
  for (int o = 0; o < p.offsets(); ++o) {
    EXPECT_NEAR(p.slope(o), 1.0, 1e-12);
    EXPECT_NEAR(p.intercept(o), 0.0, 1e-12);
  }
  const Plane<double> x = testing::random_unit<double>(9, 9, rng);
  const Plane<double> y = rc_forward(x, p);
  double mean = 0;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) mean += x(2 + i, 3 + j);
  EXPECT_NEAR(y(2, 3), mean / 25, 1e-12);
}

TEST(RcModule, ResponsesAreClamped) {
  RcParams<double> p(1, 1);
  p.up_weight = {4.0};
  p.down_weight = {1.0};
  p.down_bias = {-1.0};
  EXPECT_EQ(rc_offset_response(p, 0, 0.1), 0.0);
  EXPECT_EQ(rc_offset_response(p, 0, 0.9), 1.0);
  EXPECT_NEAR(rc_offset_response(p, 0, 0.3), 0.2, 1e-12);
}

TEST(ConvBlock, ShapesAndHeadInit) {
  Rng rng(3);
  BranchConfig b = presets::branch(0, BlockKind::In4OutHead, 16);
  const auto p = init_block<float>(b, rng);
  ASSERT_EQ(p.layers.size(), 4u);
  EXPECT_EQ(p.layers[0].inputs, 4);
  EXPECT_EQ(p.layers[3].outputs, 16);
  for (float v : p.layers[3].bias) EXPECT_EQ(v, 0.5f);
  const Tensor<float> y = convblock_forward(testing::random_unit<float>(6, 5, rng), p);
  EXPECT_EQ(y.shape(), (std::vector<int>{4, 5, 16}));
  for (float v : y.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  b.hidden_depth = 0;
  const auto affine = init_block<float>(b, rng);
  EXPECT_EQ(affine.layers.size(), 1u);
}

TEST(ConvBlock, RowResultsDoNotDependOnBatching) {
  Rng rng(4);
  const auto p = init_block<float>(presets::branch(0, BlockKind::In4Out1, 1), rng);
  std::vector<float> rows(4 * 37);
  for (float& v : rows) v = static_cast<float>(rng.uniform());
  std::vector<float> all(37);
  block_forward_rows<float>(p, rows, 37, all);
  for (std::size_t r = 0; r < 37; ++r) {
    float one = 0;
    block_forward_rows<float>(p, std::span<const float>(rows.data() + 4 * r, 4), 1, std::span<float>(&one, 1));
    EXPECT_EQ(one, all[r]);
  }
}

TEST(PixelShuffle, LayoutAndInverse) {
  Tensor<int> t({2, 3, 4});
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<int>(i);
  const Plane<int> p = pixel_shuffle(t, 2);
  EXPECT_EQ(p.width(), 6);
  EXPECT_EQ(p.height(), 4);
  EXPECT_EQ(p(1, 3), t(0, 1, 3));
  EXPECT_EQ(p(2, 4), t(1, 2, 0));
  EXPECT_EQ(pixel_unshuffle(p, 2), t);
  EXPECT_THROW(pixel_shuffle(t, 3), Error);
}

TEST(ReceptiveField, PresetValues) {
  EXPECT_EQ(receptive_field(presets::rclut_default()), 27);
  EXPECT_EQ(receptive_field(presets::by_name("mulut")), 9);
  EXPECT_EQ(receptive_field(presets::srlut_baseline()), 3);
  EXPECT_EQ(receptive_field(presets::rc5_plus_srlut()), 11);
  EXPECT_EQ(receptive_field(presets::by_name("rclut-3")), 7);
  auto one_sided = presets::srlut_baseline();
  one_sided.rotation_ensemble = false;
  EXPECT_EQ(receptive_field(one_sided), 2);
}

TEST(ReceptiveField, MatchesEmpiricalSupport) {
  // Perturb one input pixel of an RC network and measure how far outputs move.
  Rng rng(5);
  for (const char* name : {"rclut-3", "rc5-plus-srlut", "srlut-baseline"}) {
    NetworkConfig c = presets::by_name(name);
    c.scale = 1;
    for (auto& s : c.stages)
      for (auto& b : s.branches) {
        b.head_channels = 1;
        b.hidden_width = 8;
      }
    auto p = init_network<double>(c, rng);
    const Plane<double> x = testing::random_unit<double>(31, 31, rng);
    Plane<double> x2 = x;
    x2(15, 15) += 0.5;
    const Plane<double> a = network_forward(x, c, p), b = network_forward(x2, c, p);
    int lo = 31, hi = -1;
    for (int y = 0; y < 31; ++y)
      for (int xx = 0; xx < 31; ++xx)
        if (a(y, xx) != b(y, xx)) {
          lo = std::min({lo, y, xx});
          hi = std::max({hi, y, xx});
        }
    ASSERT_GE(hi, lo) << name;
    EXPECT_LE(hi - lo + 1, receptive_field(c)) << name;
  }
}

TEST(Config, JsonRoundTripAndValidation) {
  for (const auto& name : presets::names()) {
    const NetworkConfig c = presets::by_name(name);
    const NetworkConfig back = nlohmann::json(c).get<NetworkConfig>();
    EXPECT_EQ(back, c) << name;
  }
  EXPECT_THROW(presets::by_name("nope"), Error);
  NetworkConfig bad = presets::rclut_default();
  bad.stages[0].branches[0].head_channels = 16;
  EXPECT_THROW(validate(bad), Error);
  EXPECT_THROW(validate(presets::by_name("mulut")), Error);
  EXPECT_NO_THROW(validate(presets::by_name("mulut"), false));
}

TEST(Network, OutputShapeAndRange) {
  Rng rng(6);
  const NetworkConfig c = presets::rclut_default();
  const auto p = init_network<float>(c, rng);
  const FloatPlane y = network_forward(testing::random_unit<float>(7, 5, rng), c, p);
  EXPECT_EQ(y.width(), 28);
  EXPECT_EQ(y.height(), 20);
  for (float v : y.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Network, BatchElementsAreIndependent) {
  Rng rng(7);
  const NetworkConfig c = presets::by_name("rclut-3_5");
  const auto p = init_network<float>(c, rng);
  std::vector<FloatPlane> batch{testing::random_unit<float>(6, 6, rng), testing::random_unit<float>(6, 6, rng)};
  const auto both = network_forward_batch(batch, c, p);
  EXPECT_EQ(both[0].storage(), network_forward(batch[0], c, p).storage());
  EXPECT_EQ(both[1].storage(), network_forward(batch[1], c, p).storage());
}

TEST(Network, RotationEnsembleIsEquivariant) {
  Rng rng(8);
  const NetworkConfig c = presets::by_name("rclut-3");
  const auto p = init_network<double>(c, rng);
  const Plane<double> x = testing::random_unit<double>(6, 6, rng);
  const Plane<double> y = network_forward(x, c, p);
  const Plane<double> yr = network_forward(rotate90(x, 1), c, p);
  const Plane<double> back = rotate90(yr, -1);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(back.data()[i], y.data()[i], 1e-12);
}

TEST(Network, IntermediateStageIsQuantised) {
  Rng rng(9);
  const NetworkConfig c = presets::rclut_default();
  const auto p = init_network<double>(c, rng);
  const auto mid = stage_forward(std::vector<Plane<double>>{testing::random_unit<double>(5, 5, rng)}, c, 0, p);
  for (double v : mid[0].data()) EXPECT_NEAR(v * 255, std::round(v * 255), 1e-9);
}

TEST(Network, ParameterNamesAreUnique) {
  Rng rng(10);
  const auto p = init_network<float>(presets::rclut_default(), rng);
  std::set<std::string> names;
  for_each_array(p, [&](const std::string& n, std::span<const float>, const std::vector<int>&) {
    EXPECT_TRUE(names.insert(n).second) << n;
  });
  EXPECT_TRUE(names.count("s1.b1.block.l3.bias"));
  EXPECT_TRUE(names.count("s0.b2.rc.down_bias"));
}

// Analytic gradients against central differences, fewer instances than the
// acceptance run.
TEST(Gradients, RcModule) {
  const auto st = testing::gradcheck_rc(8, 11);
  EXPECT_GT(st.checked, 100);
  EXPECT_LT(st.max_rel, testing::kGradRelTol);
}

TEST(Gradients, ConvBlocks) {
  for (auto [kind, head] : {std::pair{BlockKind::In4Out1, 1}, std::pair{BlockKind::In4OutHead, 4},
                            std::pair{BlockKind::In1Out4, 4}}) {
    const auto st = testing::gradcheck_block(kind, head, 8, 12);
    EXPECT_GT(st.checked, 50);
    EXPECT_LT(st.max_rel, testing::kGradRelTol);
  }
}

TEST(Gradients, ShufflePadAndLoss) {
  for (const auto& st : {testing::gradcheck_shuffle(8, 13), testing::gradcheck_pad(8, 14), testing::gradcheck_mse(8, 15)}) {
    EXPECT_GT(st.checked, 50);
    EXPECT_EQ(st.skipped, 0);
    EXPECT_LT(st.max_rel, testing::kGradRelTol);
  }
}

TEST(Gradients, WholeNetwork) {
  const auto st = testing::gradcheck_network(4, 16);
  EXPECT_GT(st.checked, 60);
  EXPECT_LT(st.max_rel, testing::kGradRelTol);
}

}  // namespace
}  // namespace rclut
