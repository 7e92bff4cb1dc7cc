#include "support.hpp"

#include <gtest/gtest.h>

#include <fstream>

namespace rclut {
namespace {

namespace fs = std::filesystem;

NetworkConfig tiny_config() {
  NetworkConfig c = presets::by_name("rclut-3");
  c.stages[0].branches[0].hidden_width = 8;
  c.stages[0].branches[0].hidden_depth = 1;
  c.stages[0].branches[0].rc_channels = 4;
  return c;
}

TrainConfig tiny_train(std::uint64_t iters) {
  TrainConfig t = TrainConfig::desk();
  t.iterations = iters;
  t.batch_size = 2;
  t.lr_patch = 6;
  t.log_every = 5;
  return t;
}

std::vector<TrainingPair> tiny_pairs(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TrainingPair> pairs;
  for (int i = 0; i < 3; ++i)
    pairs.push_back(make_pair_from_luma("p" + std::to_string(i), luma_of(synth_image(40, 36, rng)), 4));
  return pairs;
}

TEST(Adam, MatchesHandComputedSteps) {
  std::vector<double> p{0.5, -1.0}, m(2), v(2);
  const std::vector<double> g{0.2, -0.4};
  adam_update<double>(p, g, m, v, 1, 0.1);
  // Step 1: m_hat = g, v_hat = g^2, so each parameter moves by lr * sign(g).
  EXPECT_NEAR(p[0], 0.5 - 0.1 * 0.2 / (0.2 + 1e-8), 1e-12);
  EXPECT_NEAR(p[1], -1.0 + 0.1 * 0.4 / (0.4 + 1e-8), 1e-12);
  adam_update<double>(p, g, m, v, 2, 0.1);
  const double m2 = 0.9 * 0.1 * 0.2 + 0.1 * 0.2, v2 = 0.999 * 0.001 * 0.04 + 0.001 * 0.04;
  const double step = 0.1 * (m2 / (1 - 0.81)) / (std::sqrt(v2 / (1 - 0.998001)) + 1e-8);
  EXPECT_NEAR(p[0], 0.5 - 0.1 * 0.2 / (0.2 + 1e-8) - step, 1e-12);
}

TEST(Adam, NonFiniteGradientAbortsBeforeUpdating) {
  TrainState s = initial_state(tiny_config(), 1);
  const TrainState before = s;
  NetworkParams<float> g = zeros_like(s.params);
  g.stages[0][0].block.layers[0].weight[3] = std::nanf("");
  try {
    adam_step(s, g, 1e-3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFinite);
  }
  EXPECT_EQ(s, before);
}

TEST(Loss, MeanSquaredError) {
  FloatPlane a(2, 2), b(2, 2);
  a.storage() = {0.0f, 0.5f, 1.0f, 0.25f};
  b.storage() = {0.0f, 0.0f, 0.5f, 0.25f};
  const auto r = mse_loss(a, b);
  EXPECT_NEAR(r.loss, (0.25 + 0.25) / 4, 1e-9);
  EXPECT_NEAR(r.grad(0, 1), 2 * 0.5 / 4, 1e-7);
  EXPECT_THROW(mse_loss(a, FloatPlane(3, 2)), Error);
}

TEST(Data, BatchesAreAlignedCrops) {
  const auto pairs = tiny_pairs(2);
  TrainConfig t = tiny_train(1);
  t.augment = false;
  Rng rng(3);
  const Batch b = sample_batch(pairs, t, 4, rng);
  ASSERT_EQ(b.lr.size(), 2u);
  EXPECT_EQ(b.lr[0].width(), 6);
  EXPECT_EQ(b.hr[0].width(), 24);
  // Downscaling the HR crop's source region reproduces the LR crop's source:
  // every LR pixel must appear in its pair's LR plane at the same offset.
  bool found = false;
  for (const auto& p : pairs)
    for (int y = 0; y + 6 <= p.lr.height() && !found; ++y)
      for (int x = 0; x + 6 <= p.lr.width() && !found; ++x)
        if (crop(p.lr, x, y, 6, 6).storage() == b.lr[0].storage())
          found = crop(p.hr, 4 * x, 4 * y, 24, 24).storage() == b.hr[0].storage();
  EXPECT_TRUE(found);
}

TEST(Data, PrepareSkipsBadFilesAndCaches) {
  testing::ScratchDir dir("prep");
  write_synthetic_set(dir / "hr", 3, 32, 28, 4);
  std::ofstream(dir / "hr" / "broken.png") << "garbage";
  PrepareStats cold, warm;
  const auto a = prepare_pairs({dir / "hr", 4, dir / "cache"}, &cold);
  EXPECT_EQ(cold.loaded, 3);
  EXPECT_EQ(cold.skipped, 1);
  EXPECT_EQ(cold.resampled, 3);
  const auto b = prepare_pairs({dir / "hr", 4, dir / "cache"}, &warm);
  EXPECT_EQ(warm.cache_hits, 3);
  EXPECT_EQ(warm.resampled, 0);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].lr.storage(), b[i].lr.storage());
  EXPECT_THROW(prepare_pairs({dir / "nothing", 4, {}}), Error);
}

TEST(Config, TrainConfigJsonOverlay) {
  TrainConfig t = TrainConfig::desk();
  nlohmann::json::parse(R"({"iterations": 7, "lr": 0.5})").get_to(t);
  EXPECT_EQ(t.iterations, 7u);
  EXPECT_EQ(t.lr, 0.5);
  EXPECT_EQ(t.batch_size, TrainConfig::desk().batch_size);
  EXPECT_EQ(nlohmann::json(t).get<TrainConfig>(), t);
  t.lr = -1;
  EXPECT_THROW(validate(t), Error);
}

TEST(Checkpoint, RoundTripIsExact) {
  testing::ScratchDir dir("ckpt");
  TrainState s = train(tiny_config(), tiny_train(3), tiny_pairs(5));
  save_checkpoint(s, dir / "a.ckpt");
  EXPECT_EQ(load_checkpoint(dir / "a.ckpt"), s);
  std::string bytes = serialize_checkpoint(s);
  EXPECT_EQ(deserialize_checkpoint(bytes), s);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), Error);
  EXPECT_THROW(deserialize_checkpoint("rclut-checkpoint 9\n"), Error);
}

TEST(Training, DeterministicAndResumable) {
  const auto pairs = tiny_pairs(6);
  std::vector<LossRecord> la, lb;
  const TrainState a = train(tiny_config(), tiny_train(12), pairs, {}, &la);
  const TrainState b = train(tiny_config(), tiny_train(12), pairs, {}, &lb);
  EXPECT_EQ(a, b);
  ASSERT_EQ(la.size(), lb.size());
  for (std::size_t i = 0; i < la.size(); ++i) EXPECT_EQ(la[i].loss, lb[i].loss);

  // Stop at 5, persist, resume to 12: identical to an uninterrupted run.
  TrainState half = train(tiny_config(), tiny_train(5), pairs);
  TrainState resumed = deserialize_checkpoint(serialize_checkpoint(half));
  train_continue(resumed, tiny_train(12), pairs);
  EXPECT_EQ(resumed, a);
}

TEST(Training, LossDecreasesAndCsvIsWritten) {
  testing::ScratchDir dir("train");
  const auto pairs = tiny_pairs(7);
  TrainOptions opt;
  opt.loss_csv = dir / "loss.csv";
  opt.checkpoint = dir / "m.ckpt";
  TrainConfig t = tiny_train(200);
  t.log_every = 50;
  std::vector<LossRecord> log;
  train(tiny_config(), t, pairs, opt, &log);
  ASSERT_GE(log.size(), 4u);
  double early = log[0].loss, late = log.back().loss;
  EXPECT_LT(late, early);
  EXPECT_TRUE(fs::exists(opt.checkpoint));
  std::ifstream csv(opt.loss_csv);
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "iteration,loss,wall_ms");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, static_cast<int>(log.size()));
}

}  // namespace
}  // namespace rclut
