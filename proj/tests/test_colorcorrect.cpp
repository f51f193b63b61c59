#include <gtest/gtest.h>

#include <cmath>

#include "descan/colorcorrect.hpp"
#include "test_util.hpp"

using namespace descan;

namespace {

ColorStats stats(std::array<double, 6> v) {
  ColorStats s;
  s.values = v;
  return s;
}

ColorStats random_target(CounterRng& rng) {
  ColorStats s;
  for (int k = 0; k < 3; ++k) {
    s.values[k] = rng.uniform(0.1, 0.9);
    s.values[3 + k] = rng.uniform(0.01, 0.3);
  }
  return s;
}

}  // namespace

TEST(Renormalize, SelfStatisticsIsNearIdentity) {
  const Image img = testutil::random_image(16, 16, 1);
  const auto s = channel_stats(img);
  const Image out = renormalize(img, s);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      for (int c = 0; c < 3; ++c) {
        const double sd = s.stddev(c);
        const double bound = std::fabs(img.at(y, x, c) - s.mean(c)) * kRenormEpsilon / (sd + kRenormEpsilon);
        EXPECT_NEAR(out.at(y, x, c), img.at(y, x, c), bound + 1e-15);
      }
}

TEST(Renormalize, ConstantImageMapsToTargetMeans) {
  const Image out = renormalize(Image(5, 5, 0.42), stats({0.1, 0.5, 0.9, 0.2, 0.3, 0.4}));
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) {
      EXPECT_DOUBLE_EQ(out.at(y, x, 0), 0.1);
      EXPECT_DOUBLE_EQ(out.at(y, x, 1), 0.5);
      EXPECT_DOUBLE_EQ(out.at(y, x, 2), 0.9);
    }
}

TEST(Renormalize, TwoPixelHandEvaluation) {
  Image img(1, 2, 0.3);
  img.at(0, 0, 0) = 0.2;
  img.at(0, 1, 0) = 0.4;
  const Image out = renormalize(img, stats({0.5, 0.5, 0.5, 0.2, 0.2, 0.2}));
  // 0.5 -/+ 0.1 / (0.1 + 2^-16) * 0.2
  const double d = 0.02 / (0.1 + std::ldexp(1.0, -16));
  EXPECT_NEAR(out.at(0, 0, 0), 0.5 - d, 1e-15);
  EXPECT_NEAR(out.at(0, 1, 0), 0.5 + d, 1e-15);
  EXPECT_NEAR(out.at(0, 0, 0), 0.3000305, 1e-7);
  EXPECT_NEAR(out.at(0, 1, 0), 0.6999695, 1e-7);
}

TEST(Renormalize, OutputIsNotClamped) {
  const Image img = testutil::random_image(8, 8, 2);
  const Image out = renormalize(img, stats({0.95, 0.95, 0.95, 0.5, 0.5, 0.5}));
  double hi = 0.0;
  for (double v : out.data()) hi = std::max(hi, v);
  EXPECT_GT(hi, 1.0);
}

TEST(Renormalize, ExactStatisticsProperty) {
  CounterRng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const Image img = testutil::random_image(24, 24, 1000 + trial, rng.uniform(0.0, 0.3), rng.uniform(0.6, 1.0));
    const auto src = channel_stats(img);
    const auto target = random_target(rng);
    const auto got = channel_stats(renormalize(img, target));
    for (int k = 0; k < 3; ++k) {
      EXPECT_NEAR(got.mean(k), target.mean(k), 1e-6);
      EXPECT_NEAR(got.stddev(k), target.stddev(k) * src.stddev(k) / (src.stddev(k) + kRenormEpsilon), 1e-6);
    }
  }
}

TEST(Renormalize, AffineChannelTransformsAreRemoved) {
  CounterRng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Image img = testutil::random_image(12, 12, 50 + trial);
    // the stabilizer does not scale with sigma, so invariance to gain is
    // only approximate; 1e-6 holds for gains near one and any offset
    const double a = rng.uniform(0.98, 1.02), b = rng.uniform(-0.5, 0.5);
    Image moved = img;
    for (double& v : moved.data()) v = a * v + b;
    const auto target = random_target(rng);
    const Image x = renormalize(img, target), y = renormalize(moved, target);
    for (std::size_t i = 0; i < x.data().size(); ++i) EXPECT_NEAR(x.data()[i], y.data()[i], 1e-6);
  }
}

TEST(Renormalize, LargeGainMatchesClosedForm) {
  const Image img = testutil::random_image(10, 10, 60);
  const auto s = channel_stats(img);
  const double a = 3.0, b = -0.2;
  Image moved = img;
  for (double& v : moved.data()) v = a * v + b;
  const auto target = stats({0.4, 0.5, 0.6, 0.1, 0.2, 0.3});
  const Image y = renormalize(moved, target);
  for (int i = 0; i < 100; ++i)
    for (int k = 0; k < 3; ++k) {
      const double z = a * (img.data()[i * 3 + k] - s.mean(k)) / (a * s.stddev(k) + kRenormEpsilon);
      EXPECT_NEAR(y.data()[i * 3 + k], target.mean(k) + target.stddev(k) * z, 1e-12);
    }
}

TEST(Correct, OracleStatisticsMatchOriginalMeans) {
  const Image scan = testutil::random_image(20, 20, 3, 0.3, 0.7), orig = testutil::random_image(20, 20, 4);
  const auto r = correct_with(scan, channel_stats(orig));
  const auto got = channel_stats(r.corrected), want = channel_stats(orig);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(got.mean(k), want.mean(k), 1e-6);
  EXPECT_EQ(r.source.values, channel_stats(scan).values);
  EXPECT_EQ(r.predicted.values, want.values);
}

TEST(Correct, FreshEncoderReproducesSourceStatistics) {
  // A zero head returns the input statistics, so the corrected image is the scan itself.
  ColorEncoderNet enc;
  const Image scan = testutil::random_image(16, 16, 5, 0.2, 0.8);
  const auto r = correct(enc, scan);
  for (int k = 0; k < 6; ++k) EXPECT_NEAR(r.predicted.values[k], r.source.values[k], 1e-5);
  for (std::size_t i = 0; i < scan.data().size(); ++i) EXPECT_NEAR(r.corrected.data()[i], scan.data()[i], 1e-4);
}

TEST(Correct, DeterministicUnderFixedWeights) {
  ColorEncoderNet enc(nn::ColorEncoderSpec{{8, 16, 32, 32}, 9});
  const Image scan = testutil::random_image(20, 24, 6);
  EXPECT_EQ(correct(enc, scan).corrected, correct(enc, scan).corrected);
  EXPECT_EQ(predict_color_vector(enc, scan).values, predict_color_vector(enc, scan).values);
}

TEST(PredictColorVector, TooSmallImageRejected) {
  ColorEncoderNet enc;
  EXPECT_THROW(predict_color_vector(enc, Image(15, 40)), Error);
}

TEST(PredictColorVector, StdsNonNegativeForRandomWeights) {
  ColorEncoderNet enc(nn::ColorEncoderSpec{{8, 16, 32, 32}, 3});
  CounterRng rng(4);
  for (auto& [name, t] : enc.params().entries())
    for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-0.3, 0.3));
  for (int i = 0; i < 10; ++i) {
    const auto v = predict_color_vector(enc, testutil::random_image(16, 16, 100 + i));
    for (int k = 0; k < 3; ++k) {
      EXPECT_GT(v.mean(k), 0.0);
      EXPECT_LT(v.mean(k), 1.0);
      EXPECT_GE(v.stddev(k), 0.0);
    }
  }
}

TEST(TrainColorEncoder, OverfitsSinglePair) {
  const Image orig = testutil::random_image(32, 32, 7, 0.5, 1.0);
  Image scan = orig;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      scan.at(y, x, 0) = 0.6 * orig.at(y, x, 0) + 0.1;
      scan.at(y, x, 2) = 0.8 * orig.at(y, x, 2);
    }
  ColorTrainConfig cfg;
  cfg.seed = 1;
  const auto r = train_color_encoder({{scan, orig}}, cfg);
  ASSERT_EQ(r.loss_log.size(), 500u);
  for (double l : r.loss_log) {
    EXPECT_TRUE(std::isfinite(l));
    EXPECT_GE(l, 0.0);
  }
  EXPECT_LT(r.loss_log.back(), 1e-2);
  EXPECT_LT(color_loss(channel_stats(orig), predict_color_vector(r.encoder, scan)), 1e-2);
}

TEST(TrainColorEncoder, DegenerateTargetStartsNearZero) {
  const Image img = testutil::random_image(16, 16, 8, 0.2, 0.8);
  ColorTrainConfig cfg;
  cfg.steps = 1;
  cfg.augment = false;
  EXPECT_LT(train_color_encoder({{img, img}}, cfg).loss_log.front(), 1e-5);
}

TEST(TrainColorEncoder, Errors) {
  EXPECT_THROW(train_color_encoder({}, {}), Error);
  EXPECT_THROW(train_color_encoder({{Image(8, 8), Image(8, 8)}}, {}), Error);
}

TEST(ColorLoss, NonNegativeEuclidean) {
  EXPECT_EQ(color_loss(stats({0, 0, 0, 0, 0, 0}), stats({0, 0, 0, 0, 0, 0})), 0.0);
  EXPECT_DOUBLE_EQ(color_loss(stats({0, 0, 0, 0, 0, 0}), stats({0.3, 0, 0, 0.4, 0, 0})), 0.5);
}

TEST(HistogramMatch, SelfMatchUpToQuantization) {
  const Image img = testutil::random_image(20, 20, 9);
  const Image out = histogram_match(img, img);
  for (std::size_t i = 0; i < img.data().size(); ++i) EXPECT_NEAR(out.data()[i], img.data()[i], 0.5 / 255 + 1e-12);
}

TEST(HistogramMatch, ConstantReference) {
  const Image out = histogram_match(testutil::random_image(10, 10, 2), Image(4, 7, 0.4));
  for (double v : out.data()) EXPECT_EQ(v, level8(0.4) / 255.0);
}

TEST(HistogramMatch, TwoLevelInversion) {
  Image src(2, 2, 0.0), ref(2, 2, 0.25);
  src.at(1, 0, 0) = src.at(1, 1, 0) = 1.0;
  ref.at(0, 0, 0) = ref.at(1, 1, 0) = 0.75;
  const Image out = histogram_match(src, ref);
  EXPECT_NEAR(out.at(0, 0, 0), 0.25, 0.5 / 255);
  EXPECT_NEAR(out.at(0, 1, 0), 0.25, 0.5 / 255);
  EXPECT_NEAR(out.at(1, 0, 0), 0.75, 0.5 / 255);
  EXPECT_NEAR(out.at(1, 1, 0), 0.75, 0.5 / 255);
}

TEST(HistogramMatch, KolmogorovDistanceWithinOneBin) {
  for (int seed = 0; seed < 3; ++seed) {
    const Image src = testutil::random_image(64, 64, 300 + seed, 0.0, 0.5);
    Image ref = testutil::random_image(80, 72, 400 + seed);
    for (double& v : ref.data()) v = v * v;  // skewed reference
    const Image out = histogram_match(src, ref);
    for (int k = 0; k < 3; ++k) {
      std::array<double, 256> co{}, cr{};
      for (std::size_t i = 0; i < out.pixel_count(); ++i) co[level8(out.data()[i * 3 + k])] += 1.0 / out.pixel_count();
      for (std::size_t i = 0; i < ref.pixel_count(); ++i) cr[level8(ref.data()[i * 3 + k])] += 1.0 / ref.pixel_count();
      double a = 0, b = 0, ks = 0;
      for (int j = 0; j < 256; ++j) ks = std::max(ks, std::fabs((a += co[j]) - (b += cr[j])));
      EXPECT_LE(ks, 1.0 / 256);
    }
  }
}

TEST(HistogramMatch, MonotoneInSource) {
  const Image src = testutil::random_image(16, 16, 11), ref = testutil::random_image(16, 16, 12);
  const Image out = histogram_match(src, ref);
  for (std::size_t i = 0; i < src.pixel_count(); ++i)
    for (std::size_t j = 0; j < src.pixel_count(); ++j)
      if (src.data()[i * 3] < src.data()[j * 3]) {
        EXPECT_LE(out.data()[i * 3], out.data()[j * 3]);
      }
}
