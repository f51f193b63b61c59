#include <gtest/gtest.h>

#include <cmath>

#include "descan/diffusion.hpp"
#include "test_util.hpp"

using namespace descan;

namespace {

struct Moments {
  double mean = 0, var = 0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  for (double x : v) m.mean += x;
  m.mean /= v.size();
  for (double x : v) m.var += (x - m.mean) * (x - m.mean);
  m.var /= v.size();
  return m;
}

// Three standard errors for the mean and for the variance of a normal sample.
void expect_normal_moments(const std::vector<double>& v, double mean, double var) {
  const auto m = moments(v);
  const double n = static_cast<double>(v.size());
  EXPECT_NEAR(m.mean, mean, 3 * std::sqrt(var / n) + 1e-12);
  EXPECT_NEAR(m.var, var, 3 * var * std::sqrt(2.0 / (n - 1)) + 1e-12);
}

std::vector<std::pair<Image, Image>> tiny_pairs(int n, int size, std::uint64_t seed) {
  std::vector<std::pair<Image, Image>> out;
  for (int i = 0; i < n; ++i) {
    const Image o = testutil::random_image(size, size, seed + 2 * i, 0.3, 0.9);
    Image s = o;
    for (double& v : s.data()) v = 0.8 * v + 0.05;
    out.emplace_back(s, o);
  }
  return out;
}

}  // namespace

TEST(Schedule, SingleStep) {
  const auto s = make_linear_schedule(1, 0.01, 0.02);
  EXPECT_EQ(s.steps(), 1);
  EXPECT_EQ(s.beta(1), 0.01);
  EXPECT_DOUBLE_EQ(s.alpha_bar(1), 0.99);
}

TEST(Schedule, TwoStepProduct) {
  const auto s = make_linear_schedule(2, 0.1, 0.2);
  EXPECT_DOUBLE_EQ(s.alpha_bar(2), 0.9 * 0.8);
  EXPECT_DOUBLE_EQ(s.sigma(2), std::sqrt(0.2));
}

TEST(Schedule, InvariantsForLongAndDefaultSchedules) {
  for (const auto& s : {make_linear_schedule(1000, 1e-4, 0.02), make_default_schedule(200)}) {
    EXPECT_EQ(s.alpha_bar(0), 1.0);
    for (int t = 1; t <= s.steps(); ++t) {
      EXPECT_GT(s.beta(t), 0.0);
      if (t > 1) {
        EXPECT_GE(s.beta(t), s.beta(t - 1));
        EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
      }
      EXPECT_NEAR(s.alpha(t) * s.alpha_bar(t - 1), s.alpha_bar(t), 1e-15);
    }
    EXPECT_LT(s.alpha_bar(1), 1.0);
  }
}

TEST(Schedule, DefaultRescalesCanonicalRange) {
  const auto s = make_default_schedule(200);
  EXPECT_EQ(s.steps(), 200);
  EXPECT_DOUBLE_EQ(s.beta(1), 5e-4);
  EXPECT_DOUBLE_EQ(s.beta(200), 0.1);
}

TEST(Schedule, InvalidBoundsAreConfigErrors) {
  for (auto [t, b1, bt] : {std::tuple{0, 0.1, 0.2}, {5, 0.0, 0.2}, {5, 0.3, 0.2}, {5, 0.1, 1.0}}) {
    try {
      make_linear_schedule(t, b1, bt);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::config);
    }
  }
  EXPECT_THROW(make_default_schedule(200).beta(201), Error);
}

TEST(ForwardSample, ZeroNoise) {
  const auto s = make_default_schedule(50);
  const std::vector<double> x0{0.5, -0.25}, eps{0.0, 0.0};
  const auto xt = forward_sample<double>(x0, 20, eps, s);
  EXPECT_DOUBLE_EQ(xt[0], std::sqrt(s.alpha_bar(20)) * 0.5);
  EXPECT_DOUBLE_EQ(xt[1], std::sqrt(s.alpha_bar(20)) * -0.25);
}

TEST(ForwardSample, NoNoiseLimit) {
  const auto s = NoiseSchedule::from_betas({0.0});
  const std::vector<double> x0{0.3}, eps{1.7};
  EXPECT_EQ(forward_sample<double>(x0, 1, eps, s)[0], 0.3);
}

TEST(ForwardSample, HandArithmetic) {
  // abar_1 = 0.25
  const auto s = NoiseSchedule::from_betas({0.75});
  const std::vector<double> x0{1.0}, eps{0.5};
  EXPECT_NEAR(forward_sample<double>(x0, 1, eps, s)[0], 0.5 + std::sqrt(0.75) * 0.5, 1e-15);
  EXPECT_NEAR(forward_sample<double>(x0, 1, eps, s)[0], 0.93301, 1e-5);
}

TEST(ForwardSample, ShapeMismatch) {
  const auto s = make_default_schedule(10);
  const std::vector<double> a{1.0, 2.0}, b{1.0};
  EXPECT_THROW(forward_sample<double>(a, 1, b, s), Error);
}

TEST(ReverseStep, ZeroPrediction) {
  const auto s = make_default_schedule(100);
  const std::vector<double> x{0.4, -0.8}, zero{0.0, 0.0};
  const auto out = reverse_step<double>(x, 37, zero, s, zero);
  EXPECT_DOUBLE_EQ(out[0], 0.4 / std::sqrt(s.alpha(37)));
  EXPECT_DOUBLE_EQ(out[1], -0.8 / std::sqrt(s.alpha(37)));
}

TEST(ReverseStep, HandArithmeticChainedFromForward) {
  // alpha_2 = 0.5 and abar_2 = 0.25 with beta_1 = 0.5
  const auto s = NoiseSchedule::from_betas({0.5, 0.5});
  ASSERT_DOUBLE_EQ(s.alpha_bar(2), 0.25);
  const std::vector<double> x{0.9330}, eps{0.5};
  const double expected = (0.9330 - (0.5 / std::sqrt(0.75)) * 0.5) / std::sqrt(0.5);
  EXPECT_NEAR(reverse_step<double>(x, 2, eps, s, {})[0], expected, 1e-15);
  EXPECT_NEAR(expected, 0.9112, 5e-4);
}

TEST(ReverseStep, Errors) {
  const auto s = make_default_schedule(10);
  const std::vector<double> x{0.1}, e{0.0}, z{0.3};
  EXPECT_THROW(reverse_step<double>(x, 0, e, s, {}), Error);
  EXPECT_THROW(reverse_step<double>(x, 11, e, s, {}), Error);
  EXPECT_THROW(reverse_step<double>(x, 1, e, s, z), Error);
  EXPECT_NO_THROW(reverse_step<double>(x, 2, e, s, z));
}

TEST(ReverseStep, InvertsForwardAtFirstStep) {
  const auto s = make_default_schedule(200);
  CounterRng rng(3);
  std::vector<double> x0(64), eps(64);
  for (auto& v : x0) v = rng.uniform(-1, 1);
  for (auto& v : eps) v = rng.normal();
  const auto xt = forward_sample<double>(x0, 1, eps, s);
  const auto back = reverse_step<double>(xt, 1, eps, s, {});
  for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_NEAR(back[i], x0[i], 1e-5);
}

TEST(ForwardProcess, MomentLaw) {
  const auto s = make_default_schedule(200);
  const double x0 = 0.6;
  for (int t : {1, 100, 200}) {
    CounterRng rng = CounterRng::keyed(11, t);
    std::vector<double> eps(100000), base(100000, x0);
    for (auto& e : eps) e = rng.normal();
    const auto xt = forward_sample<double>(base, t, eps, s);
    expect_normal_moments(xt, std::sqrt(s.alpha_bar(t)) * x0, 1.0 - s.alpha_bar(t));
  }
}

TEST(ForwardProcess, IteratedChainMatchesClosedForm) {
  const auto s = make_default_schedule(200);
  const int n = 100000;
  std::vector<double> x(n, 0.0);
  CounterRng rng(21);
  for (int t = 1; t <= 200; ++t) {
    const double a = std::sqrt(s.alpha(t)), b = std::sqrt(s.beta(t));
    for (auto& v : x) v = a * v + b * rng.normal();
    if (t == 1 || t == 50 || t == 200) expect_normal_moments(x, 0.0, 1.0 - s.alpha_bar(t));
  }
}

TEST(TrainingStep, ZeroDenoiserLossIsHalfNormalMean) {
  // A fresh denoiser has a zero output layer.
  const DenoiserNet net;
  const auto s = make_default_schedule(200);
  CounterRng rng(1);
  const auto x = nn::Tensor<float>::zeros({4, 3, 32, 32});
  const auto r = training_step(net, x, x, nn::Tensor<float>::zeros({4, 6}), s, rng);
  EXPECT_NEAR(r.loss, std::sqrt(2.0 / M_PI), 0.02 * std::sqrt(2.0 / M_PI));
  for (int t : r.steps) {
    EXPECT_GE(t, 1);
    EXPECT_LE(t, 200);
  }
}

TEST(TrainingStep, DeterministicForSeed) {
  DenoiserNet a({8, 16, true, 4}), b({8, 16, true, 4});
  const auto s = make_default_schedule(200);
  const auto x = nn::Tensor<float>({1, 3, 8, 8}, std::vector<float>(192, 0.1f));
  CounterRng ra(9), rb(9);
  const auto ea = training_step(a, x, x, nn::Tensor<float>::zeros({1, 6}), s, ra);
  const auto eb = training_step(b, x, x, nn::Tensor<float>::zeros({1, 6}), s, rb);
  EXPECT_EQ(ea.steps, eb.steps);
  EXPECT_EQ(ea.eps, eb.eps);
  EXPECT_EQ(ea.loss, eb.loss);
}

TEST(TrainingStep, ZeroOutputLossIsMeanAbsNoise) {
  const DenoiserNet net;
  CounterRng rng(2);
  const auto x = nn::Tensor<float>::zeros({1, 3, 8, 8});
  const auto r = training_step(net, x, x, nn::Tensor<float>::zeros({1, 6}), make_default_schedule(20), rng);
  double expect = 0;
  for (float e : r.eps) expect += std::fabs(e);
  EXPECT_NEAR(r.loss, expect / r.eps.size(), 1e-6);
  // with the noise forced to zero the same residual vanishes
  nn::NoGrad ng;
  const auto out = net.forward(x, x, r.steps, nn::Tensor<float>::zeros({1, 6}));
  EXPECT_EQ(nn::mean_abs(nn::sub(x, out)).item(), 0.0f);
}

TEST(TrainingStep, ShapeMismatchRejected) {
  const DenoiserNet net;
  CounterRng rng(1);
  EXPECT_THROW(training_step(net, nn::Tensor<float>::zeros({1, 3, 8, 8}), nn::Tensor<float>::zeros({1, 3, 8, 16}),
                             nn::Tensor<float>::zeros({1, 6}), make_default_schedule(10), rng),
               Error);
}

TEST(TrainLgrdm, EncoderFrozenAndLogLength) {
  const auto pairs = tiny_pairs(2, 16, 5);
  ColorEncoderNet enc(nn::ColorEncoderSpec{{8, 16, 32, 32}, 2});
  const auto before = enc.params().hash();
  LgrdmConfig cfg;
  cfg.steps = 7;
  cfg.batch = 2;
  cfg.patch = 8;
  cfg.arch = {8, 16, true, 0};
  const auto r = train_lgrdm(pairs, &enc, make_default_schedule(50), cfg);
  EXPECT_EQ(r.loss_log.size(), 7u);
  EXPECT_EQ(enc.params().hash(), before);
  for (double l : r.loss_log) EXPECT_TRUE(std::isfinite(l));
}

TEST(TrainLgrdm, DeterministicWeights) {
  const auto pairs = tiny_pairs(3, 16, 6);
  ColorEncoderNet enc;
  LgrdmConfig cfg;
  cfg.steps = 5;
  cfg.batch = 2;
  cfg.patch = 8;
  cfg.seed = 3;
  cfg.arch = {8, 16, true, 0};
  const auto s = make_default_schedule(50);
  const auto a = train_lgrdm(pairs, &enc, s, cfg), b = train_lgrdm(pairs, &enc, s, cfg);
  EXPECT_EQ(a.denoiser.params().hash(), b.denoiser.params().hash());
  EXPECT_EQ(a.loss_log, b.loss_log);
}

TEST(TrainLgrdm, Errors) {
  ColorEncoderNet enc;
  const auto s = make_default_schedule(10);
  try {
    train_lgrdm({}, &enc, s, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
  }
  LgrdmConfig cfg;
  cfg.oracle_color = true;
  cfg.steps = 1;
  cfg.batch = 1;
  cfg.patch = 8;
  EXPECT_NO_THROW(train_lgrdm(tiny_pairs(1, 16, 1), nullptr, s, cfg));
  cfg.oracle_color = false;
  EXPECT_THROW(train_lgrdm(tiny_pairs(1, 16, 1), nullptr, s, cfg), Error);
}

TEST(TrainLgrdm, DivergenceAborts) {
  LgrdmConfig cfg;
  cfg.steps = 400;
  cfg.batch = 1;
  cfg.patch = 8;
  cfg.lr = 1000.0;
  cfg.oracle_color = true;
  cfg.arch = {8, 16, true, 0};
  try {
    train_lgrdm(tiny_pairs(1, 8, 2), nullptr, make_default_schedule(50), cfg);
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::divergence);
    EXPECT_EQ(e.exit_code(), 6);
  }
}

TEST(DivergenceMonitor, NeedsConsecutiveSteps) {
  DivergenceMonitor m;
  EXPECT_FALSE(m.update(1.0));
  for (int i = 0; i < 99; ++i) EXPECT_FALSE(m.update(10.5));
  EXPECT_FALSE(m.update(9.0));  // resets the run
  for (int i = 0; i < 99; ++i) EXPECT_FALSE(m.update(11.0));
  EXPECT_TRUE(m.update(11.0));
}

TEST(Descan, ZeroDenoiserSingleStepIsCorrection) {
  // beta_1 -> 0: the single reverse step leaves I_c in place.
  const auto s = NoiseSchedule::from_betas({1e-12, 0.01});
  const DenoiserNet net;
  ColorEncoderNet enc;
  const Image scan = testutil::random_image(16, 16, 3, 0.2, 0.8);
  DescanOptions opt;
  opt.start_step = 1;
  const auto r = descan::descan(scan, &enc, net, s, opt);
  EXPECT_EQ(r.reverse_steps, 1);
  for (std::size_t i = 0; i < scan.data().size(); ++i)
    EXPECT_NEAR(r.restored.data()[i], std::clamp(r.corrected.data()[i], 0.0, 1.0), 1e-5);
}

TEST(Descan, StepCountAndDefaults) {
  const auto s = make_default_schedule(20);
  const DenoiserNet net({8, 16, true, 0});
  ColorEncoderNet enc;
  const Image scan = testutil::random_image(16, 16, 4);
  for (int to : {1, 7, 20}) {
    DescanOptions opt;
    opt.start_step = to;
    EXPECT_EQ(descan::descan(scan, &enc, net, s, opt).reverse_steps, to);
  }
  EXPECT_EQ(descan::descan(scan, &enc, net, s).reverse_steps, 10);
  DescanOptions bad;
  bad.start_step = 21;
  EXPECT_THROW(descan::descan(scan, &enc, net, s, bad), Error);
}

TEST(Descan, DeterministicAndClamped) {
  const auto s = make_default_schedule(20);
  DenoiserNet net({8, 16, true, 1});
  CounterRng rng(8);
  for (auto& [name, t] : net.params().entries())
    for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-0.2, 0.2));
  ColorEncoderNet enc;
  const Image scan = testutil::random_image(17, 15, 5);  // odd sides are padded internally
  DescanOptions opt;
  opt.seed = 12;
  const auto a = descan::descan(scan, &enc, net, s, opt), b = descan::descan(scan, &enc, net, s, opt);
  EXPECT_EQ(a.restored, b.restored);
  EXPECT_EQ(a.restored.height(), 17);
  EXPECT_EQ(a.restored.width(), 15);
  for (double v : a.restored.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  opt.noise_init = true;
  EXPECT_NE(descan::descan(scan, &enc, net, s, opt).restored, a.restored);
}

TEST(Descan, OracleColorOverridesEncoder) {
  const auto s = make_default_schedule(20);
  const DenoiserNet net;
  const Image scan = testutil::random_image(16, 16, 6), orig = testutil::random_image(16, 16, 7);
  const auto target = channel_stats(orig);
  DescanOptions opt;
  opt.start_step = 1;
  opt.oracle_color = &target;
  const auto r = descan::descan(scan, nullptr, net, s, opt);
  EXPECT_EQ(r.color.values, target.values);
  const auto got = channel_stats(r.corrected);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(got.mean(k), target.mean(k), 1e-6);
}
