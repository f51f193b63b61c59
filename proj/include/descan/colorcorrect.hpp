#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "descan/error.hpp"
#include "descan/image.hpp"
#include "descan/nn/networks.hpp"
#include "descan/rng.hpp"
#include "descan/tensor_image.hpp"

namespace descan {

inline constexpr double kRenormEpsilon = 1.0 / 65536.0;  // 2^-16

// Per channel: (I - mu_s) / (sigma_s + eps) * sigma_target + mu_target.
// The output is not clamped.
inline Image renormalize(const Image& scanned, const ColorStats& target) {
  const ColorStats src = channel_stats(scanned);
  Image out = scanned;
  auto px = out.data();
  for (int k = 0; k < 3; ++k) {
    const double gain = target.stddev(k) / (src.stddev(k) + kRenormEpsilon);
    for (std::size_t i = k; i < px.size(); i += 3) px[i] = (px[i] - src.mean(k)) * gain + target.mean(k);
  }
  return out;
}

using ColorEncoderNet = nn::ColorEncoder<float>;

inline ColorStats to_color_stats(std::span<const float> v) {
  ColorStats s;
  for (int i = 0; i < 6; ++i) s.values[i] = v[i];
  return s;
}

inline ColorStats predict_color_vector(const ColorEncoderNet& encoder, const Image& scanned) {
  if (scanned.height() < nn::kColorEncoderMinSide || scanned.width() < nn::kColorEncoderMinSide)
    fail(ErrorKind::invalid_argument, "predict_color_vector: image smaller than the encoder's minimum input");
  nn::NoGrad no_grad;
  const auto out = encoder.forward(to_latent<float>(scanned));
  return to_color_stats(out.data());
}

struct CorrectionResult {
  Image corrected;
  ColorStats predicted;  // v_c
  ColorStats source;     // v_s
};

inline CorrectionResult correct_with(const Image& scanned, const ColorStats& target) {
  return {renormalize(scanned, target), target, channel_stats(scanned)};
}

inline CorrectionResult correct(const ColorEncoderNet& encoder, const Image& scanned) {
  return correct_with(scanned, predict_color_vector(encoder, scanned));
}

struct ColorTrainConfig {
  int steps = 500;
  int batch = 8;
  double lr = 3e-3;
  std::uint64_t seed = 0;
  bool augment = true;  // random flips/transposes; channel statistics are invariant under them
  nn::AdamConfig adam{};  // lr above takes precedence
};

struct ColorTrainResult {
  ColorEncoderNet encoder;
  std::vector<double> loss_log;  // one mean ||v_o - v_c||_2 per step
};

// Minimizes the mean unsquared L2 distance between predicted and true
// original statistics. Images of different sizes are handled one at a time
// with gradient accumulation.
inline ColorTrainResult train_color_encoder(const std::vector<std::pair<Image, Image>>& pairs,
                                            const ColorTrainConfig& cfg) {
  if (pairs.empty()) fail(ErrorKind::data, "train_color_encoder: empty training split");
  require(cfg.steps >= 0 && cfg.batch >= 1, "train_color_encoder: invalid step budget or batch");
  ColorTrainResult result{ColorEncoderNet(nn::ColorEncoderSpec{{8, 16, 32, 32}, cfg.seed}), {}};
  auto& enc = result.encoder;
  std::vector<std::vector<float>> targets;
  for (const auto& [scan, orig] : pairs) {
    if (scan.height() < nn::kColorEncoderMinSide || scan.width() < nn::kColorEncoderMinSide)
      fail(ErrorKind::data, "train_color_encoder: image smaller than the encoder's minimum input");
    const auto s = channel_stats(orig);
    targets.emplace_back(s.values.begin(), s.values.end());
  }
  const bool uniform_size = std::all_of(pairs.begin(), pairs.end(),
                                        [&](const auto& p) { return p.first.same_size(pairs.front().first); });

  nn::OptimizerState opt;
  opt.config = cfg.adam;
  opt.config.lr = cfg.lr;
  auto params = enc.trainable();
  CounterRng rng = CounterRng::keyed(cfg.seed, 0xC0102);
  const int batch = std::min<int>(cfg.batch, static_cast<int>(pairs.size()));
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<std::size_t> idx(batch);
    if (static_cast<int>(pairs.size()) == batch) {
      std::iota(idx.begin(), idx.end(), std::size_t{0});
    } else {
      for (auto& i : idx) i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pairs.size()) - 1));
    }
    enc.params().zero_grad();
    double step_loss = 0.0;
    std::vector<int> sym(batch, 0);
    if (cfg.augment)
      for (auto& k : sym) k = static_cast<int>(rng.uniform_int(0, 7));
    std::vector<Image> views(batch);
    for (int b = 0; b < batch; ++b) {
      const Image& img = pairs[idx[b]].first;
      views[b] = dihedral(img, img.height() == img.width() ? sym[b] : sym[b] & 3);
    }
    auto run = [&](const std::vector<int>& group) {
      std::vector<const Image*> imgs;
      std::vector<float> tv;
      for (int b : group) {
        imgs.push_back(&views[b]);
        tv.insert(tv.end(), targets[idx[b]].begin(), targets[idx[b]].end());
      }
      const int n = static_cast<int>(group.size());
      nn::Tensor<float> target({n, 6}, std::move(tv));
      auto pred = enc.forward(to_latent<float>(imgs));
      auto loss = nn::scale(nn::mean(nn::row_norm(nn::sub(pred, target))), static_cast<float>(n) / batch);
      step_loss += loss.item();
      nn::backward(loss);
    };
    if (uniform_size) {
      std::vector<int> all(batch);
      std::iota(all.begin(), all.end(), 0);
      run(all);
    } else {
      for (int b = 0; b < batch; ++b) run({b});
    }
    if (!std::isfinite(step_loss))
      fail(ErrorKind::divergence, "train_color_encoder: non-finite loss at step " + std::to_string(step));
    result.loss_log.push_back(step_loss);
    nn::adam_step(params, opt);
  }
  return result;
}

inline double color_loss(const ColorStats& truth, const ColorStats& predicted) {
  double acc = 0.0;
  for (int i = 0; i < 6; ++i) acc += (truth.values[i] - predicted.values[i]) * (truth.values[i] - predicted.values[i]);
  return std::sqrt(acc);
}

// ---------------------------------------------------------------------------
// Histogram matching baseline

inline int level8(double v) { return static_cast<int>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5)); }

// Exact histogram specification per channel on 256 levels. Source pixels are
// ranked by value (ties by position) and the pixel of rank r receives the
// reference level at quantile (r + 0.5) / N, so the output CDF tracks the
// reference CDF within half a pixel.
inline Image histogram_match(const Image& source, const Image& reference) {
  Image out = source;
  const std::size_t ns = source.pixel_count();
  const std::size_t nr = reference.pixel_count();
  auto spx = source.data();
  auto rpx = reference.data();
  auto opx = out.data();
  for (int k = 0; k < 3; ++k) {
    std::vector<std::size_t> ref_cdf(256, 0);
    for (std::size_t i = 0; i < nr; ++i) ++ref_cdf[level8(rpx[i * 3 + k])];
    for (int j = 1; j < 256; ++j) ref_cdf[j] += ref_cdf[j - 1];

    std::vector<std::size_t> order(ns);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return spx[a * 3 + k] < spx[b * 3 + k]; });
    int level = 0;
    for (std::size_t r = 0; r < ns; ++r) {
      // smallest level j with ref_cdf[j] / nr >= (r + 0.5) / ns, in integers
      while (level < 255 && 2 * ref_cdf[level] * ns < (2 * r + 1) * nr) ++level;
      opx[order[r] * 3 + k] = level / 255.0;
    }
  }
  return out;
}

}  // namespace descan
