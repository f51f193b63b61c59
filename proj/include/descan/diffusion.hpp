#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "descan/colorcorrect.hpp"
#include "descan/error.hpp"
#include "descan/image.hpp"
#include "descan/nn/networks.hpp"
#include "descan/nn/ops.hpp"
#include "descan/rng.hpp"
#include "descan/tensor_image.hpp"

namespace descan {

// Tables are indexed by t in 1..T.
class NoiseSchedule {
 public:
  static NoiseSchedule from_betas(std::vector<double> betas) {
    require(!betas.empty(), "noise schedule needs at least one step");
    NoiseSchedule s;
    s.beta_ = std::move(betas);
    double prod = 1.0;
    for (double b : s.beta_) {
      require(b >= 0.0 && b < 1.0, "noise schedule: beta outside [0,1)");
      s.alpha_.push_back(1.0 - b);
      prod *= 1.0 - b;
      s.alpha_bar_.push_back(prod);
    }
    return s;
  }

  int steps() const { return static_cast<int>(beta_.size()); }
  double beta(int t) const { return beta_.at(index(t)); }
  double alpha(int t) const { return alpha_.at(index(t)); }
  // alpha_bar(0) is 1 by convention.
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bar_.at(index(t)); }
  double sigma(int t) const { return std::sqrt(beta(t)); }

 private:
  std::size_t index(int t) const {
    if (t < 1 || t > steps())
      fail(ErrorKind::invalid_argument, "timestep " + std::to_string(t) + " outside [1," + std::to_string(steps()) + "]");
    return static_cast<std::size_t>(t - 1);
  }

  std::vector<double> beta_, alpha_, alpha_bar_;
};

inline NoiseSchedule make_linear_schedule(int steps, double beta_first, double beta_last) {
  if (steps < 1 || !(beta_first > 0.0) || !(beta_first <= beta_last) || !(beta_last < 1.0))
    fail(ErrorKind::config, "invalid linear schedule: need T >= 1 and 0 < beta_1 <= beta_T < 1");
  std::vector<double> b(steps);
  for (int t = 0; t < steps; ++t)
    b[t] = steps == 1 ? beta_first : beta_first + (beta_last - beta_first) * t / (steps - 1);
  return NoiseSchedule::from_betas(std::move(b));
}

// The canonical 1000-step linear range, rescaled by 1000/T.
inline NoiseSchedule make_default_schedule(int steps) {
  const double k = 1000.0 / steps;
  return make_linear_schedule(steps, 1e-4 * k, std::min(0.02 * k, 0.999));
}

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
template <class T>
std::vector<T> forward_sample(std::span<const T> x0, int t, std::span<const T> eps, const NoiseSchedule& s) {
  if (x0.size() != eps.size()) fail(ErrorKind::invalid_argument, "forward_sample: eps shape differs from x0");
  const double ab = s.alpha_bar(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  std::vector<T> out(x0.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(a * x0[i] + b * eps[i]);
  return out;
}

// x_{t-1} = (x_t - (1 - alpha_t) / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t) + sigma_t z
// z must be empty or all zero at t = 1.
template <class T>
std::vector<T> reverse_step(std::span<const T> x_t, int t, std::span<const T> eps_hat, const NoiseSchedule& s,
                            std::span<const T> z) {
  if (t < 1 || t > s.steps())
    fail(ErrorKind::invalid_argument, "reverse_step: t=" + std::to_string(t) + " out of range");
  if (eps_hat.size() != x_t.size() || (!z.empty() && z.size() != x_t.size()))
    fail(ErrorKind::invalid_argument, "reverse_step: shape mismatch");
  if (t == 1)
    for (T v : z)
      if (v != T(0)) fail(ErrorKind::invalid_argument, "reverse_step: z must be zero at t=1");
  const double coef = (1.0 - s.alpha(t)) / std::sqrt(1.0 - s.alpha_bar(t));
  const double inv = 1.0 / std::sqrt(s.alpha(t));
  const double sigma = s.sigma(t);
  std::vector<T> out(x_t.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = inv * (x_t[i] - coef * eps_hat[i]);
    if (!z.empty()) v += sigma * z[i];
    out[i] = static_cast<T>(v);
  }
  return out;
}

using DenoiserNet = nn::Denoiser<float>;

enum class LossKind { mean_abs, mean_square };

struct TrainingStepResult {
  double loss = 0.0;
  std::vector<int> steps;
  std::vector<float> eps;
};

// One noise-prediction step on a batch; gradients accumulate into the
// denoiser's parameters. original, condition: [N, 3, H, W] latents.
template <class T>
TrainingStepResult training_step(const nn::Denoiser<T>& denoiser, const nn::Tensor<T>& original,
                                 const nn::Tensor<T>& condition, const nn::Tensor<T>& color, const NoiseSchedule& s,
                                 CounterRng& rng, LossKind kind = LossKind::mean_abs) {
  if (original.shape() != condition.shape()) nn::shape_error("training_step", original.shape(), condition.shape());
  const int n = original.dim(0);
  const std::size_t per = original.size() / n;
  TrainingStepResult r;
  for (int i = 0; i < n; ++i) r.steps.push_back(static_cast<int>(rng.uniform_int(1, s.steps())));
  r.eps.resize(original.size());
  for (auto& e : r.eps) e = static_cast<float>(rng.normal());

  std::vector<T> xt(original.size()), ev(original.size());
  for (int i = 0; i < n; ++i) {
    const double a = std::sqrt(s.alpha_bar(r.steps[i])), b = std::sqrt(1.0 - s.alpha_bar(r.steps[i]));
    for (std::size_t j = i * per; j < (i + 1) * per; ++j) {
      ev[j] = static_cast<T>(r.eps[j]);
      xt[j] = static_cast<T>(a * original.data()[j] + b * r.eps[j]);
    }
  }
  nn::Tensor<T> x_t(original.shape(), std::move(xt));
  nn::Tensor<T> eps(original.shape(), std::move(ev));
  auto diff = nn::sub(eps, denoiser.forward(x_t, condition, r.steps, color));
  auto loss = kind == LossKind::mean_abs ? nn::mean_abs(diff) : nn::mean_square(diff);
  r.loss = loss.item();
  if (!std::isfinite(r.loss)) {
    std::string ts;
    for (int t : r.steps) ts += (ts.empty() ? "" : ",") + std::to_string(t);
    fail(ErrorKind::divergence, "non-finite training loss at t=" + ts);
  }
  if (loss.requires_grad()) nn::backward(loss);
  return r;
}

// What the denoiser is conditioned on, and where sampling starts.
enum class ConditionSource { corrected, scanned };

struct LgrdmConfig {
  int steps = 3000;
  int batch = 8;
  int patch = 32;
  double lr = 2e-3;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::mean_abs;
  ConditionSource condition = ConditionSource::corrected;
  bool color_condition = true;
  bool oracle_color = false;  // use true original statistics instead of the encoder
  bool augment = true;        // random dihedral view per patch
  nn::AdamConfig adam{};  // lr above takes precedence
  nn::DenoiserSpec arch{};
};

struct LgrdmTrainResult {
  DenoiserNet denoiser;
  std::vector<double> loss_log;
};

// Conditioning inputs for one pair, computed with the frozen encoder.
struct Conditioning {
  Image condition;  // I_c, or I_s for the scanned-condition ablation
  ColorStats color;
};

inline Conditioning make_conditioning(const ColorEncoderNet* encoder, const Image& scanned, const Image* original,
                                      ConditionSource source, bool oracle_color) {
  ColorStats v;
  if (oracle_color) {
    require(original != nullptr, "oracle color statistics need the original image");
    v = channel_stats(*original);
  } else {
    require(encoder != nullptr, "color encoder required");
    v = predict_color_vector(*encoder, scanned);
  }
  if (source == ConditionSource::scanned) return {scanned, v};
  return {renormalize(scanned, v), v};
}

namespace detail {

inline nn::Tensor<float> color_batch(const std::vector<ColorStats>& v) {
  std::vector<float> data;
  for (const auto& s : v)
    for (double x : s.values) data.push_back(static_cast<float>(x));
  return nn::Tensor<float>({static_cast<int>(v.size()), 6}, std::move(data));
}

}  // namespace detail

// Flags a run whose loss stays above factor x the first loss for `patience`
// consecutive steps.
struct DivergenceMonitor {
  double factor = 10.0;
  int patience = 100;
  double reference = -1.0;
  int over = 0;

  bool update(double loss) {
    if (reference < 0.0) {
      reference = loss;
      return false;
    }
    over = loss > factor * reference ? over + 1 : 0;
    return over >= patience;
  }
};

// Noise-prediction training with a frozen color encoder: pairs are aligned
// (scanned, original) images. The encoder is only read, under NoGrad.
inline LgrdmTrainResult train_lgrdm(const std::vector<std::pair<Image, Image>>& pairs, const ColorEncoderNet* encoder,
                                    const NoiseSchedule& schedule, const LgrdmConfig& cfg,
                                    const std::function<void(int, double)>& on_step = {}) {
  if (pairs.empty()) fail(ErrorKind::data, "train_lgrdm: empty training split");
  require(cfg.steps >= 0 && cfg.batch >= 1 && cfg.patch >= 2 && cfg.patch % 2 == 0,
          "train_lgrdm: invalid step budget, batch or patch size");
  nn::DenoiserSpec arch = cfg.arch;
  arch.color_condition = cfg.color_condition;
  arch.init_seed = cfg.seed;
  LgrdmTrainResult result{DenoiserNet(arch), {}};
  auto& net = result.denoiser;

  std::vector<Conditioning> cond;
  int patch = cfg.patch;
  for (const auto& [scan, orig] : pairs) {
    require_same_size(scan, orig, "train_lgrdm");
    cond.push_back(make_conditioning(encoder, scan, &orig, cfg.condition, cfg.oracle_color));
    patch = std::min(patch, std::min(scan.height(), scan.width()) / 2 * 2);
  }

  nn::OptimizerState opt;
  opt.config = cfg.adam;
  opt.config.lr = cfg.lr;
  auto params = net.trainable();
  CounterRng data_rng = CounterRng::keyed(cfg.seed, 0xDA7A);
  CounterRng noise_rng = CounterRng::keyed(cfg.seed, 0x0015E);
  DivergenceMonitor monitor;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<Image> orig_patches, cond_patches;
    std::vector<ColorStats> colors;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto i = static_cast<std::size_t>(data_rng.uniform_int(0, static_cast<std::int64_t>(pairs.size()) - 1));
      const Image& orig = pairs[i].second;
      const int y = static_cast<int>(data_rng.uniform_int(0, orig.height() - patch));
      const int x = static_cast<int>(data_rng.uniform_int(0, orig.width() - patch));
      const int k = cfg.augment ? static_cast<int>(data_rng.uniform_int(0, 7)) : 0;
      orig_patches.push_back(dihedral(crop(orig, y, x, patch, patch), k));
      cond_patches.push_back(dihedral(crop(cond[i].condition, y, x, patch, patch), k));
      colors.push_back(cond[i].color);
    }
    std::vector<const Image*> po, pc;
    for (int b = 0; b < cfg.batch; ++b) po.push_back(&orig_patches[b]), pc.push_back(&cond_patches[b]);

    net.params().zero_grad();
    const auto r = training_step(net, to_latent<float>(po), to_latent<float>(pc), detail::color_batch(colors), schedule,
                                 noise_rng, cfg.loss);
    nn::adam_step(params, opt);
    result.loss_log.push_back(r.loss);
    if (on_step) on_step(step, r.loss);

    if (monitor.update(r.loss))
      fail(ErrorKind::divergence, "train_lgrdm: loss above 10x its initial level for 100 steps (step " +
                                      std::to_string(step) + ")");
  }
  return result;
}

struct DescanOptions {
  int start_step = 0;  // T_o; 0 selects T/2
  std::uint64_t seed = 0;
  bool noise_init = false;  // forward-noise I_c to t = T_o before sampling
  ConditionSource condition = ConditionSource::corrected;
  const ColorStats* oracle_color = nullptr;
};

struct DescanResult {
  Image restored;
  Image corrected;
  ColorStats color;
  int reverse_steps = 0;
  double reverse_seconds = 0.0;
};

// Truncated reverse sampling that starts at x_{T_o} = I_c.
inline DescanResult descan(const Image& scanned, const ColorEncoderNet* encoder, const DenoiserNet& denoiser,
                           const NoiseSchedule& schedule, const DescanOptions& opt = {}) {
  const int t_start = opt.start_step == 0 ? std::max(1, schedule.steps() / 2) : opt.start_step;
  if (t_start < 1 || t_start > schedule.steps())
    fail(ErrorKind::invalid_argument, "descan: T_o=" + std::to_string(t_start) + " outside [1," +
                                          std::to_string(schedule.steps()) + "]");
  // The UNet needs even sides; replicate the last row/column if necessary.
  const int h = scanned.height(), w = scanned.width();
  const int ph = h + (h % 2), pw = w + (w % 2);
  Image input = scanned;
  if (ph != h || pw != w) {
    input = Image(ph, pw);
    for (int y = 0; y < ph; ++y)
      for (int x = 0; x < pw; ++x)
        for (int c = 0; c < 3; ++c) input.at(y, x, c) = scanned.at(std::min(y, h - 1), std::min(x, w - 1), c);
  }

  DescanResult out;
  Conditioning cond;
  if (opt.oracle_color) {
    cond = {opt.condition == ConditionSource::scanned ? input : renormalize(input, *opt.oracle_color),
            *opt.oracle_color};
  } else {
    cond = make_conditioning(encoder, input, nullptr, opt.condition, false);
  }
  out.color = cond.color;
  out.corrected = crop(cond.condition, 0, 0, h, w);

  nn::NoGrad no_grad;
  const auto cond_t = to_latent<float>(cond.condition);
  const auto color_t = detail::color_batch({cond.color});
  std::vector<float> x(cond_t.data().begin(), cond_t.data().end());
  CounterRng rng = CounterRng::keyed(opt.seed, 0x5A3B1E);
  if (opt.noise_init) {
    std::vector<float> eps(x.size());
    for (auto& e : eps) e = static_cast<float>(rng.normal());
    x = forward_sample<float>(x, t_start, eps, schedule);
  }

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<float> z(x.size());
  for (int t = t_start; t >= 1; --t) {
    nn::Tensor<float> xt(cond_t.shape(), x);
    const auto eps_hat = denoiser.forward(xt, cond_t, {t}, color_t);
    if (t > 1) {
      for (auto& v : z) v = static_cast<float>(rng.normal());
      x = reverse_step<float>(x, t, eps_hat.data(), schedule, z);
    } else {
      x = reverse_step<float>(x, t, eps_hat.data(), schedule, {});
    }
    for (float v : x)
      if (!std::isfinite(v)) fail(ErrorKind::divergence, "descan: non-finite value at step " + std::to_string(t));
    ++out.reverse_steps;
  }
  out.reverse_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.restored = clamp01(crop(from_latent<float>(x, 0, ph, pw), 0, 0, h, w));
  return out;
}

}  // namespace descan
