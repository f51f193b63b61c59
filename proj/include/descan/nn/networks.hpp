#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "descan/error.hpp"
#include "descan/nn/ops.hpp"
#include "descan/nn/params.hpp"
#include "descan/rng.hpp"

namespace descan::nn {

// Sinusoidal timestep embedding, [N, dim]: the first half holds
// sin(t * f_i), the second half cos(t * f_i), with f_i = 10000^(-2i/dim).
template <class T>
Tensor<T> timestep_embedding(const std::vector<int>& steps, int dim) {
  require(dim > 0 && dim % 2 == 0, "timestep_embedding: dim must be even, got " + std::to_string(dim));
  require(!steps.empty(), "timestep_embedding: no timesteps");
  const int half = dim / 2;
  std::vector<T> v(steps.size() * static_cast<std::size_t>(dim));
  for (std::size_t n = 0; n < steps.size(); ++n) {
    require(steps[n] >= 0, "timestep_embedding: negative timestep");
    for (int i = 0; i < half; ++i) {
      const double freq = std::pow(10000.0, -2.0 * i / dim);
      const double arg = steps[n] * freq;
      v[n * dim + i] = static_cast<T>(std::sin(arg));
      v[n * dim + half + i] = static_cast<T>(std::cos(arg));
    }
  }
  return Tensor<T>({static_cast<int>(steps.size()), dim}, std::move(v));
}

// Single affine map of the 6-vector color statistics into the embedding space.
template <class T>
Tensor<T> color_projection(const Tensor<T>& color, const Tensor<T>& weight, const Tensor<T>& bias, int dim) {
  if (weight.rank() != 2 || weight.dim(0) != dim || weight.dim(1) != 6)
    shape_error("color_projection", weight.shape(), {dim, 6});
  return linear(color, weight, bias);
}

struct DenoiserSpec {
  int base_width = 16;
  int emb_dim = 32;
  bool color_condition = true;  // false: projection held at zero and never trained
  std::uint64_t init_seed = 0;
};

// Two-level UNet predicting the noise in x_t. The input is x_t concatenated
// with the conditioning image (6 channels); timestep and color embeddings are
// summed and injected as per-channel biases in every block.
template <class T>
class Denoiser {
 public:
  explicit Denoiser(const DenoiserSpec& spec = {}) : spec_(spec) {
    require(spec.base_width > 0 && spec.emb_dim > 0 && spec.emb_dim % 2 == 0, "Denoiser: invalid architecture");
    CounterRng rng = CounterRng::keyed(spec.init_seed, 0xDE401);
    const int c1 = spec.base_width, c2 = 2 * spec.base_width, e = spec.emb_dim;
    auto conv = [&](const std::string& name, int cin, int cout) {
      params_.add_kaiming(name + ".w", {cout, cin, 3, 3}, cin * 9, rng);
      params_.add_zeros(name + ".b", {cout});
    };
    auto dense = [&](const std::string& name, int in, int out) {
      params_.add_kaiming(name + ".w", {out, in}, in, rng);
      params_.add_zeros(name + ".b", {out});
    };
    dense("temb.0", e, e);
    dense("temb.1", e, e);
    if (spec.color_condition) {
      dense("cproj", 6, e);
    } else {
      params_.add_zeros("cproj.w", {e, 6});
      params_.add_zeros("cproj.b", {e});
    }
    conv("in", 6, c1);
    for (const char* b : {"enc0", "enc1"}) {
      conv(std::string(b), c1, c1);
      dense(std::string(b) + ".emb", e, c1);
    }
    conv("down", c1, c2);
    for (const char* b : {"mid0", "mid1"}) {
      conv(std::string(b), c2, c2);
      dense(std::string(b) + ".emb", e, c2);
    }
    conv("up", c2 + c1, c1);
    dense("up.emb", e, c1);
    conv("dec0", c1, c1);
    dense("dec0.emb", e, c1);
    params_.add_zeros("out.w", {3, c1, 3, 3});
    params_.add_zeros("out.b", {3});
    if (!spec.color_condition) {
      params_.get("cproj.w").set_requires_grad(false);
      params_.get("cproj.b").set_requires_grad(false);
    }
  }

  // x_t, cond: [N, 3, H, W] with H, W even; steps: N timesteps; color: [N, 6].
  Tensor<T> forward(const Tensor<T>& x_t, const Tensor<T>& cond, const std::vector<int>& steps,
                    const Tensor<T>& color) const {
    if (x_t.rank() != 4 || x_t.dim(1) != 3) shape_error("Denoiser(x_t)", x_t.shape(), {x_t.dim(0), 3, 0, 0});
    if (cond.shape() != x_t.shape()) shape_error("Denoiser(cond)", cond.shape(), x_t.shape());
    require(x_t.dim(2) % 2 == 0 && x_t.dim(3) % 2 == 0, "Denoiser: spatial size must be even");
    require(static_cast<int>(steps.size()) == x_t.dim(0), "Denoiser: one timestep per sample required");
    if (color.rank() != 2 || color.dim(0) != x_t.dim(0) || color.dim(1) != 6)
      shape_error("Denoiser(color)", color.shape(), {x_t.dim(0), 6});

    const auto p = [this](const std::string& n) { return params_.get(n); };
    const auto dense = [&](const Tensor<T>& x, const std::string& n) { return linear(x, p(n + ".w"), p(n + ".b")); };
    const auto conv = [&](const Tensor<T>& x, const std::string& n, int stride = 1) {
      return conv2d(x, p(n + ".w"), p(n + ".b"), stride);
    };

    Tensor<T> temb = dense(silu(dense(timestep_embedding<T>(steps, spec_.emb_dim), "temb.0")), "temb.1");
    Tensor<T> emb = silu(add(temb, color_projection(color, p("cproj.w"), p("cproj.b"), spec_.emb_dim)));

    // Residual block: h + SiLU(conv(h) + proj(emb)).
    const auto block = [&](const Tensor<T>& h, const std::string& n) {
      return add(h, silu(add_channel_bias(conv(h, n), dense(emb, n + ".emb"))));
    };

    Tensor<T> h = conv(concat_channels(x_t, cond), "in");
    h = block(h, "enc0");
    h = block(h, "enc1");
    const Tensor<T> skip = h;
    Tensor<T> d = silu(conv(h, "down", 2));
    d = block(d, "mid0");
    d = block(d, "mid1");
    Tensor<T> u = silu(add_channel_bias(conv(concat_channels(upsample2x(d), skip), "up"), dense(emb, "up.emb")));
    u = block(u, "dec0");
    return conv(u, "out");
  }

  const DenoiserSpec& spec() const { return spec_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  std::vector<Tensor<T>> trainable() const {
    std::vector<Tensor<T>> out;
    for (const auto& [name, t] : params_.entries())
      if (t.requires_grad()) out.push_back(t);
    return out;
  }

 private:
  DenoiserSpec spec_;
  ParamSet<T> params_;
};

struct ColorEncoderSpec {
  std::vector<int> widths{8, 16, 32, 32};
  std::uint64_t init_seed = 0;
};

inline constexpr int kColorEncoderMinSide = 16;

// Strided conv stack + global average pool + linear head to 6 outputs. The
// head is residual on the input's own channel statistics: means are
// sigmoid(logit(mu_in) + r) and deviations softplus(softplus^-1(sigma_in) + r),
// so a zero head reproduces the input statistics exactly.
template <class T>
class ColorEncoder {
 public:
  explicit ColorEncoder(const ColorEncoderSpec& spec = {}) : spec_(spec) {
    require(!spec.widths.empty(), "ColorEncoder: no conv layers");
    CounterRng rng = CounterRng::keyed(spec.init_seed, 0xC010E);
    int cin = 3;
    for (std::size_t i = 0; i < spec.widths.size(); ++i) {
      const int cout = spec.widths[i];
      params_.add_kaiming("conv" + std::to_string(i) + ".w", {cout, cin, 3, 3}, cin * 9, rng);
      params_.add_zeros("conv" + std::to_string(i) + ".b", {cout});
      cin = cout;
    }
    params_.add_zeros("head.w", {6, cin});
    params_.add_zeros("head.b", {6});
  }

  // x: [N, 3, H, W] in [-1, 1] coordinates -> [N, 6] statistics in [0, 1] units
  Tensor<T> forward(const Tensor<T>& x) const {
    require(x.rank() == 4 && x.dim(1) == 3, "ColorEncoder: expected [N,3,H,W], got " + shape_str(x.shape()));
    if (x.dim(2) < kColorEncoderMinSide || x.dim(3) < kColorEncoderMinSide)
      fail(ErrorKind::invalid_argument, "ColorEncoder: input smaller than " + std::to_string(kColorEncoderMinSide) +
                                            "x" + std::to_string(kColorEncoderMinSide));
    Tensor<T> h = x;
    for (std::size_t i = 0; i < spec_.widths.size(); ++i) {
      const auto n = "conv" + std::to_string(i);
      h = silu(conv2d(h, params_.get(n + ".w"), params_.get(n + ".b"), 2));
    }
    const Tensor<T> raw = linear(global_avg_pool(h), params_.get("head.w"), params_.get("head.b"));
    const Tensor<T> base = input_prior(x);
    return concat_cols(sigmoid(add(slice_cols(base, 0, 3), slice_cols(raw, 0, 3))),
                       softplus(add(slice_cols(base, 3, 3), slice_cols(raw, 3, 3))));
  }

  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  std::vector<Tensor<T>> trainable() const { return tensors_of(params_); }

 private:
  // [logit(mu), softplus^-1(sigma)] of each input channel, as a constant.
  static Tensor<T> input_prior(const Tensor<T>& x) {
    const int n = x.dim(0);
    const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    std::vector<T> v(static_cast<std::size_t>(n) * 6);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c) {
        const T* p = x.data().data() + (static_cast<std::size_t>(i) * 3 + c) * hw;
        double sum = 0.0;
        for (std::size_t j = 0; j < hw; ++j) sum += 0.5 * (p[j] + 1.0);
        const double mu = sum / hw;
        double ss = 0.0;
        for (std::size_t j = 0; j < hw; ++j) ss += (0.5 * (p[j] + 1.0) - mu) * (0.5 * (p[j] + 1.0) - mu);
        const double m = std::clamp(mu, 1e-4, 1.0 - 1e-4);
        const double sd = std::max(std::sqrt(ss / hw), 1e-4);
        v[i * 6 + c] = static_cast<T>(std::log(m / (1.0 - m)));
        v[i * 6 + 3 + c] = static_cast<T>(sd > 20.0 ? sd : std::log(std::expm1(sd)));
      }
    return Tensor<T>({n, 6}, std::move(v));
  }

  ColorEncoderSpec spec_;
  ParamSet<T> params_;
};

}  // namespace descan::nn
