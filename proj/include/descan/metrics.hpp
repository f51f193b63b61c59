#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "descan/image.hpp"

namespace descan {

inline constexpr double kPsnrCap = 99.0;

inline double mse(const Image& a, const Image& b) {
  require_same_size(a, b, "mse");
  const auto pa = a.data();
  const auto pb = b.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) acc += (pa[i] - pb[i]) * (pa[i] - pb[i]);
  return acc / static_cast<double>(pa.size());
}

// Peak 1.0; identical images report kPsnrCap instead of infinity.
inline double psnr(const Image& a, const Image& b) {
  const double e = mse(a, b);
  if (e <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / e));
}

struct SsimParams {
  static constexpr int window = 11;
  static constexpr double sigma = 1.5;
  static constexpr double k1 = 0.01;
  static constexpr double k2 = 0.03;
  static constexpr double range = 1.0;
};

inline std::array<double, SsimParams::window> ssim_kernel() {
  std::array<double, SsimParams::window> w{};
  constexpr int r = SsimParams::window / 2;
  double sum = 0.0;
  for (int i = 0; i < SsimParams::window; ++i) {
    const double d = i - r;
    w[i] = std::exp(-d * d / (2.0 * SsimParams::sigma * SsimParams::sigma));
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

namespace detail {

// Separable Gaussian filter over valid window positions only.
inline std::vector<double> filter_valid(const std::vector<double>& plane, int h, int w) {
  constexpr int n = SsimParams::window;
  static const auto kernel = ssim_kernel();
  const int ow = w - n + 1;
  const int oh = h - n + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += kernel[i] * plane[static_cast<std::size_t>(y) * w + x + i];
      rows[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += kernel[i] * rows[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  return out;
}

}  // namespace detail

// Mean SSIM over all 11x11 Gaussian windows (sigma 1.5) of the luma channel.
inline double ssim(const Image& a, const Image& b) {
  require_same_size(a, b, "ssim");
  require(a.height() >= SsimParams::window && a.width() >= SsimParams::window,
          "ssim: image smaller than the 11x11 window");
  const int h = a.height();
  const int w = a.width();
  const auto la = luma_plane(a);
  const auto lb = luma_plane(b);
  std::vector<double> aa(la.size()), bb(la.size()), ab(la.size());
  for (std::size_t i = 0; i < la.size(); ++i) {
    aa[i] = la[i] * la[i];
    bb[i] = lb[i] * lb[i];
    ab[i] = la[i] * lb[i];
  }
  const auto mu_a = detail::filter_valid(la, h, w);
  const auto mu_b = detail::filter_valid(lb, h, w);
  const auto e_aa = detail::filter_valid(aa, h, w);
  const auto e_bb = detail::filter_valid(bb, h, w);
  const auto e_ab = detail::filter_valid(ab, h, w);

  constexpr double c1 = (SsimParams::k1 * SsimParams::range) * (SsimParams::k1 * SsimParams::range);
  constexpr double c2 = (SsimParams::k2 * SsimParams::range) * (SsimParams::k2 * SsimParams::range);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = e_aa[i] - ma * ma;
    const double vb = e_bb[i] - mb * mb;
    const double cov = e_ab[i] - ma * mb;
    total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

}  // namespace descan
