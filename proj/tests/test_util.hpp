#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "descan/image.hpp"
#include "descan/rng.hpp"

namespace testutil {

inline descan::Image random_image(int h, int w, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  descan::CounterRng rng = descan::CounterRng::keyed(seed, 0x7E57);
  descan::Image img(h, w);
  for (double& v : img.data()) v = rng.uniform(lo, hi);
  return img;
}

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("descan_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Direct evaluation of mean SSIM: every valid 11x11 window, 2-D Gaussian
// weights built from scratch, two-pass variance.
inline double brute_force_ssim(const descan::Image& a, const descan::Image& b) {
  const int n = 11, r = 5;
  const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
  double wsum = 0.0;
  std::vector<double> wts(n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      wts[i * n + j] = std::exp(-((i - r) * (i - r) + (j - r) * (j - r)) / (2 * sigma * sigma));
      wsum += wts[i * n + j];
    }
  for (double& v : wts) v /= wsum;
  auto y = [](const descan::Image& im, int yy, int xx) {
    return 0.299 * im.at(yy, xx, 0) + 0.587 * im.at(yy, xx, 1) + 0.114 * im.at(yy, xx, 2);
  };
  double total = 0.0;
  int count = 0;
  for (int oy = 0; oy + n <= a.height(); ++oy)
    for (int ox = 0; ox + n <= a.width(); ++ox) {
      double ma = 0, mb = 0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          ma += wts[i * n + j] * y(a, oy + i, ox + j);
          mb += wts[i * n + j] * y(b, oy + i, ox + j);
        }
      double va = 0, vb = 0, cov = 0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const double da = y(a, oy + i, ox + j) - ma, db = y(b, oy + i, ox + j) - mb;
          va += wts[i * n + j] * da * da;
          vb += wts[i * n + j] * db * db;
          cov += wts[i * n + j] * da * db;
        }
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return total / count;
}

inline double brute_force_psnr(const descan::Image& a, const descan::Image& b) {
  double acc = 0.0;
  for (int yy = 0; yy < a.height(); ++yy)
    for (int xx = 0; xx < a.width(); ++xx)
      for (int c = 0; c < 3; ++c) acc += (a.at(yy, xx, c) - b.at(yy, xx, c)) * (a.at(yy, xx, c) - b.at(yy, xx, c));
  const double mse = acc / (3.0 * a.height() * a.width());
  return mse == 0.0 ? 99.0 : 10.0 * std::log10(1.0 / mse);
}

}  // namespace testutil
