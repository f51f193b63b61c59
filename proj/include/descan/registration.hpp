#pragma once

#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>
#include <vector>

#include "descan/error.hpp"
#include "descan/image.hpp"

namespace descan {

// Offset convention: original(y, x) ~ scanned(y + dy, x + dx).
struct Registration {
  int dx = 0;
  int dy = 0;
  double score = 0.0;          // zero-normalized cross-correlation at the best shift
  bool low_confidence = false;  // score below kLowConfidenceScore
};

inline constexpr double kLowConfidenceScore = 0.5;

namespace detail {

inline bool zero_variance(const std::vector<double>& v) {
  double mu = 0.0;
  for (double x : v) mu += x;
  mu /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mu) * (x - mu);
  return ss <= 1e-12 * static_cast<double>(v.size());
}

}  // namespace detail

// Exhaustive translation search maximizing ZNCC of the luma planes over the
// overlap of the two images.
inline Registration register_translation(const Image& scanned, const Image& original, int max_shift) {
  require_same_size(scanned, original, "register_translation");
  const int h = scanned.height(), w = scanned.width();
  require(max_shift >= 0 && 4 * max_shift < std::min(h, w),
          "register_translation: max_shift must be below min(H,W)/4");
  const auto ls = luma_plane(scanned);
  const auto lo = luma_plane(original);
  if (detail::zero_variance(ls) || detail::zero_variance(lo))
    fail(ErrorKind::data, "unregisterable: zero-variance image");

  Registration best;
  best.score = -std::numeric_limits<double>::infinity();
  bool found = false;
  for (int dy = -max_shift; dy <= max_shift; ++dy) {
    for (int dx = -max_shift; dx <= max_shift; ++dx) {
      const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
      const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
      const double n = static_cast<double>(y1 - y0) * (x1 - x0);
      double so = 0, ss = 0, soo = 0, sss = 0, sos = 0;
      for (int y = y0; y < y1; ++y) {
        const double* ro = &lo[static_cast<std::size_t>(y) * w];
        const double* rs = &ls[static_cast<std::size_t>(y + dy) * w + dx];
        for (int x = x0; x < x1; ++x) {
          const double a = ro[x], b = rs[x];
          so += a, ss += b, soo += a * a, sss += b * b, sos += a * b;
        }
      }
      const double vo = soo - so * so / n;
      const double vs = sss - ss * ss / n;
      if (vo <= 1e-12 * n || vs <= 1e-12 * n) continue;
      const double score = (sos - so * ss / n) / std::sqrt(vo * vs);
      const bool better = score > best.score + 1e-12 ||
                          (std::fabs(score - best.score) <= 1e-12 &&
                           std::abs(dx) + std::abs(dy) < std::abs(best.dx) + std::abs(best.dy));
      if (!found || better) {
        best.dx = dx, best.dy = dy, best.score = score;
        found = true;
      }
    }
  }
  if (!found) fail(ErrorKind::data, "unregisterable: no shift with non-degenerate overlap");
  best.low_confidence = best.score < kLowConfidenceScore;
  return best;
}

// Translate content by (dx, dy); uncovered pixels take the fill value.
inline Image shift_image(const Image& image, int dx, int dy, double fill = 0.0) {
  Image out(image.height(), image.width(), fill);
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) {
      const int sy = y - dy, sx = x - dx;
      if (sy < 0 || sx < 0 || sy >= image.height() || sx >= image.width()) continue;
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = image.at(sy, sx, c);
    }
  return out;
}

}  // namespace descan
