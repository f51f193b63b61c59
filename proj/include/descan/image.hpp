#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "descan/error.hpp"

namespace descan {

// H x W x 3 raster, row-major, interleaved RGB. Values are nominally in
// [0, 1] but are not clamped; clamping only happens when writing files.
class Image {
 public:
  Image() = default;

  Image(int height, int width, double fill = 0.0) : height_(height), width_(width) {
    require(height >= 1 && width >= 1,
            "image dimensions must be positive, got " + std::to_string(height) + "x" + std::to_string(width));
    pixels_.assign(static_cast<std::size_t>(height) * width * 3, fill);
  }

  Image(int height, int width, std::vector<double> pixels) : height_(height), width_(width), pixels_(std::move(pixels)) {
    require(height >= 1 && width >= 1, "image dimensions must be positive");
    require(pixels_.size() == static_cast<std::size_t>(height) * width * 3,
            "pixel buffer length does not match " + std::to_string(height) + "x" + std::to_string(width) + "x3");
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(height_) * width_; }
  bool empty() const noexcept { return pixels_.empty(); }

  double& at(int y, int x, int c) noexcept { return pixels_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }
  double at(int y, int x, int c) const noexcept { return pixels_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }

  std::span<double> data() noexcept { return pixels_; }
  std::span<const double> data() const noexcept { return pixels_; }
  const std::vector<double>& pixels() const noexcept { return pixels_; }

  bool same_size(const Image& other) const noexcept { return height_ == other.height_ && width_ == other.width_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> pixels_;
};

inline void require_same_size(const Image& a, const Image& b, const char* op) {
  if (!a.same_size(b))
    fail(ErrorKind::invalid_argument, std::string(op) + ": dimension mismatch " + std::to_string(a.height()) + "x" +
                                          std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                                          std::to_string(b.width()));
}

// [mu_R, mu_G, mu_B, sigma_R, sigma_G, sigma_B]
struct ColorStats {
  std::array<double, 6> values{};

  double mean(int k) const noexcept { return values[k]; }
  double stddev(int k) const noexcept { return values[3 + k]; }
  double& mean(int k) noexcept { return values[k]; }
  double& stddev(int k) noexcept { return values[3 + k]; }

  friend bool operator==(const ColorStats&, const ColorStats&) = default;
};

// Population statistics (divide by N).
inline ColorStats channel_stats(const Image& image) {
  require(!image.empty(), "channel_stats: empty image");
  ColorStats s;
  const auto n = static_cast<double>(image.pixel_count());
  const auto px = image.data();
  for (int k = 0; k < 3; ++k) {
    double sum = 0.0;
    for (std::size_t i = k; i < px.size(); i += 3) sum += px[i];
    double mu = sum / n;
    double corr = 0.0;
    for (std::size_t i = k; i < px.size(); i += 3) corr += px[i] - mu;
    mu += corr / n;
    double ss = 0.0;
    for (std::size_t i = k; i < px.size(); i += 3) ss += (px[i] - mu) * (px[i] - mu);
    s.mean(k) = mu;
    s.stddev(k) = std::sqrt(ss / n);
  }
  return s;
}

struct Hsv {
  double h;  // degrees in [0, 360)
  double s;
  double v;
};

inline Hsv rgb_to_hsv(double r, double g, double b) noexcept {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double delta = mx - mn;
  Hsv out{0.0, 0.0, mx};
  if (mx > 0.0) out.s = delta / mx;
  if (delta <= 0.0) return out;  // achromatic: hue fixed at 0
  double h;
  if (mx == r)
    h = (g - b) / delta;
  else if (mx == g)
    h = 2.0 + (b - r) / delta;
  else
    h = 4.0 + (r - g) / delta;
  h *= 60.0;
  if (h < 0.0) h += 360.0;
  if (h >= 360.0) h -= 360.0;
  out.h = h;
  return out;
}

inline std::array<double, 3> hsv_to_rgb(const Hsv& hsv) noexcept {
  double h = std::fmod(hsv.h, 360.0);
  if (h < 0.0) h += 360.0;
  const double c = hsv.v * hsv.s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  const double m = hsv.v - c;
  return {r + m, g + m, b + m};
}

inline double luma(double r, double g, double b) noexcept { return 0.299 * r + 0.587 * g + 0.114 * b; }

// Luma plane, row-major H x W.
inline std::vector<double> luma_plane(const Image& image) {
  std::vector<double> out(image.pixel_count());
  const auto px = image.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = luma(px[3 * i], px[3 * i + 1], px[3 * i + 2]);
  return out;
}

inline Image crop(const Image& image, int y0, int x0, int height, int width) {
  require(y0 >= 0 && x0 >= 0 && y0 + height <= image.height() && x0 + width <= image.width(),
          "crop window outside image");
  Image out(height, width);
  for (int y = 0; y < height; ++y)
    std::copy_n(image.data().begin() + (static_cast<std::size_t>(y0 + y) * image.width() + x0) * 3,
                static_cast<std::size_t>(width) * 3, out.data().begin() + static_cast<std::size_t>(y) * width * 3);
  return out;
}

// One of the eight symmetries of the square: bit 0 mirrors x, bit 1 mirrors y,
// bit 2 transposes (applied last). Transposition swaps height and width.
inline Image dihedral(const Image& image, int k) {
  const int h = image.height(), w = image.width();
  const bool transpose = (k & 4) != 0;
  Image out(transpose ? w : h, transpose ? h : w);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) {
      int sy = transpose ? x : y, sx = transpose ? y : x;
      if (k & 1) sx = w - 1 - sx;
      if (k & 2) sy = h - 1 - sy;
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = image.at(sy, sx, c);
    }
  return out;
}

inline Image clamp01(Image image) {
  for (double& v : image.data()) v = std::clamp(v, 0.0, 1.0);
  return image;
}

// Rounds every component to the nearest k/255, as an 8-bit file round trip would.
inline Image quantize8(Image image) {
  for (double& v : image.data()) v = std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5) / 255.0;
  return image;
}

}  // namespace descan
