#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "descan/error.hpp"
#include "descan/image.hpp"
#include "descan/rng.hpp"

namespace descan {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

inline Image apply_color_transition(const Image& image, double hue_shift, double sat_scale, double val_scale) {
  require(sat_scale > 0.0 && val_scale > 0.0, "apply_color_transition: scales must be positive");
  Image out = image;
  auto px = out.data();
  for (std::size_t i = 0; i < px.size(); i += 3) {
    Hsv hsv = rgb_to_hsv(px[i], px[i + 1], px[i + 2]);
    hsv.h = std::fmod(hsv.h + hue_shift, 360.0);
    if (hsv.h < 0.0) hsv.h += 360.0;
    hsv.s = std::clamp(hsv.s * sat_scale, 0.0, 1.0);
    hsv.v = std::clamp(hsv.v * val_scale, 0.0, 1.0);
    const auto rgb = hsv_to_rgb(hsv);
    px[i] = rgb[0], px[i + 1] = rgb[1], px[i + 2] = rgb[2];
  }
  return out;
}

// Show-through of the verso page: the back image is mirrored left-right.
inline Image apply_bleed_through(const Image& front, const Image& back, double alpha) {
  require_same_size(front, back, "apply_bleed_through");
  require(alpha >= 0.0 && alpha <= 1.0, "apply_bleed_through: alpha outside [0,1]");
  Image out = front;
  const int w = front.width();
  for (int y = 0; y < front.height(); ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = (1.0 - alpha) * front.at(y, x, c) + alpha * back.at(y, w - 1 - x, c);
  return out;
}

inline Image apply_gaussian_noise(const Image& image, double sigma, CounterRng& rng) {
  require(sigma >= 0.0, "apply_gaussian_noise: negative sigma");
  Image out = image;
  if (sigma == 0.0) return out;
  for (double& v : out.data()) v += sigma * rng.normal();
  return out;
}

struct Dot {
  double cy, cx, radius, intensity;
};

inline Image stamp_dots(const Image& image, const std::vector<Dot>& dots) {
  Image out = image;
  for (const Dot& d : dots) {
    const int y0 = std::max(0, static_cast<int>(std::floor(d.cy - d.radius)));
    const int y1 = std::min(image.height() - 1, static_cast<int>(std::ceil(d.cy + d.radius)));
    const int x0 = std::max(0, static_cast<int>(std::floor(d.cx - d.radius)));
    const int x1 = std::min(image.width() - 1, static_cast<int>(std::ceil(d.cx + d.radius)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dy = y - d.cy, dx = x - d.cx;
        if (dy * dy + dx * dx <= d.radius * d.radius)
          for (int c = 0; c < 3; ++c) out.at(y, x, c) = d.intensity;
      }
  }
  return out;
}

inline std::vector<Dot> sample_dots(int height, int width, int dot_count, Range radius, Range intensity,
                                    CounterRng& rng) {
  std::vector<Dot> dots;
  dots.reserve(static_cast<std::size_t>(std::max(0, dot_count)));
  for (int i = 0; i < dot_count; ++i) {
    Dot d;
    d.cy = rng.uniform(0.0, height);
    d.cx = rng.uniform(0.0, width);
    d.radius = rng.uniform(radius.lo, radius.hi);
    d.intensity = rng.uniform(intensity.lo, intensity.hi);
    dots.push_back(d);
  }
  return dots;
}

// External noise: filled gray discs (stains, dust).
inline Image apply_external_noise(const Image& image, int dot_count, Range radius, Range intensity, CounterRng& rng) {
  require(dot_count >= 0, "apply_external_noise: negative dot count");
  return stamp_dots(image, sample_dots(image.height(), image.width(), dot_count, radius, intensity, rng));
}

struct Band {
  bool horizontal;
  int start;
  int width;
  double intensity;
};

inline Image stamp_bands(const Image& image, const std::vector<Band>& bands) {
  Image out = image;
  for (const Band& b : bands) {
    if (b.horizontal) {
      for (int y = std::max(0, b.start); y < std::min(image.height(), b.start + b.width); ++y)
        for (int x = 0; x < image.width(); ++x)
          for (int c = 0; c < 3; ++c) out.at(y, x, c) += b.intensity;
    } else {
      for (int y = 0; y < image.height(); ++y)
        for (int x = std::max(0, b.start); x < std::min(image.width(), b.start + b.width); ++x)
          for (int c = 0; c < 3; ++c) out.at(y, x, c) += b.intensity;
    }
  }
  return out;
}

inline std::vector<Band> sample_bands(int height, int width, int line_count, Range band_width, Range intensity,
                                      CounterRng& rng) {
  std::vector<Band> bands;
  for (int i = 0; i < line_count; ++i) {
    Band b;
    b.horizontal = rng.uniform() < 0.5;
    b.width = static_cast<int>(rng.uniform_int(static_cast<std::int64_t>(std::lround(band_width.lo)),
                                               static_cast<std::int64_t>(std::lround(band_width.hi))));
    const int extent = b.horizontal ? height : width;
    b.start = static_cast<int>(rng.uniform_int(0, std::max(0, extent - b.width)));
    b.intensity = rng.uniform(intensity.lo, intensity.hi);
    bands.push_back(b);
  }
  return bands;
}

// Internal noise: straight laser bands across the full page, additive.
inline Image apply_internal_noise(const Image& image, int line_count, Range band_width, Range intensity,
                                  CounterRng& rng) {
  require(line_count >= 0, "apply_internal_noise: negative line count");
  return stamp_bands(image, sample_bands(image.height(), image.width(), line_count, band_width, intensity, rng));
}

// ---------------------------------------------------------------------------
// Synthesis

enum class Degradation : int { color = 0, bleed = 1, gaussian = 2, dots = 3, lines = 4 };
inline constexpr std::array<std::string_view, 5> kDegradationNames = {"color_transition", "bleed_through",
                                                                      "gaussian_noise", "external_noise",
                                                                      "internal_noise"};

struct DegradationConfig {
  std::array<double, 5> probability{0.5, 0.5, 0.5, 0.5, 0.5};
  Range hue_shift{-15.0, 15.0};
  Range sat_scale{0.7, 1.1};
  Range val_scale{0.7, 1.1};
  Range alpha{0.05, 0.2};
  Range noise_sigma{0.01, 0.06};
  Range dot_count{0, 20};
  Range dot_radius{1, 4};
  Range dot_intensity{0.2, 0.6};
  Range line_count{0, 3};
  Range line_width{1, 3};
  Range line_intensity{-0.25, 0.25};
  std::uint64_t seed = 0;

  void validate() const {
    for (std::size_t i = 0; i < probability.size(); ++i)
      if (!(probability[i] >= 0.0 && probability[i] <= 1.0))
        fail(ErrorKind::config, "degradation probability for " + std::string(kDegradationNames[i]) + " outside [0,1]");
    for (const Range* r : {&hue_shift, &sat_scale, &val_scale, &alpha, &noise_sigma, &dot_count, &dot_radius,
                           &dot_intensity, &line_count, &line_width, &line_intensity})
      if (!(r->lo <= r->hi)) fail(ErrorKind::config, "degradation range with lo > hi");
    if (sat_scale.lo <= 0.0 || val_scale.lo <= 0.0) fail(ErrorKind::config, "HSV scales must be positive");
    if (alpha.lo < 0.0 || alpha.hi > 1.0) fail(ErrorKind::config, "bleed alpha outside [0,1]");
    if (noise_sigma.lo < 0.0 || dot_count.lo < 0.0 || line_count.lo < 0.0 || line_width.lo < 0.0 ||
        dot_radius.lo < 0.0)
      fail(ErrorKind::config, "negative degradation strength");
  }
};

struct ColorTransitionParams {
  double hue_shift, sat_scale, val_scale;
};
struct BleedParams {
  double alpha;
};
struct GaussianParams {
  double sigma;
  std::uint64_t noise_key;  // key of the stream that produced the noise field
};
struct DotsParams {
  std::vector<Dot> dots;
};
struct LinesParams {
  std::vector<Band> bands;
};

using DegradationParams = std::variant<ColorTransitionParams, BleedParams, GaussianParams, DotsParams, LinesParams>;

struct AppliedDegradation {
  Degradation kind;
  DegradationParams params;
};

struct DegradationRecord {
  std::uint64_t master_seed = 0;
  std::uint64_t sample_seed = 0;
  std::vector<AppliedDegradation> applied;
};

// Sample seeds are partitioned into namespaces so that train, synthetic and
// held-out test degradations never share random streams.
enum class SeedNamespace : std::uint64_t { real = 0, synthetic = 1, test = 2, validation = 3 };

inline std::uint64_t namespaced_seed(SeedNamespace ns, std::uint64_t index) noexcept {
  return (static_cast<std::uint64_t>(ns) << 48) ^ index;
}

// Lane 0 decides application and strengths; lane 1 drives the spatial or
// per-pixel randomness of the degradation itself.
inline std::uint64_t degradation_key(std::uint64_t master, std::uint64_t sample, Degradation kind, int lane) noexcept {
  return CounterRng::keyed(master, sample, static_cast<std::uint64_t>(kind), static_cast<std::uint64_t>(lane))
      .next_u64();
}

inline CounterRng degradation_stream(std::uint64_t master, std::uint64_t sample, Degradation kind, int lane) {
  return CounterRng(degradation_key(master, sample, kind, lane));
}

inline int draw_count(CounterRng& rng, Range r) {
  return static_cast<int>(rng.uniform_int(std::llround(r.lo), std::llround(r.hi)));
}

inline Image apply_recorded(const Image& image, const Image& back, const AppliedDegradation& step) {
  return std::visit(
      [&](const auto& p) -> Image {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, ColorTransitionParams>) {
          return apply_color_transition(image, p.hue_shift, p.sat_scale, p.val_scale);
        } else if constexpr (std::is_same_v<P, BleedParams>) {
          return apply_bleed_through(image, back, p.alpha);
        } else if constexpr (std::is_same_v<P, GaussianParams>) {
          CounterRng rng(p.noise_key);
          return apply_gaussian_noise(image, p.sigma, rng);
        } else if constexpr (std::is_same_v<P, DotsParams>) {
          return stamp_dots(image, p.dots);
        } else {
          return stamp_bands(image, p.bands);
        }
      },
      step.params);
}

// Fixed order: color -> bleed -> gaussian -> dots -> lines.
inline std::pair<Image, DegradationRecord> synthesize_scanned(const Image& original, const Image& back,
                                                              const DegradationConfig& config,
                                                              std::uint64_t sample_seed) {
  require_same_size(original, back, "synthesize_scanned");
  config.validate();
  DegradationRecord record{config.seed, sample_seed, {}};
  Image img = original;
  const int h = original.height(), w = original.width();
  for (int d = 0; d < 5; ++d) {
    const auto kind = static_cast<Degradation>(d);
    CounterRng decide = degradation_stream(config.seed, sample_seed, kind, 0);
    if (!(decide.uniform() < config.probability[d])) continue;
    CounterRng body = degradation_stream(config.seed, sample_seed, kind, 1);
    AppliedDegradation step{kind, {}};
    switch (kind) {
      case Degradation::color:
        step.params = ColorTransitionParams{decide.uniform(config.hue_shift.lo, config.hue_shift.hi),
                                            decide.uniform(config.sat_scale.lo, config.sat_scale.hi),
                                            decide.uniform(config.val_scale.lo, config.val_scale.hi)};
        break;
      case Degradation::bleed:
        step.params = BleedParams{decide.uniform(config.alpha.lo, config.alpha.hi)};
        break;
      case Degradation::gaussian:
        step.params = GaussianParams{decide.uniform(config.noise_sigma.lo, config.noise_sigma.hi),
                                     degradation_key(config.seed, sample_seed, kind, 1)};
        break;
      case Degradation::dots:
        step.params = DotsParams{
            sample_dots(h, w, draw_count(decide, config.dot_count), config.dot_radius, config.dot_intensity, body)};
        break;
      case Degradation::lines:
        step.params = LinesParams{
            sample_bands(h, w, draw_count(decide, config.line_count), config.line_width, config.line_intensity, body)};
        break;
    }
    img = apply_recorded(img, back, step);
    record.applied.push_back(std::move(step));
  }
  return {std::move(img), std::move(record)};
}

inline Image replay(const Image& original, const Image& back, const DegradationRecord& record) {
  Image img = original;
  for (const auto& step : record.applied) img = apply_recorded(img, back, step);
  return img;
}

inline nlohmann::json to_json(const DegradationRecord& record) {
  using nlohmann::json;
  json steps = json::array();
  for (const auto& step : record.applied) {
    json j;
    j["name"] = kDegradationNames[static_cast<int>(step.kind)];
    std::visit(
        [&](const auto& p) {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, ColorTransitionParams>) {
            j["hue_shift"] = p.hue_shift;
            j["sat_scale"] = p.sat_scale;
            j["val_scale"] = p.val_scale;
          } else if constexpr (std::is_same_v<P, BleedParams>) {
            j["alpha"] = p.alpha;
          } else if constexpr (std::is_same_v<P, GaussianParams>) {
            j["sigma"] = p.sigma;
            j["noise_key"] = p.noise_key;
          } else if constexpr (std::is_same_v<P, DotsParams>) {
            j["dots"] = json::array();
            for (const Dot& d : p.dots) j["dots"].push_back({d.cy, d.cx, d.radius, d.intensity});
          } else {
            j["bands"] = json::array();
            for (const Band& b : p.bands)
              j["bands"].push_back({{"horizontal", b.horizontal}, {"start", b.start}, {"width", b.width},
                                    {"intensity", b.intensity}});
          }
        },
        step.params);
    steps.push_back(std::move(j));
  }
  return {{"master_seed", record.master_seed}, {"sample_seed", record.sample_seed}, {"applied", steps}};
}

inline DegradationRecord record_from_json(const nlohmann::json& j) {
  DegradationRecord r;
  try {
    r.master_seed = j.at("master_seed").get<std::uint64_t>();
    r.sample_seed = j.at("sample_seed").get<std::uint64_t>();
    for (const auto& s : j.at("applied")) {
      const auto name = s.at("name").get<std::string>();
      AppliedDegradation step{};
      if (name == kDegradationNames[0]) {
        step = {Degradation::color, ColorTransitionParams{s.at("hue_shift").get<double>(), s.at("sat_scale").get<double>(),
                                                          s.at("val_scale").get<double>()}};
      } else if (name == kDegradationNames[1]) {
        step = {Degradation::bleed, BleedParams{s.at("alpha").get<double>()}};
      } else if (name == kDegradationNames[2]) {
        step = {Degradation::gaussian,
                GaussianParams{s.at("sigma").get<double>(), s.at("noise_key").get<std::uint64_t>()}};
      } else if (name == kDegradationNames[3]) {
        DotsParams p;
        for (const auto& d : s.at("dots"))
          p.dots.push_back({d.at(0).get<double>(), d.at(1).get<double>(), d.at(2).get<double>(), d.at(3).get<double>()});
        step = {Degradation::dots, std::move(p)};
      } else if (name == kDegradationNames[4]) {
        LinesParams p;
        for (const auto& b : s.at("bands"))
          p.bands.push_back({b.at("horizontal").get<bool>(), b.at("start").get<int>(), b.at("width").get<int>(),
                             b.at("intensity").get<double>()});
        step = {Degradation::lines, std::move(p)};
      } else {
        fail(ErrorKind::data, "unknown degradation '" + name + "' in record");
      }
      r.applied.push_back(std::move(step));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, std::string("malformed degradation record: ") + e.what());
  }
  return r;
}

}  // namespace descan
