#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "descan/colorcorrect.hpp"
#include "descan/dataprep.hpp"
#include "descan/degrade.hpp"
#include "descan/diffusion.hpp"
#include "descan/error.hpp"
#include "descan/image.hpp"
#include "descan/metrics.hpp"
#include "descan/ppm.hpp"
#include "descan/parallel.hpp"
#include "descan/rng.hpp"

namespace descan {

struct EvalRow {
  std::string method;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  int samples = 0;
  double seconds = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::uint64_t seed = 0;
  std::string config;

  const EvalRow& row(const std::string& method) const {
    for (const auto& r : rows)
      if (r.method == method) return r;
    fail(ErrorKind::invalid_argument, "no report row for method " + method);
  }
};

struct PairMetric {
  std::string stem;
  double psnr;
  double ssim;
};

// SSIM needs an 11x11 window; smaller images report NaN SSIM.
inline PairMetric measure(const std::string& stem, const Image& restored, const Image& original) {
  const bool ssim_ok = restored.height() >= SsimParams::window && restored.width() >= SsimParams::window;
  return {stem, psnr(restored, original), ssim_ok ? ssim(restored, original) : std::nan("")};
}

inline EvalRow summarize(const std::string& method, const std::vector<PairMetric>& metrics, double seconds = 0.0) {
  EvalRow row{method, 0.0, 0.0, static_cast<int>(metrics.size()), seconds};
  for (const auto& m : metrics) row.mean_psnr += m.psnr, row.mean_ssim += m.ssim;
  if (!metrics.empty()) row.mean_psnr /= metrics.size(), row.mean_ssim /= metrics.size();
  return row;
}

// Known stem decorations stripped before pairing files across directories.
inline std::string base_stem(const std::filesystem::path& p) {
  std::string s = p.stem().string();
  for (const char* suffix : {"_restored", "_scan", "_orig"})
    if (auto t = strip_suffix(s, suffix); !t.empty()) return t;
  return s;
}

inline std::map<std::string, std::filesystem::path> ppm_by_stem(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) fail(ErrorKind::io, "not a directory: " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") {
      const auto stem = base_stem(e.path());
      if (!out.emplace(stem, e.path()).second)
        fail(ErrorKind::data, "ambiguous stem " + stem + " in " + dir.string());
    }
  return out;
}

inline std::vector<PairMetric> evaluate_pairs(const std::filesystem::path& restored_dir,
                                              const std::filesystem::path& original_dir) {
  const auto restored = ppm_by_stem(restored_dir);
  const auto originals = ppm_by_stem(original_dir);
  std::vector<std::string> unmatched;
  for (const auto& [s, p] : restored)
    if (!originals.count(s)) unmatched.push_back(s);
  if (!unmatched.empty()) {
    std::string list;
    for (const auto& s : unmatched) list += (list.empty() ? "" : ", ") + s;
    fail(ErrorKind::data, "evaluate: no original for stems: " + list);
  }
  if (restored.empty()) fail(ErrorKind::data, "evaluate: no restored images in " + restored_dir.string());
  std::vector<std::pair<std::string, std::filesystem::path>> items(restored.begin(), restored.end());
  std::vector<PairMetric> out(items.size());
  parallel_for(items.size(), [&](std::size_t i) {
    const auto& [stem, path] = items[i];
    const Image r = load_image(path);
    const Image o = load_image(originals.at(stem));
    if (!r.same_size(o)) fail(ErrorKind::data, "evaluate: size mismatch for " + stem);
    out[i] = measure(stem, r, o);
  });
  return out;
}

inline std::string format_table(const EvalReport& report) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-28s %10s %8s %8s %10s\n", "method", "PSNR(dB)", "SSIM", "samples", "time(s)");
  out += line;
  for (const auto& r : report.rows) {
    std::snprintf(line, sizeof line, "%-28s %10.3f %8.4f %8d %10.2f\n", r.method.c_str(), r.mean_psnr, r.mean_ssim,
                  r.samples, r.seconds);
    out += line;
  }
  return out;
}

inline std::string format_csv(const EvalReport& report) {
  std::string out = "method,psnr_db,ssim,samples,seconds\n";
  char line[256];
  for (const auto& r : report.rows) {
    std::snprintf(line, sizeof line, "%s,%.6f,%.6f,%d,%.3f\n", r.method.c_str(), r.mean_psnr, r.mean_ssim, r.samples,
                  r.seconds);
    out += line;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Comparison grid

inline constexpr int kGridBorder = 4;

inline Image render_grid(const std::vector<Image>& images, int columns, double border_value = 1.0) {
  require(!images.empty() && columns >= 1, "render_grid: need at least one image and one column");
  const int h = images.front().height(), w = images.front().width();
  for (const auto& im : images)
    if (!im.same_size(images.front())) fail(ErrorKind::invalid_argument, "render_grid: image size mismatch");
  const int cols = std::min<int>(columns, static_cast<int>(images.size()));
  const int rows = (static_cast<int>(images.size()) + cols - 1) / cols;
  Image out(rows * h + (rows + 1) * kGridBorder, cols * w + (cols + 1) * kGridBorder, border_value);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const int oy = kGridBorder + static_cast<int>(i) / cols * (h + kGridBorder);
    const int ox = kGridBorder + static_cast<int>(i) % cols * (w + kGridBorder);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) out.at(oy + y, ox + x, c) = images[i].at(y, x, c);
  }
  return out;
}

// Training originals stacked vertically: the pooled target histogram for the
// histogram-matching baseline.
inline Image pooled_reference(const std::vector<std::pair<Image, Image>>& pairs) {
  require(!pairs.empty(), "pooled_reference: no images");
  const int w = pairs.front().second.width();
  int h = 0;
  for (const auto& p : pairs) {
    require(p.second.width() == w, "pooled_reference: widths differ");
    h += p.second.height();
  }
  std::vector<double> px;
  px.reserve(static_cast<std::size_t>(h) * w * 3);
  for (const auto& p : pairs) px.insert(px.end(), p.second.data().begin(), p.second.data().end());
  return Image(h, w, std::move(px));
}

// ---------------------------------------------------------------------------
// Toy document benchmark

// Procedural document-like page: tinted paper, an optional colored block,
// a few rows of dark glyph strokes.
inline Image make_toy_original(int size, std::uint64_t seed) {
  CounterRng rng = CounterRng::keyed(seed, 0x70D0C);
  Image img(size, size);
  const double base = rng.uniform(0.93, 1.0);
  const double paper[3] = {std::min(1.0, base + rng.uniform(-0.015, 0.015)), std::min(1.0, base + rng.uniform(-0.015, 0.015)),
                           std::min(1.0, base + rng.uniform(-0.03, 0.0))};
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = paper[c];

  if (rng.uniform() < 0.7) {
    const Hsv hsv{rng.uniform(0.0, 360.0), rng.uniform(0.3, 0.9), rng.uniform(0.4, 0.95)};
    const auto color = hsv_to_rgb(hsv);
    const int bh = static_cast<int>(rng.uniform_int(size / 4, size / 2));
    const int bw = static_cast<int>(rng.uniform_int(size / 4, size * 3 / 4));
    const int by = static_cast<int>(rng.uniform_int(0, size - bh));
    const int bx = static_cast<int>(rng.uniform_int(0, size - bw));
    for (int y = by; y < by + bh; ++y)
      for (int x = bx; x < bx + bw; ++x)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[c];
  }

  const double ink = rng.uniform(0.0, 0.25);
  const int pitch = static_cast<int>(rng.uniform_int(5, 7));
  for (int line_y = static_cast<int>(rng.uniform_int(1, 4)); line_y + 2 < size; line_y += pitch) {
    if (rng.uniform() < 0.25) continue;
    int x = static_cast<int>(rng.uniform_int(1, 3));
    const int end = size - static_cast<int>(rng.uniform_int(1, size / 3));
    while (x < end) {
      const int gw = static_cast<int>(rng.uniform_int(1, 3));
      const int gh = static_cast<int>(rng.uniform_int(2, 3));
      for (int y = line_y; y < std::min(size, line_y + gh); ++y)
        for (int xx = x; xx < std::min(end, x + gw); ++xx)
          for (int c = 0; c < 3; ++c) img.at(y, xx, c) = ink;
      x += gw + static_cast<int>(rng.uniform_int(1, 2));
      if (rng.uniform() < 0.15) x += 2;
    }
  }
  return img;
}

struct ToyBenchmark {
  std::vector<std::pair<Image, Image>> train;      // (scanned, original)
  std::vector<std::pair<Image, Image>> synthetic;  // SDG additions from train originals
  std::vector<std::pair<Image, Image>> val;        // for choosing T_o
  std::vector<std::pair<Image, Image>> test;       // held-out originals and degradation namespace
};

struct ToyConfig {
  int train_pairs = 64;
  int val_pairs = 16;
  int test_pairs = 32;
  int size = 32;
  double synthetic_ratio = 0.25;
  std::uint64_t seed = 0;
  DegradationConfig degradation{};
};

// Scanned images are quantized to 8 bits, as if read back from files. A draw
// that applies no degradation at all is not a scan; the sample index is
// advanced until the record is non-empty.
inline std::pair<Image, DegradationRecord> synthesize_degraded(const Image& original, const Image& back,
                                                               const DegradationConfig& dc, SeedNamespace ns,
                                                               std::uint64_t& index) {
  const bool possible = std::any_of(dc.probability.begin(), dc.probability.end(), [](double p) { return p > 0.0; });
  while (true) {
    auto out = synthesize_scanned(original, back, dc, namespaced_seed(ns, index++));
    if (!out.second.applied.empty() || !possible) return {quantize8(std::move(out.first)), std::move(out.second)};
  }
}

inline ToyBenchmark make_toy_benchmark(const ToyConfig& cfg) {
  ToyBenchmark b;
  DegradationConfig dc = cfg.degradation;
  dc.seed = cfg.seed;
  auto make = [&](int count, std::uint64_t original_base, SeedNamespace ns, std::vector<std::pair<Image, Image>>& out) {
    std::vector<Image> originals;
    for (int i = 0; i < count; ++i) originals.push_back(make_toy_original(cfg.size, cfg.seed * 1000003 + original_base + i));
    std::uint64_t index = 0;
    for (int i = 0; i < count; ++i)
      out.emplace_back(synthesize_degraded(originals[i], originals[(i + 1) % count], dc, ns, index).first, originals[i]);
  };
  make(cfg.train_pairs, 0, SeedNamespace::real, b.train);
  make(cfg.val_pairs, 400000, SeedNamespace::validation, b.val);
  make(cfg.test_pairs, 500000, SeedNamespace::test, b.test);
  const int n_syn = synthetic_count(cfg.train_pairs, cfg.synthetic_ratio, SyntheticMode::augment);
  std::uint64_t index = 0;
  for (int i = 0; i < n_syn; ++i) {
    const Image& orig = b.train[i % cfg.train_pairs].second;
    const Image& back = b.train[(i + 1) % cfg.train_pairs].second;
    b.synthetic.emplace_back(synthesize_degraded(orig, back, dc, SeedNamespace::synthetic, index).first, orig);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Ablation runner

struct AblationVariant {
  std::string name;
  ConditionSource condition = ConditionSource::corrected;
  bool color_condition = true;
  bool synthetic_data = false;
};

inline std::vector<AblationVariant> table3_variants() {
  return {{"vanilla", ConditionSource::scanned, false, false},
          {"+CIC", ConditionSource::corrected, false, false},
          {"+CIC+CVC", ConditionSource::corrected, true, false},
          {"+CIC+CVC+SDG", ConditionSource::corrected, true, true}};
}

struct AblationConfig {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  ColorTrainConfig color{};
  LgrdmConfig lgrdm{};
  int schedule_steps = 200;
  int start_step = 0;  // T_o, 0 = T/2
  // When non-empty, T_o is picked per variant and seed from these by mean
  // PSNR on the validation split; start_step is then ignored.
  std::vector<int> start_candidates{};
  bool include_baselines = true;  // identity / histogram / color-only / oracle rows
};

struct AblationResult {
  EvalReport report;
  // per variant name, per seed mean PSNR
  std::map<std::string, std::vector<double>> per_seed_psnr;
  std::map<std::string, std::vector<int>> chosen_start;
  // per variant, per seed mean PSNR on the validation split at the T_o used
  std::map<std::string, std::vector<double>> val_psnr;
};

inline double mean_restored_psnr(const std::vector<std::pair<Image, Image>>& pairs, const ColorEncoderNet& encoder,
                                 const DenoiserNet& denoiser, const NoiseSchedule& schedule, DescanOptions opt,
                                 std::uint64_t seed) {
  double acc = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    opt.seed = seed * 7919 + i;
    acc += psnr(descan(pairs[i].first, &encoder, denoiser, schedule, opt).restored, pairs[i].second);
  }
  return acc / static_cast<double>(pairs.size());
}

// First candidate with the highest mean validation PSNR.
inline int choose_start_step(const std::vector<std::pair<Image, Image>>& val, const ColorEncoderNet& encoder,
                             const DenoiserNet& denoiser, const NoiseSchedule& schedule,
                             const std::vector<int>& candidates, DescanOptions opt, std::uint64_t seed) {
  require(!candidates.empty(), "choose_start_step: no candidates");
  if (val.empty()) fail(ErrorKind::data, "choose_start_step: empty validation split");
  int best = candidates.front();
  double best_psnr = -1.0;
  for (int t : candidates) {
    opt.start_step = t;
    const double p = mean_restored_psnr(val, encoder, denoiser, schedule, opt, seed);
    if (p > best_psnr) best = t, best_psnr = p;
  }
  return best;
}

// Trains and evaluates each variant once per seed; rows are seed-averaged.
inline AblationResult run_ablation(const ToyBenchmark& bench, const std::vector<AblationVariant>& variants,
                                   const AblationConfig& cfg,
                                   const std::function<void(const std::string&)>& log = {}) {
  require(cfg.seeds.size() >= 1, "run_ablation: need at least one seed");
  const auto schedule = make_default_schedule(cfg.schedule_steps);
  AblationResult result;
  std::map<std::string, std::vector<EvalRow>> rows;
  std::vector<std::string> order;
  auto record = [&](const std::string& name, const std::vector<PairMetric>& m, double seconds) {
    if (!rows.count(name)) order.push_back(name);
    rows[name].push_back(summarize(name, m, seconds));
    result.per_seed_psnr[name].push_back(rows[name].back().mean_psnr);
  };
  using clock = std::chrono::steady_clock;
  auto since = [](clock::time_point t) { return std::chrono::duration<double>(clock::now() - t).count(); };

  for (std::uint64_t seed : cfg.seeds) {
    ColorTrainConfig cc = cfg.color;
    cc.seed = seed;
    auto t0 = clock::now();
    const auto color = train_color_encoder(bench.train, cc);
    const double color_seconds = since(t0);
    if (log) log("seed " + std::to_string(seed) + ": color encoder loss " + std::to_string(color.loss_log.back()));

    if (cfg.include_baselines) {
      const Image reference = pooled_reference(bench.train);
      std::vector<PairMetric> id, hist, cc_only, oracle;
      for (std::size_t i = 0; i < bench.test.size(); ++i) {
        const auto& [scan, orig] = bench.test[i];
        const auto stem = std::to_string(i);
        id.push_back(measure(stem, scan, orig));
        hist.push_back(measure(stem, histogram_match(scan, reference), orig));
        cc_only.push_back(measure(stem, clamp01(correct(color.encoder, scan).corrected), orig));
        oracle.push_back(measure(stem, clamp01(renormalize(scan, channel_stats(orig))), orig));
      }
      record("identity", id, 0.0);
      record("histogram-match", hist, 0.0);
      record("color-correction", cc_only, color_seconds);
      record("oracle-renormalization", oracle, 0.0);
    }

    for (const auto& v : variants) {
      LgrdmConfig lc = cfg.lgrdm;
      lc.seed = seed;
      lc.condition = v.condition;
      lc.color_condition = v.color_condition;
      auto train = bench.train;
      if (v.synthetic_data) train.insert(train.end(), bench.synthetic.begin(), bench.synthetic.end());
      t0 = clock::now();
      LgrdmTrainResult trained = [&] {
        try {
          return train_lgrdm(train, &color.encoder, schedule, lc);
        } catch (const Error& e) {
          if (e.kind() == ErrorKind::divergence) fail(ErrorKind::divergence, "variant " + v.name + ": " + e.what());
          throw;
        }
      }();
      DescanOptions opt;
      opt.condition = v.condition;
      opt.start_step = cfg.start_step;
      if (!cfg.start_candidates.empty())
        opt.start_step = choose_start_step(bench.val, color.encoder, trained.denoiser, schedule, cfg.start_candidates,
                                           opt, seed);
      result.chosen_start[v.name].push_back(opt.start_step);
      if (!bench.val.empty())
        result.val_psnr[v.name].push_back(
            mean_restored_psnr(bench.val, color.encoder, trained.denoiser, schedule, opt, seed));
      std::vector<PairMetric> m;
      for (std::size_t i = 0; i < bench.test.size(); ++i) {
        opt.seed = seed * 7919 + i;
        m.push_back(measure(std::to_string(i),
                            descan(bench.test[i].first, &color.encoder, trained.denoiser, schedule, opt).restored,
                            bench.test[i].second));
      }
      record(v.name, m, since(t0));
      if (log)
        log("seed " + std::to_string(seed) + ": " + v.name + " T_o " + std::to_string(opt.start_step) + " PSNR " +
            std::to_string(rows[v.name].back().mean_psnr));
    }
  }

  result.report.seed = cfg.seeds.front();
  for (const auto& name : order) {
    const auto& rs = rows[name];
    EvalRow avg{name, 0.0, 0.0, rs.front().samples, 0.0};
    for (const auto& r : rs) avg.mean_psnr += r.mean_psnr, avg.mean_ssim += r.mean_ssim, avg.seconds += r.seconds;
    avg.mean_psnr /= rs.size();
    avg.mean_ssim /= rs.size();
    result.report.rows.push_back(avg);
  }
  return result;
}

}  // namespace descan
