#pragma once

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "descan/colorcorrect.hpp"
#include "descan/dataprep.hpp"
#include "descan/degrade.hpp"
#include "descan/diffusion.hpp"
#include "descan/error.hpp"
#include "descan/eval.hpp"
#include "descan/nn/params.hpp"
#include "descan/parallel.hpp"
#include "descan/ppm.hpp"

#ifndef DESCAN_VERSION
#define DESCAN_VERSION "0.1.0"
#endif

namespace descan::app {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Flat key = value configuration

// Every accepted key with its default. Order is the order of the resolved dump.
inline const std::vector<std::pair<std::string, std::string>>& config_defaults() {
  static const std::vector<std::pair<std::string, std::string>> d = {
      {"seed", "0"},
      {"schedule.T", "200"},
      {"schedule.beta_1", "auto"},  // auto: 1e-4 * 1000 / T
      {"schedule.beta_T", "auto"},  // auto: 0.02 * 1000 / T
      {"descan.T_o", "0"},          // 0: T / 2
      {"descan.noise_init", "false"},
      {"color.steps", "500"},
      {"color.batch", "8"},
      {"color.lr", "0.003"},
      {"color.augment", "true"},
      {"lgrdm.steps", "3000"},
      {"lgrdm.batch", "8"},
      {"lgrdm.patch", "32"},
      {"lgrdm.lr", "0.002"},
      {"lgrdm.loss", "mae"},
      {"lgrdm.condition", "corrected"},
      {"lgrdm.color_condition", "true"},
      {"lgrdm.augment", "true"},
      {"lgrdm.base_width", "16"},
      {"lgrdm.emb_dim", "32"},
      {"adam.beta1", "0.9"},
      {"adam.beta2", "0.999"},
      {"adam.eps", "1e-8"},
      {"prepare.ratio", "0.25"},
      {"prepare.mode", "augment"},
      {"prepare.train_fraction", "0.8"},
      {"prepare.val_fraction", "0.1"},
      {"prepare.max_shift", "16"},
      {"degrade.p_color_transition", "0.5"},
      {"degrade.p_bleed_through", "0.5"},
      {"degrade.p_gaussian_noise", "0.5"},
      {"degrade.p_external_noise", "0.5"},
      {"degrade.p_internal_noise", "0.5"},
      {"degrade.hue_shift", "-15,15"},
      {"degrade.sat_scale", "0.7,1.1"},
      {"degrade.val_scale", "0.7,1.1"},
      {"degrade.alpha", "0.05,0.2"},
      {"degrade.noise_sigma", "0.01,0.06"},
      {"degrade.dot_count", "0,20"},
      {"degrade.dot_radius", "1,4"},
      {"degrade.dot_intensity", "0.2,0.6"},
      {"degrade.line_count", "0,3"},
      {"degrade.line_width", "1,3"},
      {"degrade.line_intensity", "-0.25,0.25"},
  };
  return d;
}

class RunConfig {
 public:
  RunConfig() {
    for (const auto& [k, v] : config_defaults()) values_[k] = v;
  }

  void set(const std::string& key, const std::string& value, const std::string& origin = "override") {
    if (!values_.count(key)) fail(ErrorKind::config, origin + ": unknown config key '" + key + "'");
    values_[key] = value;
  }

  // "key = value" lines; '#' starts a comment.
  void merge_text(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto where = origin + ":" + std::to_string(lineno);
      if (trim(line).empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) fail(ErrorKind::config, where + ": expected 'key = value'");
      const auto key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
      if (key.empty() || value.empty()) fail(ErrorKind::config, where + ": empty key or value");
      set(key, value, where);
    }
  }

  void merge_assignment(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) fail(ErrorKind::config, "--set expects key=value, got '" + kv + "'");
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) fail(ErrorKind::config, "unknown config key '" + key + "'");
    return it->second;
  }

  double real(const std::string& key) const {
    const auto& s = str(key);
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used == s.size() && std::isfinite(v)) return v;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::config, key + ": expected a number, got '" + s + "'");
  }

  long long integer(const std::string& key) const {
    const auto& s = str(key);
    try {
      std::size_t used = 0;
      const long long v = std::stoll(s, &used);
      if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::config, key + ": expected an integer, got '" + s + "'");
  }

  bool boolean(const std::string& key) const {
    const auto& s = str(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    fail(ErrorKind::config, key + ": expected true/false, got '" + s + "'");
  }

  Range range(const std::string& key) const {
    const auto& s = str(key);
    const auto comma = s.find(',');
    if (comma != std::string::npos) {
      try {
        return {std::stod(s.substr(0, comma)), std::stod(s.substr(comma + 1))};
      } catch (const std::exception&) {
      }
    }
    fail(ErrorKind::config, key + ": expected 'lo,hi', got '" + s + "'");
  }

  std::string dump() const {
    std::string out;
    for (const auto& [k, d] : config_defaults()) out += k + " = " + values_.at(k) + "\n";
    return out;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    for (const auto& [k, d] : config_defaults()) j[k] = values_.at(k);
    return j;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  }

  std::map<std::string, std::string> values_;
};

inline std::uint64_t seed_of(const RunConfig& c) {
  const auto v = c.integer("seed");
  if (v < 0) fail(ErrorKind::config, "seed must be non-negative");
  return static_cast<std::uint64_t>(v);
}

inline int positive(const RunConfig& c, const std::string& key) {
  const auto v = c.integer(key);
  if (v < 1 || v > 1000000000) fail(ErrorKind::config, key + " must be a positive integer");
  return static_cast<int>(v);
}

inline NoiseSchedule schedule_of(const RunConfig& c) {
  const int t = positive(c, "schedule.T");
  const double k = 1000.0 / t;
  const double b1 = c.str("schedule.beta_1") == "auto" ? 1e-4 * k : c.real("schedule.beta_1");
  const double bt = c.str("schedule.beta_T") == "auto" ? std::min(0.02 * k, 0.999) : c.real("schedule.beta_T");
  return make_linear_schedule(t, b1, bt);
}

inline DegradationConfig degradation_of(const RunConfig& c) {
  DegradationConfig d;
  for (int i = 0; i < 5; ++i) d.probability[i] = c.real("degrade.p_" + std::string(kDegradationNames[i]));
  d.hue_shift = c.range("degrade.hue_shift");
  d.sat_scale = c.range("degrade.sat_scale");
  d.val_scale = c.range("degrade.val_scale");
  d.alpha = c.range("degrade.alpha");
  d.noise_sigma = c.range("degrade.noise_sigma");
  d.dot_count = c.range("degrade.dot_count");
  d.dot_radius = c.range("degrade.dot_radius");
  d.dot_intensity = c.range("degrade.dot_intensity");
  d.line_count = c.range("degrade.line_count");
  d.line_width = c.range("degrade.line_width");
  d.line_intensity = c.range("degrade.line_intensity");
  d.seed = seed_of(c);
  d.validate();
  return d;
}

inline nn::AdamConfig adam_of(const RunConfig& c) {
  nn::AdamConfig a;
  a.beta1 = c.real("adam.beta1");
  a.beta2 = c.real("adam.beta2");
  a.eps = c.real("adam.eps");
  if (!(a.beta1 >= 0 && a.beta1 < 1 && a.beta2 >= 0 && a.beta2 < 1 && a.eps > 0))
    fail(ErrorKind::config, "adam: need 0 <= beta < 1 and eps > 0");
  return a;
}

inline ColorTrainConfig color_config_of(const RunConfig& c) {
  ColorTrainConfig t;
  t.steps = positive(c, "color.steps");
  t.batch = positive(c, "color.batch");
  t.lr = c.real("color.lr");
  t.augment = c.boolean("color.augment");
  t.seed = seed_of(c);
  t.adam = adam_of(c);
  if (!(t.lr > 0)) fail(ErrorKind::config, "color.lr must be positive");
  return t;
}

inline LgrdmConfig lgrdm_config_of(const RunConfig& c) {
  LgrdmConfig t;
  t.steps = positive(c, "lgrdm.steps");
  t.batch = positive(c, "lgrdm.batch");
  t.patch = positive(c, "lgrdm.patch");
  if (t.patch % 4 != 0) fail(ErrorKind::config, "lgrdm.patch must be a multiple of 4");
  t.lr = c.real("lgrdm.lr");
  if (!(t.lr > 0)) fail(ErrorKind::config, "lgrdm.lr must be positive");
  const auto& loss = c.str("lgrdm.loss");
  if (loss != "mae" && loss != "mse") fail(ErrorKind::config, "lgrdm.loss must be mae or mse");
  t.loss = loss == "mae" ? LossKind::mean_abs : LossKind::mean_square;
  const auto& cond = c.str("lgrdm.condition");
  if (cond != "corrected" && cond != "scanned") fail(ErrorKind::config, "lgrdm.condition must be corrected or scanned");
  t.condition = cond == "corrected" ? ConditionSource::corrected : ConditionSource::scanned;
  t.color_condition = c.boolean("lgrdm.color_condition");
  t.augment = c.boolean("lgrdm.augment");
  t.arch.base_width = positive(c, "lgrdm.base_width");
  t.arch.emb_dim = positive(c, "lgrdm.emb_dim");
  if (t.arch.emb_dim % 2 != 0) fail(ErrorKind::config, "lgrdm.emb_dim must be even");
  t.seed = seed_of(c);
  t.adam = adam_of(c);
  return t;
}

inline ManifestOptions manifest_options_of(const RunConfig& c) {
  ManifestOptions m;
  m.synthetic_ratio = c.real("prepare.ratio");
  const auto& mode = c.str("prepare.mode");
  if (mode != "augment" && mode != "replace") fail(ErrorKind::config, "prepare.mode must be augment or replace");
  m.mode = mode == "augment" ? SyntheticMode::augment : SyntheticMode::replace;
  m.train_fraction = c.real("prepare.train_fraction");
  m.val_fraction = c.real("prepare.val_fraction");
  m.max_shift = static_cast<int>(c.integer("prepare.max_shift"));
  if (m.max_shift < 0) fail(ErrorKind::config, "prepare.max_shift must be non-negative");
  m.seed = seed_of(c);
  m.degradation = degradation_of(c);
  return m;
}

// ---------------------------------------------------------------------------
// Run plumbing

// Exclusive claim on an output directory for the lifetime of a run.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& dir) : path_(dir / ".descan.lock") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorKind::io, "cannot create output directory " + dir.string() + ": " + ec.message());
    std::FILE* f = std::fopen(path_.string().c_str(), "wx");
    if (!f) fail(ErrorKind::io, "output directory " + dir.string() + " is locked by another run (" + path_.string() + ")");
    std::fclose(f);
  }
  ~OutputLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
};

inline void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

inline std::string read_text(const fs::path& path) {
  const auto b = read_file_bytes(path);
  return std::string(b.begin(), b.end());
}

inline void write_loss_csv(const fs::path& path, const std::vector<double>& losses) {
  std::string out = "step,loss\n";
  char line[64];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(line, sizeof line, "%zu,%.9g\n", i, losses[i]);
    out += line;
  }
  write_text(path, out);
}

// Metadata for one subcommand invocation. Only wall_seconds varies between
// otherwise identical runs.
struct RunRecord {
  std::string command;
  const RunConfig* config = nullptr;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void write(const fs::path& dir) const {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["version"] = DESCAN_VERSION;
    j["seed"] = seed_of(*config);
    j["config"] = config->to_json();
    j["result"] = extra;
    j["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_text(dir / ("run-" + command + ".json"), j.dump(2) + "\n");
    write_text(dir / ("config-" + command + ".txt"), config->dump());
  }
};

inline std::vector<fs::path> ppm_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorKind::io, "not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<std::pair<Image, Image>> load_split(const PairManifest& m, Split split) {
  std::vector<std::pair<Image, Image>> out;
  for (const auto* e : m.split(split)) {
    auto p = load_aligned(*e);
    out.emplace_back(std::move(p.scanned), std::move(p.original));
  }
  if (out.empty()) fail(ErrorKind::data, std::string("manifest has no ") + to_string(split) + " entries");
  return out;
}

inline void require_stage(const fs::path& weights, const std::string& stage, const std::string& command) {
  if (!fs::exists(weights))
    fail(ErrorKind::stage_order, command + " needs " + weights.string() + "; run '" + stage + "' first");
}

inline nlohmann::json denoiser_meta(const LgrdmConfig& c, const RunConfig& rc) {
  return {{"base_width", c.arch.base_width},
          {"emb_dim", c.arch.emb_dim},
          {"color_condition", c.color_condition},
          {"condition", c.condition == ConditionSource::corrected ? "corrected" : "scanned"},
          {"schedule.T", rc.str("schedule.T")},
          {"schedule.beta_1", rc.str("schedule.beta_1")},
          {"schedule.beta_T", rc.str("schedule.beta_T")}};
}

// ---------------------------------------------------------------------------
// Subcommands

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

inline void cmd_degrade(const RunConfig& cfg, const fs::path& in, const fs::path& out_dir, Streams io) {
  RunRecord run{"degrade", &cfg};
  const auto dc = degradation_of(cfg);
  const auto files = ppm_files(in);
  OutputLock lock(out_dir);
  if (files.empty()) io.err << "warning: no .ppm files in " << in.string() << "\n";
  std::vector<Image> originals;
  for (const auto& f : files) originals.push_back(load_image(f));
  // each page's back side is the next original of the same size, else itself
  parallel_for(files.size(), [&](std::size_t i) {
    const Image& orig = originals[i];
    const std::size_t b = originals[(i + 1) % files.size()].same_size(orig) ? (i + 1) % files.size() : i;
    auto [img, record] = synthesize_scanned(orig, originals[b], dc, namespaced_seed(SeedNamespace::synthetic, i));
    const auto stem = base_stem(files[i]);
    save_image(img, out_dir / (stem + kScanSuffix + ".ppm"));
    auto j = to_json(record);
    j["original"] = files[i].filename().string();
    j["back"] = files[b].filename().string();
    write_text(out_dir / (stem + ".json"), j.dump(2) + "\n");
  });
  run.extra["images"] = files.size();
  run.write(out_dir);
  io.out << "degraded " << files.size() << " image(s) into " << out_dir.string() << "\n";
}

inline void cmd_prepare(const RunConfig& cfg, const fs::path& pairs, const fs::path& manifest, Streams io) {
  RunRecord run{"prepare", &cfg};
  auto opt = manifest_options_of(cfg);
  const auto dir = manifest.parent_path().empty() ? fs::path(".") : manifest.parent_path();
  OutputLock lock(dir);
  opt.synthetic_dir = dir / "synthetic";
  const auto m = build_manifest(pairs, opt);
  save_manifest(m, manifest);
  int low = 0;
  for (const auto& e : m.entries)
    if (e.origin == Origin::real && e.score < kLowConfidenceScore) {
      ++low;
      io.err << "warning: low-confidence registration for " << e.stem << " (score " << e.score << ")\n";
    }
  run.extra["entries"] = m.entries.size();
  run.extra["train"] = m.split(Split::train).size();
  run.extra["val"] = m.split(Split::val).size();
  run.extra["test"] = m.split(Split::test).size();
  run.extra["low_confidence"] = low;
  run.write(dir);
  io.out << "manifest with " << m.entries.size() << " entries written to " << manifest.string() << "\n";
}

inline void cmd_train_color(const RunConfig& cfg, const fs::path& manifest, const fs::path& out_dir, Streams io) {
  RunRecord run{"train-color", &cfg};
  const auto tc = color_config_of(cfg);
  const auto pairs = load_split(load_manifest(manifest), Split::train);
  OutputLock lock(out_dir);
  const auto r = train_color_encoder(pairs, tc);
  nn::save_params(r.encoder.params(), out_dir / "color.dscw");
  write_loss_csv(out_dir / "color_loss.csv", r.loss_log);
  run.extra["pairs"] = pairs.size();
  run.extra["final_loss"] = r.loss_log.back();
  run.extra["weights_hash"] = r.encoder.params().hash();
  run.write(out_dir);
  io.out << "color encoder: final loss " << r.loss_log.back() << ", weights " << (out_dir / "color.dscw").string()
         << "\n";
}

inline ColorEncoderNet load_color(const fs::path& path) {
  ColorEncoderNet enc;
  nn::load_params(enc.params(), path);
  return enc;
}

inline void cmd_train_descan(const RunConfig& cfg, const fs::path& manifest, const fs::path& color_path,
                             const fs::path& out_dir, Streams io) {
  RunRecord run{"train-descan", &cfg};
  require_stage(color_path, "train-color", "train-descan");
  const auto lc = lgrdm_config_of(cfg);
  const auto schedule = schedule_of(cfg);
  const auto pairs = load_split(load_manifest(manifest), Split::train);
  const auto encoder = load_color(color_path);
  const auto encoder_hash = encoder.params().hash();
  OutputLock lock(out_dir);
  const int every = std::max(1, lc.steps / 20);
  const auto r = train_lgrdm(pairs, &encoder, schedule, lc, [&](int step, double loss) {
    if ((step + 1) % every == 0) io.err << "step " << step + 1 << "/" << lc.steps << " loss " << loss << "\n";
  });
  if (encoder.params().hash() != encoder_hash) fail(ErrorKind::stage_order, "color encoder changed during training");
  nn::save_params(r.denoiser.params(), out_dir / "descan.dscw");
  write_text(out_dir / "descan.json", denoiser_meta(lc, cfg).dump(2) + "\n");
  write_loss_csv(out_dir / "descan_loss.csv", r.loss_log);
  double tail = 0.0;
  const std::size_t n = std::min<std::size_t>(100, r.loss_log.size());
  for (std::size_t i = r.loss_log.size() - n; i < r.loss_log.size(); ++i) tail += r.loss_log[i] / n;
  run.extra["pairs"] = pairs.size();
  run.extra["final_loss_mean100"] = tail;
  run.extra["weights_hash"] = r.denoiser.params().hash();
  run.extra["color_weights_hash"] = encoder_hash;
  run.write(out_dir);
  io.out << "denoiser: mean loss over last " << n << " steps " << tail << ", weights "
         << (out_dir / "descan.dscw").string() << "\n";
}

struct LoadedDenoiser {
  DenoiserNet net;
  ConditionSource condition;
};

// The sidecar written by train-descan fixes the architecture; the schedule
// keys it records must agree with the current config.
inline LoadedDenoiser load_denoiser(const fs::path& weights, const RunConfig& cfg) {
  const auto meta_path = fs::path(weights).replace_extension(".json");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_text(meta_path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, meta_path.string() + ": " + e.what());
  }
  nn::DenoiserSpec spec;
  try {
    spec.base_width = meta.at("base_width").get<int>();
    spec.emb_dim = meta.at("emb_dim").get<int>();
    spec.color_condition = meta.at("color_condition").get<bool>();
    for (const char* k : {"schedule.T", "schedule.beta_1", "schedule.beta_T"})
      if (meta.at(k).get<std::string>() != cfg.str(k))
        fail(ErrorKind::config, std::string(k) + " differs from the value used in training (" +
                                    meta.at(k).get<std::string>() + ")");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, meta_path.string() + ": " + e.what());
  }
  LoadedDenoiser d{DenoiserNet(spec), meta.value("condition", "corrected") == "scanned" ? ConditionSource::scanned
                                                                                       : ConditionSource::corrected};
  nn::load_params(d.net.params(), weights);
  return d;
}

inline void cmd_descan(const RunConfig& cfg, const fs::path& in, const fs::path& out_dir, const fs::path& color_path,
                       const fs::path& denoiser_path, Streams io) {
  RunRecord run{"descan", &cfg};
  require_stage(color_path, "train-color", "descan");
  require_stage(denoiser_path, "train-descan", "descan");
  const auto schedule = schedule_of(cfg);
  const auto encoder = load_color(color_path);
  const auto denoiser = load_denoiser(denoiser_path, cfg);
  DescanOptions base;
  base.start_step = static_cast<int>(cfg.integer("descan.T_o"));
  base.noise_init = cfg.boolean("descan.noise_init");
  base.condition = denoiser.condition;
  if (base.start_step < 0 || base.start_step > schedule.steps())
    fail(ErrorKind::config, "descan.T_o must lie in [0, schedule.T]");
  const auto files = fs::is_directory(in) ? ppm_files(in) : std::vector<fs::path>{in};
  if (files.empty()) io.err << "warning: no .ppm files in " << in.string() << "\n";
  OutputLock lock(out_dir);
  std::vector<DescanResult> results(files.size());
  const std::uint64_t seed = seed_of(cfg);
  parallel_for(files.size(), [&](std::size_t i) {
    DescanOptions opt = base;
    opt.seed = seed * 1000003 + i;
    auto r = descan::descan(load_image(files[i]), &encoder, denoiser.net, schedule, opt);
    save_image(r.restored, out_dir / (base_stem(files[i]) + "_restored.ppm"));
    results[i] = std::move(r);
  });
  double seconds = 0.0;
  nlohmann::ordered_json per = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < files.size(); ++i) {
    seconds += results[i].reverse_seconds;
    per.push_back({{"stem", base_stem(files[i])}, {"reverse_steps", results[i].reverse_steps}});
  }
  run.extra["images"] = per;
  run.extra["T_o"] = files.empty() ? 0 : results.front().reverse_steps;
  run.extra["reverse_seconds"] = seconds;
  run.write(out_dir);
  io.out << "restored " << files.size() << " image(s) with T_o = "
         << (files.empty() ? 0 : results.front().reverse_steps) << " in " << seconds << " s of reverse sampling\n";
}

inline void cmd_evaluate(const RunConfig& cfg, const fs::path& restored, const fs::path& originals,
                         const std::optional<fs::path>& out_dir, const std::string& method, Streams io) {
  RunRecord run{"evaluate", &cfg};
  const auto metrics = evaluate_pairs(restored, originals);
  EvalReport report;
  report.seed = seed_of(cfg);
  report.config = restored.string();
  report.rows.push_back(summarize(method, metrics));
  io.out << format_table(report);
  if (out_dir) {
    OutputLock lock(*out_dir);
    write_text(*out_dir / "report.csv", format_csv(report));
    write_text(*out_dir / "report.txt", format_table(report));
    std::string per = "stem,psnr_db,ssim\n";
    char line[160];
    for (const auto& m : metrics) {
      std::snprintf(line, sizeof line, "%s,%.6f,%.6f\n", m.stem.c_str(), m.psnr, m.ssim);
      per += line;
    }
    write_text(*out_dir / "per_pair.csv", per);
    run.extra["samples"] = metrics.size();
    run.extra["mean_psnr"] = report.rows.front().mean_psnr;
    run.extra["mean_ssim"] = report.rows.front().mean_ssim;
    run.write(*out_dir);
  }
}

// One grid per stem present in every input directory, columns in the order given.
inline void cmd_report(const RunConfig& cfg, const std::vector<fs::path>& dirs, const fs::path& out_dir, int columns,
                       Streams io) {
  RunRecord run{"report", &cfg};
  if (dirs.empty()) fail(ErrorKind::config, "report: at least one --dir is required");
  std::vector<std::map<std::string, fs::path>> maps;
  for (const auto& d : dirs) maps.push_back(ppm_by_stem(d));
  OutputLock lock(out_dir);
  std::vector<std::string> stems;
  for (const auto& [stem, p] : maps.front())
    if (std::all_of(maps.begin(), maps.end(), [&](const auto& m) { return m.count(stem) > 0; })) stems.push_back(stem);
  for (const auto& stem : stems) {
    std::vector<Image> tiles;
    for (const auto& m : maps) tiles.push_back(load_image(m.at(stem)));
    int h = tiles.front().height(), w = tiles.front().width();
    for (const auto& t : tiles) h = std::min(h, t.height()), w = std::min(w, t.width());
    for (auto& t : tiles) t = crop(t, 0, 0, h, w);
    save_image(render_grid(tiles, columns > 0 ? columns : static_cast<int>(tiles.size())),
               out_dir / (stem + "_grid.ppm"));
  }
  std::string legend = "columns:\n";
  for (std::size_t i = 0; i < dirs.size(); ++i) legend += std::to_string(i + 1) + ": " + dirs[i].string() + "\n";
  write_text(out_dir / "legend.txt", legend);
  run.extra["grids"] = stems.size();
  run.write(out_dir);
  io.out << "wrote " << stems.size() << " grid(s) to " << out_dir.string() << "\n";
}

// Toy-benchmark ablation: baselines plus the four conditioning variants.
inline void cmd_ablate(const RunConfig& cfg, const fs::path& out_dir, const std::vector<std::uint64_t>& seeds,
                       const std::vector<int>& candidates, int pairs, Streams io) {
  RunRecord run{"ablate", &cfg};
  ToyConfig tc;
  tc.train_pairs = pairs;
  tc.seed = seed_of(cfg);
  tc.degradation = degradation_of(cfg);
  tc.synthetic_ratio = cfg.real("prepare.ratio");
  AblationConfig ac;
  ac.seeds = seeds;
  ac.color = color_config_of(cfg);
  ac.lgrdm = lgrdm_config_of(cfg);
  ac.schedule_steps = positive(cfg, "schedule.T");
  ac.start_step = static_cast<int>(cfg.integer("descan.T_o"));
  ac.start_candidates = candidates;
  OutputLock lock(out_dir);
  const auto bench = make_toy_benchmark(tc);
  const auto r = run_ablation(bench, table3_variants(), ac, [&](const std::string& m) { io.err << m << "\n"; });
  io.out << format_table(r.report);
  write_text(out_dir / "ablation.csv", format_csv(r.report));
  write_text(out_dir / "ablation.txt", format_table(r.report));
  run.extra["per_seed_psnr"] = r.per_seed_psnr;
  run.extra["chosen_T_o"] = r.chosen_start;
  run.write(out_dir);
}

// ---------------------------------------------------------------------------
// Entry point

inline int run_cli(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App cli{"descan: scanned-document restoration with color correction and conditional diffusion"};
  cli.set_version_flag("--version", DESCAN_VERSION);
  cli.require_subcommand(1);

  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "flat key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--set", sets, "override one config key (key=value); repeatable");
    sub->add_option("--seed", seed, "master seed (overrides 'seed')");
  };

  std::string in, out_path, manifest, color, denoiser, model_dir, restored, originals, method = "restored";
  std::optional<double> ratio;
  std::optional<int> steps;
  std::optional<std::string> eval_out;
  std::vector<std::string> dirs, seeds_arg{"1", "2", "3"}, candidates_arg;
  int columns = 0, toy_pairs = 64;
  bool noise_init = false;

  auto* degrade = cli.add_subcommand("degrade", "synthesize scanned copies of original images");
  common(degrade);
  degrade->add_option("--in", in, "directory of original .ppm images")->required();
  degrade->add_option("--out", out_path, "output directory")->required();

  auto* prepare = cli.add_subcommand("prepare", "register scan/original pairs and write a manifest");
  common(prepare);
  prepare->add_option("--pairs", in, "directory of <stem>_scan.ppm / <stem>_orig.ppm pairs")->required();
  prepare->add_option("--out", out_path, "manifest JSON path")->required();
  prepare->add_option("--ratio", ratio, "synthetic share of the training split");

  auto* train_color = cli.add_subcommand("train-color", "train the color encoder");
  common(train_color);
  train_color->add_option("--manifest", manifest)->required();
  train_color->add_option("--out", out_path, "output directory for color.dscw")->required();

  auto* train_descan = cli.add_subcommand("train-descan", "train the diffusion denoiser with a frozen color encoder");
  common(train_descan);
  train_descan->add_option("--manifest", manifest)->required();
  train_descan->add_option("--out", out_path, "output directory for descan.dscw")->required();
  train_descan->add_option("--color", color, "color encoder weights (default <out>/color.dscw)");

  auto* run_descan = cli.add_subcommand("descan", "restore scanned images");
  common(run_descan);
  run_descan->add_option("--in", in, "scanned .ppm file or directory")->required();
  run_descan->add_option("--out", out_path, "output directory")->required();
  run_descan->add_option("--model", model_dir, "directory holding color.dscw and descan.dscw");
  run_descan->add_option("--color", color, "color encoder weights");
  run_descan->add_option("--denoiser", denoiser, "denoiser weights");
  run_descan->add_option("--steps", steps, "reverse steps T_o (overrides descan.T_o)");
  run_descan->add_flag("--noise-init", noise_init, "forward-noise the corrected image to T_o before sampling");

  auto* evaluate = cli.add_subcommand("evaluate", "PSNR/SSIM of restored images against originals");
  common(evaluate);
  evaluate->add_option("--restored", restored)->required();
  evaluate->add_option("--originals", originals)->required();
  evaluate->add_option("--out", eval_out, "directory for report.csv / report.txt");
  evaluate->add_option("--method", method, "row label");

  auto* report = cli.add_subcommand("report", "comparison grids, one per stem");
  common(report);
  report->add_option("--dir", dirs, "image directory (one column each, repeatable)")->required();
  report->add_option("--out", out_path)->required();
  report->add_option("--columns", columns);

  auto* ablate = cli.add_subcommand("ablate", "toy-benchmark ablation of the conditioning components");
  common(ablate);
  ablate->add_option("--out", out_path)->required();
  ablate->add_option("--seeds", seeds_arg, "training seeds")->delimiter(',');
  ablate->add_option("--T-o-candidates", candidates_arg, "choose T_o on the validation split")->delimiter(',');
  ablate->add_option("--pairs", toy_pairs, "training pairs");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = cli.exit(e, out, err);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::config);
  }

  try {
    RunConfig cfg;
    if (!config_file.empty()) cfg.merge_text(read_text(config_file), config_file);
    for (const auto& s : sets) cfg.merge_assignment(s);
    if (seed) cfg.set("seed", std::to_string(*seed));
    if (ratio) cfg.set("prepare.ratio", std::to_string(*ratio));
    if (steps) cfg.set("descan.T_o", std::to_string(*steps));
    if (noise_init) cfg.set("descan.noise_init", "true");
    worker_count();  // validates DESCAN_THREADS early
    const Streams io{out, err};

    if (*degrade) {
      cmd_degrade(cfg, in, out_path, io);
    } else if (*prepare) {
      cmd_prepare(cfg, in, out_path, io);
    } else if (*train_color) {
      cmd_train_color(cfg, manifest, out_path, io);
    } else if (*train_descan) {
      cmd_train_descan(cfg, manifest, color.empty() ? fs::path(out_path) / "color.dscw" : fs::path(color), out_path, io);
    } else if (*run_descan) {
      const fs::path model = model_dir.empty() ? fs::path(".") : fs::path(model_dir);
      if (model_dir.empty() && (color.empty() || denoiser.empty()))
        fail(ErrorKind::config, "descan: give --model DIR or both --color and --denoiser");
      cmd_descan(cfg, in, out_path, color.empty() ? model / "color.dscw" : fs::path(color),
                 denoiser.empty() ? model / "descan.dscw" : fs::path(denoiser), io);
    } else if (*evaluate) {
      cmd_evaluate(cfg, restored, originals, eval_out ? std::optional<fs::path>(*eval_out) : std::nullopt, method, io);
    } else if (*report) {
      std::vector<fs::path> ds(dirs.begin(), dirs.end());
      cmd_report(cfg, ds, out_path, columns, io);
    } else if (*ablate) {
      std::vector<std::uint64_t> seeds;
      std::vector<int> candidates;
      try {
        for (const auto& s : seeds_arg) seeds.push_back(std::stoull(s));
        for (const auto& s : candidates_arg) candidates.push_back(std::stoi(s));
      } catch (const std::exception&) {
        fail(ErrorKind::config, "ablate: seeds and T_o candidates must be integers");
      }
      if (seeds.empty()) fail(ErrorKind::config, "ablate: need at least one seed");
      if (toy_pairs < 1) fail(ErrorKind::config, "ablate: --pairs must be positive");
      cmd_ablate(cfg, out_path, seeds, candidates, toy_pairs, io);
    }
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace descan::app
