#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "descan/degrade.hpp"
#include "descan/error.hpp"
#include "descan/image.hpp"
#include "descan/ppm.hpp"
#include "descan/registration.hpp"
#include "descan/rng.hpp"

namespace descan {

struct PatchPair {
  Image scanned;
  Image original;
  int y = 0;  // top-left in original coordinates
  int x = 0;
};

// Patches are cut at identical offset-compensated coordinates: the scanned
// patch starts at (y + dy, x + dx).
inline std::vector<PatchPair> extract_patches(const Image& scanned, const Image& original, int dx, int dy, int patch,
                                              int count, CounterRng& rng) {
  require_same_size(scanned, original, "extract_patches");
  require(patch >= 1 && count >= 0, "extract_patches: invalid patch size or count");
  const int h = original.height(), w = original.width();
  const int y_lo = std::max(0, -dy), y_hi = std::min(h, h - dy);
  const int x_lo = std::max(0, -dx), x_hi = std::min(w, w - dx);
  if (patch > y_hi - y_lo || patch > x_hi - x_lo)
    fail(ErrorKind::invalid_argument, "extract_patches: patch " + std::to_string(patch) +
                                          " larger than usable overlap " + std::to_string(y_hi - y_lo) + "x" +
                                          std::to_string(x_hi - x_lo));
  std::vector<PatchPair> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int y = static_cast<int>(rng.uniform_int(y_lo, y_hi - patch));
    const int x = static_cast<int>(rng.uniform_int(x_lo, x_hi - patch));
    out.push_back({crop(scanned, y + dy, x + dx, patch, patch), crop(original, y, x, patch, patch), y, x});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

enum class Origin { real, synthetic };
enum class Split { train, val, test };
enum class SyntheticMode { augment, replace };

inline const char* to_string(Origin o) { return o == Origin::real ? "real" : "synthetic"; }
inline const char* to_string(Split s) { return s == Split::train ? "train" : s == Split::val ? "val" : "test"; }

struct ManifestEntry {
  std::string stem;
  std::string scanned;
  std::string original;
  Origin origin = Origin::real;
  Split split = Split::train;
  int dx = 0;
  int dy = 0;
  double score = 1.0;
};

struct PairManifest {
  std::uint64_t seed = 0;
  double ratio = 0.0;
  SyntheticMode mode = SyntheticMode::augment;
  std::vector<ManifestEntry> entries;

  std::vector<const ManifestEntry*> split(Split s) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
      if (e.split == s) out.push_back(&e);
    return out;
  }
};

struct ManifestOptions {
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  double synthetic_ratio = 0.25;
  SyntheticMode mode = SyntheticMode::augment;
  std::uint64_t seed = 0;
  int max_shift = 16;
  DegradationConfig degradation;  // its seed is replaced by the manifest seed
  std::filesystem::path synthetic_dir;  // where synthetic scans are written
};

inline constexpr const char* kScanSuffix = "_scan";
inline constexpr const char* kOrigSuffix = "_orig";

// Number of synthetic train entries for a given count of real train entries.
inline int synthetic_count(int n_real_train, double ratio, SyntheticMode mode) {
  if (ratio <= 0.0) return 0;
  if (mode == SyntheticMode::augment) return static_cast<int>(std::lround(n_real_train * ratio / (1.0 - ratio)));
  return static_cast<int>(std::lround(n_real_train * ratio));
}

struct StemPairs {
  std::map<std::string, std::filesystem::path> scanned;
  std::map<std::string, std::filesystem::path> original;
};

inline std::string strip_suffix(const std::string& s, const std::string& suffix) {
  if (s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0)
    return s.substr(0, s.size() - suffix.size());
  return {};
}

// Pairs `<name>_scan.ppm` with `<name>_orig.ppm`; rejects unmatched stems.
inline std::vector<std::string> paired_stems(const std::filesystem::path& dir, StemPairs& out) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) fail(ErrorKind::io, "not a directory: " + dir.string());
  for (const auto& ent : fs::directory_iterator(dir)) {
    if (!ent.is_regular_file() || ent.path().extension() != ".ppm") continue;
    const auto name = ent.path().stem().string();
    if (auto s = strip_suffix(name, kScanSuffix); !s.empty()) out.scanned[s] = ent.path();
    else if (auto o = strip_suffix(name, kOrigSuffix); !o.empty()) out.original[o] = ent.path();
  }
  std::vector<std::string> unmatched, stems;
  for (const auto& [s, p] : out.scanned)
    (out.original.count(s) ? stems : unmatched).push_back(s);
  for (const auto& [s, p] : out.original)
    if (!out.scanned.count(s)) unmatched.push_back(s);
  if (!unmatched.empty()) {
    std::string list;
    for (const auto& s : unmatched) list += (list.empty() ? "" : ", ") + s;
    fail(ErrorKind::data, "unmatched stems: " + list);
  }
  if (stems.empty()) fail(ErrorKind::data, "no scanned/original pairs in " + dir.string());
  return stems;
}

template <class T>
void deterministic_shuffle(std::vector<T>& v, CounterRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(rng.uniform_int(0, i - 1))]);
}

inline int registration_window(const Image& img, int requested) {
  return std::max(0, std::min(requested, (std::min(img.height(), img.width()) - 1) / 4));
}

inline PairManifest build_manifest(const std::filesystem::path& pairs_dir, const ManifestOptions& opt) {
  namespace fs = std::filesystem;
  if (opt.train_fraction < 0 || opt.val_fraction < 0 || opt.train_fraction + opt.val_fraction > 1.0 + 1e-12)
    fail(ErrorKind::config, "split fractions must be non-negative and sum to at most 1");
  if (opt.synthetic_ratio < 0.0 || opt.synthetic_ratio > 1.0 ||
      (opt.mode == SyntheticMode::augment && opt.synthetic_ratio >= 1.0))
    fail(ErrorKind::config, "synthetic ratio outside the supported range");

  StemPairs files;
  auto stems = paired_stems(pairs_dir, files);
  CounterRng shuffle_rng = CounterRng::keyed(opt.seed, 0x5348554646ULL);
  deterministic_shuffle(stems, shuffle_rng);

  const int n = static_cast<int>(stems.size());
  int n_train = static_cast<int>(std::lround(n * opt.train_fraction));
  int n_val = static_cast<int>(std::lround(n * opt.val_fraction));
  n_train = std::clamp(n_train, 1, n);
  n_val = std::clamp(n_val, 0, n - n_train);

  PairManifest m;
  m.seed = opt.seed;
  m.ratio = opt.synthetic_ratio;
  m.mode = opt.mode;
  std::vector<std::pair<std::string, Image>> train_originals;
  for (int i = 0; i < n; ++i) {
    ManifestEntry e;
    e.stem = stems[i];
    e.scanned = files.scanned[e.stem].string();
    e.original = files.original[e.stem].string();
    e.split = i < n_train ? Split::train : i < n_train + n_val ? Split::val : Split::test;
    const Image scan = load_image(e.scanned);
    Image orig = load_image(e.original);
    if (!scan.same_size(orig)) fail(ErrorKind::data, "size mismatch in pair " + e.stem);
    try {
      const auto reg = register_translation(scan, orig, registration_window(orig, opt.max_shift));
      e.dx = reg.dx, e.dy = reg.dy, e.score = reg.score;
    } catch (const Error& err) {
      if (err.kind() != ErrorKind::data) throw;
      e.score = 0.0;  // blank page: keep identity alignment
    }
    if (e.split == Split::train) train_originals.emplace_back(e.original, std::move(orig));
    m.entries.push_back(std::move(e));
  }

  const int n_syn = synthetic_count(n_train, opt.synthetic_ratio, opt.mode);
  if (opt.mode == SyntheticMode::replace && n_syn > 0) {
    // Drop the last n_syn real train entries; their originals stay available.
    int dropped = 0;
    for (int i = n_train - 1; i >= 0 && dropped < n_syn && n_train - dropped > 1; --i, ++dropped)
      m.entries.erase(m.entries.begin() + i);
  }
  if (n_syn > 0) {
    if (opt.synthetic_dir.empty()) fail(ErrorKind::config, "synthetic_dir required when synthetic ratio > 0");
    fs::create_directories(opt.synthetic_dir);
    DegradationConfig cfg = opt.degradation;
    cfg.seed = opt.seed;
    const auto nt = train_originals.size();
    for (int i = 0; i < n_syn; ++i) {
      const auto& [orig_path, orig] = train_originals[i % nt];
      const auto& back = train_originals[(i + 1) % nt].second;
      const Image& back_img = back.same_size(orig) ? back : orig;
      auto [img, record] = synthesize_scanned(orig, back_img, cfg, namespaced_seed(SeedNamespace::synthetic, i));
      ManifestEntry e;
      e.stem = fs::path(orig_path).stem().string() + "_syn" + std::to_string(i);
      const auto scan_path = opt.synthetic_dir / (e.stem + kScanSuffix + std::string(".ppm"));
      save_image(img, scan_path);
      const auto rec_path = opt.synthetic_dir / (e.stem + ".json");
      const auto text = to_json(record).dump(2) + "\n";
      write_file_bytes(rec_path, std::vector<std::uint8_t>(text.begin(), text.end()));
      e.scanned = scan_path.string();
      e.original = orig_path;
      e.origin = Origin::synthetic;
      e.split = Split::train;
      m.entries.push_back(std::move(e));
    }
  }
  return m;
}

inline nlohmann::json to_json(const PairManifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries)
    entries.push_back({{"stem", e.stem},
                       {"scanned", e.scanned},
                       {"original", e.original},
                       {"origin", to_string(e.origin)},
                       {"split", to_string(e.split)},
                       {"offset", {e.dx, e.dy}},
                       {"score", e.score}});
  return {{"seed", m.seed},
          {"ratio", m.ratio},
          {"mode", m.mode == SyntheticMode::augment ? "augment" : "replace"},
          {"entries", entries}};
}

inline PairManifest manifest_from_json(const nlohmann::json& j) {
  PairManifest m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.ratio = j.at("ratio").get<double>();
    m.mode = j.value("mode", std::string("augment")) == "replace" ? SyntheticMode::replace : SyntheticMode::augment;
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.stem = je.value("stem", std::string());
      e.scanned = je.at("scanned").get<std::string>();
      e.original = je.at("original").get<std::string>();
      e.origin = je.at("origin").get<std::string>() == "synthetic" ? Origin::synthetic : Origin::real;
      const auto s = je.at("split").get<std::string>();
      e.split = s == "train" ? Split::train : s == "val" ? Split::val : Split::test;
      e.dx = je.at("offset").at(0).get<int>();
      e.dy = je.at("offset").at(1).get<int>();
      e.score = je.value("score", 1.0);
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::data, std::string("malformed manifest: ") + ex.what());
  }
  return m;
}

inline void save_manifest(const PairManifest& m, const std::filesystem::path& path) {
  const auto text = to_json(m).dump(2) + "\n";
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

inline PairManifest load_manifest(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, path.string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

// A loaded training pair, already aligned: scanned is cropped to the overlap.
struct AlignedPair {
  std::string stem;
  Image scanned;
  Image original;
};

inline AlignedPair load_aligned(const ManifestEntry& e) {
  const Image scan = load_image(e.scanned);
  const Image orig = load_image(e.original);
  if (e.dx == 0 && e.dy == 0) return {e.stem, scan, orig};
  const int h = orig.height(), w = orig.width();
  const int y0 = std::max(0, -e.dy), y1 = std::min(h, h - e.dy);
  const int x0 = std::max(0, -e.dx), x1 = std::min(w, w - e.dx);
  return {e.stem, crop(scan, y0 + e.dy, x0 + e.dx, y1 - y0, x1 - x0), crop(orig, y0, x0, y1 - y0, x1 - x0)};
}

}  // namespace descan
