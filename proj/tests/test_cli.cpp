#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "descan/app.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace descan;

namespace {

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "descan");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = app::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

void write_originals(const fs::path& dir, int n, int size = 40) {
  fs::create_directories(dir);
  for (int i = 0; i < n; ++i) save_image(make_toy_original(size, 500 + i), dir / ("page" + std::to_string(i) + ".ppm"));
}

// Every file in the tree by relative path; run metadata loses its wall time
// and occurrences of `base` (absolute paths in manifests) are masked.
std::map<std::string, std::string> snapshot(const fs::path& root, const fs::path& base = {}) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    auto text = app::read_text(e.path());
    const auto name = e.path().filename().string();
    if (name.rfind("run-", 0) == 0) {
      auto j = nlohmann::json::parse(text);
      j.erase("wall_seconds");
      j["result"].erase("reverse_seconds");
      text = j.dump();
    }
    if (!base.empty())
      for (auto at = text.find(base.string()); at != std::string::npos; at = text.find(base.string(), at))
        text.replace(at, base.string().size(), "<base>");
    out[fs::relative(e.path(), root).string()] = text;
  }
  return out;
}

const std::vector<std::string> kTiny = {"--set", "color.steps=20",      "--set", "lgrdm.steps=12",
                                        "--set", "lgrdm.base_width=8", "--set", "lgrdm.emb_dim=16",
                                        "--set", "lgrdm.batch=2"};

std::vector<std::string> with_tiny(std::vector<std::string> args) {
  args.insert(args.end(), kTiny.begin(), kTiny.end());
  return args;
}

// degrade -> pair dir -> prepare -> train-color -> train-descan under root.
void run_pipeline(const fs::path& root, const fs::path& originals) {
  ASSERT_EQ(cli({"degrade", "--in", originals.string(), "--out", (root / "deg").string(), "--seed", "4"}).code, 0);
  fs::create_directories(root / "pairs");
  for (const auto& e : fs::directory_iterator(originals)) {
    const auto stem = e.path().stem().string();
    fs::copy_file(e.path(), root / "pairs" / (stem + "_orig.ppm"));
    fs::copy_file(root / "deg" / (stem + "_scan.ppm"), root / "pairs" / (stem + "_scan.ppm"));
  }
  const auto manifest = (root / "work" / "manifest.json").string();
  ASSERT_EQ(cli({"prepare", "--pairs", (root / "pairs").string(), "--out", manifest, "--seed", "4"}).code, 0);
  ASSERT_EQ(cli(with_tiny({"train-color", "--manifest", manifest, "--out", (root / "work").string()})).code, 0);
  ASSERT_EQ(cli(with_tiny({"train-descan", "--manifest", manifest, "--out", (root / "work").string()})).code, 0);
}

}  // namespace

TEST(CliConfig, DefaultsResolveAndUnknownKeysRejected) {
  app::RunConfig c;
  EXPECT_EQ(c.real("prepare.ratio"), 0.25);
  EXPECT_EQ(c.integer("schedule.T"), 200);
  EXPECT_EQ(c.str("lgrdm.loss"), "mae");
  try {
    c.merge_text("seed = 3\nno.such.key = 1\n", "cfg");
    FAIL() << "unknown key accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
    EXPECT_NE(std::string(e.what()).find("cfg:2"), std::string::npos);
  }
}

TEST(CliConfig, CommentsAndWhitespace) {
  app::RunConfig c;
  c.merge_text("# header\n  seed=9   # trailing\n\nlgrdm.patch = 16\n", "cfg");
  EXPECT_EQ(c.integer("seed"), 9);
  EXPECT_EQ(c.integer("lgrdm.patch"), 16);
}

TEST(CliConfig, DumpRoundTrips) {
  app::RunConfig a;
  a.set("degrade.alpha", "0.1,0.3");
  a.set("seed", "12");
  app::RunConfig b;
  b.merge_text(a.dump(), "dump");
  EXPECT_EQ(a.dump(), b.dump());
}

TEST(CliConfig, MalformedValuesAreConfigErrors) {
  app::RunConfig c;
  c.set("schedule.T", "ten");
  EXPECT_THROW(app::schedule_of(c), Error);
  app::RunConfig d;
  d.set("degrade.hue_shift", "5");
  EXPECT_THROW(app::degradation_of(d), Error);
  app::RunConfig e;
  e.set("lgrdm.loss", "huber");
  EXPECT_THROW(app::lgrdm_config_of(e), Error);
  app::RunConfig f;
  EXPECT_THROW(f.merge_text("seed\n", "cfg"), Error);
}

TEST(CliConfig, AutoScheduleMatchesDefault) {
  app::RunConfig c;
  const auto s = app::schedule_of(c);
  const auto d = make_default_schedule(200);
  ASSERT_EQ(s.steps(), d.steps());
  for (int t = 1; t <= s.steps(); ++t) EXPECT_DOUBLE_EQ(s.beta(t), d.beta(t));
}

TEST(Cli, ParseErrorsExitTwo) {
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
  EXPECT_EQ(cli({"degrade", "--in", "x"}).code, 2);
}

TEST(Cli, ConfigFileAndFlagsWin) {
  const auto dir = testutil::temp_dir("cli_config");
  write_originals(dir / "orig", 2);
  app::write_text(dir / "run.cfg", "seed = 5\ndegrade.p_bleed_through = 0\n");
  const auto r = cli({"degrade", "--in", (dir / "orig").string(), "--out", (dir / "out").string(), "--config",
                      (dir / "run.cfg").string(), "--seed", "8"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto resolved = app::read_text(dir / "out" / "config-degrade.txt");
  EXPECT_NE(resolved.find("seed = 8\n"), std::string::npos);
  EXPECT_NE(resolved.find("degrade.p_bleed_through = 0\n"), std::string::npos);
  EXPECT_NE(resolved.find("lgrdm.patch = 32\n"), std::string::npos);  // defaults included
  const auto meta = nlohmann::json::parse(app::read_text(dir / "out" / "run-degrade.json"));
  EXPECT_EQ(meta["seed"], 8);
  EXPECT_TRUE(meta.contains("version"));
  EXPECT_TRUE(meta.contains("wall_seconds"));
}

TEST(Cli, UnknownKeyInFileExitsTwo) {
  const auto dir = testutil::temp_dir("cli_badkey");
  write_originals(dir / "orig", 1);
  app::write_text(dir / "run.cfg", "degrade.p_smudge = 0.5\n");
  const auto r = cli({"degrade", "--in", (dir / "orig").string(), "--out", (dir / "out").string(), "--config",
                      (dir / "run.cfg").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("degrade.p_smudge"), std::string::npos);
}

TEST(Cli, BadThreadCountExitsTwo) {
  const auto dir = testutil::temp_dir("cli_threads");
  write_originals(dir / "orig", 1);
  setenv("DESCAN_THREADS", "many", 1);
  const auto r = cli({"degrade", "--in", (dir / "orig").string(), "--out", (dir / "out").string()});
  unsetenv("DESCAN_THREADS");
  EXPECT_EQ(r.code, 2);
}

TEST(CliDegrade, OneScanAndRecordPerOriginal) {
  const auto dir = testutil::temp_dir("cli_degrade_count");
  write_originals(dir / "orig", 5);
  ASSERT_EQ(cli({"degrade", "--in", (dir / "orig").string(), "--out", (dir / "out").string()}).code, 0);
  int scans = 0, records = 0;
  for (const auto& e : fs::directory_iterator(dir / "out")) {
    const auto name = e.path().filename().string();
    if (name.size() > 9 && name.substr(name.size() - 9) == "_scan.ppm") ++scans;
    if (e.path().extension() == ".json" && name.rfind("run-", 0) != 0) ++records;
  }
  EXPECT_EQ(scans, 5);
  EXPECT_EQ(records, 5);
  const auto rec = record_from_json(nlohmann::json::parse(app::read_text(dir / "out" / "page0.json")));
  const auto replayed = replay(load_image(dir / "orig" / "page0.ppm"), load_image(dir / "orig" / "page1.ppm"), rec);
  const auto expected = quantize8(replayed), written = load_image(dir / "out" / "page0_scan.ppm");
  EXPECT_TRUE(std::equal(expected.data().begin(), expected.data().end(), written.data().begin(), written.data().end()));
}

TEST(CliDegrade, EmptyInputWarnsAndSucceeds) {
  const auto dir = testutil::temp_dir("cli_degrade_empty");
  fs::create_directories(dir / "orig");
  const auto r = cli({"degrade", "--in", (dir / "orig").string(), "--out", (dir / "out").string()});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.err.find("warning"), std::string::npos);
  for (const auto& e : fs::directory_iterator(dir / "out"))
    EXPECT_EQ(e.path().extension() == ".ppm", false) << e.path();
}

TEST(CliDegrade, MissingInputIsIoError) {
  const auto dir = testutil::temp_dir("cli_degrade_missing");
  EXPECT_EQ(cli({"degrade", "--in", (dir / "nope").string(), "--out", (dir / "out").string()}).code, 3);
}

TEST(CliDegrade, SameSeedSameTree) {
  const auto dir = testutil::temp_dir("cli_degrade_det");
  write_originals(dir / "orig", 3);
  ASSERT_EQ(cli({"degrade", "--in", (dir / "orig").string(), "--out", (dir / "a").string(), "--seed", "2"}).code, 0);
  ASSERT_EQ(cli({"degrade", "--in", (dir / "orig").string(), "--out", (dir / "b").string(), "--seed", "2"}).code, 0);
  ASSERT_EQ(cli({"degrade", "--in", (dir / "orig").string(), "--out", (dir / "c").string(), "--seed", "3"}).code, 0);
  EXPECT_EQ(snapshot(dir / "a"), snapshot(dir / "b"));
  EXPECT_NE(app::read_text(dir / "a" / "page0_scan.ppm"), app::read_text(dir / "c" / "page0_scan.ppm"));
}

TEST(CliDegrade, LockedOutputIsIoError) {
  const auto dir = testutil::temp_dir("cli_lock");
  write_originals(dir / "orig", 1);
  fs::create_directories(dir / "out");
  app::write_text(dir / "out" / ".descan.lock", "");
  EXPECT_EQ(cli({"degrade", "--in", (dir / "orig").string(), "--out", (dir / "out").string()}).code, 3);
  fs::remove(dir / "out" / ".descan.lock");
  EXPECT_EQ(cli({"degrade", "--in", (dir / "orig").string(), "--out", (dir / "out").string()}).code, 0);
  EXPECT_FALSE(fs::exists(dir / "out" / ".descan.lock"));
}

TEST(CliPrepare, RatioZeroIsPurelyReal) {
  const auto dir = testutil::temp_dir("cli_prepare_zero");
  write_originals(dir / "orig", 6);
  ASSERT_EQ(cli({"degrade", "--in", (dir / "orig").string(), "--out", (dir / "deg").string()}).code, 0);
  fs::create_directories(dir / "pairs");
  for (int i = 0; i < 6; ++i) {
    const auto s = "page" + std::to_string(i);
    fs::copy_file(dir / "orig" / (s + ".ppm"), dir / "pairs" / (s + "_orig.ppm"));
    fs::copy_file(dir / "deg" / (s + "_scan.ppm"), dir / "pairs" / (s + "_scan.ppm"));
  }
  const auto m0 = (dir / "m0" / "manifest.json").string();
  ASSERT_EQ(cli({"prepare", "--pairs", (dir / "pairs").string(), "--out", m0, "--ratio", "0"}).code, 0);
  for (const auto& e : load_manifest(m0).entries) EXPECT_EQ(e.origin, Origin::real);
  const auto ma = (dir / "ma" / "manifest.json").string();
  ASSERT_EQ(cli({"prepare", "--pairs", (dir / "pairs").string(), "--out", ma, "--seed", "6"}).code, 0);
  const auto first = snapshot(dir / "ma");
  fs::remove_all(dir / "ma");
  ASSERT_EQ(cli({"prepare", "--pairs", (dir / "pairs").string(), "--out", ma, "--seed", "6"}).code, 0);
  EXPECT_EQ(first, snapshot(dir / "ma"));
  const auto meta = nlohmann::json::parse(app::read_text(dir / "ma" / "run-prepare.json"));
  EXPECT_EQ(meta["config"]["prepare.ratio"], "0.25");
}

TEST(CliPrepare, UnmatchedStemsExitFour) {
  const auto dir = testutil::temp_dir("cli_prepare_unmatched");
  fs::create_directories(dir / "pairs");
  save_image(make_toy_original(32, 1), dir / "pairs" / "a_orig.ppm");
  save_image(make_toy_original(32, 1), dir / "pairs" / "a_scan.ppm");
  save_image(make_toy_original(32, 2), dir / "pairs" / "lonely_scan.ppm");
  const auto r = cli({"prepare", "--pairs", (dir / "pairs").string(), "--out", (dir / "m.json").string()});
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.err.find("lonely"), std::string::npos);
}

TEST(CliStages, TrainDescanBeforeTrainColorExitsFive) {
  const auto dir = testutil::temp_dir("cli_stage");
  const auto r = cli({"train-descan", "--manifest", (dir / "m.json").string(), "--out", (dir / "w").string()});
  EXPECT_EQ(r.code, 5);
  EXPECT_NE(r.err.find("train-color"), std::string::npos);
}

TEST(CliStages, DescanWithoutDenoiserExitsFive) {
  const auto dir = testutil::temp_dir("cli_stage_descan");
  fs::create_directories(dir / "w");
  nn::save_params(ColorEncoderNet().params(), dir / "w" / "color.dscw");
  const auto r = cli({"descan", "--in", (dir / "in").string(), "--out", (dir / "o").string(), "--model",
                      (dir / "w").string()});
  EXPECT_EQ(r.code, 5);
  EXPECT_NE(r.err.find("train-descan"), std::string::npos);
}

TEST(CliEvaluate, IdenticalTreesScoreCapAndOne) {
  const auto dir = testutil::temp_dir("cli_eval");
  write_originals(dir / "orig", 3);
  const auto r = cli({"evaluate", "--restored", (dir / "orig").string(), "--originals", (dir / "orig").string(),
                      "--out", (dir / "rep").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("99.000"), std::string::npos);
  EXPECT_NE(r.out.find("1.0000"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "rep" / "report.csv"));
  const auto meta = nlohmann::json::parse(app::read_text(dir / "rep" / "run-evaluate.json"));
  EXPECT_EQ(meta["result"]["mean_psnr"], 99.0);
  EXPECT_EQ(meta["result"]["mean_ssim"], 1.0);
}

class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = testutil::temp_dir("cli_pipeline");
    write_originals(root_ / "orig", 6);
    run_pipeline(root_, root_ / "orig");
  }
  static fs::path root_;
};
fs::path CliPipeline::root_;

TEST_F(CliPipeline, ArtifactsWritten) {
  for (const char* f : {"color.dscw", "color_loss.csv", "descan.dscw", "descan.json", "descan_loss.csv",
                        "run-train-color.json", "run-train-descan.json", "config-train-descan.txt"})
    EXPECT_TRUE(fs::exists(root_ / "work" / f)) << f;
  const auto csv = app::read_text(root_ / "work" / "descan_loss.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 13);  // header + 12 steps
}

TEST_F(CliPipeline, TrainingLeavesColorWeightsUntouched) {
  const auto meta = nlohmann::json::parse(app::read_text(root_ / "work" / "run-train-descan.json"));
  ColorEncoderNet enc;
  nn::load_params(enc.params(), root_ / "work" / "color.dscw");
  EXPECT_EQ(meta["result"]["color_weights_hash"], enc.params().hash());
}

TEST_F(CliPipeline, DescanStepCounts) {
  const auto scans = root_ / "deg";
  for (int steps : {10, 25}) {
    const auto out = root_ / ("r" + std::to_string(steps));
    const auto r = cli({"descan", "--in", scans.string(), "--out", out.string(), "--model", (root_ / "work").string(),
                        "--steps", std::to_string(steps)});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto meta = nlohmann::json::parse(app::read_text(out / "run-descan.json"));
    EXPECT_EQ(meta["result"]["T_o"], steps);
    for (const auto& img : meta["result"]["images"]) EXPECT_EQ(img["reverse_steps"], steps);
    EXPECT_TRUE(fs::exists(out / "page0_restored.ppm"));
  }
}

TEST_F(CliPipeline, DescanDefaultsToHalfSchedule) {
  const auto out = root_ / "rdefault";
  ASSERT_EQ(cli({"descan", "--in", (root_ / "deg" / "page1_scan.ppm").string(), "--out", out.string(), "--model",
                 (root_ / "work").string()})
                .code,
            0);
  EXPECT_EQ(nlohmann::json::parse(app::read_text(out / "run-descan.json"))["result"]["T_o"], 100);
}

TEST_F(CliPipeline, ScheduleMismatchIsConfigError) {
  const auto r = cli({"descan", "--in", (root_ / "deg").string(), "--out", (root_ / "rbad").string(), "--model",
                      (root_ / "work").string(), "--set", "schedule.T=100"});
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliPipeline, WholePipelineIsReproducible) {
  const auto again = testutil::temp_dir("cli_pipeline_again");
  fs::copy(root_ / "orig", again / "orig");
  run_pipeline(again, again / "orig");
  for (const auto& base : std::vector<fs::path>{root_, again})
    ASSERT_EQ(cli({"descan", "--in", (base / "deg").string(), "--out", (base / "det").string(), "--model",
                   (base / "work").string(), "--steps", "5", "--seed", "3"})
                  .code,
              0);
  for (const char* sub : {"deg", "pairs", "work", "det"})
    EXPECT_EQ(snapshot(root_ / sub, root_), snapshot(again / sub, again)) << sub;
}

TEST_F(CliPipeline, EvaluateAndReport) {
  const auto out = root_ / "r10";
  if (!fs::exists(out / "page0_restored.ppm")) {
    ASSERT_EQ(cli({"descan", "--in", (root_ / "deg").string(), "--out", out.string(), "--model",
                   (root_ / "work").string(), "--steps", "10"})
                  .code,
              0);
  }
  const auto ev = cli({"evaluate", "--restored", out.string(), "--originals", (root_ / "orig").string()});
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_NE(ev.out.find("restored"), std::string::npos);
  const auto rep = cli({"report", "--dir", (root_ / "deg").string(), "--dir", out.string(), "--dir",
                        (root_ / "orig").string(), "--out", (root_ / "grids").string()});
  ASSERT_EQ(rep.code, 0) << rep.err;
  const auto grid = load_image(root_ / "grids" / "page0_grid.ppm");
  EXPECT_GT(grid.width(), 3 * 40);
  EXPECT_NE(app::read_text(root_ / "grids" / "legend.txt").find("orig"), std::string::npos);
}
