#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "hallu/cli/commands.hpp"
#include "hallu/cli/config.hpp"
#include "hallu/episodes.hpp"
#include "hallu/gradcheck_suite.hpp"
#include "hallu/nn/checkpoint.hpp"
#include "hallu/errors.hpp"
#include "support/synthetic.hpp"

namespace {

using namespace hallu;
using namespace hallu::cli;
namespace fs = std::filesystem;

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "halluaudio");
  std::vector<char*> argv;
  for (std::string& a : args) argv.push_back(a.data());
  return run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_files(const fs::path& dir) {
  std::size_t n = 0;
  if (!fs::exists(dir)) return 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.is_regular_file();
  return n;
}

// ---- config parsing ----

TEST(Ini, SectionsCommentsAndWhitespace) {
  const IniFile ini = parse_ini("top = 1\n# comment\n[run]\n  seed = 42  ; trailing\n\n[model]\nmask_mode=time\n");
  EXPECT_EQ(ini.get("", "top"), "1");
  EXPECT_EQ(ini.get("run", "seed"), "42");
  EXPECT_EQ(ini.get("model", "mask_mode"), "time");
  EXPECT_FALSE(ini.get("model", "nope").has_value());
}

TEST(Ini, ErrorsCarryLocation) {
  try {
    parse_ini("[run]\nseed = 1\nseed = 2\n", "x.ini");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("x.ini:3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_ini("[run\n"), ConfigError);
  EXPECT_THROW(parse_ini("[run]\njust words\n"), ConfigError);
}

TEST(Config, UnknownKeysAndBadValuesRejected) {
  EXPECT_THROW(config_from_ini(parse_ini("[run]\nsed = 1\n")), ConfigError);
  EXPECT_THROW(config_from_ini(parse_ini("[bogus]\na = 1\n")), ConfigError);
  EXPECT_THROW(config_from_ini(parse_ini("[run]\nseed = -3\n")), ConfigError);
  EXPECT_THROW(config_from_ini(parse_ini("[model]\nchannels = 64, 64\n")), ConfigError);
  EXPECT_THROW(config_from_ini(parse_ini("[model]\nmask_mode = diagonal\n")), ConfigError);
  EXPECT_THROW(config_from_ini(parse_ini("[eval]\nci_unit = bootstrap\n")), ConfigError);
}

TEST(Config, DefaultsFollowTheEsc50Setting) {
  const RunConfig c = config_from_ini(parse_ini(""));
  EXPECT_EQ(c.train.epochs, 60u);
  EXPECT_EQ(c.train.lr_step, 20u);
  EXPECT_DOUBLE_EQ(c.train.lr, 0.01);
  EXPECT_EQ(c.split.n_novel, 15u);
  EXPECT_EQ(c.eval.repetitions, 50u);
  EXPECT_EQ(c.eval.grid.size(), 4u);
  EXPECT_EQ(c.model.mask_mode, MaskMode::kFrequency);
  EXPECT_EQ(c.backbone_spec().height, 160u);
  EXPECT_EQ(c.backbone_spec().width, 128u);
  EXPECT_EQ(c.masks().size(), 2u);
  EXPECT_EQ(c.checkpoint_path(), fs::path("runs") / "checkpoint.bin");
}

TEST(Config, GridParsing) {
  const auto g = parse_grid("5x1, 10x5");
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[1], (GridCell{10, 5}));
  EXPECT_EQ(g[0].name(), "5way-1shot");
  EXPECT_THROW(parse_grid("5by1"), ConfigError);
  EXPECT_THROW(parse_grid(""), ConfigError);
}

TEST(Config, ModelHashSeparatesMaskModes) {
  RunConfig a = config_from_ini(parse_ini(""));
  RunConfig b = a;
  b.model.mask_mode = MaskMode::kTime;
  RunConfig c = a;
  c.model.freq_split = 40;
  RunConfig d = a;
  d.seed = 99;
  EXPECT_NE(a.model_hash(), b.model_hash());
  EXPECT_NE(a.model_hash(), c.model_hash());
  EXPECT_EQ(a.model_hash(), d.model_hash());
}

TEST(Config, EnvironmentOverridesDataRootOnly) {
  const fs::path dir = synth::fresh_dir("cfg-env");
  std::ofstream(dir / "c.ini") << "[data]\nroot = /nowhere\n[run]\nseed = 3\n";
  ::setenv(kDataRootEnv, "/elsewhere", 1);
  Overrides o;
  o.seed = 11;
  const RunConfig c = load_config(dir / "c.ini", o);
  ::unsetenv(kDataRootEnv);
  EXPECT_EQ(c.data.root, fs::path("/elsewhere"));
  EXPECT_EQ(c.seed, 11u);
}

TEST(Config, TenWayWithNineNovelIsConfigError) {
  RunConfig c = config_from_ini(parse_ini("[split]\nn_novel = 9\n[eval]\ngrid = 5x1, 10x1\n"));
  try {
    validate_values(c);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("10way-1shot"), std::string::npos) << e.what();
  }
}

// ---- commands ----

class TinyRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = synth::fresh_dir("cli-run");
    config_ = synth::write_tiny_run(dir_).string();
    ASSERT_EQ(run_cli({"prepare", "--config", config_}), 0);
  }
  static fs::path dir_;
  static std::string config_;
};
fs::path TinyRun::dir_;
std::string TinyRun::config_;

TEST_F(TinyRun, PrepareWritesCacheSplitAndIndex) {
  EXPECT_EQ(count_files(dir_ / "out" / "cache"), 48u);
  EXPECT_TRUE(fs::exists(dir_ / "out" / "split.txt"));
  EXPECT_TRUE(fs::exists(dir_ / "out" / "index.csv"));
  const data::SplitSpec s = data::read_split(dir_ / "out" / "split.txt");
  EXPECT_EQ(s.novel_classes.size(), 3u);
  EXPECT_EQ(s.base_classes.size(), 5u);
}

TEST_F(TinyRun, PrepareIsIdempotentAndTracksFingerprint) {
  testing::internal::CaptureStdout();
  ASSERT_EQ(run_cli({"prepare", "--config", config_}), 0);
  const std::string again = testing::internal::GetCapturedStdout();
  EXPECT_NE(again.find("0 computed, 48 reused"), std::string::npos) << again;

  std::string text = slurp(config_);
  text.replace(text.find("hop = 256"), 9, "hop = 250");
  const fs::path other = dir_ / "hop.ini";
  std::ofstream(other) << text;
  const fs::path hop_out = dir_ / "hop";
  fs::create_directories(hop_out);
  fs::copy(dir_ / "out" / "cache", hop_out / "cache");
  testing::internal::CaptureStdout();
  ASSERT_EQ(run_cli({"prepare", "--config", other.string(), "--out", hop_out.string()}), 0);
  const std::string changed = testing::internal::GetCapturedStdout();
  EXPECT_NE(changed.find("48 computed, 0 reused"), std::string::npos) << changed;
}

TEST_F(TinyRun, TrainEvalAndRefusals) {
  const std::string out = (dir_ / "t1").string();
  fs::create_directories(out);
  fs::copy_file(dir_ / "out" / "split.txt", fs::path(out) / "split.txt");
  fs::copy(dir_ / "out" / "cache", fs::path(out) / "cache");
  ASSERT_EQ(run_cli({"train", "--config", config_, "--out", out}), 0);
  EXPECT_TRUE(fs::exists(fs::path(out) / "checkpoint.bin"));
  const std::string log = slurp(fs::path(out) / "train_log.csv");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 3);
  EXPECT_EQ(nn::read_checkpoint(fs::path(out) / "checkpoint.bin").epoch, 2u);

  ASSERT_EQ(run_cli({"eval", "--config", config_, "--out", out}), 0);
  EXPECT_TRUE(fs::exists(fs::path(out) / "eval-3way-1shot.csv"));
  EXPECT_TRUE(fs::exists(fs::path(out) / "eval-2way-2shot.json"));
  EXPECT_TRUE(fs::exists(fs::path(out) / "eval_summary.csv"));
  // 3 novel classes x 6 clips x 2 repetitions
  const auto records = eval::read_records_csv(fs::path(out) / "eval-3way-1shot.csv");
  EXPECT_EQ(records.size(), 36u);

  // checkpoint trained with frequency masks, evaluated as time masks
  EXPECT_EQ(run_cli({"eval", "--config", config_, "--out", out, "--mask-mode", "time"}), 2);
  EXPECT_EQ(run_cli({"importance", "--config", config_, "--out", out, "--mask-mode", "time"}), 2);
  EXPECT_EQ(run_cli({"importance", "--config", config_, "--out", out}), 0);
  const std::string imp = slurp(fs::path(out) / "importance.csv");
  EXPECT_EQ(std::count(imp.begin(), imp.end(), '\n'), 4);  // header + 3 novel classes

  // unknown importance class
  const fs::path bad = dir_ / "imp.ini";
  std::ofstream(bad) << slurp(config_) << "classes = no-such-class\n";
  EXPECT_EQ(run_cli({"importance", "--config", bad.string(), "--out", out}), 2);
}

TEST_F(TinyRun, TimeCheckpointRefusedByImportance) {
  const std::string out = (dir_ / "t2").string();
  fs::create_directories(out);
  fs::copy_file(dir_ / "out" / "split.txt", fs::path(out) / "split.txt");
  fs::copy(dir_ / "out" / "cache", fs::path(out) / "cache");
  ASSERT_EQ(run_cli({"ablate-time", "--config", config_, "--out", out}), 0);
  EXPECT_EQ(nn::read_checkpoint(fs::path(out) / "checkpoint.bin").mask_mode, "time");
  EXPECT_TRUE(fs::exists(fs::path(out) / "eval-3way-1shot.csv"));
  // config says frequency, checkpoint says time: refused before any work
  EXPECT_EQ(run_cli({"importance", "--config", config_, "--out", out}), 2);
  EXPECT_FALSE(fs::exists(fs::path(out) / "importance.csv"));
}

TEST_F(TinyRun, ConfigErrorsLeaveNoTrace) {
  const fs::path out = dir_ / "never";
  EXPECT_EQ(run_cli({"eval", "--config", config_, "--out", out.string(), "--grid", "10x1"}), 2);
  EXPECT_EQ(run_cli({"train", "--config", config_, "--out", out.string(), "--mask-mode", "sideways"}), 2);
  EXPECT_EQ(run_cli({"prepare", "--config", config_, "--out", out.string(), "--repetitions", "0"}), 2);
  EXPECT_FALSE(fs::exists(out));
}

TEST_F(TinyRun, OperationalErrorsExitOne) {
  const std::string out = (dir_ / "t3").string();
  fs::create_directories(out);
  fs::copy_file(dir_ / "out" / "split.txt", fs::path(out) / "split.txt");
  fs::copy(dir_ / "out" / "cache", fs::path(out) / "cache");
  for (const auto& e : fs::directory_iterator(fs::path(out) / "cache")) {
    fs::remove(e.path());
    break;
  }
  // a missing cache entry for some clip; train touches base clips, eval novel clips
  const int train_rc = run_cli({"train", "--config", config_, "--out", out});
  if (train_rc == 0) {
    EXPECT_EQ(run_cli({"eval", "--config", config_, "--out", out}), 1);
  } else {
    EXPECT_EQ(train_rc, 1);
  }
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli({}), 2);
  EXPECT_EQ(run_cli({"frobnicate"}), 2);
  EXPECT_EQ(run_cli({"train", "--config", "/definitely/not/here.ini"}), 2);
  EXPECT_EQ(run_cli({"eval", "--threads", "0"}), 2);
}

TEST(Cli, MissingDatasetIsConfigError) {
  const fs::path dir = synth::fresh_dir("cli-nodata");
  std::ofstream(dir / "c.ini") << "[data]\nroot = " << (dir / "missing").string() << "\n[run]\nout = "
                               << (dir / "out").string() << "\n";
  EXPECT_EQ(run_cli({"prepare", "--config", (dir / "c.ini").string()}), 2);
  EXPECT_FALSE(fs::exists(dir / "out"));
}

TEST(Gradcheck, CorruptedConvBackwardIsNamed) {
  GradcheckOptions o;
  o.conv_backward = [](const nn::Tensor<double>& x, const nn::Tensor<double>& w, const nn::Tensor<double>& g) {
    nn::Conv2dGrads<double> r = nn::conv2d_backward(x, w, g);
    r.weight[0] *= 1.5;
    return r;
  };
  const GradcheckReport rep = run_gradcheck(o);
  EXPECT_FALSE(rep.passed());
  EXPECT_NE(rep.failures().find("conv2d"), std::string::npos);
  std::ostringstream out;
  EXPECT_EQ(cmd_gradcheck(o, out), 1);
  EXPECT_NE(out.str().find("conv2d"), std::string::npos);
  EXPECT_NE(out.str().find(std::to_string(o.seed)), std::string::npos);
}

}  // namespace
