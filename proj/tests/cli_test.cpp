// Copyright 2026 The CP-IB Authors.
// SPDX-License-Identifier: Apache-2.0

#include "cpib/cli.hpp"

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <chrono>
#include <fstream>
#include <regex>
#include <sstream>

namespace cpib {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("cpib-cli-test-" + name);
  fs::remove_all(d);
  return d;
}

std::string fixture_config(const fs::path& out, const std::string& extra = "") {
  const fs::path f = CPIB_FIXTURE_DIR;
  const std::string images = (f / "fixture-images-idx3-ubyte").string();
  const std::string labels = (f / "fixture-labels-idx1-ubyte").string();
  return "[data]\ntrain_images = " + images + "\ntrain_labels = " + labels + "\ntest_images = " + images +
         "\ntest_labels = " + labels +
         "\n[model]\nk = 8\nfixed_dim = 4\nencoder_hidden = 32\ndecoder_hidden = 16\n"
         "[train]\nepochs = 1\nbatch_size = 4\nlearning_rate = 0.001\nseed = 5\n"
         "[output]\ndir = " +
         out.string() + "\n" + extra;
}

template <class F>
std::string cli_error_code(F&& f) {
  try {
    f();
  } catch (const CliError& e) {
    return e.code() + ": " + e.what();
  }
  return "no error";
}

TEST(Config, ParsesSectionsAndLists) {
  const auto cfg = parse_config_text(
      "[model]\nvariant = vib-fixed\nk = 12\nbeta = 0.3\nencoder_hidden = 64, 32\n"
      "[train]\nbeta_grid = 0.01,0.1\noptimizer = sgd\n"
      "[eval]\nnoise_levels = 1,5,8\nclean = false\n");
  EXPECT_EQ(cfg.model.variant, Variant::kVibFixed);
  EXPECT_EQ(cfg.model.k, 12u);
  EXPECT_EQ(cfg.model.beta, 0.3);
  EXPECT_EQ(cfg.model.encoder_hidden, (std::vector<std::size_t>{64, 32}));
  EXPECT_EQ(cfg.train.beta_grid, (std::vector<double>{0.01, 0.1}));
  EXPECT_EQ(cfg.train.optimizer, OptimizerKind::kSgd);
  EXPECT_EQ(cfg.eval.noise_levels, (std::vector<int>{1, 5, 8}));
  EXPECT_FALSE(cfg.eval.clean);
  EXPECT_EQ(cfg.eval.scenarios().size(), 3u);
}

TEST(Config, RejectsUnknownKeysAndSections) {
  const auto key = cli_error_code([] { parse_config_text("[model]\nkk = 3\n"); });
  EXPECT_NE(key.find("E_CONFIG"), std::string::npos);
  EXPECT_NE(key.find("'kk'"), std::string::npos);
  const auto section = cli_error_code([] { parse_config_text("[modle]\nk = 3\n"); });
  EXPECT_NE(section.find("[modle]"), std::string::npos);
  EXPECT_NE(cli_error_code([] { parse_config_text("[model]\nk = three\n"); }).find("model.k"), std::string::npos);
  EXPECT_NE(cli_error_code([] { parse_config_text("[model]\nbeta = -1\n"); }), "no error");
}

TEST(Config, ResolvedConfigRoundTrips) {
  auto cfg = parse_config_text(fixture_config("outdir", "[eval]\nrotations = 15,30\npgd_eps = 0.1\n"));
  cfg.model.prior = DimensionPrior::compound(0.5, 3.0);
  const std::string once = resolved_config(cfg);
  const std::string twice = resolved_config(parse_config_text(once));
  EXPECT_EQ(once, twice);
  EXPECT_NE(once.find("a = 0.5"), std::string::npos);
}

TEST(Config, ShippedConfigsParse) {
  std::size_t n = 0;
  for (const auto& entry : fs::directory_iterator(CPIB_CONFIG_DIR)) {
    if (entry.path().extension() != ".ini") continue;
    EXPECT_NO_THROW(load_config(entry.path())) << entry.path();
    ++n;
  }
  EXPECT_GE(n, 3u);
}

TEST(Config, OverridesApply) {
  auto cfg = parse_config_text("");
  Overrides o;
  o.seed = 9;
  o.variant = "drop-vib";
  o.beta = 0.5;
  o.a = 3.0;
  o.k = 20;
  apply_overrides(cfg, o);
  EXPECT_EQ(cfg.train.seed, 9u);
  EXPECT_EQ(cfg.model.variant, Variant::kDropVib);
  EXPECT_EQ(cfg.model.beta, 0.5);
  EXPECT_EQ(cfg.model.prior.a(), 3.0);
  EXPECT_EQ(cfg.model.prior.b(), 2.0);
  EXPECT_EQ(cfg.model.k, 20u);
  Overrides bad;
  bad.variant = "nope";
  EXPECT_NE(cli_error_code([&] { apply_overrides(cfg, bad); }).find("E_ARGS"), std::string::npos);
}

TEST(OutputLock, SecondHolderIsRefused) {
  const fs::path dir = fresh_dir("lock");
  {
    OutputLock first(dir);
    EXPECT_NE(cli_error_code([&] { OutputLock second(dir); }).find("E_LOCKED"), std::string::npos);
  }
  EXPECT_NO_THROW(OutputLock again(dir));
}

TEST(CmdTrain, FixtureSmokeRunIsFastAndDeterministic) {
  const fs::path a = fresh_dir("train-a");
  const fs::path b = fresh_dir("train-b");
  const auto start = std::chrono::steady_clock::now();
  cmd_train(parse_config_text(fixture_config(a)));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_LT(secs, 5.0);
  cmd_train(parse_config_text(fixture_config(b)));
  const std::string history = slurp(a / "history.csv");
  EXPECT_NE(history.find("epoch,loss,term_i,term_ii,term_iii,train_error,tau\n"), std::string::npos);
  EXPECT_EQ(history, slurp(b / "history.csv"));
  EXPECT_TRUE(fs::exists(a / "model.ckpt"));
  EXPECT_TRUE(fs::exists(a / "config.resolved.ini"));
  EXPECT_FALSE(fs::exists(a / ".cpib.lock"));
}

TEST(CmdTrain, MissingDatasetNamesThePath) {
  const std::string text = std::regex_replace(fixture_config(fresh_dir("missing")),
                                              std::regex("fixture-labels"), "absent-labels");
  try {
    cmd_train(parse_config_text(text));
    FAIL() << "expected CliError";
  } catch (const CliError& e) {
    EXPECT_EQ(e.code(), "E_DATA");
    EXPECT_EQ(e.exit_code(), 2);
    EXPECT_NE(std::string(e.what()).find("absent-labels-idx1-ubyte"), std::string::npos);
  }
}

class CmdEval : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    model_dir_ = fresh_dir("eval-model");
    cmd_train(parse_config_text(fixture_config(model_dir_)));
  }
  static std::vector<EvalRecord> run(const std::string& extra, const std::string& name) {
    const fs::path out = fresh_dir(name);
    cmd_eval(parse_config_text(fixture_config(out, "[eval]\n" + extra)), model_dir_ / "model.ckpt");
    return read_eval_csv(out / "results.csv");
  }
  static fs::path model_dir_;
};
fs::path CmdEval::model_dir_;

TEST_F(CmdEval, NoiseLevelsGiveEightIncreasingRows) {
  const auto rows = run("clean = false\nnoise_levels = 1,2,3,4,5,6,7,8\n", "eval-noise");
  ASSERT_EQ(rows.size(), 8u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].scenario, "shot-noise");
    EXPECT_EQ(rows[i].severity, static_cast<double>(i + 1));
  }
}

TEST_F(CmdEval, IdentityScenariosMatchClean) {
  const auto rows = run("rotations = 0\npgd_eps = 0\npgd_iters = 1,20\n", "eval-identity");
  ASSERT_EQ(rows.size(), 4u);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].error, rows[0].error) << rows[i].scenario;
    EXPECT_EQ(rows[i].loglik, rows[0].loglik) << rows[i].scenario;
    EXPECT_EQ(rows[i].brier, rows[0].brier) << rows[i].scenario;
  }
}

TEST_F(CmdEval, RerunIsByteIdentical) {
  const std::string plan = "noise_levels = 3\nrotations = 30\npgd_eps = 0.1\n";
  run(plan, "eval-rerun-a");
  run(plan, "eval-rerun-b");
  const fs::path tmp = fs::temp_directory_path();
  EXPECT_EQ(slurp(tmp / "cpib-cli-test-eval-rerun-a" / "results.csv"),
            slurp(tmp / "cpib-cli-test-eval-rerun-b" / "results.csv"));
}

TEST_F(CmdEval, BadCheckpointIsReported) {
  const fs::path out = fresh_dir("eval-bad");
  fs::create_directories(out);
  std::ofstream(out / "junk.ckpt") << "not a checkpoint";
  const auto cfg = parse_config_text(fixture_config(out));
  EXPECT_NE(cli_error_code([&] { cmd_eval(cfg, out / "junk.ckpt"); }).find("E_CHECKPOINT"), std::string::npos);
}

TEST(CmdSweep, WritesCurveAndCheckpoints) {
  const fs::path out = fresh_dir("sweep");
  const std::string text =
      std::regex_replace(fixture_config(out), std::regex("seed = 5\n"), "seed = 5\nbeta_grid = 0.01,1\n");
  const double beta = cmd_sweep(parse_config_text(text));
  EXPECT_TRUE(beta == 0.01 || beta == 1.0);
  std::ifstream is(out / "curve.csv");
  std::string line;
  std::vector<std::string> data;
  while (std::getline(is, line)) {
    if (!line.starts_with("#")) data.push_back(line);
  }
  ASSERT_EQ(data.size(), 3u);
  EXPECT_EQ(data[0], "beta,mi_xz,mi_zy,test_error");
  EXPECT_TRUE(fs::exists(out / "model-beta-0p01.ckpt"));
  EXPECT_TRUE(fs::exists(out / "model-beta-1.ckpt"));
}

EvalRecord row(const std::string& variant, double severity, std::uint64_t seed, double error) {
  EvalRecord r;
  r.scenario = "shot-noise";
  r.variant = variant;
  r.severity = severity;
  r.seed = seed;
  r.beta = 0.08;
  r.error = error;
  return r;
}

struct Polyline {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

std::vector<Polyline> polylines(const std::string& svg) {
  std::vector<Polyline> out;
  const std::regex line("<polyline[^>]*data-name=\"([^\"]*)\"[^>]*points=\"([^\"]*)\"");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), line); it != std::sregex_iterator(); ++it) {
    Polyline p{(*it)[1], {}};
    std::istringstream is((*it)[2].str());
    std::string pair;
    while (is >> pair) {
      const auto comma = pair.find(',');
      p.points.emplace_back(std::stod(pair.substr(0, comma)), std::stod(pair.substr(comma + 1)));
    }
    out.push_back(std::move(p));
  }
  return out;
}

TEST(CmdPlot, TwoVariantsThreeSeverities) {
  const fs::path dir = fresh_dir("plot");
  fs::create_directories(dir);
  std::vector<EvalRecord> rows;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    for (double sev : {1.0, 4.0, 8.0}) {
      rows.push_back(row("cpib-compound", sev, seed, 0.1 * sev + 0.01 * static_cast<double>(seed)));
      rows.push_back(row("vib-fixed", sev, seed, 0.12 * sev - 0.5));
    }
  }
  write_eval_csv(dir / "results.csv", rows);
  const auto files = cmd_plot({dir / "results.csv"}, dir / "svg");
  ASSERT_EQ(files.size(), 1u);
  EXPECT_EQ(files[0].filename(), "shot-noise-error.svg");
  const auto lines = polylines(slurp(files[0]));
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(lines[0].name, "cpib-compound");
  EXPECT_EQ(lines[1].name, "vib-fixed");
  for (const auto& l : lines) {
    ASSERT_EQ(l.points.size(), 3u);
    // Plot area is x in [70, 470], y in [40, 370].
    for (const auto& [x, y] : l.points) {
      EXPECT_GE(x, 70.0);
      EXPECT_LE(x, 470.0);
      EXPECT_GE(y, 40.0);
      EXPECT_LE(y, 370.0);
    }
  }
  // The seed median for cpib-compound at severity 4 is 0.41, above vib-fixed's -0.02.
  EXPECT_LT(lines[0].points[1].second, lines[1].points[1].second);
}

TEST(CmdPlot, EmptyInputIsAnError) {
  const fs::path dir = fresh_dir("plot-empty");
  fs::create_directories(dir);
  write_eval_csv(dir / "results.csv", std::vector<EvalRecord>{});
  EXPECT_NE(cli_error_code([&] { cmd_plot({dir / "results.csv"}, dir / "svg"); }).find("E_SCHEMA"),
            std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "svg" / "shot-noise-error.svg"));
}

TEST(CmdPlot, MissingColumnIsNamed) {
  const fs::path dir = fresh_dir("plot-schema");
  fs::create_directories(dir);
  std::ofstream(dir / "results.csv") << "scenario,severity,variant,beta,seed,error,loglik,mi_xz,mi_zy\n"
                                     << "clean,0,vib-fixed,0.1,0,0.1,-0.2,1,1\n";
  const auto msg = cli_error_code([&] { cmd_plot({dir / "results.csv"}, dir / "svg"); });
  EXPECT_NE(msg.find("E_SCHEMA"), std::string::npos);
  EXPECT_NE(msg.find("'brier'"), std::string::npos);
}

int run_binary(const std::string& args, std::string* err) {
  const fs::path err_file = fs::temp_directory_path() / "cpib-cli-test-stderr.txt";
  const std::string cmd = std::string(CPIB_BINARY) + " " + args + " > /dev/null 2> " + err_file.string();
  const int status = std::system(cmd.c_str());
  *err = slurp(err_file);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Binary, MissingDatasetExitsTwoWithOneLine) {
  const fs::path dir = fresh_dir("binary");
  fs::create_directories(dir);
  const std::string text = std::regex_replace(fixture_config(dir / "out"), std::regex("fixture-images"),
                                              "absent-images");
  std::ofstream(dir / "run.ini") << text;
  std::string err;
  EXPECT_EQ(run_binary("train --config " + (dir / "run.ini").string(), &err), 2);
  EXPECT_TRUE(err.starts_with("E_DATA: ")) << err;
  EXPECT_NE(err.find("absent-images-idx3-ubyte"), std::string::npos);
  EXPECT_EQ(std::count(err.begin(), err.end(), '\n'), 1);
}

TEST(Binary, TrainEvalPlotRoundTrip) {
  const fs::path dir = fresh_dir("binary-ok");
  fs::create_directories(dir);
  std::ofstream(dir / "run.ini") << fixture_config(dir / "train");
  const std::string cfg = " --config " + (dir / "run.ini").string();
  std::string err;
  ASSERT_EQ(run_binary("train" + cfg + " --seed 2 --variant vib-fixed", &err), 0) << err;
  ASSERT_EQ(run_binary("eval" + cfg + " --seed 2 --out " + (dir / "eval").string() + " --checkpoint " +
                           (dir / "train" / "model.ckpt").string() + " --noise 1..8 --pgd --eps 0.1 --iters 1,20",
                       &err),
            0)
      << err;
  const auto rows = read_eval_csv(dir / "eval" / "results.csv");
  ASSERT_EQ(rows.size(), 10u);
  EXPECT_EQ(rows[0].variant, "vib-fixed");
  EXPECT_EQ(rows[0].seed, 2u);
  EXPECT_EQ(rows[8].scenario, "pgd-1");
  EXPECT_EQ(rows[9].scenario, "pgd-20");
  ASSERT_EQ(run_binary("plot " + (dir / "eval" / "results.csv").string() + " --out " + (dir / "svg").string() +
                           " --metric error,brier",
                       &err),
            0)
      << err;
  EXPECT_TRUE(fs::exists(dir / "svg" / "shot-noise-brier.svg"));
  EXPECT_EQ(run_binary("eval" + cfg + " --checkpoint x.ckpt --eps 0.1", &err), 2);
  EXPECT_TRUE(err.starts_with("E_ARGS: ")) << err;
}

}  // namespace
}  // namespace cpib
