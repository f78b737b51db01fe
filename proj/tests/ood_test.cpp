// Copyright 2026 The CP-IB Authors.
// SPDX-License-Identifier: Apache-2.0

#include "cpib/ood.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

namespace cpib {
namespace {

namespace fs = std::filesystem;

Dataset fixture() {
  const fs::path dir = CPIB_FIXTURE_DIR;
  return load_idx(dir / "fixture-images-idx3-ubyte", dir / "fixture-labels-idx1-ubyte");
}

ModelSpec fixture_spec(Variant v) {
  ModelSpec s;
  s.variant = v;
  s.k = 12;
  s.fixed_dim = 6;
  s.encoder_hidden = {16};
  s.decoder_hidden = {16};
  return s;
}

TEST(Metrics, UniformPredictor) {
  const std::vector<double> probs(3 * 10, 0.1);
  const std::vector<int> labels = {3, 0, 9};
  const Metrics m = compute_metrics(probs, labels, 10);
  EXPECT_NEAR(m.brier, 0.9, 1e-12);
  EXPECT_NEAR(m.loglik, -std::log(10.0), 1e-12);
  // Ties resolve to class 0.
  EXPECT_NEAR(m.error, 2.0 / 3.0, 1e-12);
}

TEST(Metrics, PerfectPredictor) {
  std::vector<double> probs(2 * 3, 0.0);
  probs[1] = 1.0;
  probs[3 + 2] = 1.0;
  const std::vector<int> labels = {1, 2};
  const Metrics m = compute_metrics(probs, labels, 3);
  EXPECT_EQ(m.error, 0.0);
  EXPECT_EQ(m.loglik, 0.0);
  EXPECT_EQ(m.brier, 0.0);
}

TEST(Metrics, RejectsEmptyInput) { EXPECT_THROW(compute_metrics({}, {}, 10), std::invalid_argument); }

TEST(ShotNoise, UnbiasedWithPoissonVariance) {
  const double x = 0.3;
  const std::vector<double> img(100000, x);
  for (int level : {1, 4, 8}) {
    const double lambda = kShotNoiseLambdas[level - 1];
    Rng rng(level);
    const auto out = shot_noise(img, level, rng);
    double mean = 0, var = 0;
    for (double v : out) mean += v;
    mean /= out.size();
    for (double v : out) var += (v - mean) * (v - mean);
    var /= out.size();
    // Clipping at 1 only matters once lambda * x is small.
    if (level <= 4) {
      EXPECT_NEAR(mean, x, 5 * std::sqrt(x / lambda / out.size())) << level;
      EXPECT_NEAR(var, x / lambda, 0.05 * x / lambda) << level;
    }
    for (double v : out) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
  }
}

TEST(ShotNoise, BlackStaysBlackAndLevelsAreValidated) {
  const std::vector<double> img(50, 0.0);
  Rng rng(1);
  for (double v : shot_noise(img, 8, rng)) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(Scenario::shot_noise(0), std::invalid_argument);
  EXPECT_THROW(Scenario::shot_noise(9), std::invalid_argument);
}

TEST(Rotate, ZeroIsIdentityAndQuarterTurnsPermute) {
  const Dataset d = fixture();
  const auto img = d.image(6);
  const auto same = rotate(img, 28, 28, 0.0);
  EXPECT_EQ(std::vector<double>(img.begin(), img.end()), same);
  const auto q = rotate(img, 28, 28, 90.0);
  // Counter-clockwise as displayed: out[r][c] = in[c][27 - r].
  for (std::size_t r = 0; r < 28; ++r) {
    for (std::size_t c = 0; c < 28; ++c) ASSERT_NEAR(q[r * 28 + c], img[c * 28 + (27 - r)], 1e-9);
  }
  auto full = std::vector<double>(img.begin(), img.end());
  for (int i = 0; i < 4; ++i) full = rotate(full, 28, 28, 90.0);
  for (std::size_t i = 0; i < full.size(); ++i) ASSERT_NEAR(full[i], img[i], 1e-9);
}

TEST(Rotate, BilinearHalfPixelAverages) {
  // A 2x1 image rotated by 180 degrees about its centre swaps the pixels.
  const std::vector<double> img = {0.2, 0.8};
  const auto out = rotate(img, 1, 2, 180.0);
  EXPECT_NEAR(out[0], 0.8, 1e-12);
  EXPECT_NEAR(out[1], 0.2, 1e-12);
  EXPECT_THROW(rotate(img, 2, 2, 10.0), std::invalid_argument);
}

TEST(Pgd, StaysInsideTheBallAndTheBox) {
  const Dataset d = fixture();
  Model m(fixture_spec(Variant::kCpibCompound), 3);
  std::vector<std::size_t> idx = {0, 1, 2, 3, 4, 5, 6, 7};
  const auto x = d.batch(idx);
  const auto y = d.batch_labels(idx);
  for (std::size_t iters : {1u, 5u}) {
    const auto adv = pgd_attack(m, x, y, {0.1, iters, 0.0});
    for (std::size_t i = 0; i < x.numel(); ++i) {
      ASSERT_LE(std::abs(adv.values()[i] - x.values()[i]), 0.1 + 1e-15);
      ASSERT_GE(adv.values()[i], 0.0);
      ASSERT_LE(adv.values()[i], 1.0);
    }
  }
  const auto zero = pgd_attack(m, x, y, {0.0, 3, 0.0});
  EXPECT_EQ(std::vector<double>(zero.values().begin(), zero.values().end()),
            std::vector<double>(x.values().begin(), x.values().end()));
  for (const auto& p : m.parameters()) {
    for (double g : p.tensor.grad()) ASSERT_EQ(g, 0.0);
  }
}

TEST(Pgd, IncreasesTheLoss) {
  const Dataset d = fixture();
  Model m(fixture_spec(Variant::kVibFixed), 4);
  std::vector<std::size_t> idx = {0, 1, 2, 3, 4, 5, 6, 7};
  const auto x = d.batch(idx);
  const auto y = d.batch_labels(idx);
  auto ce = [&](const ag::Tensor& in) {
    std::vector<Rng> none;
    ag::NoGradScope off;
    auto s = m.sample_latent(m.encode(in), LatentMode::kMean, 1.0, none);
    return -ag::sum(ag::gather_last(ag::log_softmax(m.decode_logits(s.z)), y)).item();
  };
  EXPECT_GT(ce(pgd_attack(m, x, y, {0.05, 1, 0.0})), ce(x));
}

TEST(Evaluate, IdentityTransformsReproduceClean) {
  const Dataset d = fixture();
  for (Variant v : {Variant::kCpibCompound, Variant::kDropVib}) {
    Model m(fixture_spec(v), 1);
    const EvalOptions opts{4, 9, 3};
    const EvalRecord clean = evaluate(m, d, Scenario::clean(), opts);
    const EvalRecord rot = evaluate(m, d, Scenario::rotation(0.0), opts);
    const EvalRecord pgd = evaluate(m, d, Scenario::pgd(0.0, 20), opts);
    for (const EvalRecord* r : {&rot, &pgd}) {
      EXPECT_EQ(r->error, clean.error);
      EXPECT_EQ(r->loglik, clean.loglik);
      EXPECT_EQ(r->brier, clean.brier);
      EXPECT_EQ(r->mi_xz, clean.mi_xz);
    }
    EXPECT_EQ(rot.scenario, "rotation");
    EXPECT_EQ(pgd.scenario, "pgd-20");
    EXPECT_EQ(clean.variant, std::string(to_string(v)));
  }
}

TEST(Evaluate, BatchSizeDoesNotChangeResults) {
  const Dataset d = fixture();
  Model m(fixture_spec(Variant::kIntelVib), 1);
  const EvalRecord a = evaluate(m, d, Scenario::shot_noise(3), {3, 5, 8});
  const EvalRecord b = evaluate(m, d, Scenario::shot_noise(3), {3, 5, 3});
  EXPECT_EQ(a.loglik, b.loglik);
  EXPECT_EQ(a.brier, b.brier);
}

TEST(Evaluate, MorePassesShrinkMonteCarloSpread) {
  const Dataset d = fixture();
  Model m(fixture_spec(Variant::kCpibCategorical), 2);
  auto spread = [&](std::size_t passes) {
    std::vector<double> v;
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
      v.push_back(evaluate(m, d, Scenario::clean(), {passes, seed, 8}).brier);
    }
    double mean = 0, var = 0;
    for (double x : v) mean += x / v.size();
    for (double x : v) var += (x - mean) * (x - mean) / v.size();
    return var;
  };
  EXPECT_LT(spread(64), spread(1));
}

TEST(Evaluate, EmptyDatasetThrows) {
  Dataset empty;
  Model m(fixture_spec(Variant::kVibFixed), 1);
  EXPECT_THROW(evaluate(m, empty, Scenario::clean(), {}), std::invalid_argument);
}

TEST(Evaluate, InformationEstimatesAreBounded) {
  const Dataset d = fixture();
  Model m(fixture_spec(Variant::kCpibCompound), 5);
  const EvalRecord r = evaluate(m, d, Scenario::clean(), {2, 0, 8});
  EXPECT_GE(r.mi_xz, 0.0);
  EXPECT_LE(r.mi_zy, std::log2(10.0) + 1e-9);
}

class CsvTest : public ::testing::Test {
 protected:
  fs::path dir_ = fs::temp_directory_path() / "cpib_csv_test";
  void SetUp() override { fs::create_directories(dir_); }
  void TearDown() override { fs::remove_all(dir_); }
};

TEST_F(CsvTest, RoundTripIsExact) {
  std::vector<EvalRecord> rows = {
      {"clean", 0.0, "cpib-compound", 0.08, 1, 0.0123, -0.0412345678901234, 0.02, 12.5, 3.1},
      {"pgd-20", 0.1, "vib-fixed", 0.08, 2, 1.0 / 3.0, -std::numbers::pi, 0.7, 1e-300, -2.5},
  };
  const std::vector<std::string> comments = {"lambda schedule: 60 25 12 5 3 2 1 0.5"};
  write_eval_csv(dir_ / "r.csv", rows, comments);
  const auto back = read_eval_csv(dir_ / "r.csv");
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].scenario, rows[i].scenario);
    EXPECT_EQ(back[i].severity, rows[i].severity);
    EXPECT_EQ(back[i].variant, rows[i].variant);
    EXPECT_EQ(back[i].beta, rows[i].beta);
    EXPECT_EQ(back[i].seed, rows[i].seed);
    EXPECT_EQ(back[i].error, rows[i].error);
    EXPECT_EQ(back[i].loglik, rows[i].loglik);
    EXPECT_EQ(back[i].brier, rows[i].brier);
    EXPECT_EQ(back[i].mi_xz, rows[i].mi_xz);
    EXPECT_EQ(back[i].mi_zy, rows[i].mi_zy);
  }
}

TEST_F(CsvTest, MissingColumnIsNamed) {
  std::ofstream(dir_ / "bad.csv") << "scenario,severity,variant,beta,seed,error,loglik,mi_xz,mi_zy\nclean,0,x,0,0,0,0,0,0\n";
  try {
    read_eval_csv(dir_ / "bad.csv");
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("'brier'"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace cpib
