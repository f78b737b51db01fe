// Copyright 2026 The CP-IB Authors.
// SPDX-License-Identifier: Apache-2.0

#include "cpib/model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace cpib {
namespace {

ModelSpec small_spec(Variant v, std::size_t k = 5) {
  ModelSpec s;
  s.variant = v;
  s.input_dim = 6;
  s.num_classes = 3;
  s.k = k;
  s.fixed_dim = 4;
  s.beta = 0.3;
  s.encoder_hidden = {8};
  s.decoder_hidden = {7};
  s.selector_hidden = {4, 4};
  return s;
}

ag::Tensor toy_batch(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.uniform();
  return ag::Tensor::from({rows, cols}, std::move(v));
}

std::vector<double> to_vec(const ag::Tensor& t) { return {t.values().begin(), t.values().end()}; }

TEST(Mask, HardOneHotsGiveStepMasks) {
  for (std::size_t k = 1; k <= 16; ++k) {
    for (std::size_t d = 1; d <= k; ++d) {
      std::vector<double> onehot(k, 0.0);
      onehot[d - 1] = 1.0;
      const auto gamma = mask_from_dsoft(ag::Tensor::from({1, k}, onehot));
      for (std::size_t j = 1; j <= k; ++j) ASSERT_EQ(gamma.at(0, j - 1), j <= d ? 1.0 : 0.0) << k << " " << d;
    }
  }
}

TEST(Mask, UniformRelaxedSample) {
  const auto gamma = mask_from_dsoft(ag::Tensor::full({1, 4}, 0.25));
  EXPECT_EQ(to_vec(gamma), (std::vector<double>{1.0, 0.75, 0.5, 0.25}));
}

TEST(Compression, TermIiEqualsDoubleSum) {
  Model m(small_spec(Variant::kCpibCategorical), 3);
  const auto x = toy_batch(4, 6, 1);
  const EncoderOutput enc = m.encode(x);
  ag::Tensor t2, t3;
  m.compression_terms(enc, t2, t3);
  const auto kl = standard_normal_kl(enc.mu, enc.sigma);
  const auto pi = ag::exp(enc.dim_log_probs);
  const auto prior = m.spec().prior.probs(5);
  for (std::size_t r = 0; r < 4; ++r) {
    double direct = 0.0;
    double cat = 0.0;
    for (std::size_t k = 0; k < 5; ++k) {
      double partial = 0.0;
      for (std::size_t l = 0; l <= k; ++l) partial += kl.at(r, l);
      direct += pi.at(r, k) * partial;
      cat += pi.at(r, k) * std::log(pi.at(r, k) / prior[k]);
    }
    EXPECT_NEAR(t2.at(r), direct, 1e-12);
    EXPECT_NEAR(t3.at(r), cat, 1e-12);
    EXPECT_GE(t2.at(r), 0.0);
    EXPECT_GE(t3.at(r), -1e-15);
  }
}

TEST(Compression, TermIiMatchesMonteCarloOverD) {
  Model m(small_spec(Variant::kCpibCompound), 8);
  const auto x = toy_batch(1, 6, 2);
  const EncoderOutput enc = m.encode(x);
  ag::Tensor t2, t3;
  m.compression_terms(enc, t2, t3);
  const auto kl = standard_normal_kl(enc.mu, enc.sigma);
  const auto pi = ag::exp(enc.dim_log_probs);
  std::vector<double> prefix(5);
  std::partial_sum(kl.values().begin(), kl.values().end(), prefix.begin());
  std::discrete_distribution<int> dist(pi.values().begin(), pi.values().end());
  Rng rng(17);
  const int n = 1000000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double v = prefix[static_cast<std::size_t>(dist(rng.engine()))];
    s += v;
    s2 += v * v;
  }
  const double mean = s / n;
  const double se = std::sqrt((s2 / n - mean * mean) / n);
  EXPECT_NEAR(t2.at(0), mean, 3 * se);
}

TEST(Compression, ZeroPriorMassIsASupportViolation) {
  ModelSpec s = small_spec(Variant::kCpibCategorical, 3);
  s.prior = DimensionPrior::explicit_probs({0.5, 0.5, 0.0});
  Model m(s, 0);
  ag::Tensor t2, t3;
  EXPECT_THROW(m.compression_terms(m.encode(toy_batch(2, 6, 1)), t2, t3), SupportError);
}

TEST(Loss, GradcheckEveryVariant) {
  for (Variant v : {Variant::kCpibCategorical, Variant::kCpibCompound, Variant::kVibFixed, Variant::kDropVib,
                    Variant::kIntelVib}) {
    Model m(small_spec(v), 5);
    const auto x = toy_batch(4, 6, 9);
    const std::vector<int> y = {0, 2, 1, 2};
    auto params = m.parameters();
    std::vector<ag::Tensor> leaves;
    for (auto& p : params) leaves.push_back(p.tensor);
    auto f = [&] {
      std::vector<Rng> streams{Rng(123)};
      return m.loss(x, y, 0.5, streams).total;
    };
    EXPECT_LT(ag::gradcheck_params(f, leaves), 1e-3) << to_string(v);
  }
}

TEST(Loss, SquaredCompressionIsPerDatum) {
  ModelSpec s = small_spec(Variant::kCpibCompound);
  Model m(s, 1);
  const auto x = toy_batch(3, 6, 4);
  const std::vector<int> y = {0, 1, 2};
  std::vector<Rng> streams{Rng(5)};
  const auto lb = m.loss(x, y, 0.5, streams);
  double expected = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double c = lb.compression.at(i);
    expected += lb.cross_entropy.at(i) + s.beta * c * c;
  }
  EXPECT_NEAR(lb.total.item(), expected / 3, 1e-12);
}

TEST(Loss, WrongVariantEntryPointThrows) {
  Model cp(small_spec(Variant::kCpibCompound), 1);
  Model vib(small_spec(Variant::kVibFixed), 1);
  const auto x = toy_batch(2, 6, 1);
  const std::vector<int> y = {0, 1};
  std::vector<Rng> streams{Rng(1)};
  EXPECT_THROW(baseline_loss(cp, x, y, 0.5, streams), std::invalid_argument);
  EXPECT_THROW(cpib_loss(vib, x, y, 0.5, streams), std::invalid_argument);
}

TEST(Model, DecoderRowsAreDistributions) {
  Model m(small_spec(Variant::kIntelVib), 2);
  std::vector<Rng> streams{Rng(1)};
  const auto probs = m.predict_proba(toy_batch(5, 6, 3), LatentMode::kHard, 4, streams);
  for (std::size_t r = 0; r < 5; ++r) {
    EXPECT_NEAR(probs[3 * r] + probs[3 * r + 1] + probs[3 * r + 2], 1.0, 1e-12);
  }
}

TEST(Model, HardSamplesUseStepMasks) {
  Model m(small_spec(Variant::kCpibCategorical, 6), 2);
  std::vector<Rng> streams{Rng(3)};
  const auto enc = m.encode(toy_batch(4, 6, 5));
  const auto s = m.sample_latent(enc, LatentMode::kHard, 1.0, streams);
  ASSERT_EQ(s.d_hard.size(), 4u);
  for (std::size_t r = 0; r < 4; ++r) {
    ASSERT_GE(s.d_hard[r], 1);
    ASSERT_LE(s.d_hard[r], 6);
    for (std::size_t j = 0; j < 6; ++j) {
      EXPECT_EQ(s.gamma.at(r, j), static_cast<int>(j) < s.d_hard[r] ? 1.0 : 0.0);
      if (s.gamma.at(r, j) == 0.0) {
        EXPECT_EQ(s.z.at(r, j), 0.0);
      }
    }
  }
}

TEST(Model, InputWidthMismatchThrows) {
  Model m(small_spec(Variant::kVibFixed), 0);
  EXPECT_THROW(m.encode(toy_batch(2, 5, 0)), ag::ShapeError);
}

TEST(Model, SameSeedSameWeights) {
  Model a(small_spec(Variant::kCpibCompound), 42);
  Model b(small_spec(Variant::kCpibCompound), 42);
  Model c(small_spec(Variant::kCpibCompound), 43);
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  const auto pc = c.parameters();
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(to_vec(pa[i].tensor), to_vec(pb[i].tensor));
    differs |= to_vec(pa[i].tensor) != to_vec(pc[i].tensor);
  }
  EXPECT_TRUE(differs);
}

TEST(Model, DropVibStartsAtInitialKeepProbability) {
  Model m(small_spec(Variant::kDropVib), 0);
  for (double p : m.keep_probs()) EXPECT_NEAR(p, 0.9, 1e-12);
}

TEST(SpecJson, RoundTrips) {
  ModelSpec s = small_spec(Variant::kCpibCategorical);
  s.prior = DimensionPrior::explicit_probs({0.1, 0.2, 0.3, 0.2, 0.2});
  const ModelSpec back = spec_from_json(spec_to_json(s));
  EXPECT_EQ(spec_to_json(back), spec_to_json(s));
}

class CheckpointTest : public ::testing::Test {
 protected:
  std::filesystem::path dir_ = std::filesystem::temp_directory_path() / "cpib_checkpoint_test";
  void SetUp() override { std::filesystem::create_directories(dir_); }
  void TearDown() override { std::filesystem::remove_all(dir_); }
};

TEST_F(CheckpointTest, RoundTripGivesIdenticalPredictions) {
  for (Variant v : {Variant::kCpibCompound, Variant::kDropVib, Variant::kIntelVib}) {
    Model m(small_spec(v), 77);
    const auto path = dir_ / "m.ckpt";
    save_checkpoint(m, path);
    Model back = load_checkpoint(path);
    const auto x = toy_batch(3, 6, 8);
    std::vector<Rng> s1{Rng(2)};
    std::vector<Rng> s2{Rng(2)};
    const auto p1 = m.predict_proba(x, LatentMode::kHard, 3, s1);
    const auto p2 = back.predict_proba(x, LatentMode::kHard, 3, s2);
    EXPECT_EQ(p1, p2) << to_string(v);
  }
}

TEST_F(CheckpointTest, VersionMismatchIsReported) {
  Model m(small_spec(Variant::kVibFixed), 1);
  const auto path = dir_ / "m.ckpt";
  save_checkpoint(m, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    f.put(static_cast<char>(7));
  }
  try {
    load_checkpoint(path);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("incompatible checkpoint version 7"), std::string::npos) << e.what();
  }
}

TEST_F(CheckpointTest, TruncationIsReported) {
  Model m(small_spec(Variant::kVibFixed), 1);
  const auto path = dir_ / "m.ckpt";
  save_checkpoint(m, path);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
}

}  // namespace
}  // namespace cpib
