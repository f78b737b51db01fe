/*
 * Copyright 2026 The CP-IB Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Out-of-distribution evaluation: input corruptions, the L-infinity PGD
// attack, and the error / log-likelihood / Brier metrics.

#ifndef CPIB_OOD_HPP_
#define CPIB_OOD_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cpib/autograd.hpp"
#include "cpib/data.hpp"
#include "cpib/model.hpp"
#include "cpib/random.hpp"

namespace cpib {

// Poisson rate scale per shot-noise level 1..8; lower rate means more noise.
inline constexpr std::array<double, 8> kShotNoiseLambdas = {60, 25, 12, 5, 3, 2, 1, 0.5};

struct Scenario {
  enum class Kind { kClean, kShotNoise, kRotation, kPgd };

  Kind kind = Kind::kClean;
  double severity = 0.0;       // noise level, degrees, or epsilon
  std::size_t iterations = 1;  // pgd only
  double step = 0.0;           // pgd only; 0 picks the default

  static Scenario clean() { return {}; }
  static Scenario shot_noise(int level);
  static Scenario rotation(double degrees);
  static Scenario pgd(double epsilon, std::size_t iterations, double step = 0.0);

  // CSV label: clean, shot-noise, rotation, pgd-<iterations>.
  std::string label() const;
  double pgd_step() const;
};

struct EvalRecord {
  std::string scenario;
  double severity = 0.0;
  std::string variant;
  double beta = 0.0;
  std::uint64_t seed = 0;
  double error = 0.0;
  double loglik = 0.0;  // mean log p(y|x), nats
  double brier = 0.0;
  double mi_xz = 0.0;   // mean compression term, bits
  double mi_zy = 0.0;   // H(Y) - cross-entropy, bits
};

struct Metrics {
  double error = 0.0;
  double loglik = 0.0;
  double brier = 0.0;
};

// probs is (n, num_classes) row-major.
Metrics compute_metrics(std::span<const double> probs, std::span<const int> labels, std::size_t num_classes);

// Per pixel Poisson(lambda * x) / lambda, clipped to [0, 1].
std::vector<double> shot_noise(std::span<const double> image, int level, Rng& rng);

// Bilinear rotation about the image centre, counter-clockwise as displayed
// (row 0 at the top); samples from outside the image read as 0.
std::vector<double> rotate(std::span<const double> image, std::size_t rows, std::size_t cols, double degrees);

struct PgdOptions {
  double epsilon = 0.1;
  std::size_t iterations = 20;
  double step = 0.0;  // 0: epsilon for one iteration, epsilon / 4 otherwise
};

// Signed-gradient ascent on the cross-entropy of the deterministic model
// (A = mu, d = mode of pi(x)), projected onto the epsilon L-inf ball around x
// and the [0, 1] box after every step. Parameter gradients touched by the
// attack are zeroed before returning.
ag::Tensor pgd_attack(const Model& model, const ag::Tensor& x, std::span<const int> y, const PgdOptions& opts);

struct EvalOptions {
  std::size_t mc_passes = 12;
  std::uint64_t seed = 0;
  std::size_t batch_size = 250;
};

// Applies the scenario to every item of `data` and scores the predictive
// distribution averaged over mc_passes hard latent draws. Per-item random
// streams depend only on (seed, item index), so a transform that leaves an
// input unchanged leaves its metrics unchanged.
EvalRecord evaluate(const Model& model, const Dataset& data, const Scenario& scenario, const EvalOptions& opts);

// Fixed column order: scenario, severity, variant, beta, seed, error, loglik,
// brier, mi_xz, mi_zy. Lines starting with '#' are comments.
inline constexpr std::array<const char*, 10> kEvalColumns = {
    "scenario", "severity", "variant", "beta", "seed", "error", "loglik", "brier", "mi_xz", "mi_zy"};

void write_eval_csv(const std::filesystem::path& path, std::span<const EvalRecord> rows,
                    std::span<const std::string> comments = {});
std::vector<EvalRecord> read_eval_csv(const std::filesystem::path& path);

std::string format_double(double v);

}  // namespace cpib

#endif  // CPIB_OOD_HPP_
