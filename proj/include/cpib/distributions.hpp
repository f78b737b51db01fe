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

// Densities, divergences and samplers for the spike-slab latent: the Gaussian
// slab, the categorical spike over the number of active coordinates, its
// beta-binomial (Polya urn) parameterization, and the Gumbel-softmax
// relaxation used to sample it differentiably.

#ifndef CPIB_DISTRIBUTIONS_HPP_
#define CPIB_DISTRIBUTIONS_HPP_

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "cpib/autograd.hpp"
#include "cpib/random.hpp"

namespace cpib {

class SupportError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct DiagGaussian {
  std::vector<double> mu;
  std::vector<double> sigma;

  DiagGaussian(std::vector<double> mu, std::vector<double> sigma);
  static DiagGaussian standard(std::size_t k);
  std::size_t size() const { return mu.size(); }
};

// Prior over the number of active latent coordinates d in 1..K.
class DimensionPrior {
 public:
  enum class Kind { kExplicit, kCompound };

  static DimensionPrior explicit_probs(std::vector<double> probs);
  static DimensionPrior compound(double a, double b);

  Kind kind() const { return kind_; }
  double a() const { return a_; }
  double b() const { return b_; }
  // P(d = k) for k = 1..K.
  std::vector<double> probs(std::size_t k) const;

 private:
  Kind kind_ = Kind::kCompound;
  double a_ = 1.0;
  double b_ = 1.0;
  std::vector<double> probs_;
};

struct RelaxedCategorical {
  std::vector<double> logits;
  double temperature;
};

// log P(d = k), k = 1..K, for d - 1 ~ BetaBinomial(K - 1, a, b):
//   C(K-1, k-1) B(a + k - 1, b + K - k) / B(a, b)
std::vector<double> log_compound_probs(double a, double b, std::size_t k);
std::vector<double> compound_probs(double a, double b, std::size_t k);

// Sum over the first `dims` coordinates of KL(q_l || p_l).
double gaussian_kl(const DiagGaussian& q, const DiagGaussian& p, std::size_t dims);

// sum_k q_k log(q_k / p_k) with 0 log 0 = 0. Throws SupportError when q puts
// mass where p has none.
double categorical_kl(std::span<const double> q, std::span<const double> p);

std::vector<double> gumbel_softmax_sample(const RelaxedCategorical& rc, Rng& rng);
std::vector<double> gaussian_rsample(const DiagGaussian& g, Rng& rng);

// ---- differentiable forms over row batches ----

// (n, 2) rows of (a, b) -> (n, K) log-probabilities, with gradients via digamma.
ag::Tensor log_compound_probs(const ag::Tensor& ab, std::size_t k);

// softmax((logits + gumbel_noise) / tau) along the last axis.
ag::Tensor gumbel_softmax(const ag::Tensor& logits, const ag::Tensor& gumbel_noise, double tau);

// mu + sigma * eps
ag::Tensor gaussian_rsample(const ag::Tensor& mu, const ag::Tensor& sigma, const ag::Tensor& eps);

// Coordinate-wise KL(N(mu, sigma^2) || N(0, 1)), same shape as mu.
ag::Tensor standard_normal_kl(const ag::Tensor& mu, const ag::Tensor& sigma);

}  // namespace cpib

#endif  // CPIB_DISTRIBUTIONS_HPP_
