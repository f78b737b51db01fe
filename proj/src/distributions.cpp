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

#include "cpib/distributions.hpp"

#include <algorithm>
#include <boost/math/special_functions/digamma.hpp>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace cpib {

namespace {

double log_choose(double n, double k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

void check_shape_params(double a, double b, std::size_t k) {
  if (!(a > 0.0) || !(b > 0.0)) {
    throw std::invalid_argument("compound prior needs a > 0 and b > 0, got (" + std::to_string(a) +
                                ", " + std::to_string(b) + ")");
  }
  if (k == 0) throw std::invalid_argument("compound prior needs K >= 1");
}

}  // namespace

DiagGaussian::DiagGaussian(std::vector<double> m, std::vector<double> s)
    : mu(std::move(m)), sigma(std::move(s)) {
  if (mu.size() != sigma.size()) throw std::invalid_argument("DiagGaussian: mu/sigma length mismatch");
  for (double v : sigma) {
    if (!(v > 0.0)) throw std::invalid_argument("DiagGaussian: sigma must be positive");
  }
}

DiagGaussian DiagGaussian::standard(std::size_t k) {
  return DiagGaussian(std::vector<double>(k, 0.0), std::vector<double>(k, 1.0));
}

DimensionPrior DimensionPrior::explicit_probs(std::vector<double> probs) {
  if (probs.empty()) throw std::invalid_argument("DimensionPrior: empty probability vector");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw std::invalid_argument("DimensionPrior: negative probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-10) {
    throw std::invalid_argument("DimensionPrior: probabilities sum to " + std::to_string(total));
  }
  DimensionPrior prior;
  prior.kind_ = Kind::kExplicit;
  prior.probs_ = std::move(probs);
  return prior;
}

DimensionPrior DimensionPrior::compound(double a, double b) {
  check_shape_params(a, b, 1);
  DimensionPrior prior;
  prior.kind_ = Kind::kCompound;
  prior.a_ = a;
  prior.b_ = b;
  return prior;
}

std::vector<double> DimensionPrior::probs(std::size_t k) const {
  if (kind_ == Kind::kCompound) return compound_probs(a_, b_, k);
  if (probs_.size() != k) {
    throw std::invalid_argument("DimensionPrior: explicit prior has " + std::to_string(probs_.size()) +
                                " entries, model uses K = " + std::to_string(k));
  }
  return probs_;
}

std::vector<double> log_compound_probs(double a, double b, std::size_t k) {
  check_shape_params(a, b, k);
  const double n = static_cast<double>(k) - 1.0;
  const double log_beta_ab = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  std::vector<double> out(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double x = static_cast<double>(i);  // k - 1 successes
    out[i] = log_choose(n, x) + std::lgamma(a + x) + std::lgamma(b + n - x) -
             std::lgamma(a + b + n) - log_beta_ab;
  }
  return out;
}

std::vector<double> compound_probs(double a, double b, std::size_t k) {
  auto out = log_compound_probs(a, b, k);
  for (auto& v : out) v = std::exp(v);
  return out;
}

double gaussian_kl(const DiagGaussian& q, const DiagGaussian& p, std::size_t dims) {
  if (q.size() != p.size()) throw std::invalid_argument("gaussian_kl: dimension mismatch");
  if (dims > q.size()) {
    throw std::invalid_argument("gaussian_kl: dims " + std::to_string(dims) + " exceeds K = " +
                                std::to_string(q.size()));
  }
  double kl = 0.0;
  for (std::size_t l = 0; l < dims; ++l) {
    const double diff = q.mu[l] - p.mu[l];
    const double ps2 = p.sigma[l] * p.sigma[l];
    kl += std::log(p.sigma[l] / q.sigma[l]) + (q.sigma[l] * q.sigma[l] + diff * diff) / (2.0 * ps2) - 0.5;
  }
  return kl;
}

double categorical_kl(std::span<const double> q, std::span<const double> p) {
  if (q.size() != p.size()) throw std::invalid_argument("categorical_kl: length mismatch");
  double kl = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k) {
    if (q[k] <= 0.0) continue;
    if (p[k] <= 0.0) {
      throw SupportError("categorical_kl: q has mass at index " + std::to_string(k) +
                         " where p is zero");
    }
    kl += q[k] * (std::log(q[k]) - std::log(p[k]));
  }
  return std::max(kl, 0.0);
}

std::vector<double> gumbel_softmax_sample(const RelaxedCategorical& rc, Rng& rng) {
  if (!(rc.temperature > 0.0)) throw std::invalid_argument("gumbel_softmax_sample: temperature must be > 0");
  const std::size_t k = rc.logits.size();
  std::vector<double> y(k);
  for (std::size_t i = 0; i < k; ++i) y[i] = (rc.logits[i] + rng.gumbel()) / rc.temperature;
  const double mx = *std::max_element(y.begin(), y.end());
  double z = 0.0;
  for (auto& v : y) z += (v = std::exp(v - mx));
  for (auto& v : y) v /= z;
  return y;
}

std::vector<double> gaussian_rsample(const DiagGaussian& g, Rng& rng) {
  std::vector<double> out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = g.mu[i] + g.sigma[i] * rng.normal();
  return out;
}

ag::Tensor log_compound_probs(const ag::Tensor& ab, std::size_t k) {
  if (ab.rank() != 2 || ab.dim(1) != 2) {
    throw ag::ShapeError("log_compound_probs: expected (n, 2), got " + ag::shape_string(ab.shape()));
  }
  const std::size_t rows = ab.dim(0);
  auto v = ab.values();
  std::vector<double> out(rows * k);
  for (std::size_t r = 0; r < rows; ++r) {
    // A NaN head output propagates so training can report the divergence.
    if (std::isnan(v[2 * r]) || std::isnan(v[2 * r + 1])) {
      std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(r * k), k, std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    auto row = log_compound_probs(v[2 * r], v[2 * r + 1], k);
    std::copy(row.begin(), row.end(), out.begin() + static_cast<std::ptrdiff_t>(r * k));
  }
  return ag::make_result(
      "log_compound_probs", {rows, k}, std::move(out), {ab},
      [ab, rows, k](std::span<const double> g, ag::InputGrads in) {
        using boost::math::digamma;
        auto v = ab.values();
        const double n = static_cast<double>(k) - 1.0;
        for (std::size_t r = 0; r < rows; ++r) {
          const double a = v[2 * r];
          const double b = v[2 * r + 1];
          const double common = -digamma(a + b + n) + digamma(a + b);
          const double da0 = common - digamma(a);
          const double db0 = common - digamma(b);
          double ga = 0.0;
          double gb = 0.0;
          for (std::size_t i = 0; i < k; ++i) {
            const double x = static_cast<double>(i);
            const double gi = g[r * k + i];
            ga += gi * (digamma(a + x) + da0);
            gb += gi * (digamma(b + n - x) + db0);
          }
          in[0][2 * r] += ga;
          in[0][2 * r + 1] += gb;
        }
      });
}

ag::Tensor gumbel_softmax(const ag::Tensor& logits, const ag::Tensor& gumbel_noise, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("gumbel_softmax: temperature must be > 0");
  return ag::softmax(ag::scale(ag::add(logits, gumbel_noise), 1.0 / tau));
}

ag::Tensor gaussian_rsample(const ag::Tensor& mu, const ag::Tensor& sigma, const ag::Tensor& eps) {
  return ag::add(mu, ag::mul(sigma, eps));
}

ag::Tensor standard_normal_kl(const ag::Tensor& mu, const ag::Tensor& sigma) {
  // -log s + (s^2 + m^2) / 2 - 1/2
  auto quad = ag::scale(ag::add(ag::square(sigma), ag::square(mu)), 0.5);
  return ag::add_scalar(ag::sub(quad, ag::log(sigma)), -0.5);
}

}  // namespace cpib
