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

#ifndef CPIB_RANDOM_HPP_
#define CPIB_RANDOM_HPP_

#include <cstddef>
#include <cstdint>
#include <random>

namespace cpib {

// Seeded random stream. split(id) derives an independent child stream from
// (seed, stream, id) only, never from the parent's consumed state, so work can
// be partitioned (per datum, per grid point) without changing results.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  Rng split(std::uint64_t id) const;

  // Uniform on the open interval (0, 1).
  double uniform();
  double normal();
  // Standard Gumbel(0, 1).
  double gumbel();
  // Standard logistic.
  double logistic();
  std::uint64_t poisson(double mean);
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  std::mt19937_64& engine() { return engine_; }
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace cpib

#endif  // CPIB_RANDOM_HPP_
