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

// Image classification datasets in the IDX format (MNIST, Fashion-MNIST).

#ifndef CPIB_DATA_HPP_
#define CPIB_DATA_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpib/autograd.hpp"

namespace cpib {

class IdxError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

struct Dataset {
  std::string name = "mnist";
  std::string split = "train";
  std::size_t rows = 28;
  std::size_t cols = 28;
  std::vector<double> images;  // size() * rows * cols, values in [0, 1]
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t pixels() const { return rows * cols; }
  std::span<const double> image(std::size_t i) const { return {images.data() + i * pixels(), pixels()}; }

  // (indices.size(), pixels) tensor of the selected images.
  ag::Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
};

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

// Pixels are stored as round(255 * x).
void write_idx(const Dataset& d, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

// Seeded sample of n items without replacement, in sampled order.
Dataset subset(const Dataset& d, std::size_t n, std::uint64_t seed);

std::vector<std::size_t> class_histogram(const Dataset& d, std::size_t num_classes = 10);

// Two classes in [0, 1]^dim, alternating labels. The first coordinate lies
// below 0.5 - separation / 2 for class 0 and above 0.5 + separation / 2 for
// class 1; the rest are uniform noise.
Dataset make_toy(std::size_t n, std::size_t dim, double separation, std::uint64_t seed);

}  // namespace cpib

#endif  // CPIB_DATA_HPP_
