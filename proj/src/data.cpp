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

#include "cpib/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "cpib/random.hpp"

namespace cpib {

namespace {

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IdxError("idx: cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& buf, std::size_t offset, const std::filesystem::path& path) {
  if (offset + 4 > buf.size()) {
    throw IdxError("idx: " + path.string() + " truncated at byte offset " + std::to_string(buf.size()) +
                   " while reading header field at offset " + std::to_string(offset));
  }
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

void put_be32(std::ostream& os, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) os.put(static_cast<char>((v >> shift) & 0xff));
}

}  // namespace

ag::Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t p = pixels();
  std::vector<double> v(indices.size() * p);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    auto img = image(indices[i]);
    std::copy(img.begin(), img.end(), v.begin() + static_cast<std::ptrdiff_t>(i * p));
  }
  return ag::Tensor::from({indices.size(), p}, std::move(v));
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels[indices[i]];
  return out;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto img = read_all(images_path);
  const auto lab = read_all(labels_path);

  if (be32(img, 0, images_path) != kIdxImageMagic) throw IdxError("idx: bad image magic in " + images_path.string());
  if (be32(lab, 0, labels_path) != kIdxLabelMagic) throw IdxError("idx: bad label magic in " + labels_path.string());
  const std::size_t n = be32(img, 4, images_path);
  const std::size_t rows = be32(img, 8, images_path);
  const std::size_t cols = be32(img, 12, images_path);
  const std::size_t n_labels = be32(lab, 4, labels_path);
  if (n != n_labels) {
    throw IdxError("idx: image count " + std::to_string(n) + " does not match label count " +
                   std::to_string(n_labels));
  }
  const std::size_t image_bytes = 16 + n * rows * cols;
  if (img.size() < image_bytes) {
    throw IdxError("idx: " + images_path.string() + " truncated at byte offset " + std::to_string(img.size()) +
                   ", expected " + std::to_string(image_bytes) + " bytes");
  }
  if (lab.size() < 8 + n) {
    throw IdxError("idx: " + labels_path.string() + " truncated at byte offset " + std::to_string(lab.size()) +
                   ", expected " + std::to_string(8 + n) + " bytes");
  }

  Dataset d;
  d.rows = rows;
  d.cols = cols;
  d.images.resize(n * rows * cols);
  for (std::size_t i = 0; i < d.images.size(); ++i) d.images[i] = img[16 + i] / 255.0;
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) d.labels[i] = lab[8 + i];
  const std::string stem = images_path.filename().string();
  d.split = stem.rfind("t10k", 0) == 0 || stem.find("test") != std::string::npos ? "test" : "train";
  return d;
}

void write_idx(const Dataset& d, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  std::ofstream img(images_path, std::ios::binary | std::ios::trunc);
  std::ofstream lab(labels_path, std::ios::binary | std::ios::trunc);
  if (!img || !lab) throw IdxError("idx: cannot write " + images_path.string());
  put_be32(img, kIdxImageMagic);
  put_be32(img, static_cast<std::uint32_t>(d.size()));
  put_be32(img, static_cast<std::uint32_t>(d.rows));
  put_be32(img, static_cast<std::uint32_t>(d.cols));
  for (double v : d.images) {
    img.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
  put_be32(lab, kIdxLabelMagic);
  put_be32(lab, static_cast<std::uint32_t>(d.size()));
  for (int l : d.labels) lab.put(static_cast<char>(l));
}

Dataset subset(const Dataset& d, std::size_t n, std::uint64_t seed) {
  if (n < 1 || n > d.size()) {
    throw std::invalid_argument("subset: n = " + std::to_string(n) + " outside [1, " + std::to_string(d.size()) +
                                "]");
  }
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed, 0x737562736574ULL);
  // Partial Fisher-Yates: the first n slots become the sample.
  for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.index(d.size() - i)]);
  idx.resize(n);

  Dataset out;
  out.name = d.name;
  out.split = d.split;
  out.rows = d.rows;
  out.cols = d.cols;
  auto t = d.batch(idx);
  out.images.assign(t.values().begin(), t.values().end());
  out.labels = d.batch_labels(idx);
  return out;
}

std::vector<std::size_t> class_histogram(const Dataset& d, std::size_t num_classes) {
  std::vector<std::size_t> h(num_classes, 0);
  for (int l : d.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) throw std::out_of_range("class_histogram: label out of range");
    ++h[static_cast<std::size_t>(l)];
  }
  return h;
}

Dataset make_toy(std::size_t n, std::size_t dim, double separation, std::uint64_t seed) {
  if (dim < 1 || !(separation > 0.0 && separation < 1.0)) throw std::invalid_argument("make_toy: bad arguments");
  Rng rng(seed, 0x746f79ULL);
  Dataset d;
  d.name = "toy";
  d.split = "train";
  d.rows = 1;
  d.cols = dim;
  d.images.resize(n * dim);
  d.labels.resize(n);
  const double half_gap = separation / 2.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    d.labels[i] = label;
    const double u = rng.uniform();
    d.images[i * dim] = label == 1 ? 0.5 + half_gap + (0.5 - half_gap) * u : (0.5 - half_gap) * u;
    for (std::size_t j = 1; j < dim; ++j) d.images[i * dim + j] = rng.uniform();
  }
  return d;
}

}  // namespace cpib
