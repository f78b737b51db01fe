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

#include "cpib/ood.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace cpib {

namespace {

constexpr std::uint64_t kTransformStream = 0x7472616e73;
constexpr std::uint64_t kLatentStream = 0x6c6174656e74;

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const char* column) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(fmt::format("csv: column '{}' holds a non-numeric value '{}'", column, s));
  }
}

}  // namespace

Scenario Scenario::shot_noise(int level) {
  if (level < 1 || level > static_cast<int>(kShotNoiseLambdas.size())) {
    throw std::invalid_argument(fmt::format("shot noise level {} outside 1..{}", level, kShotNoiseLambdas.size()));
  }
  return {Kind::kShotNoise, static_cast<double>(level), 1, 0.0};
}

Scenario Scenario::rotation(double degrees) { return {Kind::kRotation, degrees, 1, 0.0}; }

Scenario Scenario::pgd(double epsilon, std::size_t iterations, double step) {
  if (!(epsilon >= 0.0) || iterations < 1 || step < 0.0) {
    throw std::invalid_argument("pgd: need epsilon >= 0, iterations >= 1 and step >= 0");
  }
  return {Kind::kPgd, epsilon, iterations, step};
}

std::string Scenario::label() const {
  switch (kind) {
    case Kind::kClean:
      return "clean";
    case Kind::kShotNoise:
      return "shot-noise";
    case Kind::kRotation:
      return "rotation";
    case Kind::kPgd:
      return fmt::format("pgd-{}", iterations);
  }
  return "unknown";
}

double Scenario::pgd_step() const {
  if (step > 0.0) return step;
  return iterations == 1 ? severity : severity / 4.0;
}

Metrics compute_metrics(std::span<const double> probs, std::span<const int> labels, std::size_t num_classes) {
  const std::size_t n = labels.size();
  if (n == 0) throw std::invalid_argument("metrics: empty input");
  if (probs.size() != n * num_classes) throw std::invalid_argument("metrics: probs / labels size mismatch");
  Metrics m;
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = probs.subspan(i * num_classes, num_classes);
    const auto y = static_cast<std::size_t>(labels[i]);
    if (y >= num_classes) throw std::out_of_range("metrics: label out of range");
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best != y) ++wrong;
    m.loglik += std::log(std::max(row[y], std::numeric_limits<double>::min()));
    for (std::size_t c = 0; c < num_classes; ++c) {
      const double t = c == y ? 1.0 : 0.0;
      m.brier += (row[c] - t) * (row[c] - t);
    }
  }
  m.error = static_cast<double>(wrong) / static_cast<double>(n);
  m.loglik /= static_cast<double>(n);
  m.brier /= static_cast<double>(n);
  return m;
}

std::vector<double> shot_noise(std::span<const double> image, int level, Rng& rng) {
  const double lambda = kShotNoiseLambdas.at(static_cast<std::size_t>(level - 1));
  std::vector<double> out(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    out[i] = std::clamp(static_cast<double>(rng.poisson(lambda * image[i])) / lambda, 0.0, 1.0);
  }
  return out;
}

std::vector<double> rotate(std::span<const double> image, std::size_t rows, std::size_t cols, double degrees) {
  if (image.size() != rows * cols) throw std::invalid_argument("rotate: image size does not match rows * cols");
  const double rad = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(rad);
  const double s = std::sin(rad);
  const double cx = (static_cast<double>(cols) - 1.0) / 2.0;
  const double cy = (static_cast<double>(rows) - 1.0) / 2.0;
  auto at = [&](long r, long q) {
    if (r < 0 || q < 0 || r >= static_cast<long>(rows) || q >= static_cast<long>(cols)) return 0.0;
    return image[static_cast<std::size_t>(r) * cols + static_cast<std::size_t>(q)];
  };
  std::vector<double> out(image.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t q = 0; q < cols; ++q) {
      // Inverse map: the output pixel reads from the source rotated by -degrees.
      const double dx = static_cast<double>(q) - cx;
      const double dy = static_cast<double>(r) - cy;
      const double sx = cx + c * dx - s * dy;
      const double sy = cy + s * dx + c * dy;
      const double fx = std::floor(sx);
      const double fy = std::floor(sy);
      const double wx = sx - fx;
      const double wy = sy - fy;
      const auto x0 = static_cast<long>(fx);
      const auto y0 = static_cast<long>(fy);
      out[r * cols + q] = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x0 + 1)) +
                          wy * ((1 - wx) * at(y0 + 1, x0) + wx * at(y0 + 1, x0 + 1));
    }
  }
  return out;
}

ag::Tensor pgd_attack(const Model& model, const ag::Tensor& x, std::span<const int> y, const PgdOptions& opts) {
  if (x.rank() != 2 || x.dim(0) != y.size()) throw ag::ShapeError("pgd: x rows must match labels");
  if (!(opts.epsilon >= 0.0) || opts.iterations < 1) throw std::invalid_argument("pgd: bad options");
  const double step = opts.step > 0.0 ? opts.step : (opts.iterations == 1 ? opts.epsilon : opts.epsilon / 4.0);
  const auto x0 = x.values();
  std::vector<double> adv(x0.begin(), x0.end());
  std::vector<Rng> unused;  // kMean draws no noise

  for (std::size_t it = 0; it < opts.iterations; ++it) {
    ag::Tensor xa = ag::Tensor::from(x.shape(), adv);
    xa.set_requires_grad(true);
    ag::Tape tape;
    {
      ag::TapeScope scope(tape);
      EncoderOutput enc = model.encode(xa);
      LatentSample s = model.sample_latent(enc, LatentMode::kMean, 1.0, unused);
      ag::Tensor ce = ag::neg(ag::sum(ag::gather_last(ag::log_softmax(model.decode_logits(s.z)), y)));
      tape.backward(ce);
    }
    const auto g = xa.grad();
    for (std::size_t i = 0; i < adv.size(); ++i) {
      const double sign = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
      const double v = std::clamp(adv[i] + step * sign, x0[i] - opts.epsilon, x0[i] + opts.epsilon);
      adv[i] = std::clamp(v, 0.0, 1.0);
    }
  }
  for (auto& p : model.parameters()) p.tensor.zero_grad();
  return ag::Tensor::from(x.shape(), std::move(adv));
}

EvalRecord evaluate(const Model& model, const Dataset& data, const Scenario& scenario, const EvalOptions& opts) {
  const std::size_t n = data.size();
  if (n == 0) throw std::invalid_argument("evaluate: empty dataset");
  if (data.pixels() != model.spec().input_dim) {
    throw ag::ShapeError(fmt::format("evaluate: dataset has {} pixels, model expects {}", data.pixels(),
                                     model.spec().input_dim));
  }
  const std::size_t classes = model.spec().num_classes;
  const std::size_t batch = std::max<std::size_t>(opts.batch_size, 1);
  const Rng transform_root(opts.seed, kTransformStream);
  const Rng latent_root(opts.seed, kLatentStream);

  std::vector<double> probs(n * classes);
  double compression = 0.0;
  for (std::size_t b0 = 0; b0 < n; b0 += batch) {
    const std::size_t b1 = std::min(n, b0 + batch);
    std::vector<std::size_t> idx(b1 - b0);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = b0 + i;
    ag::Tensor x = data.batch(idx);
    const std::vector<int> y = data.batch_labels(idx);

    switch (scenario.kind) {
      case Scenario::Kind::kClean:
        break;
      case Scenario::Kind::kShotNoise:
      case Scenario::Kind::kRotation: {
        std::vector<double> v(x.numel());
        const std::size_t p = data.pixels();
        for (std::size_t i = 0; i < idx.size(); ++i) {
          std::vector<double> t;
          if (scenario.kind == Scenario::Kind::kShotNoise) {
            Rng rng = transform_root.split(idx[i]);
            t = shot_noise(data.image(idx[i]), static_cast<int>(scenario.severity), rng);
          } else {
            t = rotate(data.image(idx[i]), data.rows, data.cols, scenario.severity);
          }
          std::copy(t.begin(), t.end(), v.begin() + static_cast<std::ptrdiff_t>(i * p));
        }
        x = ag::Tensor::from(x.shape(), std::move(v));
        break;
      }
      case Scenario::Kind::kPgd:
        x = pgd_attack(model, x, y, {scenario.severity, scenario.iterations, scenario.pgd_step()});
        break;
    }

    std::vector<Rng> streams;
    streams.reserve(idx.size());
    for (std::size_t i : idx) streams.push_back(latent_root.split(i));
    const auto p = model.predict_proba(x, LatentMode::kHard, opts.mc_passes, streams);
    std::copy(p.begin(), p.end(), probs.begin() + static_cast<std::ptrdiff_t>(b0 * classes));

    ag::NoGradScope no_grad;
    ag::Tensor term_ii;
    ag::Tensor term_iii;
    model.compression_terms(model.encode(x), term_ii, term_iii);
    for (std::size_t i = 0; i < idx.size(); ++i) compression += term_ii.at(i) + term_iii.at(i);
  }

  const Metrics m = compute_metrics(probs, data.labels, classes);
  EvalRecord r;
  r.scenario = scenario.label();
  r.severity = scenario.severity;
  r.variant = std::string(to_string(model.spec().variant));
  r.beta = model.spec().beta;
  r.seed = opts.seed;
  r.error = m.error;
  r.loglik = m.loglik;
  r.brier = m.brier;
  r.mi_xz = compression / static_cast<double>(n) / std::numbers::ln2;
  r.mi_zy = std::log2(static_cast<double>(classes)) + m.loglik / std::numbers::ln2;
  return r;
}

std::string format_double(double v) { return fmt::format("{:.17g}", v); }

void write_eval_csv(const std::filesystem::path& path, std::span<const EvalRecord> rows,
                    std::span<const std::string> comments) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("csv: cannot write " + path.string());
  for (const auto& c : comments) os << "# " << c << '\n';
  for (std::size_t i = 0; i < kEvalColumns.size(); ++i) os << (i ? "," : "") << kEvalColumns[i];
  os << '\n';
  for (const auto& r : rows) {
    os << fmt::format("{},{},{},{},{},{},{},{},{},{}\n", r.scenario, format_double(r.severity), r.variant,
                      format_double(r.beta), r.seed, format_double(r.error), format_double(r.loglik),
                      format_double(r.brier), format_double(r.mi_xz), format_double(r.mi_zy));
  }
  if (!os) throw std::runtime_error("csv: write failed for " + path.string());
}

std::vector<EvalRecord> read_eval_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("csv: cannot open " + path.string());
  std::string line;
  std::vector<std::string> header;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    header = split_csv(line);
    break;
  }
  if (header.empty()) throw std::runtime_error("csv: " + path.string() + " has no header");
  std::array<std::size_t, kEvalColumns.size()> col{};
  for (std::size_t c = 0; c < kEvalColumns.size(); ++c) {
    const auto it = std::find(header.begin(), header.end(), kEvalColumns[c]);
    if (it == header.end()) {
      throw std::runtime_error(fmt::format("csv: {} is missing column '{}'", path.string(), kEvalColumns[c]));
    }
    col[c] = static_cast<std::size_t>(it - header.begin());
  }

  std::vector<EvalRecord> out;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw std::runtime_error(fmt::format("csv: row has {} cells, header has {}", cells.size(), header.size()));
    }
    EvalRecord r;
    r.scenario = cells[col[0]];
    r.severity = parse_double(cells[col[1]], kEvalColumns[1]);
    r.variant = cells[col[2]];
    r.beta = parse_double(cells[col[3]], kEvalColumns[3]);
    r.seed = std::stoull(cells[col[4]]);
    r.error = parse_double(cells[col[5]], kEvalColumns[5]);
    r.loglik = parse_double(cells[col[6]], kEvalColumns[6]);
    r.brier = parse_double(cells[col[7]], kEvalColumns[7]);
    r.mi_xz = parse_double(cells[col[8]], kEvalColumns[8]);
    r.mi_zy = parse_double(cells[col[9]], kEvalColumns[9]);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace cpib
