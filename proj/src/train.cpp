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

#include "cpib/train.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "cpib/ood.hpp"
#include "cpib/random.hpp"

namespace cpib {

namespace {

constexpr std::uint64_t kShuffleStream = 0x73687566;
constexpr std::uint64_t kNoiseStream = 0x6e6f697365;

double mean_of(const ag::Tensor& t) {
  const auto v = t.values();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string divergence_message(const LossBreakdown& lb, std::size_t epoch, std::size_t step) {
  const double ce = mean_of(lb.cross_entropy);
  const double t2 = mean_of(lb.term_ii);
  const double t3 = mean_of(lb.term_iii);
  std::string culprit = "beta-weighted compression penalty";
  if (!std::isfinite(ce)) {
    culprit = "term i (cross-entropy)";
  } else if (!std::isfinite(t2)) {
    culprit = "term ii (slab KL)";
  } else if (!std::isfinite(t3)) {
    culprit = "term iii (dimension KL)";
  }
  return fmt::format("non-finite loss at epoch {} step {}: {} (term i = {}, term ii = {}, term iii = {})", epoch,
                     step, culprit, ce, t2, t3);
}

double train_error(const Model& model, const Dataset& data, std::size_t limit) {
  const std::size_t n = std::min(limit, data.size());
  if (n == 0) return 0.0;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t classes = model.spec().num_classes;
  std::size_t wrong = 0;
  std::vector<Rng> unused;
  for (std::size_t b0 = 0; b0 < n; b0 += 500) {
    const std::size_t b1 = std::min(n, b0 + 500);
    std::span<const std::size_t> part(idx.data() + b0, b1 - b0);
    const auto p = model.predict_proba(data.batch(part), LatentMode::kMean, 1, unused);
    for (std::size_t i = 0; i < part.size(); ++i) {
      const auto row = p.begin() + static_cast<std::ptrdiff_t>(i * classes);
      const auto best = std::max_element(row, row + static_cast<std::ptrdiff_t>(classes)) - row;
      if (best != data.labels[part[i]]) ++wrong;
    }
  }
  return static_cast<double>(wrong) / static_cast<double>(n);
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1) throw std::invalid_argument("TrainConfig: epochs and batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (!(tau_start > 0.0) || !(tau_end > 0.0)) throw std::invalid_argument("TrainConfig: tau must be > 0");
  if (!(clip_norm >= 0.0)) throw std::invalid_argument("TrainConfig: clip_norm must be >= 0");
  if (optimizer == OptimizerKind::kAdam &&
      !(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 && adam_eps > 0.0)) {
    throw std::invalid_argument("TrainConfig: bad Adam constants");
  }
  for (double b : beta_grid) {
    if (!(b >= 0.0)) throw std::invalid_argument("TrainConfig: beta_grid entries must be >= 0");
  }
}

double TrainConfig::tau_at(std::size_t epoch) const {
  if (epochs <= 1 || tau_start == tau_end) return tau_start;
  const double frac = static_cast<double>(std::min(epoch, epochs - 1)) / static_cast<double>(epochs - 1);
  return tau_start * std::pow(tau_end / tau_start, frac);
}

void Sgd::step(std::span<const NamedTensor> params) {
  for (const auto& p : params) {
    ag::Tensor t = p.tensor;
    auto v = t.mutable_values();
    const auto g = t.grad();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr_ * g[i];
  }
}

void Adam::step(std::span<const NamedTensor> params) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.tensor.numel(), 0.0);
      v_.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw std::invalid_argument("Adam: parameter list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    ag::Tensor t = params[k].tensor;
    auto w = t.mutable_values();
    const auto g = t.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& cfg) {
  if (cfg.optimizer == OptimizerKind::kSgd) return std::make_unique<Sgd>(cfg.learning_rate);
  return std::make_unique<Adam>(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
}

double clip_grad_norm(std::span<const NamedTensor> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (double g : p.tensor.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& p : params) {
      ag::Tensor t = p.tensor;
      for (double& g : t.mutable_grad()) g *= s;
    }
  }
  return norm;
}

TrainResult train(const ModelSpec& spec, const TrainConfig& cfg, const Dataset& data) {
  spec.validate();
  cfg.validate();
  if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (data.pixels() != spec.input_dim) {
    throw std::invalid_argument(
        fmt::format("train: dataset has {} pixels, spec expects {}", data.pixels(), spec.input_dim));
  }
  for (int l : data.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= spec.num_classes) {
      throw std::invalid_argument(fmt::format("train: label {} outside 0..{}", l, spec.num_classes - 1));
    }
  }

  TrainResult result{Model(spec, cfg.seed), {}};
  Model& model = result.model;
  const auto params = model.parameters();
  auto opt = make_optimizer(cfg);
  const Rng shuffle_root(cfg.seed, kShuffleStream);
  const Rng noise_root(cfg.seed, kNoiseStream);

  std::vector<std::size_t> order(data.size());
  std::size_t global_step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double tau = cfg.tau_at(epoch);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = shuffle_root.split(epoch);
    std::shuffle(order.begin(), order.end(), shuffle.engine());

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.tau = tau;
    double weight = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size, ++global_step) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + b0, b1 - b0);
      const ag::Tensor x = data.batch(idx);
      const std::vector<int> y = data.batch_labels(idx);
      std::vector<Rng> streams{noise_root.split(global_step)};

      for (auto p : params) p.tensor.zero_grad();
      ag::Tape tape;
      LossBreakdown lb;
      try {
        ag::TapeScope scope(tape);
        lb = model.loss(x, y, tau, streams);
      } catch (const ag::NonFiniteError& e) {
        throw DivergenceError(fmt::format("non-finite value at epoch {} step {}: {}", epoch + 1, global_step,
                                          e.what()));
      }
      const double total = lb.total.item();
      if (!std::isfinite(total)) throw DivergenceError(divergence_message(lb, epoch + 1, global_step));
      tape.backward(lb.total);
      clip_grad_norm(params, cfg.clip_norm);
      opt->step(params);

      const double w = static_cast<double>(idx.size());
      weight += w;
      rec.loss += w * total;
      rec.term_i += w * mean_of(lb.cross_entropy);
      rec.term_ii += w * mean_of(lb.term_ii);
      rec.term_iii += w * mean_of(lb.term_iii);
    }
    rec.loss /= weight;
    rec.term_i /= weight;
    rec.term_ii /= weight;
    rec.term_iii /= weight;
    rec.train_error = train_error(model, data, cfg.error_sample);
    result.history.push_back(rec);
  }
  return result;
}

void write_history_csv(const std::filesystem::path& path, std::span<const EpochRecord> history,
                       std::span<const std::string> comments) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("csv: cannot write " + path.string());
  for (const auto& c : comments) os << "# " << c << '\n';
  os << "epoch,loss,term_i,term_ii,term_iii,train_error,tau\n";
  for (const auto& r : history) {
    os << fmt::format("{},{},{},{},{},{},{}\n", r.epoch, format_double(r.loss), format_double(r.term_i),
                      format_double(r.term_ii), format_double(r.term_iii), format_double(r.train_error),
                      format_double(r.tau));
  }
  if (!os) throw std::runtime_error("csv: write failed for " + path.string());
}

InfoCurve info_curve(const ModelSpec& spec, const TrainConfig& cfg, const Dataset& train_data,
                     const Dataset& eval, std::size_t mc_passes,
                     const std::function<void(double, const Model&)>& on_model) {
  if (cfg.beta_grid.empty()) throw std::invalid_argument("info_curve: empty beta grid");
  if (eval.size() == 0) throw std::invalid_argument("info_curve: empty evaluation set");
  InfoCurve curve;
  for (double beta : cfg.beta_grid) {
    try {
      ModelSpec s = spec;
      s.beta = beta;
      TrainConfig point = cfg;
      point.beta_grid.clear();
      TrainResult r = train(s, point, train_data);
      const EvalRecord e = evaluate(r.model, eval, Scenario::clean(), {mc_passes, cfg.seed, 250});
      curve.points.push_back({beta, e.mi_xz, e.mi_zy, e.error});
      if (on_model) on_model(beta, r.model);
    } catch (const std::exception& e) {
      curve.failures.push_back({beta, e.what()});
    }
  }
  return curve;
}

void write_curve_csv(const std::filesystem::path& path, std::span<const InfoCurvePoint> points,
                     std::span<const std::string> comments) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("csv: cannot write " + path.string());
  for (const auto& c : comments) os << "# " << c << '\n';
  os << "beta,mi_xz,mi_zy,test_error\n";
  for (const auto& p : points) {
    os << fmt::format("{},{},{},{}\n", format_double(p.beta), format_double(p.mi_xz), format_double(p.mi_zy),
                      format_double(p.test_error));
  }
  if (!os) throw std::runtime_error("csv: write failed for " + path.string());
}

double select_beta_mni(std::span<const InfoCurvePoint> curve, double h_y) {
  if (curve.empty()) throw std::invalid_argument("select_beta_mni: empty curve");
  double best_beta = curve[0].beta;
  double best = std::hypot(curve[0].mi_xz - h_y, curve[0].mi_zy - h_y);
  for (const auto& p : curve.subspan(1)) {
    const double d = std::hypot(p.mi_xz - h_y, p.mi_zy - h_y);
    if (d < best || (d == best && p.beta > best_beta)) {
      best = d;
      best_beta = p.beta;
    }
  }
  return best_beta;
}

std::vector<int> posterior_dim_mode(const Model& model, const ag::Tensor& x) {
  if (!is_cpib(model.spec().variant)) {
    throw std::invalid_argument("posterior_dim_mode: variant " + std::string(to_string(model.spec().variant)) +
                                " has no dimension distribution");
  }
  ag::NoGradScope no_grad;
  const ag::Tensor lp = model.encode(x).dim_log_probs;
  const std::size_t rows = lp.dim(0);
  const std::size_t k = lp.dim(1);
  std::vector<int> out(rows);
  const auto v = lp.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = v.begin() + static_cast<std::ptrdiff_t>(r * k);
    out[r] = static_cast<int>(std::max_element(row, row + static_cast<std::ptrdiff_t>(k)) - row) + 1;
  }
  return out;
}

}  // namespace cpib
