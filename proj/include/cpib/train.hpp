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

// Minibatch training, beta sweeps over the information curve, and beta
// selection by distance to the minimum necessary information point.

#ifndef CPIB_TRAIN_HPP_
#define CPIB_TRAIN_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpib/autograd.hpp"
#include "cpib/data.hpp"
#include "cpib/model.hpp"

namespace cpib {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OptimizerKind { kSgd, kAdam };

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 128;
  double learning_rate = 1e-4;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  // Temperature decays geometrically from tau_start to tau_end over the
  // epochs; equal values give a constant temperature.
  double tau_start = 0.5;
  double tau_end = 0.5;
  double clip_norm = 5.0;  // global gradient norm; 0 disables
  std::vector<double> beta_grid;
  // Items scored for the per-epoch train error (deterministic mode).
  std::size_t error_sample = 2000;

  void validate() const;
  double tau_at(std::size_t epoch) const;
};

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  // Applies one update from the gradients currently stored on `params`.
  virtual void step(std::span<const NamedTensor> params) = 0;
};

class Sgd : public Optimizer {
 public:
  explicit Sgd(double lr) : lr_(lr) {}
  void step(std::span<const NamedTensor> params) override;

 private:
  double lr_;
};

class Adam : public Optimizer {
 public:
  Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(std::span<const NamedTensor> params) override;

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& cfg);

// Scales all gradients so their joint L2 norm is at most max_norm. Returns
// the norm before scaling.
double clip_grad_norm(std::span<const NamedTensor> params, double max_norm);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;        // mean minibatch objective
  double term_i = 0.0;      // mean cross-entropy, nats
  double term_ii = 0.0;     // mean slab KL part of the compression
  double term_iii = 0.0;    // mean KL between dimension distributions
  double train_error = 0.0;
  double tau = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<EpochRecord> history;
};

// Deterministic given (spec, cfg, data): the model is initialised from
// cfg.seed and every shuffle and noise draw derives from it.
TrainResult train(const ModelSpec& spec, const TrainConfig& cfg, const Dataset& data);

void write_history_csv(const std::filesystem::path& path, std::span<const EpochRecord> history,
                       std::span<const std::string> comments = {});

struct InfoCurvePoint {
  double beta = 0.0;
  double mi_xz = 0.0;  // bits
  double mi_zy = 0.0;  // bits
  double test_error = 0.0;
};

struct InfoCurveFailure {
  double beta = 0.0;
  std::string message;
};

struct InfoCurve {
  std::vector<InfoCurvePoint> points;
  std::vector<InfoCurveFailure> failures;
};

// Trains one model per cfg.beta_grid entry and scores it on `eval`. A failed
// grid point is recorded and the sweep continues. `on_model` sees every
// successfully trained model.
InfoCurve info_curve(const ModelSpec& spec, const TrainConfig& cfg, const Dataset& train_data,
                     const Dataset& eval, std::size_t mc_passes = 12,
                     const std::function<void(double, const Model&)>& on_model = {});

void write_curve_csv(const std::filesystem::path& path, std::span<const InfoCurvePoint> points,
                     std::span<const std::string> comments = {});

// Beta whose (mi_xz, mi_zy) lies closest to (h_y, h_y); ties go to the
// larger beta.
double select_beta_mni(std::span<const InfoCurvePoint> curve, double h_y = 3.321928094887362);

// argmax_k pi_k(x) per row, 1-based.
std::vector<int> posterior_dim_mode(const Model& model, const ag::Tensor& x);

}  // namespace cpib

#endif  // CPIB_TRAIN_HPP_
