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

// Information-bottleneck classifiers.
//
// The categorical-prior model (CP-IB) encodes each input into a Gaussian slab
// A ~ N(mu(x), diag sigma(x)^2) over K coordinates and a distribution pi(x)
// over the number of active coordinates d. The latent is Z = A * gamma with
// gamma_k = 1(k <= d). The loss per datum is
//
//   CE(y, decode(Z))  +  beta * C(x)      (or beta * C(x)^2)
//
//   C(x) = sum_k pi_k(x) sum_{l <= k} KL(N(mu_l, sigma_l^2) || N(0, 1))
//        + KL(pi(x) || prior pi)
//
// where the first part is evaluated as sum_l KL_l * sum_{k >= l} pi_k.
//
// Baselines share the encoder trunk and decoder:
//   vib-fixed   Gaussian latent of fixed size, KL to N(0, I)
//   drop-vib    deterministic features times a per-feature relaxed Bernoulli
//               keep mask with K global keep probabilities; compression is
//               the mean keep probability
//   intel-vib   Gaussian latent gated elementwise by a dimension-selector MLP

#ifndef CPIB_MODEL_HPP_
#define CPIB_MODEL_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cpib/autograd.hpp"
#include "cpib/distributions.hpp"
#include "cpib/random.hpp"

namespace cpib {

enum class Variant { kCpibCategorical, kCpibCompound, kVibFixed, kDropVib, kIntelVib };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view name);
inline bool is_cpib(Variant v) { return v == Variant::kCpibCategorical || v == Variant::kCpibCompound; }

struct ModelSpec {
  Variant variant = Variant::kCpibCompound;
  std::size_t input_dim = 784;
  std::size_t num_classes = 10;
  std::size_t k = 100;
  double beta = 0.08;
  std::size_t mc_samples = 1;  // J
  DimensionPrior prior = DimensionPrior::compound(2.0, 2.0);
  std::size_t fixed_dim = 32;  // vib-fixed only
  bool square_compression = true;
  std::vector<std::size_t> encoder_hidden{800, 800};
  std::vector<std::size_t> decoder_hidden{800};
  std::vector<std::size_t> selector_hidden{10, 10};
  double drop_init_keep = 0.9;

  // Width of Z fed to the decoder.
  std::size_t latent_dim() const { return variant == Variant::kVibFixed ? fixed_dim : k; }
  void validate() const;
};

std::string spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(std::string_view json);

class Linear {
 public:
  // Weights ~ U(-b, b), b = gain * sqrt(3 / fan_in); bias zero.
  Linear(std::size_t in, std::size_t out, double gain, Rng& rng);
  ag::Tensor operator()(const ag::Tensor& x) const;

  ag::Tensor weight;  // (in, out)
  ag::Tensor bias;    // (out)
};

// ReLU between layers, linear output.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::vector<std::size_t>& widths, Rng& rng);
  ag::Tensor operator()(const ag::Tensor& x) const;
  std::vector<Linear>& layers() { return layers_; }
  const std::vector<Linear>& layers() const { return layers_; }
  bool empty() const { return layers_.empty(); }

 private:
  std::vector<Linear> layers_;
};

struct NamedTensor {
  std::string name;
  ag::Tensor tensor;
};

struct EncoderOutput {
  ag::Tensor mu;             // (n, latent); the deterministic features for drop-vib
  ag::Tensor sigma;          // (n, latent); undefined for drop-vib
  ag::Tensor dim_log_probs;  // (n, K) log pi(x); CP-IB only
  ag::Tensor dim_params;     // (n, 2) learned (a, b); compound head only
};

enum class LatentMode {
  kRelaxed,  // training: Gumbel-softmax / relaxed Bernoulli masks
  kHard,     // evaluation: hard samples of d (or of the drop mask)
  kMean,     // deterministic: A = mu, d = mode of pi(x)
};

struct LatentSample {
  ag::Tensor a;              // slab draw
  ag::Tensor d_soft;         // (n, K) relaxed one-hot; CP-IB only
  ag::Tensor gamma;          // mask / gate applied to a; undefined for vib-fixed
  ag::Tensor z;              // decoder input
  std::vector<int> d_hard;   // 1..K, CP-IB only
};

struct LossBreakdown {
  ag::Tensor total;          // scalar
  ag::Tensor cross_entropy;  // (n) -term (i), averaged over J draws
  ag::Tensor term_ii;        // (n)
  ag::Tensor term_iii;       // (n)
  ag::Tensor compression;    // (n) the penalty before squaring
};

// Noise helpers. `streams` holds one stream shared by all rows or one per row.
ag::Tensor draw_normal(std::size_t rows, std::size_t cols, std::span<Rng> streams);
ag::Tensor draw_gumbel(std::size_t rows, std::size_t cols, std::span<Rng> streams);
ag::Tensor draw_logistic(std::size_t rows, std::size_t cols, std::span<Rng> streams);

// gamma_k = sum_{j >= k} d_soft_j
ag::Tensor mask_from_dsoft(const ag::Tensor& d_soft);

class Model {
 public:
  Model(ModelSpec spec, std::uint64_t init_seed);

  const ModelSpec& spec() const { return spec_; }
  // Every trainable tensor, in a fixed declaration order.
  std::vector<NamedTensor> parameters() const;
  std::size_t parameter_count() const;

  EncoderOutput encode(const ag::Tensor& x) const;
  LatentSample sample_latent(const EncoderOutput& enc, LatentMode mode, double tau,
                             std::span<Rng> streams) const;
  ag::Tensor decode_logits(const ag::Tensor& z) const;
  // Class probabilities, rows sum to one.
  ag::Tensor decode(const ag::Tensor& z) const;

  // Per-datum compression terms of the bound for the encoder output.
  void compression_terms(const EncoderOutput& enc, ag::Tensor& term_ii, ag::Tensor& term_iii) const;

  // Dispatches to cpib_loss or baseline_loss.
  LossBreakdown loss(const ag::Tensor& x, std::span<const int> y, double tau,
                     std::span<Rng> streams) const;

  // Predictive p(y|x) averaged over `passes` latent draws (one draw in kMean).
  std::vector<double> predict_proba(const ag::Tensor& x, LatentMode mode, std::size_t passes,
                                    std::span<Rng> streams) const;

  // Dimension probabilities pi(x), (n, K); CP-IB only.
  ag::Tensor dimension_probs(const ag::Tensor& x) const;

  // Global keep probabilities of drop-vib.
  std::vector<double> keep_probs() const;

 private:
  ModelSpec spec_;
  Mlp encoder_;
  Mlp dim_encoder_;
  Mlp selector_;
  ag::Tensor keep_logits_;
  Mlp decoder_;
  std::vector<double> prior_probs_;
  std::vector<double> log_prior_;
};

LossBreakdown cpib_loss(const Model& model, const ag::Tensor& x, std::span<const int> y, double tau,
                        std::span<Rng> streams);
LossBreakdown baseline_loss(const Model& model, const ag::Tensor& x, std::span<const int> y,
                            double tau, std::span<Rng> streams);

// ---- checkpoints ----
//
// Layout: "CPIBCKPT", u32 version, u32 header length, UTF-8 JSON header
// {spec, dtype: "f64", tensors: [{name, shape}]}, then every tensor's values
// as little-endian f64 in declaration order.

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace cpib

#endif  // CPIB_MODEL_HPP_
