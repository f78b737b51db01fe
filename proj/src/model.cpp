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

#include "cpib/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace cpib {

namespace {

constexpr double kSigmaFloor = 1e-6;
constexpr double kShapeFloor = 1e-6;

std::vector<std::size_t> widths(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

Rng& stream_for_row(std::span<Rng> streams, std::size_t row) {
  return streams.size() == 1 ? streams[0] : streams[row];
}

template <class Draw>
ag::Tensor draw(std::size_t rows, std::size_t cols, std::span<Rng> streams, Draw d) {
  if (streams.empty() || (streams.size() != 1 && streams.size() != rows)) {
    throw std::invalid_argument("noise: need one stream or one stream per row");
  }
  std::vector<double> v(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    Rng& rng = stream_for_row(streams, r);
    for (std::size_t c = 0; c < cols; ++c) v[r * cols + c] = d(rng);
  }
  return ag::Tensor::from({rows, cols}, std::move(v));
}

// One-hot masks gamma = 1(k <= d) and the matching one-hot d_soft.
void hard_masks(const std::vector<int>& d, std::size_t k, ag::Tensor& d_soft, ag::Tensor& gamma) {
  const std::size_t rows = d.size();
  std::vector<double> onehot(rows * k, 0.0);
  std::vector<double> mask(rows * k, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto dr = static_cast<std::size_t>(d[r]);
    onehot[r * k + dr - 1] = 1.0;
    std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(r * k), dr, 1.0);
  }
  d_soft = ag::Tensor::from({rows, k}, std::move(onehot));
  gamma = ag::Tensor::from({rows, k}, std::move(mask));
}

// 1-based argmax per row of (scores + noise).
std::vector<int> row_argmax(std::span<const double> scores, const ag::Tensor* noise, std::size_t rows,
                            std::size_t k) {
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    double best_v = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      const double v = scores[r * k + j] + (noise ? noise->values()[r * k + j] : 0.0);
      if (v > best_v) {
        best_v = v;
        best = j;
      }
    }
    out[r] = static_cast<int>(best) + 1;
  }
  return out;
}

LossBreakdown bound_loss(const Model& model, const ag::Tensor& x, std::span<const int> y, double tau,
                         std::span<Rng> streams) {
  const ModelSpec& spec = model.spec();
  if (y.size() != x.dim(0)) throw std::invalid_argument("loss: label count does not match batch size");
  EncoderOutput enc = model.encode(x);
  LossBreakdown out;
  model.compression_terms(enc, out.term_ii, out.term_iii);
  out.compression = ag::add(out.term_ii, out.term_iii);

  ag::Tensor ce;
  for (std::size_t j = 0; j < spec.mc_samples; ++j) {
    LatentSample s = model.sample_latent(enc, LatentMode::kRelaxed, tau, streams);
    ag::Tensor nll = ag::neg(ag::gather_last(ag::log_softmax(model.decode_logits(s.z)), y));
    ce = ce.defined() ? ag::add(ce, nll) : nll;
  }
  out.cross_entropy = ag::scale(ce, 1.0 / static_cast<double>(spec.mc_samples));

  ag::Tensor penalty = spec.square_compression ? ag::square(out.compression) : out.compression;
  out.total = ag::mean(ag::add(out.cross_entropy, ag::scale(penalty, spec.beta)));
  return out;
}

}  // namespace

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kCpibCategorical: return "cpib-categorical";
    case Variant::kCpibCompound: return "cpib-compound";
    case Variant::kVibFixed: return "vib-fixed";
    case Variant::kDropVib: return "drop-vib";
    case Variant::kIntelVib: return "intel-vib";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (auto v : {Variant::kCpibCategorical, Variant::kCpibCompound, Variant::kVibFixed, Variant::kDropVib,
                 Variant::kIntelVib}) {
    if (to_string(v) == name) return v;
  }
  throw std::invalid_argument("unknown variant '" + std::string(name) + "'");
}

void ModelSpec::validate() const {
  if (k < 1) throw std::invalid_argument("ModelSpec: K must be >= 1");
  if (!(beta >= 0.0)) throw std::invalid_argument("ModelSpec: beta must be >= 0");
  if (mc_samples < 1) throw std::invalid_argument("ModelSpec: J must be >= 1");
  if (input_dim < 1 || num_classes < 2) throw std::invalid_argument("ModelSpec: bad input/class count");
  if (variant == Variant::kVibFixed && fixed_dim < 1) throw std::invalid_argument("ModelSpec: fixed_dim must be >= 1");
  if (variant == Variant::kDropVib && !(drop_init_keep > 0.0 && drop_init_keep < 1.0)) {
    throw std::invalid_argument("ModelSpec: drop_init_keep must be in (0, 1)");
  }
  if (is_cpib(variant)) (void)prior.probs(k);
}

// ---- layers ----

Linear::Linear(std::size_t in, std::size_t out, double gain, Rng& rng) {
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(in));
  std::vector<double> w(in * out);
  for (auto& v : w) v = (2.0 * rng.uniform() - 1.0) * bound;
  weight = ag::Tensor::from({in, out}, std::move(w));
  bias = ag::Tensor::zeros({out});
  weight.set_requires_grad(true);
  bias.set_requires_grad(true);
}

ag::Tensor Linear::operator()(const ag::Tensor& x) const { return ag::add(ag::matmul(x, weight), bias); }

Mlp::Mlp(const std::vector<std::size_t>& w, Rng& rng) {
  for (std::size_t i = 0; i + 1 < w.size(); ++i) {
    const bool feeds_relu = i + 2 < w.size();
    layers_.emplace_back(w[i], w[i + 1], feeds_relu ? std::sqrt(2.0) : 1.0, rng);
  }
}

ag::Tensor Mlp::operator()(const ag::Tensor& x) const {
  ag::Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i](h);
    if (i + 1 < layers_.size()) h = ag::relu(h);
  }
  return h;
}

// ---- noise ----

ag::Tensor draw_normal(std::size_t rows, std::size_t cols, std::span<Rng> streams) {
  return draw(rows, cols, streams, [](Rng& r) { return r.normal(); });
}

ag::Tensor draw_gumbel(std::size_t rows, std::size_t cols, std::span<Rng> streams) {
  return draw(rows, cols, streams, [](Rng& r) { return r.gumbel(); });
}

ag::Tensor draw_logistic(std::size_t rows, std::size_t cols, std::span<Rng> streams) {
  return draw(rows, cols, streams, [](Rng& r) { return r.logistic(); });
}

ag::Tensor mask_from_dsoft(const ag::Tensor& d_soft) { return ag::reverse_cumsum_last(d_soft); }

// ---- model ----

Model::Model(ModelSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
  spec_.validate();
  Rng root(init_seed, 0x6d6f64656cULL);
  const std::size_t latent = spec_.latent_dim();
  const std::size_t enc_out = spec_.variant == Variant::kDropVib ? spec_.k : 2 * latent;

  Rng enc_rng = root.split(1);
  encoder_ = Mlp(widths(spec_.input_dim, spec_.encoder_hidden, enc_out), enc_rng);
  if (is_cpib(spec_.variant)) {
    Rng dim_rng = root.split(2);
    const std::size_t head = spec_.variant == Variant::kCpibCompound ? 2 : spec_.k;
    dim_encoder_ = Mlp(widths(spec_.input_dim, spec_.encoder_hidden, head), dim_rng);
    prior_probs_ = spec_.prior.probs(spec_.k);
    log_prior_.resize(prior_probs_.size());
    for (std::size_t i = 0; i < prior_probs_.size(); ++i) {
      log_prior_[i] = prior_probs_[i] > 0.0 ? std::log(prior_probs_[i]) : 0.0;
    }
  }
  if (spec_.variant == Variant::kIntelVib) {
    Rng sel_rng = root.split(3);
    selector_ = Mlp(widths(spec_.k, spec_.selector_hidden, spec_.k), sel_rng);
  }
  if (spec_.variant == Variant::kDropVib) {
    const double p = spec_.drop_init_keep;
    keep_logits_ = ag::Tensor::full({spec_.k}, std::log(p / (1.0 - p)));
    keep_logits_.set_requires_grad(true);
  }
  Rng dec_rng = root.split(4);
  decoder_ = Mlp(widths(latent, spec_.decoder_hidden, spec_.num_classes), dec_rng);
}

std::vector<NamedTensor> Model::parameters() const {
  std::vector<NamedTensor> out;
  auto add_mlp = [&out](const std::string& prefix, const Mlp& mlp) {
    for (std::size_t i = 0; i < mlp.layers().size(); ++i) {
      out.push_back({prefix + "." + std::to_string(i) + ".weight", mlp.layers()[i].weight});
      out.push_back({prefix + "." + std::to_string(i) + ".bias", mlp.layers()[i].bias});
    }
  };
  add_mlp("encoder", encoder_);
  add_mlp("dim_encoder", dim_encoder_);
  add_mlp("selector", selector_);
  if (keep_logits_.defined()) out.push_back({"keep_logits", keep_logits_});
  add_mlp("decoder", decoder_);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

EncoderOutput Model::encode(const ag::Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != spec_.input_dim) {
    throw ag::ShapeError("encode: expected input (n, " + std::to_string(spec_.input_dim) + "), got " +
                         ag::shape_string(x.shape()));
  }
  EncoderOutput out;
  ag::Tensor h = encoder_(x);
  if (spec_.variant == Variant::kDropVib) {
    out.mu = h;
    return out;
  }
  const std::size_t latent = spec_.latent_dim();
  out.mu = ag::slice_last(h, 0, latent);
  out.sigma = ag::add_scalar(ag::softplus(ag::slice_last(h, latent, 2 * latent)), kSigmaFloor);
  if (spec_.variant == Variant::kCpibCategorical) {
    out.dim_log_probs = ag::log_softmax(dim_encoder_(x));
  } else if (spec_.variant == Variant::kCpibCompound) {
    out.dim_params = ag::add_scalar(ag::softplus(dim_encoder_(x)), kShapeFloor);
    out.dim_log_probs = log_compound_probs(out.dim_params, spec_.k);
  }
  return out;
}

LatentSample Model::sample_latent(const EncoderOutput& enc, LatentMode mode, double tau,
                                  std::span<Rng> streams) const {
  const std::size_t rows = enc.mu.dim(0);
  const std::size_t width = enc.mu.dim(1);
  LatentSample s;

  if (spec_.variant == Variant::kDropVib) {
    s.a = enc.mu;
    if (mode == LatentMode::kRelaxed) {
      ag::Tensor noise = draw_logistic(rows, width, streams);
      s.gamma = ag::sigmoid(ag::scale(ag::add(noise, keep_logits_), 1.0 / tau));
    } else {
      ag::Tensor noise = mode == LatentMode::kHard ? draw_logistic(rows, width, streams)
                                                   : ag::Tensor::zeros({rows, width});
      std::vector<double> m(rows * width);
      auto theta = keep_logits_.values();
      for (std::size_t i = 0; i < m.size(); ++i) m[i] = theta[i % width] + noise.values()[i] > 0.0 ? 1.0 : 0.0;
      s.gamma = ag::Tensor::from({rows, width}, std::move(m));
    }
    s.z = ag::mul(s.a, s.gamma);
    return s;
  }

  s.a = mode == LatentMode::kMean ? enc.mu
                                  : gaussian_rsample(enc.mu, enc.sigma, draw_normal(rows, width, streams));

  if (is_cpib(spec_.variant)) {
    const std::size_t k = spec_.k;
    if (mode == LatentMode::kRelaxed) {
      ag::Tensor g = draw_gumbel(rows, k, streams);
      s.d_soft = gumbel_softmax(enc.dim_log_probs, g, tau);
      s.gamma = mask_from_dsoft(s.d_soft);
      s.d_hard = row_argmax(enc.dim_log_probs.values(), &g, rows, k);
    } else {
      ag::Tensor g;
      if (mode == LatentMode::kHard) g = draw_gumbel(rows, k, streams);
      s.d_hard = row_argmax(enc.dim_log_probs.values(), g.defined() ? &g : nullptr, rows, k);
      hard_masks(s.d_hard, k, s.d_soft, s.gamma);
    }
    s.z = ag::mul(s.a, s.gamma);
  } else if (spec_.variant == Variant::kIntelVib) {
    s.gamma = ag::sigmoid(selector_(s.a));
    s.z = ag::mul(s.a, s.gamma);
  } else {
    s.z = s.a;
  }
  return s;
}

ag::Tensor Model::decode_logits(const ag::Tensor& z) const {
  if (z.rank() != 2 || z.dim(1) != spec_.latent_dim()) {
    throw ag::ShapeError("decode: expected latent width " + std::to_string(spec_.latent_dim()) + ", got " +
                         ag::shape_string(z.shape()));
  }
  return decoder_(z);
}

ag::Tensor Model::decode(const ag::Tensor& z) const { return ag::softmax(decode_logits(z)); }

void Model::compression_terms(const EncoderOutput& enc, ag::Tensor& term_ii, ag::Tensor& term_iii) const {
  const std::size_t rows = enc.mu.dim(0);
  if (spec_.variant == Variant::kDropVib) {
    term_ii = ag::add(ag::Tensor::zeros({rows}), ag::mean(ag::sigmoid(keep_logits_)));
    term_iii = ag::Tensor::zeros({rows});
    return;
  }
  ag::Tensor kl = standard_normal_kl(enc.mu, enc.sigma);
  if (!is_cpib(spec_.variant)) {
    term_ii = ag::sum_last(kl);
    term_iii = ag::Tensor::zeros({rows});
    return;
  }
  ag::Tensor pi = ag::exp(enc.dim_log_probs);
  const std::size_t k = spec_.k;
  for (std::size_t j = 0; j < k; ++j) {
    if (prior_probs_[j] > 0.0) continue;
    for (std::size_t r = 0; r < rows; ++r) {
      if (pi.values()[r * k + j] > 0.0) {
        throw SupportError("dimension prior assigns zero probability to dimension " + std::to_string(j + 1) +
                           " used by the encoder");
      }
    }
  }
  // sum_k pi_k sum_{l<=k} KL_l == sum_l KL_l * sum_{k>=l} pi_k
  term_ii = ag::sum_last(ag::mul(kl, ag::reverse_cumsum_last(pi)));
  ag::Tensor log_prior = ag::Tensor::from({k}, log_prior_);
  term_iii = ag::sum_last(ag::mul(pi, ag::sub(enc.dim_log_probs, log_prior)));
}

LossBreakdown Model::loss(const ag::Tensor& x, std::span<const int> y, double tau,
                          std::span<Rng> streams) const {
  return bound_loss(*this, x, y, tau, streams);
}

std::vector<double> Model::predict_proba(const ag::Tensor& x, LatentMode mode, std::size_t passes,
                                         std::span<Rng> streams) const {
  ag::NoGradScope no_grad;
  EncoderOutput enc = encode(x);
  const std::size_t n = mode == LatentMode::kMean ? 1 : std::max<std::size_t>(passes, 1);
  std::vector<double> acc(x.dim(0) * spec_.num_classes, 0.0);
  for (std::size_t p = 0; p < n; ++p) {
    LatentSample s = sample_latent(enc, mode, 1.0, streams);
    const ag::Tensor probs_t = decode(s.z);
    const auto probs = probs_t.values();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += probs[i];
  }
  for (auto& v : acc) v /= static_cast<double>(n);
  return acc;
}

ag::Tensor Model::dimension_probs(const ag::Tensor& x) const {
  if (!is_cpib(spec_.variant)) throw std::invalid_argument("dimension_probs: not a CP-IB model");
  return ag::exp(encode(x).dim_log_probs);
}

std::vector<double> Model::keep_probs() const {
  if (!keep_logits_.defined()) return {};
  std::vector<double> p;
  for (double t : keep_logits_.values()) p.push_back(1.0 / (1.0 + std::exp(-t)));
  return p;
}

LossBreakdown cpib_loss(const Model& model, const ag::Tensor& x, std::span<const int> y, double tau,
                        std::span<Rng> streams) {
  if (!is_cpib(model.spec().variant)) {
    throw std::invalid_argument("cpib_loss: variant " + std::string(to_string(model.spec().variant)) +
                                " is not a CP-IB model");
  }
  return bound_loss(model, x, y, tau, streams);
}

LossBreakdown baseline_loss(const Model& model, const ag::Tensor& x, std::span<const int> y, double tau,
                            std::span<Rng> streams) {
  if (is_cpib(model.spec().variant)) {
    throw std::invalid_argument("baseline_loss: variant " + std::string(to_string(model.spec().variant)) +
                                " is a CP-IB model");
  }
  return bound_loss(model, x, y, tau, streams);
}

}  // namespace cpib
