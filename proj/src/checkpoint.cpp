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

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "cpib/model.hpp"
#include "json.hpp"

namespace cpib {

namespace {

using nlohmann::json;

constexpr std::array<char, 8> kMagic = {'C', 'P', 'I', 'B', 'C', 'K', 'P', 'T'};

json prior_json(const DimensionPrior& prior, std::size_t k) {
  if (prior.kind() == DimensionPrior::Kind::kCompound) {
    return {{"kind", "compound"}, {"a", prior.a()}, {"b", prior.b()}};
  }
  return {{"kind", "explicit"}, {"probs", prior.probs(k)}};
}

void put_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    const int c = is.get();
    if (c == EOF) throw CheckpointError("checkpoint: truncated header");
    v |= static_cast<std::uint32_t>(c & 0xff) << (8 * i);
  }
  return v;
}

}  // namespace

std::string spec_to_json(const ModelSpec& spec) {
  json j = {
      {"variant", std::string(to_string(spec.variant))},
      {"input_dim", spec.input_dim},
      {"num_classes", spec.num_classes},
      {"k", spec.k},
      {"beta", spec.beta},
      {"mc_samples", spec.mc_samples},
      {"prior", prior_json(spec.prior, spec.k)},
      {"fixed_dim", spec.fixed_dim},
      {"square_compression", spec.square_compression},
      {"encoder_hidden", spec.encoder_hidden},
      {"decoder_hidden", spec.decoder_hidden},
      {"selector_hidden", spec.selector_hidden},
      {"drop_init_keep", spec.drop_init_keep},
  };
  return j.dump();
}

ModelSpec spec_from_json(std::string_view text) {
  const json j = json::parse(text);
  ModelSpec spec;
  spec.variant = parse_variant(j.at("variant").get<std::string>());
  spec.input_dim = j.at("input_dim").get<std::size_t>();
  spec.num_classes = j.at("num_classes").get<std::size_t>();
  spec.k = j.at("k").get<std::size_t>();
  spec.beta = j.at("beta").get<double>();
  spec.mc_samples = j.at("mc_samples").get<std::size_t>();
  const json& prior = j.at("prior");
  if (prior.at("kind") == "compound") {
    spec.prior = DimensionPrior::compound(prior.at("a").get<double>(), prior.at("b").get<double>());
  } else {
    spec.prior = DimensionPrior::explicit_probs(prior.at("probs").get<std::vector<double>>());
  }
  spec.fixed_dim = j.at("fixed_dim").get<std::size_t>();
  spec.square_compression = j.at("square_compression").get<bool>();
  spec.encoder_hidden = j.at("encoder_hidden").get<std::vector<std::size_t>>();
  spec.decoder_hidden = j.at("decoder_hidden").get<std::vector<std::size_t>>();
  spec.selector_hidden = j.at("selector_hidden").get<std::vector<std::size_t>>();
  spec.drop_init_keep = j.at("drop_init_keep").get<double>();
  return spec;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  const auto params = model.parameters();
  json tensors = json::array();
  for (const auto& p : params) tensors.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  const json header = {{"spec", json::parse(spec_to_json(model.spec()))}, {"dtype", "f64"}, {"tensors", tensors}};
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("checkpoint: cannot write " + path.string());
  os.write(kMagic.data(), kMagic.size());
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params) {
    for (double v : p.tensor.values()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) os.put(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
  }
  if (!os) throw CheckpointError("checkpoint: write failed for " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw CheckpointError("checkpoint: bad magic in " + path.string());
  const std::uint32_t version = get_u32(is);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: incompatible checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t len = get_u32(is);
  std::string text(len, '\0');
  is.read(text.data(), len);
  if (!is) throw CheckpointError("checkpoint: truncated header");
  const json header = json::parse(text);
  if (header.at("dtype") != "f64") throw CheckpointError("checkpoint: unsupported dtype");

  Model model(spec_from_json(header.at("spec").dump()), 0);
  auto params = model.parameters();
  const json& tensors = header.at("tensors");
  if (tensors.size() != params.size()) throw CheckpointError("checkpoint: tensor count mismatch");
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (tensors[t].at("name") != params[t].name ||
        tensors[t].at("shape").get<ag::Shape>() != params[t].tensor.shape()) {
      throw CheckpointError("checkpoint: tensor '" + params[t].name + "' does not match the spec");
    }
    auto values = params[t].tensor.mutable_values();
    for (auto& v : values) {
      std::array<unsigned char, 8> raw{};
      is.read(reinterpret_cast<char*>(raw.data()), 8);
      if (!is) throw CheckpointError("checkpoint: truncated payload in '" + params[t].name + "'");
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(raw[i]) << (8 * i);
      v = std::bit_cast<double>(bits);
    }
  }
  return model;
}

}  // namespace cpib
