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

// Experiment configuration and the train / eval / sweep / plot commands.
//
// Configs are INI documents with the sections [data], [model], [train],
// [eval] and [output]; unknown sections or keys are rejected. Every command
// writes config.resolved.ini next to its outputs and holds a lockfile in the
// output directory while it runs.

#ifndef CPIB_CLI_HPP_
#define CPIB_CLI_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpib/data.hpp"
#include "cpib/model.hpp"
#include "cpib/ood.hpp"
#include "cpib/train.hpp"

namespace cpib {

// Error with a stable code, printed as "CODE: message" by the binary.
class CliError : public std::runtime_error {
 public:
  CliError(std::string code, const std::string& message, int exit_code = 1)
      : std::runtime_error(message), code_(std::move(code)), exit_code_(exit_code) {}
  const std::string& code() const { return code_; }
  int exit_code() const { return exit_code_; }

 private:
  std::string code_;
  int exit_code_;
};

// Environment variable consulted for dataset paths left unset in a config.
inline constexpr const char* kDataRootEnv = "CPIB_DATA_ROOT";

struct DataConfig {
  std::string name = "mnist";
  std::filesystem::path root;  // empty: $CPIB_DATA_ROOT, else ./data
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  std::size_t train_subset = 0;  // 0 keeps every item
  std::size_t test_subset = 0;
  std::uint64_t subset_seed = 0;

  std::filesystem::path resolve(const std::filesystem::path& given, const char* default_name) const;
};

struct EvalPlan {
  bool clean = true;
  std::vector<int> noise_levels;
  std::vector<double> rotations;
  std::vector<double> pgd_eps;
  std::vector<std::size_t> pgd_iters{20};
  double pgd_step = 0.0;
  std::size_t mc_passes = 12;
  std::size_t batch_size = 250;

  std::vector<Scenario> scenarios() const;
};

struct ExperimentConfig {
  DataConfig data;
  ModelSpec model;
  TrainConfig train;
  EvalPlan eval;
  std::filesystem::path out_dir = "out";
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
// Canonical INI text of every setting; parse_config_text round-trips it.
std::string resolved_config(const ExperimentConfig& cfg);

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::optional<std::string> variant;
  std::optional<double> beta;
  std::optional<double> a;
  std::optional<double> b;
  std::optional<std::size_t> k;
};

void apply_overrides(ExperimentConfig& cfg, const Overrides& o);

// Exclusive lock on an output directory, released on destruction.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path path_;
};

Dataset load_train_data(const DataConfig& d);
Dataset load_test_data(const DataConfig& d);

// Writes model.ckpt, history.csv and config.resolved.ini to cfg.out_dir.
void cmd_train(const ExperimentConfig& cfg);

// Scores a checkpoint on the test split; writes results.csv.
void cmd_eval(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint);

// One model per train.beta_grid entry; writes curve.csv and
// model-beta-<beta>.ckpt per grid point. Returns the MNI-selected beta.
double cmd_sweep(const ExperimentConfig& cfg);

// One SVG per (scenario, metric) found in the inputs, one polyline per
// variant at the median over seeds. Returns the written files.
std::vector<std::filesystem::path> cmd_plot(const std::vector<std::filesystem::path>& inputs,
                                            const std::filesystem::path& out_dir,
                                            const std::vector<std::string>& metrics = {"error"});

}  // namespace cpib

#endif  // CPIB_CLI_HPP_
