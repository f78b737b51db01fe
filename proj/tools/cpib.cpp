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

// cpib train|eval|sweep|plot. Errors go to stderr as one "CODE: message" line.

#include <CLI11.hpp>

#include <cstdio>
#include <string>
#include <vector>

#include "cpib/cli.hpp"

namespace {

using cpib::CliError;

// "1..8" or "1,3,5".
std::vector<int> parse_levels(const std::string& text) {
  const auto dots = text.find("..");
  if (dots == std::string::npos) {
    std::vector<int> out;
    std::size_t start = 0;
    while (start <= text.size()) {
      const auto comma = text.find(',', start);
      const std::string item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      try {
        std::size_t used = 0;
        out.push_back(std::stoi(item, &used));
        if (used != item.size()) throw std::invalid_argument(item);
      } catch (const std::exception&) {
        throw CliError("E_ARGS", "--noise: cannot parse '" + item + "'", 2);
      }
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return out;
  }
  int lo = 0, hi = 0;
  try {
    lo = std::stoi(text.substr(0, dots));
    hi = std::stoi(text.substr(dots + 2));
  } catch (const std::exception&) {
    throw CliError("E_ARGS", "--noise: cannot parse range '" + text + "'", 2);
  }
  if (lo > hi) throw CliError("E_ARGS", "--noise: empty range '" + text + "'", 2);
  std::vector<int> out;
  for (int l = lo; l <= hi; ++l) out.push_back(l);
  return out;
}

struct CommonFlags {
  std::string config;
  cpib::Overrides overrides;
  std::uint64_t seed = 0;
  std::string out, variant;
  double beta = 0, a = 0, b = 0;
  std::size_t k = 0;
  CLI::Option *seed_opt = nullptr, *out_opt = nullptr, *variant_opt = nullptr, *beta_opt = nullptr,
              *a_opt = nullptr, *b_opt = nullptr, *k_opt = nullptr;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "INI experiment config")->required();
    seed_opt = app->add_option("--seed", seed, "Override train.seed");
    out_opt = app->add_option("--out", out, "Override output.dir");
    variant_opt = app->add_option("--variant", variant,
                                  "cpib-categorical, cpib-compound, vib-fixed, drop-vib or intel-vib");
    beta_opt = app->add_option("--beta", beta, "Override model.beta");
    a_opt = app->add_option("--a", a, "Compound prior shape a");
    b_opt = app->add_option("--b", b, "Compound prior shape b");
    k_opt = app->add_option("--k", k, "Maximum latent dimension K");
  }

  cpib::ExperimentConfig resolve() {
    cpib::ExperimentConfig cfg = cpib::load_config(config);
    cpib::Overrides o;
    if (*seed_opt) o.seed = seed;
    if (*out_opt) o.out = out;
    if (*variant_opt) o.variant = variant;
    if (*beta_opt) o.beta = beta;
    if (*a_opt) o.a = a;
    if (*b_opt) o.b = b;
    if (*k_opt) o.k = k;
    cpib::apply_overrides(cfg, o);
    return cfg;
  }
};

int run(int argc, char** argv) {
  CLI::App app{"Information-bottleneck classifiers with a learned latent dimension"};
  app.require_subcommand(1);

  CommonFlags train_flags, eval_flags, sweep_flags;
  CLI::App* train_cmd = app.add_subcommand("train", "Train one model; writes model.ckpt and history.csv");
  train_flags.attach(train_cmd);

  CLI::App* eval_cmd = app.add_subcommand("eval", "Score a checkpoint; writes results.csv");
  eval_flags.attach(eval_cmd);
  std::string checkpoint, noise;
  std::vector<double> rotations, eps;
  std::vector<std::size_t> iters;
  bool clean = false, pgd = false;
  eval_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  eval_cmd->add_flag("--clean", clean, "Clean test split");
  auto* noise_opt = eval_cmd->add_option("--noise", noise, "Shot-noise levels, e.g. 1..8 or 1,5,8");
  auto* rot_opt = eval_cmd->add_option("--rotate", rotations, "Rotation angles in degrees")->delimiter(',');
  eval_cmd->add_flag("--pgd", pgd, "L-inf PGD attack");
  auto* eps_opt = eval_cmd->add_option("--eps", eps, "PGD radii")->delimiter(',');
  auto* iters_opt = eval_cmd->add_option("--iters", iters, "PGD iteration counts")->delimiter(',');

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "Train over train.beta_grid; writes curve.csv");
  sweep_flags.attach(sweep_cmd);

  CLI::App* plot_cmd = app.add_subcommand("plot", "Render results.csv files as SVG line charts");
  std::vector<std::string> inputs;
  std::string plot_out = "plots";
  std::vector<std::string> metrics{"error"};
  plot_cmd->add_option("inputs", inputs, "results.csv files")->required();
  plot_cmd->add_option("--out", plot_out, "Output directory");
  plot_cmd->add_option("--metric", metrics, "error, loglik, brier, mi_xz, mi_zy")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (auto& c : msg) c = c == '\n' ? ' ' : c;
    std::fprintf(stderr, "E_ARGS: %s\n", msg.c_str());
    return 2;
  }

  if (*train_cmd) {
    const auto cfg = train_flags.resolve();
    cpib::cmd_train(cfg);
    std::printf("%s\n", (cfg.out_dir / "model.ckpt").c_str());
  } else if (*eval_cmd) {
    auto cfg = eval_flags.resolve();
    const bool any = clean || *noise_opt || *rot_opt || pgd;
    if (any) {
      cfg.eval.clean = clean;
      cfg.eval.noise_levels = *noise_opt ? parse_levels(noise) : std::vector<int>{};
      cfg.eval.rotations = *rot_opt ? rotations : std::vector<double>{};
      cfg.eval.pgd_eps.clear();
    }
    if (pgd) {
      if (!*eps_opt) throw CliError("E_ARGS", "--pgd needs --eps", 2);
      cfg.eval.pgd_eps = eps;
      if (*iters_opt) cfg.eval.pgd_iters = iters;
    } else if (*eps_opt || *iters_opt) {
      throw CliError("E_ARGS", "--eps and --iters need --pgd", 2);
    }
    cpib::cmd_eval(cfg, checkpoint);
    std::printf("%s\n", (cfg.out_dir / "results.csv").c_str());
  } else if (*sweep_cmd) {
    const auto cfg = sweep_flags.resolve();
    const double beta = cpib::cmd_sweep(cfg);
    std::printf("%s\nselected beta %g\n", (cfg.out_dir / "curve.csv").c_str(), beta);
  } else if (*plot_cmd) {
    std::vector<std::filesystem::path> paths(inputs.begin(), inputs.end());
    for (const auto& p : cpib::cmd_plot(paths, plot_out, metrics)) std::printf("%s\n", p.c_str());
  }
  return 0;
}

std::string one_line(std::string s) {
  for (auto& c : s) c = c == '\n' ? ' ' : c;
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const CliError& e) {
    std::fprintf(stderr, "%s: %s\n", e.code().c_str(), one_line(e.what()).c_str());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "E_RUNTIME: %s\n", one_line(e.what()).c_str());
    return 1;
  }
}
