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

#include "cpib/cli.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace cpib {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"data",
       {"name", "root", "train_images", "train_labels", "test_images", "test_labels", "train_subset", "test_subset",
        "subset_seed"}},
      {"model",
       {"variant", "input_dim", "num_classes", "k", "beta", "mc_samples", "prior", "a", "b", "prior_probs",
        "fixed_dim", "square_compression", "encoder_hidden", "decoder_hidden", "selector_hidden",
        "drop_init_keep"}},
      {"train",
       {"epochs", "batch_size", "learning_rate", "optimizer", "adam_beta1", "adam_beta2", "adam_eps", "seed",
        "tau_start", "tau_end", "clip_norm", "beta_grid", "error_sample"}},
      {"eval", {"clean", "noise_levels", "rotations", "pgd_eps", "pgd_iters", "pgd_step", "mc_passes", "batch_size"}},
      {"output", {"dir"}},
  };
  return keys;
}

[[noreturn]] void config_error(const std::string& msg) { throw CliError("E_CONFIG", msg, 2); }

template <class T>
T parse_scalar(const std::string& key, const std::string& text) {
  std::istringstream is(boost::trim_copy(text));
  T v{};
  is >> v;
  if (is.fail() || !is.eof()) config_error(fmt::format("{}: cannot parse '{}'", key, text));
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = boost::to_lower_copy(boost::trim_copy(text));
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  config_error(fmt::format("{}: expected true or false, got '{}'", key, text));
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  const std::string t = boost::trim_copy(text);
  if (t.empty()) return out;
  std::vector<std::string> parts;
  boost::split(parts, t, boost::is_any_of(","));
  for (const auto& p : parts) out.push_back(parse_scalar<T>(key, p));
  return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

fs::path require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw CliError("E_DATA", "dataset file not found: " + p.string(), 2);
  return p;
}

Dataset load_split(const DataConfig& d, bool train) {
  const fs::path images = train ? d.resolve(d.train_images, "train-images-idx3-ubyte")
                                : d.resolve(d.test_images, "t10k-images-idx3-ubyte");
  const fs::path labels = train ? d.resolve(d.train_labels, "train-labels-idx1-ubyte")
                                : d.resolve(d.test_labels, "t10k-labels-idx1-ubyte");
  Dataset ds;
  try {
    ds = load_idx(require_file(images), require_file(labels));
  } catch (const IdxError& e) {
    throw CliError("E_DATA", e.what(), 2);
  }
  ds.name = d.name;
  ds.split = train ? "train" : "test";
  const std::size_t n = train ? d.train_subset : d.test_subset;
  if (n > 0 && n < ds.size()) {
    ds = subset(ds, n, d.subset_seed + (train ? 0 : 1));
  }
  return ds;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CliError("E_IO", "cannot write " + path.string());
  os << text;
  if (!os) throw CliError("E_IO", "write failed for " + path.string());
}

std::vector<std::string> run_comments(const ExperimentConfig& cfg, bool eval) {
  std::vector<std::string> c;
  c.push_back(fmt::format("optimizer: {} lr {} batch {} epochs {} clip {} tau {}->{}",
                          cfg.train.optimizer == OptimizerKind::kAdam ? "adam" : "sgd",
                          format_double(cfg.train.learning_rate), cfg.train.batch_size, cfg.train.epochs,
                          format_double(cfg.train.clip_norm), format_double(cfg.train.tau_start),
                          format_double(cfg.train.tau_end)));
  if (!eval) return c;
  std::string lambdas;
  for (double l : kShotNoiseLambdas) lambdas += (lambdas.empty() ? "" : " ") + format_double(l);
  c.push_back("shot-noise lambda per level 1..8: " + lambdas);
  c.push_back(fmt::format("pgd: L-inf, deterministic latent (A = mu, d = mode of pi), no random start, step {}",
                          cfg.eval.pgd_step > 0 ? format_double(cfg.eval.pgd_step)
                                                : std::string("eps for 1 iteration else eps/4")));
  c.push_back(fmt::format("predictive passes: {}", cfg.eval.mc_passes));
  return c;
}

std::string beta_tag(double beta) {
  std::string s = fmt::format("{:g}", beta);
  std::replace(s.begin(), s.end(), '.', 'p');
  return s;
}

}  // namespace

fs::path DataConfig::resolve(const fs::path& given, const char* default_name) const {
  if (!given.empty()) return given;
  fs::path base = root;
  if (base.empty()) {
    const char* env = std::getenv(kDataRootEnv);
    base = env != nullptr && *env != '\0' ? fs::path(env) : fs::path("data");
  }
  return base / default_name;
}

std::vector<Scenario> EvalPlan::scenarios() const {
  std::vector<Scenario> out;
  if (clean) out.push_back(Scenario::clean());
  for (int level : noise_levels) {
    try {
      out.push_back(Scenario::shot_noise(level));
    } catch (const std::invalid_argument& e) {
      throw CliError("E_ARGS", e.what(), 2);
    }
  }
  for (double deg : rotations) out.push_back(Scenario::rotation(deg));
  for (std::size_t iters : pgd_iters) {
    for (double eps : pgd_eps) {
      try {
        out.push_back(Scenario::pgd(eps, iters, pgd_step));
      } catch (const std::invalid_argument& e) {
        throw CliError("E_ARGS", e.what(), 2);
      }
    }
  }
  return out;
}

ExperimentConfig parse_config_text(const std::string& text) {
  pt::ptree tree;
  try {
    std::istringstream is(text);
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    config_error(fmt::format("line {}: {}", e.line(), e.message()));
  }

  ExperimentConfig cfg;
  std::optional<double> a, b;
  std::string prior_kind = "compound";
  std::vector<double> prior_probs;
  for (const auto& [section, body] : tree) {
    const auto known = known_keys().find(section);
    if (known == known_keys().end()) config_error("unknown section [" + section + "]");
    if (body.empty() && !body.data().empty()) config_error("key '" + section + "' outside a section");
    for (const auto& [key, node] : body) {
      if (!known->second.contains(key)) config_error(fmt::format("unknown key '{}' in [{}]", key, section));
      const std::string v = node.data();
      const std::string name = section + "." + key;
      if (section == "data") {
        auto& d = cfg.data;
        if (key == "name") d.name = v;
        else if (key == "root") d.root = v;
        else if (key == "train_images") d.train_images = v;
        else if (key == "train_labels") d.train_labels = v;
        else if (key == "test_images") d.test_images = v;
        else if (key == "test_labels") d.test_labels = v;
        else if (key == "train_subset") d.train_subset = parse_scalar<std::size_t>(name, v);
        else if (key == "test_subset") d.test_subset = parse_scalar<std::size_t>(name, v);
        else if (key == "subset_seed") d.subset_seed = parse_scalar<std::uint64_t>(name, v);
      } else if (section == "model") {
        auto& m = cfg.model;
        if (key == "variant") {
          try {
            m.variant = parse_variant(boost::trim_copy(v));
          } catch (const std::invalid_argument& e) {
            config_error(e.what());
          }
        } else if (key == "input_dim") m.input_dim = parse_scalar<std::size_t>(name, v);
        else if (key == "num_classes") m.num_classes = parse_scalar<std::size_t>(name, v);
        else if (key == "k") m.k = parse_scalar<std::size_t>(name, v);
        else if (key == "beta") m.beta = parse_scalar<double>(name, v);
        else if (key == "mc_samples") m.mc_samples = parse_scalar<std::size_t>(name, v);
        else if (key == "prior") prior_kind = boost::trim_copy(v);
        else if (key == "a") a = parse_scalar<double>(name, v);
        else if (key == "b") b = parse_scalar<double>(name, v);
        else if (key == "prior_probs") prior_probs = parse_list<double>(name, v);
        else if (key == "fixed_dim") m.fixed_dim = parse_scalar<std::size_t>(name, v);
        else if (key == "square_compression") m.square_compression = parse_bool(name, v);
        else if (key == "encoder_hidden") m.encoder_hidden = parse_list<std::size_t>(name, v);
        else if (key == "decoder_hidden") m.decoder_hidden = parse_list<std::size_t>(name, v);
        else if (key == "selector_hidden") m.selector_hidden = parse_list<std::size_t>(name, v);
        else if (key == "drop_init_keep") m.drop_init_keep = parse_scalar<double>(name, v);
      } else if (section == "train") {
        auto& t = cfg.train;
        if (key == "epochs") t.epochs = parse_scalar<std::size_t>(name, v);
        else if (key == "batch_size") t.batch_size = parse_scalar<std::size_t>(name, v);
        else if (key == "learning_rate") t.learning_rate = parse_scalar<double>(name, v);
        else if (key == "optimizer") {
          const std::string o = boost::trim_copy(v);
          if (o == "adam") t.optimizer = OptimizerKind::kAdam;
          else if (o == "sgd") t.optimizer = OptimizerKind::kSgd;
          else config_error(name + ": expected adam or sgd, got '" + o + "'");
        } else if (key == "adam_beta1") t.adam_beta1 = parse_scalar<double>(name, v);
        else if (key == "adam_beta2") t.adam_beta2 = parse_scalar<double>(name, v);
        else if (key == "adam_eps") t.adam_eps = parse_scalar<double>(name, v);
        else if (key == "seed") t.seed = parse_scalar<std::uint64_t>(name, v);
        else if (key == "tau_start") t.tau_start = parse_scalar<double>(name, v);
        else if (key == "tau_end") t.tau_end = parse_scalar<double>(name, v);
        else if (key == "clip_norm") t.clip_norm = parse_scalar<double>(name, v);
        else if (key == "beta_grid") t.beta_grid = parse_list<double>(name, v);
        else if (key == "error_sample") t.error_sample = parse_scalar<std::size_t>(name, v);
      } else if (section == "eval") {
        auto& e = cfg.eval;
        if (key == "clean") e.clean = parse_bool(name, v);
        else if (key == "noise_levels") e.noise_levels = parse_list<int>(name, v);
        else if (key == "rotations") e.rotations = parse_list<double>(name, v);
        else if (key == "pgd_eps") e.pgd_eps = parse_list<double>(name, v);
        else if (key == "pgd_iters") e.pgd_iters = parse_list<std::size_t>(name, v);
        else if (key == "pgd_step") e.pgd_step = parse_scalar<double>(name, v);
        else if (key == "mc_passes") e.mc_passes = parse_scalar<std::size_t>(name, v);
        else if (key == "batch_size") e.batch_size = parse_scalar<std::size_t>(name, v);
      } else if (section == "output") {
        if (key == "dir") cfg.out_dir = boost::trim_copy(v);
      }
    }
  }

  try {
    if (prior_kind == "compound") {
      cfg.model.prior = DimensionPrior::compound(a.value_or(2.0), b.value_or(2.0));
    } else if (prior_kind == "explicit") {
      if (prior_probs.empty()) config_error("model.prior = explicit needs model.prior_probs");
      cfg.model.prior = DimensionPrior::explicit_probs(prior_probs);
    } else {
      config_error("model.prior: expected compound or explicit, got '" + prior_kind + "'");
    }
    cfg.model.validate();
    cfg.train.validate();
  } catch (const std::invalid_argument& e) {
    config_error(e.what());
  }
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw CliError("E_CONFIG", "cannot open config " + path.string(), 2);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

std::string resolved_config(const ExperimentConfig& cfg) {
  const auto& d = cfg.data;
  const auto& m = cfg.model;
  const auto& t = cfg.train;
  const auto& e = cfg.eval;
  std::string s;
  s += "[data]\n";
  s += "name = " + d.name + "\n";
  s += "train_images = " + d.resolve(d.train_images, "train-images-idx3-ubyte").string() + "\n";
  s += "train_labels = " + d.resolve(d.train_labels, "train-labels-idx1-ubyte").string() + "\n";
  s += "test_images = " + d.resolve(d.test_images, "t10k-images-idx3-ubyte").string() + "\n";
  s += "test_labels = " + d.resolve(d.test_labels, "t10k-labels-idx1-ubyte").string() + "\n";
  s += fmt::format("train_subset = {}\ntest_subset = {}\nsubset_seed = {}\n", d.train_subset, d.test_subset,
                   d.subset_seed);
  s += "\n[model]\n";
  s += fmt::format("variant = {}\ninput_dim = {}\nnum_classes = {}\nk = {}\nbeta = {}\nmc_samples = {}\n",
                   to_string(m.variant), m.input_dim, m.num_classes, m.k, format_double(m.beta), m.mc_samples);
  if (m.prior.kind() == DimensionPrior::Kind::kCompound) {
    s += fmt::format("prior = compound\na = {}\nb = {}\n", format_double(m.prior.a()), format_double(m.prior.b()));
  } else {
    s += "prior = explicit\nprior_probs = " + join(m.prior.probs(m.k)) + "\n";
  }
  s += fmt::format("fixed_dim = {}\nsquare_compression = {}\n", m.fixed_dim, m.square_compression);
  s += "encoder_hidden = " + join(m.encoder_hidden) + "\n";
  s += "decoder_hidden = " + join(m.decoder_hidden) + "\n";
  s += "selector_hidden = " + join(m.selector_hidden) + "\n";
  s += "drop_init_keep = " + format_double(m.drop_init_keep) + "\n";
  s += "\n[train]\n";
  s += fmt::format("epochs = {}\nbatch_size = {}\nlearning_rate = {}\noptimizer = {}\n", t.epochs, t.batch_size,
                   format_double(t.learning_rate), t.optimizer == OptimizerKind::kAdam ? "adam" : "sgd");
  s += fmt::format("adam_beta1 = {}\nadam_beta2 = {}\nadam_eps = {}\nseed = {}\n", format_double(t.adam_beta1),
                   format_double(t.adam_beta2), format_double(t.adam_eps), t.seed);
  s += fmt::format("tau_start = {}\ntau_end = {}\nclip_norm = {}\n", format_double(t.tau_start),
                   format_double(t.tau_end), format_double(t.clip_norm));
  s += "beta_grid = " + join(t.beta_grid) + "\n";
  s += fmt::format("error_sample = {}\n", t.error_sample);
  s += "\n[eval]\n";
  s += fmt::format("clean = {}\n", e.clean);
  s += "noise_levels = " + join(e.noise_levels) + "\n";
  s += "rotations = " + join(e.rotations) + "\n";
  s += "pgd_eps = " + join(e.pgd_eps) + "\n";
  s += "pgd_iters = " + join(e.pgd_iters) + "\n";
  s += fmt::format("pgd_step = {}\nmc_passes = {}\nbatch_size = {}\n", format_double(e.pgd_step), e.mc_passes,
                   e.batch_size);
  s += "\n[output]\n";
  s += "dir = " + cfg.out_dir.string() + "\n";
  return s;
}

void apply_overrides(ExperimentConfig& cfg, const Overrides& o) {
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.out) cfg.out_dir = *o.out;
  try {
    if (o.variant) cfg.model.variant = parse_variant(*o.variant);
    if (o.beta) cfg.model.beta = *o.beta;
    if (o.k) cfg.model.k = *o.k;
    if (o.a || o.b) {
      const bool compound = cfg.model.prior.kind() == DimensionPrior::Kind::kCompound;
      cfg.model.prior = DimensionPrior::compound(o.a.value_or(compound ? cfg.model.prior.a() : 2.0),
                                                 o.b.value_or(compound ? cfg.model.prior.b() : 2.0));
    }
    cfg.model.validate();
  } catch (const std::invalid_argument& e) {
    throw CliError("E_ARGS", e.what(), 2);
  }
}

OutputLock::OutputLock(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw CliError("E_IO", "cannot create output directory " + dir.string() + ": " + ec.message());
  path_ = dir / ".cpib.lock";
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (f == nullptr) {
    const bool held = errno == EEXIST;
    path_.clear();
    if (held) {
      throw CliError("E_LOCKED", "output directory " + dir.string() + " is in use by another run (remove " +
                                     (dir / ".cpib.lock").string() + " if stale)", 3);
    }
    throw CliError("E_IO", "cannot create lockfile in " + dir.string());
  }
  std::fclose(f);
}

OutputLock::~OutputLock() {
  if (!path_.empty()) {
    std::error_code ec;
    fs::remove(path_, ec);
  }
}

Dataset load_train_data(const DataConfig& d) { return load_split(d, true); }
Dataset load_test_data(const DataConfig& d) { return load_split(d, false); }

void cmd_train(const ExperimentConfig& cfg) {
  const Dataset data = load_train_data(cfg.data);
  OutputLock lock(cfg.out_dir);
  write_text(cfg.out_dir / "config.resolved.ini", resolved_config(cfg));
  TrainResult r = [&] {
    try {
      return train(cfg.model, cfg.train, data);
    } catch (const DivergenceError& e) {
      throw CliError("E_DIVERGED", e.what());
    } catch (const std::invalid_argument& e) {
      throw CliError("E_CONFIG", e.what(), 2);
    }
  }();
  save_checkpoint(r.model, cfg.out_dir / "model.ckpt");
  write_history_csv(cfg.out_dir / "history.csv", r.history, run_comments(cfg, false));
}

void cmd_eval(const ExperimentConfig& cfg, const fs::path& checkpoint) {
  const auto scenarios = cfg.eval.scenarios();
  if (scenarios.empty()) throw CliError("E_ARGS", "no evaluation scenario selected", 2);
  Model model = [&] {
    try {
      return load_checkpoint(checkpoint);
    } catch (const CheckpointError& e) {
      throw CliError("E_CHECKPOINT", e.what(), 2);
    }
  }();
  const Dataset data = load_test_data(cfg.data);
  if (data.pixels() != model.spec().input_dim) {
    throw CliError("E_DATA", fmt::format("test images have {} pixels, checkpoint expects {}", data.pixels(),
                                         model.spec().input_dim), 2);
  }
  OutputLock lock(cfg.out_dir);
  write_text(cfg.out_dir / "config.resolved.ini", resolved_config(cfg));
  std::vector<EvalRecord> rows;
  const EvalOptions opts{cfg.eval.mc_passes, cfg.train.seed, cfg.eval.batch_size};
  for (const auto& s : scenarios) rows.push_back(evaluate(model, data, s, opts));
  auto comments = run_comments(cfg, true);
  comments.push_back("checkpoint: " + checkpoint.filename().string());
  write_eval_csv(cfg.out_dir / "results.csv", rows, comments);
}

double cmd_sweep(const ExperimentConfig& cfg) {
  if (cfg.train.beta_grid.empty()) throw CliError("E_CONFIG", "sweep needs train.beta_grid", 2);
  const Dataset train_data = load_train_data(cfg.data);
  const Dataset test_data = load_test_data(cfg.data);
  OutputLock lock(cfg.out_dir);
  write_text(cfg.out_dir / "config.resolved.ini", resolved_config(cfg));
  const InfoCurve curve = info_curve(cfg.model, cfg.train, train_data, test_data, cfg.eval.mc_passes,
                                     [&](double beta, const Model& m) {
                                       save_checkpoint(m, cfg.out_dir / ("model-beta-" + beta_tag(beta) + ".ckpt"));
                                     });
  auto comments = run_comments(cfg, false);
  comments.push_back(fmt::format("predictive passes: {}", cfg.eval.mc_passes));
  for (const auto& f : curve.failures) comments.push_back("failed beta " + format_double(f.beta) + ": " + f.message);
  if (curve.points.empty()) {
    write_curve_csv(cfg.out_dir / "curve.csv", curve.points, comments);
    throw CliError("E_SWEEP", "every grid point failed; first error: " + curve.failures.front().message);
  }
  const double selected = select_beta_mni(curve.points);
  comments.push_back("selected beta (closest to the minimum necessary information point): " +
                     format_double(selected));
  write_curve_csv(cfg.out_dir / "curve.csv", curve.points, comments);
  return selected;
}

namespace {

double metric_value(const EvalRecord& r, const std::string& metric) {
  if (metric == "error") return r.error;
  if (metric == "loglik") return r.loglik;
  if (metric == "brier") return r.brier;
  if (metric == "mi_xz") return r.mi_xz;
  if (metric == "mi_zy") return r.mi_zy;
  throw CliError("E_ARGS", "unknown metric '" + metric + "' (error, loglik, brier, mi_xz, mi_zy)", 2);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;  // (severity, median)
};

// Nice tick positions covering [lo, hi].
std::vector<double> ticks(double lo, double hi) {
  const double span = hi - lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (step >= raw) break;
  }
  std::vector<double> out;
  for (double t = std::ceil(lo / step - 1e-9) * step; t <= hi + 1e-9 * step; t += step) {
    out.push_back(std::abs(t) < 1e-12 * step ? 0.0 : t);
  }
  return out;
}

std::string render_svg(const std::string& title, const std::string& metric, const std::vector<Series>& series) {
  constexpr double kW = 640, kH = 420, kLeft = 70, kRight = 170, kTop = 40, kBottom = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  auto widen = [](double& lo, double& hi) {
    if (hi - lo < 1e-12) {
      const double pad = std::max(std::abs(lo) * 0.05, 0.5);
      lo -= pad;
      hi += pad;
    } else {
      const double pad = 0.05 * (hi - lo);
      lo -= pad;
      hi += pad;
    }
  };
  widen(x0, x1);
  widen(y0, y1);
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  static constexpr std::array<const char*, 8> kColors = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                         "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  std::string o = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" "
      "font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      kW, kH);
  o += fmt::format("<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n", kLeft + pw / 2,
                   title);
  o += fmt::format(
      "<g class=\"axes\" stroke=\"black\"><line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\"/>"
      "<line x1=\"{0}\" y1=\"{3}\" x2=\"{0}\" y2=\"{1}\"/></g>\n",
      kLeft, kTop + ph, kLeft + pw, kTop);
  for (double t : ticks(x0, x1)) {
    o += fmt::format(
        "<g class=\"xtick\"><line x1=\"{0:.2f}\" y1=\"{1}\" x2=\"{0:.2f}\" y2=\"{2}\" stroke=\"black\"/>"
        "<text x=\"{0:.2f}\" y=\"{3}\" text-anchor=\"middle\">{4:g}</text></g>\n",
        px(t), kTop + ph, kTop + ph + 5, kTop + ph + 18, t);
  }
  for (double t : ticks(y0, y1)) {
    o += fmt::format(
        "<g class=\"ytick\"><line x1=\"{0}\" y1=\"{1:.2f}\" x2=\"{2}\" y2=\"{1:.2f}\" stroke=\"black\"/>"
        "<text x=\"{3}\" y=\"{1:.2f}\" text-anchor=\"end\" dominant-baseline=\"middle\">{4:g}</text></g>\n",
        kLeft - 5, py(t), kLeft, kLeft - 8, t);
  }
  o += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">severity</text>\n", kLeft + pw / 2, kH - 12);
  o += fmt::format("<text x=\"16\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0})\">{1}</text>\n",
                   kTop + ph / 2, metric);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kColors[i % kColors.size()];
    std::string pts;
    for (const auto& [x, y] : series[i].points) pts += fmt::format("{}{:.2f},{:.2f}", pts.empty() ? "" : " ", px(x), py(y));
    o += fmt::format("<polyline class=\"series\" data-name=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\" "
                     "points=\"{}\"/>\n",
                     series[i].name, color, pts);
    const double ly = kTop + 10 + 18.0 * static_cast<double>(i);
    o += fmt::format(
        "<g class=\"legend\"><line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"{3}\" stroke-width=\"2\"/>"
        "<text x=\"{4}\" y=\"{1}\" dominant-baseline=\"middle\">{5}</text></g>\n",
        kW - kRight + 15, ly, kW - kRight + 35, color, kW - kRight + 40, series[i].name);
  }
  o += "</svg>\n";
  return o;
}

}  // namespace

std::vector<fs::path> cmd_plot(const std::vector<fs::path>& inputs, const fs::path& out_dir,
                               const std::vector<std::string>& metrics) {
  if (inputs.empty()) throw CliError("E_ARGS", "plot needs at least one results.csv", 2);
  if (metrics.empty()) throw CliError("E_ARGS", "plot needs at least one metric", 2);
  std::vector<EvalRecord> rows;
  for (const auto& in : inputs) {
    if (!fs::is_regular_file(in)) throw CliError("E_IO", "cannot open " + in.string(), 2);
    try {
      auto r = read_eval_csv(in);
      rows.insert(rows.end(), r.begin(), r.end());
    } catch (const std::runtime_error& e) {
      throw CliError("E_SCHEMA", e.what(), 2);
    }
  }
  if (rows.empty()) throw CliError("E_SCHEMA", "no result rows in the given inputs", 2);
  for (const auto& m : metrics) metric_value(rows.front(), m);

  // scenario -> series name -> severity -> values over seeds
  std::map<std::string, std::map<std::string, std::map<double, std::vector<const EvalRecord*>>>> groups;
  std::map<std::string, std::set<double>> betas_per_variant;
  for (const auto& r : rows) betas_per_variant[r.variant].insert(r.beta);
  for (const auto& r : rows) {
    const std::string name =
        betas_per_variant[r.variant].size() > 1 ? r.variant + "@" + format_double(r.beta) : r.variant;
    groups[r.scenario][name][r.severity].push_back(&r);
  }

  OutputLock lock(out_dir);
  std::vector<fs::path> written;
  for (const auto& [scenario, by_series] : groups) {
    for (const auto& metric : metrics) {
      std::vector<Series> series;
      for (const auto& [name, by_sev] : by_series) {
        Series s{name, {}};
        for (const auto& [sev, recs] : by_sev) {
          std::vector<double> v;
          for (const auto* r : recs) v.push_back(metric_value(*r, metric));
          s.points.emplace_back(sev, median(std::move(v)));
        }
        series.push_back(std::move(s));
      }
      const fs::path path = out_dir / (scenario + "-" + metric + ".svg");
      write_text(path, render_svg(scenario + " (median over seeds)", metric, series));
      written.push_back(path);
    }
  }
  return written;
}

}  // namespace cpib
