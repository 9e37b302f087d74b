// Configuration-driven experiment runner: parses the flat dotted-key config
// format, executes seeded runs (optionally in a worker pool), and writes the
// per-step trace CSVs, per-run JSON records, ablation and grid tables, and
// the consolidated report.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "wsbd/noise.hpp"
#include "wsbd/optim.hpp"
#include "wsbd/tasks.hpp"

namespace wsbd {

// Config problems carry the offending key so the CLI can print it and exit
// with the dedicated status code.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& key, const std::string& what)
      : std::runtime_error("config key '" + key + "': " + what), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct ExperimentConfig {
  std::string task_kind = "vqe";  // vqe | parity | mnist
  int n_qubits = 2;
  int n_layers = 2;
  double coupling_j = 1.0;
  double field_h = 1.0;
  std::int64_t parity_size = -1;  // negative: exhaustive
  std::uint64_t parity_data_seed = 7;
  std::string mnist_train_images;
  std::string mnist_train_labels;
  int mnist_class_a = 0;
  int mnist_class_b = 1;
  std::int64_t mnist_train_count = 512;
  std::int64_t mnist_test_count = 512;
  int batch = 1;

  std::string base = "adam";  // sgd | adam | spsa | nelder_mead
  FreezeConfig freeze{0.7, 100, 1e-8, FreezeVariant::NONE, ImportanceMetric::SUM, 0.9};
  double eta = std::nan("");  // per-base default when unset
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  bool amsgrad = false;
  SpsaCoefficients spsa;

  bool exact = true;
  std::int64_t shots_m = 1000;

  bool noise_enabled = false;
  NoiseModel noise;  // defaults to the preset when enabled

  Budget budget{-1, 20000};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};

  std::string target_kind = "auto";  // auto | energy | accuracy | loss | none
  double target_value = std::nan("");
  double tol_e = 0.05;
  int patience = 200;
  double min_improvement = 1e-4;

  double seconds_per_fp = 4.74;
  std::string out_dir = "out";
  int metric_every = 1;

  std::vector<double> grid_lambda_f = {0.0, 0.1, 0.3, 0.5, 0.7, 0.9};
  std::vector<int> grid_tau = {25, 100, 300, 500};
};

// ---------------------------------------------------------------------------
// config file parsing: `key = value` lines, '#' comments

inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open config file");
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string();
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno), "expected 'key = value'");
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

namespace detail {

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return x;
  } catch (...) {
    throw ConfigError(key, "expected a number, got '" + v + "'");
  }
}

inline std::int64_t to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return x;
  } catch (...) {
    throw ConfigError(key, "expected an integer, got '" + v + "'");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "expected true/false, got '" + v + "'");
}

template <typename T, typename F>
std::vector<T> to_list(const std::string& key, const std::string& v, F convert) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto a = item.find_first_not_of(" \t");
    const auto b = item.find_last_not_of(" \t");
    if (a == std::string::npos) continue;
    out.push_back(convert(key, item.substr(a, b - a + 1)));
  }
  if (out.empty()) throw ConfigError(key, "expected a non-empty comma-separated list");
  return out;
}

}  // namespace detail

inline FreezeVariant parse_variant(const std::string& key, const std::string& v) {
  if (v == "none") return FreezeVariant::NONE;
  if (v == "wsbd") return FreezeVariant::WSBD;
  if (v == "dbd") return FreezeVariant::DBD;
  if (v == "sbd") return FreezeVariant::SBD;
  if (v == "layerwise") return FreezeVariant::LAYERWISE;
  if (v == "no_reset") return FreezeVariant::NO_RESET;
  throw ConfigError(key, "unknown variant '" + v + "'");
}

inline ImportanceMetric parse_metric(const std::string& key, const std::string& v) {
  if (v == "sum") return ImportanceMetric::SUM;
  if (v == "recent") return ImportanceMetric::RECENT;
  if (v == "variance") return ImportanceMetric::VARIANCE;
  if (v == "ema") return ImportanceMetric::EMA;
  if (v == "fisher") return ImportanceMetric::FISHER;
  throw ConfigError(key, "unknown importance metric '" + v + "'");
}

inline ExperimentConfig config_from_map(const std::map<std::string, std::string>& kv) {
  ExperimentConfig c;
  for (const auto& [key, value] : kv) {
    using detail::to_bool;
    using detail::to_double;
    using detail::to_int;
    if (key == "task.kind") {
      if (value != "vqe" && value != "parity" && value != "mnist") {
        throw ConfigError(key, "must be vqe, parity or mnist");
      }
      c.task_kind = value;
    } else if (key == "circuit.n_qubits") c.n_qubits = static_cast<int>(to_int(key, value));
    else if (key == "circuit.n_layers") c.n_layers = static_cast<int>(to_int(key, value));
    else if (key == "task.j") c.coupling_j = to_double(key, value);
    else if (key == "task.h") c.field_h = to_double(key, value);
    else if (key == "task.parity.size") c.parity_size = to_int(key, value);
    else if (key == "task.parity.data_seed") c.parity_data_seed = static_cast<std::uint64_t>(to_int(key, value));
    else if (key == "task.mnist.train_images") c.mnist_train_images = value;
    else if (key == "task.mnist.train_labels") c.mnist_train_labels = value;
    else if (key == "task.mnist.class_a") c.mnist_class_a = static_cast<int>(to_int(key, value));
    else if (key == "task.mnist.class_b") c.mnist_class_b = static_cast<int>(to_int(key, value));
    else if (key == "task.mnist.train_count") c.mnist_train_count = to_int(key, value);
    else if (key == "task.mnist.test_count") c.mnist_test_count = to_int(key, value);
    else if (key == "task.batch") c.batch = static_cast<int>(to_int(key, value));
    else if (key == "optim.base") {
      if (value != "sgd" && value != "adam" && value != "spsa" && value != "nelder_mead") {
        throw ConfigError(key, "must be sgd, adam, spsa or nelder_mead");
      }
      c.base = value;
    } else if (key == "optim.variant") c.freeze.variant = parse_variant(key, value);
    else if (key == "optim.lambda_f") c.freeze.lambda_f = to_double(key, value);
    else if (key == "optim.tau") c.freeze.tau = static_cast<int>(to_int(key, value));
    else if (key == "optim.epsilon") c.freeze.epsilon = to_double(key, value);
    else if (key == "optim.metric") c.freeze.metric = parse_metric(key, value);
    else if (key == "optim.ema_beta") c.freeze.ema_beta = to_double(key, value);
    else if (key == "optim.eta") c.eta = to_double(key, value);
    else if (key == "optim.beta1") c.beta1 = to_double(key, value);
    else if (key == "optim.beta2") c.beta2 = to_double(key, value);
    else if (key == "optim.eps_adam") c.eps_adam = to_double(key, value);
    else if (key == "optim.amsgrad") c.amsgrad = to_bool(key, value);
    else if (key == "optim.spsa.a") c.spsa.a = to_double(key, value);
    else if (key == "optim.spsa.c") c.spsa.c = to_double(key, value);
    else if (key == "optim.spsa.big_a") c.spsa.stability = to_double(key, value);
    else if (key == "shots.mode") {
      if (value == "exact") c.exact = true;
      else if (value == "sampled") c.exact = false;
      else throw ConfigError(key, "must be exact or sampled");
    } else if (key == "shots.m") c.shots_m = to_int(key, value);
    else if (key == "noise.enabled") c.noise_enabled = to_bool(key, value);
    else if (key.rfind("noise.", 0) == 0) {
      // handled in the second pass below, once n_qubits is known
      static const std::vector<std::string> known = {
          "noise.t1", "noise.t2", "noise.gate_time_1q", "noise.gate_time_2q",
          "noise.depol_1q", "noise.depol_2q", "noise.idle_error", "noise.readout_flip"};
      if (std::find(known.begin(), known.end(), key) == known.end()) {
        throw ConfigError(key, "unknown key");
      }
    } else if (key == "budget.max_forward_passes") c.budget.max_forward_passes = to_int(key, value);
    else if (key == "budget.max_steps") c.budget.max_steps = to_int(key, value);
    else if (key == "seeds") {
      c.seeds = detail::to_list<std::uint64_t>(key, value, [](const std::string& k, const std::string& s) {
        return static_cast<std::uint64_t>(detail::to_int(k, s));
      });
    } else if (key == "target.kind") {
      if (value != "auto" && value != "energy" && value != "accuracy" && value != "loss" &&
          value != "none") {
        throw ConfigError(key, "must be auto, energy, accuracy, loss or none");
      }
      c.target_kind = value;
    } else if (key == "target.value") c.target_value = to_double(key, value);
    else if (key == "conv.tol_e") c.tol_e = to_double(key, value);
    else if (key == "conv.patience") c.patience = static_cast<int>(to_int(key, value));
    else if (key == "conv.min_improvement") c.min_improvement = to_double(key, value);
    else if (key == "seconds_per_fp") c.seconds_per_fp = to_double(key, value);
    else if (key == "out.dir") c.out_dir = value;
    else if (key == "metric_every") c.metric_every = static_cast<int>(to_int(key, value));
    else if (key == "grid.lambda_f") {
      c.grid_lambda_f = detail::to_list<double>(key, value, detail::to_double);
    } else if (key == "grid.tau") {
      c.grid_tau = detail::to_list<int>(key, value, [](const std::string& k, const std::string& s) {
        return static_cast<int>(detail::to_int(k, s));
      });
    } else {
      throw ConfigError(key, "unknown key");
    }
  }
  if (c.noise_enabled) {
    // start from the preset, then apply explicit overrides
    c.noise = default_noise_preset(c.n_qubits);
    for (const auto& [key, value] : kv) {
      using detail::to_double;
      if (key == "noise.t1") c.noise.t1 = to_double(key, value);
      else if (key == "noise.t2") c.noise.t2 = to_double(key, value);
      else if (key == "noise.gate_time_1q") c.noise.gate_time_1q = to_double(key, value);
      else if (key == "noise.gate_time_2q") c.noise.gate_time_2q = to_double(key, value);
      else if (key == "noise.depol_1q") c.noise.depol_1q = to_double(key, value);
      else if (key == "noise.depol_2q") c.noise.depol_2q = to_double(key, value);
      else if (key == "noise.idle_error") c.noise.idle_error = to_double(key, value);
      else if (key == "noise.readout_flip") {
        const double f = to_double(key, value);
        c.noise.readout_confusion.assign(c.n_qubits, {1.0 - f, f, f, 1.0 - f});
      }
    }
    try {
      validate_noise_model(c.noise);
    } catch (const std::exception& e) {
      throw ConfigError("noise", e.what());
    }
  }
  // basic cross-field validation with key attribution
  if (c.n_qubits < 1 || c.n_qubits > kMaxQubits) throw ConfigError("circuit.n_qubits", "out of range");
  if (c.n_layers < 1) throw ConfigError("circuit.n_layers", "must be >= 1");
  if (c.batch < 1) throw ConfigError("task.batch", "must be >= 1");
  if (c.seeds.empty()) throw ConfigError("seeds", "must not be empty");
  if (!c.exact && c.shots_m < 1) throw ConfigError("shots.m", "must be >= 1 in sampled mode");
  try {
    validate_freeze_config(c.freeze);
  } catch (const std::exception& e) {
    throw ConfigError("optim", e.what());
  }
  if ((c.base == "spsa" || c.base == "nelder_mead") && c.freeze.variant != FreezeVariant::NONE) {
    throw ConfigError("optim.variant", "gradient-free optimizers do not take a freeze variant");
  }
  if (c.task_kind == "mnist" && (c.mnist_train_images.empty() || c.mnist_train_labels.empty())) {
    throw ConfigError("task.mnist.train_images", "mnist task needs IDX image and label paths");
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  return config_from_map(parse_config_file(path));
}

// ---------------------------------------------------------------------------
// canonical serialization (drives the config hash and the record echo)

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string canonical_config(const ExperimentConfig& c) {
  std::ostringstream out;
  out << "task.kind=" << c.task_kind << ";n_qubits=" << c.n_qubits << ";n_layers=" << c.n_layers
      << ";j=" << fmt_double(c.coupling_j) << ";h=" << fmt_double(c.field_h)
      << ";parity_size=" << c.parity_size << ";parity_seed=" << c.parity_data_seed
      << ";mnist=" << c.mnist_train_images << "," << c.mnist_train_labels << ","
      << c.mnist_class_a << "," << c.mnist_class_b << "," << c.mnist_train_count << ","
      << c.mnist_test_count << ";batch=" << c.batch << ";base=" << c.base
      << ";variant=" << variant_name(c.freeze.variant)
      << ";lambda_f=" << fmt_double(c.freeze.lambda_f) << ";tau=" << c.freeze.tau
      << ";epsilon=" << fmt_double(c.freeze.epsilon) << ";metric=" << metric_name(c.freeze.metric)
      << ";ema_beta=" << fmt_double(c.freeze.ema_beta) << ";eta=" << fmt_double(c.eta)
      << ";beta1=" << fmt_double(c.beta1) << ";beta2=" << fmt_double(c.beta2)
      << ";eps_adam=" << fmt_double(c.eps_adam) << ";amsgrad=" << c.amsgrad
      << ";spsa=" << fmt_double(c.spsa.a) << "," << fmt_double(c.spsa.c) << ","
      << fmt_double(c.spsa.stability) << ";exact=" << c.exact << ";m=" << c.shots_m
      << ";noise=" << c.noise_enabled;
  if (c.noise_enabled) {
    out << "," << fmt_double(c.noise.t1) << "," << fmt_double(c.noise.t2) << ","
        << fmt_double(c.noise.gate_time_1q) << "," << fmt_double(c.noise.gate_time_2q) << ","
        << fmt_double(c.noise.depol_1q) << "," << fmt_double(c.noise.depol_2q) << ","
        << fmt_double(c.noise.idle_error);
  }
  out << ";budget=" << c.budget.max_forward_passes << "," << c.budget.max_steps
      << ";target=" << c.target_kind << "," << fmt_double(c.target_value)
      << ";tol_e=" << fmt_double(c.tol_e) << ";patience=" << c.patience
      << ";min_improvement=" << fmt_double(c.min_improvement)
      << ";seconds_per_fp=" << fmt_double(c.seconds_per_fp) << ";metric_every=" << c.metric_every;
  return out.str();
}

inline std::string config_hash(const ExperimentConfig& c) {
  // FNV-1a, printed as hex
  const std::string s = canonical_config(c);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// single runs

struct PreparedTask {
  std::shared_ptr<const VqeTask> vqe;
  std::shared_ptr<const ParityTask> parity;
  std::shared_ptr<const MnistTask> mnist;
  int n_params = 0;
  double vqe_ground_energy = std::nan("");
};

inline PreparedTask prepare_task(const ExperimentConfig& c) {
  BackendConfig backend;
  backend.noisy = c.noise_enabled;
  backend.noise = c.noise;
  backend.shots = c.exact ? kExactShots : c.shots_m;
  PreparedTask p;
  if (c.task_kind == "vqe") {
    p.vqe = std::make_shared<VqeTask>(
        make_vqe_task(c.n_qubits, c.n_layers, c.coupling_j, c.field_h, backend));
    p.n_params = p.vqe->circuit.n_params;
    p.vqe_ground_energy = p.vqe->target_energy;
  } else if (c.task_kind == "parity") {
    auto data = generate_parity_dataset(c.n_qubits, c.parity_size, c.parity_data_seed);
    p.parity = std::make_shared<ParityTask>(
        make_parity_task(c.n_qubits, c.n_layers, std::move(data), backend));
    p.n_params = p.parity->circuit.n_params;
  } else {
    p.mnist = std::make_shared<MnistTask>(make_mnist_task(
        c.mnist_train_images, c.mnist_train_labels, c.n_qubits, c.n_layers, c.mnist_class_a,
        c.mnist_class_b, static_cast<std::size_t>(c.mnist_train_count),
        static_cast<std::size_t>(c.mnist_test_count), backend));
    p.n_params = p.mnist->circuit.n_params;
  }
  return p;
}

inline Convergence convergence_for(const ExperimentConfig& c, const PreparedTask& task) {
  Convergence conv;
  conv.patience = c.patience;
  conv.min_improvement = c.min_improvement;
  std::string kind = c.target_kind;
  if (kind == "auto") {
    if (c.task_kind == "vqe") kind = "energy";
    else if (c.task_kind == "parity") kind = "accuracy";
    else kind = "none";
  }
  if (kind == "none") return conv;
  if (kind == "energy") {
    conv.target = std::isnan(c.target_value) ? task.vqe_ground_energy : c.target_value;
    conv.tol = c.tol_e;
  } else if (kind == "accuracy") {
    conv.target = std::isnan(c.target_value) ? 1.0 : c.target_value;
    conv.target_is_metric = true;
  } else {  // loss
    if (std::isnan(c.target_value)) throw ConfigError("target.value", "loss target needs a value");
    conv.target = c.target_value;
  }
  return conv;
}

struct RunRecord {
  std::uint64_t seed = 0;
  ExperimentConfig config;
  TrainResult result;
};

inline TrainingProblem problem_for(const PreparedTask& task, const ExperimentConfig& c,
                                   std::uint64_t seed) {
  if (task.vqe) return make_problem(task.vqe, seed);
  if (task.parity) return make_problem(task.parity, seed, c.batch);
  return make_problem(task.mnist, seed, c.batch);
}

inline BaseOptimizerState base_state_for(const ExperimentConfig& c) {
  if (c.base == "sgd") {
    SgdState s;
    s.eta = std::isnan(c.eta) ? 0.1 : c.eta;
    return s;
  }
  AdamState a;
  a.eta = std::isnan(c.eta) ? 0.01 : c.eta;
  a.beta1 = c.beta1;
  a.beta2 = c.beta2;
  a.epsilon = c.eps_adam;
  a.amsgrad = c.amsgrad;
  return a;
}

inline RunRecord run_single(const PreparedTask& task, const ExperimentConfig& c,
                            std::uint64_t seed, bool record_param_trace = false) {
  const TrainingProblem problem = problem_for(task, c, seed);
  const std::vector<double> init = initial_params(problem.n_params, seed);
  const Convergence conv = convergence_for(c, task);
  TrainOptions opts;
  opts.seconds_per_fp = c.seconds_per_fp;
  opts.record_param_trace = record_param_trace;
  opts.metric_every = c.metric_every;

  RunRecord rec;
  rec.seed = seed;
  rec.config = c;
  if (c.base == "spsa") {
    rec.result = train_spsa(problem, init, c.spsa, c.budget, conv, seed, opts);
  } else if (c.base == "nelder_mead") {
    EvalCounter counter(c.seconds_per_fp);
    Rng data_rng(mix_seed(seed, 1));
    const CostFunctional cost = problem.bind_instance(data_rng);
    TrainResult res;
    const std::int64_t fp_budget =
        c.budget.max_forward_passes >= 0 ? c.budget.max_forward_passes : 100000;
    res.params = nelder_mead_minimize(cost, init, fp_budget, counter, &res.steps);
    res.final_loss = res.steps.empty() ? cost.eval(init) : res.steps.back().loss;
    if (conv.target && !conv.target_is_metric) {
      for (const auto& row : res.steps) {
        if (row.loss <= *conv.target + conv.tol) {
          res.target_reached = true;
          res.fp_to_target = row.forward_passes;
          break;
        }
      }
    }
    res.converged = res.target_reached;
    res.budget_exhausted = !res.target_reached;
    res.counter = counter.snapshot();
    rec.result = std::move(res);
  } else {
    rec.result = train(problem, init, c.freeze, base_state_for(c), c.budget, conv, seed, opts);
  }
  return rec;
}

// ---------------------------------------------------------------------------
// output files

inline void write_trace_csv(const std::string& path, const TrainResult& res) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "step,window,n_active,loss,forward_passes,shots,wall_estimate_s\n";
  for (const auto& r : res.steps) {
    out << r.step << ',' << r.window << ',' << r.n_active << ',' << fmt_double(r.loss) << ','
        << r.forward_passes << ',' << r.shots << ',' << fmt_double(r.wall_estimate_s) << '\n';
  }
}

inline nlohmann::json record_json(const RunRecord& rec) {
  const ExperimentConfig& c = rec.config;
  nlohmann::json j;
  j["config_hash"] = config_hash(c);
  j["task"] = c.task_kind;
  j["n_qubits"] = c.n_qubits;
  j["n_layers"] = c.n_layers;
  j["optimizer"] = c.base;
  j["variant"] = variant_name(c.freeze.variant);
  j["metric"] = metric_name(c.freeze.metric);
  j["lambda_f"] = c.freeze.lambda_f;
  j["tau"] = c.freeze.tau;
  j["seed"] = rec.seed;
  j["fp_to_target"] = rec.result.fp_to_target;
  if (!std::isnan(rec.result.max_metric)) j["max_accuracy"] = rec.result.max_metric;
  j["final_loss"] = rec.result.final_loss;
  j["forward_passes"] = rec.result.counter.forward_passes;
  j["shots"] = rec.result.counter.shots_consumed;
  j["wall_estimate_s"] = rec.result.counter.wall_clock_estimate_s;
  j["converged"] = rec.result.converged;
  j["target_reached"] = rec.result.target_reached;
  j["budget_exhausted"] = rec.result.budget_exhausted;
  j["steps"] = rec.result.steps.size();
  return j;
}

inline void write_record(const std::string& dir, const RunRecord& rec) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::string stem = config_hash(rec.config) + "_seed" + std::to_string(rec.seed);
  write_trace_csv(dir + "/trace_" + stem + ".csv", rec.result);
  std::ofstream out(dir + "/record_" + stem + ".json");
  if (!out) throw std::runtime_error("cannot write record for seed " + std::to_string(rec.seed));
  out << record_json(rec).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// aggregation helpers

inline double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// fp_to_target medians treat unreached runs as +infinity
inline double median_fp(const std::vector<RunRecord>& recs) {
  std::vector<double> v;
  for (const auto& r : recs) {
    v.push_back(r.result.fp_to_target >= 0 ? static_cast<double>(r.result.fp_to_target)
                                           : std::numeric_limits<double>::infinity());
  }
  return median(std::move(v));
}

inline double coefficient_of_variation(const std::vector<RunRecord>& recs) {
  std::vector<double> v;
  for (const auto& r : recs) {
    if (r.result.fp_to_target >= 0) v.push_back(static_cast<double>(r.result.fp_to_target));
  }
  if (v.size() < 2) return std::nan("");
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  return mean != 0.0 ? std::sqrt(var) / mean : std::nan("");
}

// ---------------------------------------------------------------------------
// worker pool over independent jobs

inline void parallel_for(std::size_t n_jobs, int n_workers, const std::function<void(std::size_t)>& job) {
  if (n_workers <= 1 || n_jobs <= 1) {
    for (std::size_t i = 0; i < n_jobs; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(n_jobs);
  const int workers = std::min<int>(n_workers, static_cast<int>(n_jobs));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n_jobs) return;
        try {
          job(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// ---------------------------------------------------------------------------
// subcommands

struct RunSummary {
  std::vector<RunRecord> records;
  double median_fp_to_target = std::nan("");
  double cv_fp_to_target = std::nan("");
  int reached = 0;
};

// One RunRecord per seed plus the aggregate; files land in config.out_dir.
inline RunSummary run_experiment(const ExperimentConfig& config, int n_workers = 1,
                                 bool write_files = true) {
  const PreparedTask task = prepare_task(config);
  RunSummary summary;
  summary.records.resize(config.seeds.size());
  parallel_for(config.seeds.size(), n_workers, [&](std::size_t i) {
    summary.records[i] = run_single(task, config, config.seeds[i]);
  });
  summary.median_fp_to_target = median_fp(summary.records);
  summary.cv_fp_to_target = coefficient_of_variation(summary.records);
  for (const auto& r : summary.records) {
    if (r.result.target_reached) ++summary.reached;
  }
  if (write_files) {
    for (const auto& r : summary.records) write_record(config.out_dir, r);
    nlohmann::json j;
    j["config_hash"] = config_hash(config);
    j["median_fp_to_target"] = summary.median_fp_to_target;
    j["cv_fp_to_target"] = std::isnan(summary.cv_fp_to_target) ? nlohmann::json()
                                                               : nlohmann::json(summary.cv_fp_to_target);
    j["seeds"] = config.seeds;
    j["reached"] = summary.reached;
    std::ofstream out(config.out_dir + "/summary_" + config_hash(config) + ".json");
    out << j.dump(2) << '\n';
  }
  return summary;
}

struct AblationRow {
  FreezeVariant variant;
  double median_fp = std::nan("");
  double median_final_loss = std::nan("");
  std::vector<RunRecord> records;
};

// All freezing variants on shared seeds and shared initial parameters
// (initialization depends only on the seed).
inline std::vector<AblationRow> ablate_experiment(const ExperimentConfig& config,
                                                  int n_workers = 1, bool write_files = true) {
  const std::vector<FreezeVariant> variants = {FreezeVariant::WSBD, FreezeVariant::DBD,
                                               FreezeVariant::SBD, FreezeVariant::LAYERWISE,
                                               FreezeVariant::NO_RESET};
  const PreparedTask task = prepare_task(config);
  std::vector<AblationRow> rows(variants.size());
  const std::size_t per = config.seeds.size();
  std::vector<ExperimentConfig> configs(variants.size(), config);
  for (std::size_t v = 0; v < variants.size(); ++v) {
    configs[v].freeze.variant = variants[v];
    rows[v].variant = variants[v];
    rows[v].records.resize(per);
  }
  parallel_for(variants.size() * per, n_workers, [&](std::size_t i) {
    const std::size_t v = i / per;
    const std::size_t s = i % per;
    rows[v].records[s] = run_single(task, configs[v], config.seeds[s]);
  });
  for (auto& row : rows) {
    row.median_fp = median_fp(row.records);
    std::vector<double> losses;
    for (const auto& r : row.records) losses.push_back(r.result.final_loss);
    row.median_final_loss = median(std::move(losses));
  }
  std::sort(rows.begin(), rows.end(), [](const AblationRow& a, const AblationRow& b) {
    if (a.median_fp != b.median_fp) return a.median_fp < b.median_fp;
    return static_cast<int>(a.variant) < static_cast<int>(b.variant);
  });
  if (write_files) {
    namespace fs = std::filesystem;
    fs::create_directories(config.out_dir);
    for (const auto& row : rows) {
      for (const auto& r : row.records) write_record(config.out_dir, r);
    }
    std::ofstream out(config.out_dir + "/ablation_" + config_hash(config) + ".csv");
    out << "variant,seed,fp_to_target,final_loss,max_accuracy\n";
    for (const auto& row : rows) {
      for (const auto& r : row.records) {
        out << variant_name(row.variant) << ',' << r.seed << ',' << r.result.fp_to_target << ','
            << fmt_double(r.result.final_loss) << ','
            << (std::isnan(r.result.max_metric) ? "" : fmt_double(r.result.max_metric)) << '\n';
      }
    }
  }
  return rows;
}

struct GridCell {
  double lambda_f = 0.0;
  int tau = 0;
  double median_fp = std::nan("");
  double median_final_loss = std::nan("");
};

inline std::vector<GridCell> grid_experiment(const ExperimentConfig& config,
                                             std::span<const double> lambdas,
                                             std::span<const int> taus, int n_workers = 1,
                                             bool write_files = true) {
  if (lambdas.empty() || taus.empty()) {
    throw ConfigError("grid.lambda_f", "grid lists must be non-empty");
  }
  const PreparedTask task = prepare_task(config);
  std::vector<GridCell> cells;
  std::vector<ExperimentConfig> configs;
  for (double lf : lambdas) {
    for (int tau : taus) {
      ExperimentConfig c = config;
      c.freeze.lambda_f = lf;
      c.freeze.tau = tau;
      if (c.freeze.variant == FreezeVariant::NONE) c.freeze.variant = FreezeVariant::WSBD;
      configs.push_back(std::move(c));
      cells.push_back(GridCell{lf, tau, std::nan(""), std::nan("")});
    }
  }
  const std::size_t per = config.seeds.size();
  std::vector<std::vector<RunRecord>> records(cells.size());
  for (auto& r : records) r.resize(per);
  parallel_for(cells.size() * per, n_workers, [&](std::size_t i) {
    const std::size_t cell = i / per;
    const std::size_t s = i % per;
    records[cell][s] = run_single(task, configs[cell], config.seeds[s]);
  });
  for (std::size_t i = 0; i < cells.size(); ++i) {
    cells[i].median_fp = median_fp(records[i]);
    std::vector<double> losses;
    for (const auto& r : records[i]) losses.push_back(r.result.final_loss);
    cells[i].median_final_loss = median(std::move(losses));
  }
  if (write_files) {
    namespace fs = std::filesystem;
    fs::create_directories(config.out_dir);
    for (const auto& cell_records : records) {
      for (const auto& r : cell_records) write_record(config.out_dir, r);
    }
    std::ofstream out(config.out_dir + "/grid_" + config_hash(config) + ".csv");
    out << "lambda_f,tau,median_fp_to_target,median_final_loss\n";
    for (const auto& c : cells) {
      out << fmt_double(c.lambda_f) << ',' << c.tau << ',' << fmt_double(c.median_fp) << ','
          << fmt_double(c.median_final_loss) << '\n';
    }
  }
  return cells;
}

// Merges every record_*.json under dir into one CSV; duplicates (same config
// hash and seed) are dropped, corrupt files are skipped with a warning.
inline std::string report_directory(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ostringstream out;
  out << "task,n_qubits,n_layers,optimizer,variant,metric,lambda_f,tau,seed,fp_to_target,"
         "max_accuracy,final_loss,wall_estimate_s\n";
  if (!fs::exists(dir)) return out.str();
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("record_", 0) == 0 && entry.path().extension() == ".json") {
      files.push_back(entry.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  std::map<std::pair<std::string, std::uint64_t>, bool> seen;
  for (const auto& f : files) {
    nlohmann::json j;
    try {
      std::ifstream in(f);
      if (!in) throw std::runtime_error("cannot open");
      in >> j;
      const std::string hash = j.at("config_hash").get<std::string>();
      const std::uint64_t seed = j.at("seed").get<std::uint64_t>();
      if (seen.contains({hash, seed})) continue;
      seen[{hash, seed}] = true;
      out << j.at("task").get<std::string>() << ',' << j.at("n_qubits").get<int>() << ','
          << j.at("n_layers").get<int>() << ',' << j.at("optimizer").get<std::string>() << ','
          << j.at("variant").get<std::string>() << ',' << j.at("metric").get<std::string>() << ','
          << fmt_double(j.at("lambda_f").get<double>()) << ',' << j.at("tau").get<int>() << ','
          << seed << ',' << j.at("fp_to_target").get<std::int64_t>() << ','
          << (j.contains("max_accuracy") ? fmt_double(j.at("max_accuracy").get<double>()) : "")
          << ',' << fmt_double(j.at("final_loss").get<double>()) << ','
          << fmt_double(j.at("wall_estimate_s").get<double>()) << '\n';
    } catch (const std::exception& e) {
      std::cerr << "report: skipping " << f << " (" << e.what() << ")\n";
    }
  }
  return out.str();
}

}  // namespace wsbd
