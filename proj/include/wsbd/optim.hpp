// Freezing optimizers: windowed importance scores, stochastic selection of
// the active parameter set, masked base-optimizer updates, the full training
// loop, and the gradient-free baselines (SPSA, Nelder-Mead).
//
// The training loop runs in windows of tau steps. Each step evaluates the
// cost once, computes the parameter-shift gradient restricted to the active
// set, applies a masked update, and feeds the gradient into the importance
// tracker. At a window boundary the scores are finalized to |I_k| + epsilon,
// converted into selection probabilities, and a fresh active set of size
// ceil((1 - lambda_f) |theta|) is drawn. Scores of newly active parameters
// restart at zero; parameters that stay frozen keep their cached scores.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "wsbd/grad.hpp"
#include "wsbd/rng.hpp"

namespace wsbd {

enum class FreezeVariant { NONE, WSBD, DBD, SBD, LAYERWISE, NO_RESET };
enum class ImportanceMetric { SUM, RECENT, VARIANCE, EMA, FISHER };

inline const char* variant_name(FreezeVariant v) {
  switch (v) {
    case FreezeVariant::NONE: return "none";
    case FreezeVariant::WSBD: return "wsbd";
    case FreezeVariant::DBD: return "dbd";
    case FreezeVariant::SBD: return "sbd";
    case FreezeVariant::LAYERWISE: return "layerwise";
    case FreezeVariant::NO_RESET: return "no_reset";
  }
  return "?";
}

inline const char* metric_name(ImportanceMetric m) {
  switch (m) {
    case ImportanceMetric::SUM: return "sum";
    case ImportanceMetric::RECENT: return "recent";
    case ImportanceMetric::VARIANCE: return "variance";
    case ImportanceMetric::EMA: return "ema";
    case ImportanceMetric::FISHER: return "fisher";
  }
  return "?";
}

struct FreezeConfig {
  double lambda_f = 0.7;  // fraction frozen per window, in [0, 1)
  int tau = 100;          // window length in steps
  double epsilon = 1e-8;  // score floor; keeps every selection probability positive
  FreezeVariant variant = FreezeVariant::WSBD;
  ImportanceMetric metric = ImportanceMetric::SUM;
  double ema_beta = 0.9;
};

inline void validate_freeze_config(const FreezeConfig& c) {
  if (!(c.lambda_f >= 0.0 && c.lambda_f < 1.0)) {
    throw std::invalid_argument("FreezeConfig: lambda_f must be in [0, 1)");
  }
  if (c.tau < 1) throw std::invalid_argument("FreezeConfig: tau must be >= 1");
  if (!(c.epsilon > 0.0)) throw std::invalid_argument("FreezeConfig: epsilon must be > 0");
  if (!(c.ema_beta >= 0.0 && c.ema_beta < 1.0)) {
    throw std::invalid_argument("FreezeConfig: ema_beta must be in [0, 1)");
  }
}

// N_active = ceil((1 - lambda_f) * n) computed as n - floor(lambda_f * n)
// with a snap against floating-point dust (0.3 * 20 must give exactly 6).
inline int active_set_size(double lambda_f, int n_params) {
  const int frozen = static_cast<int>(std::floor(lambda_f * n_params + 1e-9));
  return std::clamp(n_params - frozen, 1, n_params);
}

// ---------------------------------------------------------------------------
// importance tracking

struct ImportanceTracker {
  ImportanceMetric metric = ImportanceMetric::SUM;
  double ema_beta = 0.9;
  std::vector<double> raw;            // SUM / RECENT / EMA / FISHER accumulators
  std::vector<Welford> welford;       // VARIANCE state
  std::vector<std::int64_t> counts;   // updates contributed per parameter
  std::int64_t steps_in_window = 0;
};

inline ImportanceTracker make_tracker(int n_params, ImportanceMetric metric,
                                      double ema_beta = 0.9) {
  ImportanceTracker t;
  t.metric = metric;
  t.ema_beta = ema_beta;
  t.raw.assign(n_params, 0.0);
  t.welford.assign(n_params, Welford{});
  t.counts.assign(n_params, 0);
  return t;
}

struct ActiveMask {
  MaskBits active;
  std::vector<double> cached_scores;  // finalized score per parameter at the last freeze
};

inline ActiveMask all_active_mask(int n_params) {
  ActiveMask m;
  m.active.assign(n_params, 1);
  m.cached_scores.assign(n_params, 0.0);
  return m;
}

inline int count_active(const MaskBits& mask) {
  int n = 0;
  for (auto b : mask) n += b ? 1 : 0;
  return n;
}

inline void importance_update(ImportanceTracker& t, const GradientVector& grad) {
  if (grad.values.size() != t.raw.size()) {
    throw std::invalid_argument("importance_update: gradient length mismatch");
  }
  for (std::size_t k = 0; k < t.raw.size(); ++k) {
    if (!grad.active_mask[k]) continue;
    const double g = grad.values[k];
    switch (t.metric) {
      case ImportanceMetric::SUM: t.raw[k] += g; break;
      case ImportanceMetric::RECENT: t.raw[k] = g; break;
      case ImportanceMetric::VARIANCE: t.welford[k].add(g); break;
      case ImportanceMetric::EMA: t.raw[k] = t.ema_beta * t.raw[k] + (1.0 - t.ema_beta) * g; break;
      case ImportanceMetric::FISHER: t.raw[k] += g * g; break;
    }
    ++t.counts[k];
  }
  ++t.steps_in_window;
}

// Strictly positive score per parameter: |accumulated| + epsilon for active
// parameters, the cached value for parameters that stayed frozen.
inline std::vector<double> finalize_scores(const ImportanceTracker& t, const ActiveMask& mask,
                                           double epsilon) {
  std::vector<double> scores(t.raw.size());
  for (std::size_t k = 0; k < t.raw.size(); ++k) {
    if (!mask.active[k]) {
      scores[k] = mask.cached_scores[k] > 0.0 ? mask.cached_scores[k] : epsilon;
      continue;
    }
    double base = 0.0;
    switch (t.metric) {
      case ImportanceMetric::SUM:
      case ImportanceMetric::RECENT:
      case ImportanceMetric::EMA:
        base = std::abs(t.raw[k]);
        break;
      case ImportanceMetric::VARIANCE:
        base = t.welford[k].variance_population();
        break;
      case ImportanceMetric::FISHER:
        base = t.counts[k] > 0 ? t.raw[k] / static_cast<double>(t.counts[k]) : 0.0;
        break;
    }
    scores[k] = base + epsilon;
  }
  return scores;
}

inline std::vector<double> selection_probabilities(std::span<const double> scores) {
  double sum = 0.0;
  for (double s : scores) {
    if (!(s > 0.0)) {
      throw std::invalid_argument("selection_probabilities: scores must be strictly positive");
    }
    sum += s;
  }
  std::vector<double> p(scores.size());
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = scores[k] / sum;
  return p;
}

// Per-layer aggregate weight: the sum of the member parameters' values.
inline std::vector<double> layer_aggregate_weights(std::span<const double> values,
                                                   std::span<const int> param_layer) {
  if (param_layer.size() != values.size()) {
    throw std::invalid_argument("layer_aggregate_weights: layer map size mismatch");
  }
  int max_layer = 0;
  for (int l : param_layer) max_layer = std::max(max_layer, l);
  std::vector<double> weight(max_layer + 1, 0.0);
  for (std::size_t k = 0; k < values.size(); ++k) weight[param_layer[k]] += values[k];
  return weight;
}

// Weighted sampling without replacement via exponential keys: each parameter
// draws u in (0,1) and the n_active largest values of log(u)/p_k win. With
// n_active = 1 this reduces to a plain weighted choice.
inline MaskBits sample_active_set(std::span<const double> probabilities, int n_active, Rng& rng,
                                  FreezeVariant variant, std::span<const int> param_layer = {}) {
  const int n = static_cast<int>(probabilities.size());
  if (n_active < 1 || n_active > n) {
    throw std::invalid_argument("sample_active_set: n_active out of range");
  }
  MaskBits mask(n, 0);
  if (n_active == n) {
    std::fill(mask.begin(), mask.end(), 1);
    return mask;
  }
  switch (variant) {
    case FreezeVariant::NONE:
      std::fill(mask.begin(), mask.end(), 1);
      return mask;
    case FreezeVariant::WSBD:
    case FreezeVariant::NO_RESET: {
      std::vector<std::pair<double, int>> keys(n);
      for (int k = 0; k < n; ++k) {
        double u = rng.uniform();
        if (u <= 0.0) u = std::numeric_limits<double>::min();
        keys[k] = {std::log(u) / probabilities[k], k};
      }
      std::sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      for (int i = 0; i < n_active; ++i) mask[keys[i].second] = 1;
      return mask;
    }
    case FreezeVariant::DBD: {
      std::vector<int> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (probabilities[a] != probabilities[b]) return probabilities[a] > probabilities[b];
        return a < b;
      });
      for (int i = 0; i < n_active; ++i) mask[order[i]] = 1;
      return mask;
    }
    case FreezeVariant::SBD: {
      std::vector<int> pool(n);
      std::iota(pool.begin(), pool.end(), 0);
      for (int i = 0; i < n_active; ++i) {
        const std::uint64_t j = i + rng.below(static_cast<std::uint64_t>(n - i));
        std::swap(pool[i], pool[j]);
        mask[pool[i]] = 1;
      }
      return mask;
    }
    case FreezeVariant::LAYERWISE: {
      if (param_layer.size() != probabilities.size()) {
        throw std::invalid_argument("sample_active_set: layerwise variant needs a layer per parameter");
      }
      const std::vector<double> layer_weight = layer_aggregate_weights(probabilities, param_layer);
      std::vector<int> layer_size(layer_weight.size(), 0);
      for (int k = 0; k < n; ++k) ++layer_size[param_layer[k]];
      const int max_layer = static_cast<int>(layer_weight.size()) - 1;
      std::vector<std::pair<double, int>> keys;
      for (int l = 0; l <= max_layer; ++l) {
        if (layer_size[l] == 0) continue;
        double u = rng.uniform();
        if (u <= 0.0) u = std::numeric_limits<double>::min();
        keys.push_back({std::log(u) / layer_weight[l], l});
      }
      std::sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      int chosen = 0;
      for (const auto& [key, layer] : keys) {
        for (int k = 0; k < n; ++k) {
          if (param_layer[k] == layer) mask[k] = 1;
        }
        chosen += layer_size[layer];
        if (chosen >= n_active) break;
      }
      return mask;
    }
  }
  throw std::logic_error("sample_active_set: unhandled variant");
}

inline MaskBits sample_active_set(std::span<const double> probabilities, int n_active,
                                  std::uint64_t rng_seed, FreezeVariant variant,
                                  std::span<const int> param_layer = {}) {
  Rng rng(rng_seed);
  return sample_active_set(probabilities, n_active, rng, variant, param_layer);
}

// Zeroes the accumulators of active parameters; frozen parameters keep their
// state. The NO_RESET variant skips the zeroing entirely.
inline void reset_scores(ImportanceTracker& t, const ActiveMask& mask, FreezeVariant variant) {
  t.steps_in_window = 0;
  if (variant == FreezeVariant::NO_RESET) return;
  for (std::size_t k = 0; k < t.raw.size(); ++k) {
    if (!mask.active[k]) continue;
    t.raw[k] = 0.0;
    t.welford[k].reset();
    t.counts[k] = 0;
  }
}

// One window boundary: finalize, reselect, cache, reset.
inline void freeze_event(ImportanceTracker& tracker, ActiveMask& mask, const FreezeConfig& config,
                         Rng& mask_rng, std::span<const int> param_layer = {}) {
  const std::vector<double> scores = finalize_scores(tracker, mask, config.epsilon);
  const std::vector<double> probs = selection_probabilities(scores);
  const int n_active = active_set_size(config.lambda_f, static_cast<int>(scores.size()));
  mask.active = sample_active_set(probs, n_active, mask_rng, config.variant, param_layer);
  mask.cached_scores = scores;
  reset_scores(tracker, mask, config.variant);
}

// ---------------------------------------------------------------------------
// base optimizers and the masked update (Eq. 6 semantics: the base optimizer
// sees the masked gradient, and the applied update is masked again so frozen
// parameters are bit-exactly unchanged even when momentum remains).

struct SgdState {
  double eta = 0.1;
};

struct AdamState {
  double eta = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool amsgrad = false;
  std::vector<double> m;
  std::vector<double> v;
  std::vector<double> v_max;
  std::int64_t t = 0;
};

using BaseOptimizerState = std::variant<SgdState, AdamState>;

inline const char* base_optimizer_name(const BaseOptimizerState& s) {
  return std::holds_alternative<SgdState>(s) ? "sgd" : "adam";
}

inline void masked_step(BaseOptimizerState& state, std::vector<double>& params,
                        const GradientVector& grad, const MaskBits& mask) {
  const std::size_t n = params.size();
  if (grad.values.size() != n || mask.size() != n) {
    throw std::invalid_argument("masked_step: size mismatch");
  }
  if (auto* sgd = std::get_if<SgdState>(&state)) {
    for (std::size_t k = 0; k < n; ++k) {
      if (mask[k]) params[k] -= sgd->eta * grad.values[k];
    }
    return;
  }
  auto& adam = std::get<AdamState>(state);
  if (adam.m.empty()) {
    adam.m.assign(n, 0.0);
    adam.v.assign(n, 0.0);
    adam.v_max.assign(n, 0.0);
  }
  adam.t += 1;  // advances every step, frozen or not
  const double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(adam.t));
  const double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(adam.t));
  for (std::size_t k = 0; k < n; ++k) {
    const double g = grad.values[k];  // zero for frozen entries
    adam.m[k] = adam.beta1 * adam.m[k] + (1.0 - adam.beta1) * g;
    adam.v[k] = adam.beta2 * adam.v[k] + (1.0 - adam.beta2) * g * g;
    double v_eff = adam.v[k];
    if (adam.amsgrad) {
      adam.v_max[k] = std::max(adam.v_max[k], adam.v[k]);
      v_eff = adam.v_max[k];
    }
    if (!mask[k]) continue;
    const double m_hat = adam.m[k] / bc1;
    const double v_hat = v_eff / bc2;
    params[k] -= adam.eta * m_hat / (std::sqrt(v_hat) + adam.epsilon);
  }
}

// ---------------------------------------------------------------------------
// training loop

struct Budget {
  std::int64_t max_forward_passes = -1;  // < 0 means unlimited
  std::int64_t max_steps = -1;
};

// A run converges when the target is reached or when the best loss improves
// by less than min_improvement over the last `patience` steps (patience 0
// disables the plateau check). Energy/loss targets are reached when
// loss <= target + tol; metric targets when the evaluation metric >= target.
struct Convergence {
  std::optional<double> target;
  bool target_is_metric = false;
  double tol = 0.0;
  int patience = 0;
  double min_improvement = 1e-4;
};

// Everything the loop needs from a task: the per-instance cost binding (the
// data stream is drawn from data_rng), optional uncharged evaluation metric,
// and the circuit's per-parameter layer tags for the layerwise variant.
struct TrainingProblem {
  int n_params = 0;
  std::vector<int> param_layer;                                   // empty: one layer per param
  std::vector<double> psr_constants;                              // empty: all 1/2
  std::int64_t passes_per_eval = 1;                               // batch size
  std::function<CostFunctional(Rng&)> bind_instance;
  std::function<double(std::span<const double>)> eval_metric;     // optional
};

struct StepRecord {
  std::int64_t step = 0;   // 1-based
  std::int64_t window = 0; // 0-based window index
  int n_active = 0;
  double loss = 0.0;
  std::int64_t forward_passes = 0;
  std::int64_t shots = 0;
  double wall_estimate_s = 0.0;
  double metric = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<double> params;
  std::vector<std::vector<double>> param_trace;  // filled only when requested
  double final_loss = std::numeric_limits<double>::quiet_NaN();
  double best_loss = std::numeric_limits<double>::infinity();
  bool target_reached = false;
  std::int64_t fp_to_target = -1;
  double max_metric = std::numeric_limits<double>::quiet_NaN();
  std::int64_t fp_at_max_metric = -1;
  bool converged = false;
  bool budget_exhausted = false;  // stopped on budget with target unmet
  EvalCounter::Snapshot counter;
};

struct TrainOptions {
  double seconds_per_fp = 4.74;
  bool record_param_trace = false;
  int metric_every = 1;  // evaluate the uncharged metric every N steps
};

inline bool target_satisfied(const Convergence& conv, double loss, double metric) {
  if (!conv.target) return false;
  if (conv.target_is_metric) return !std::isnan(metric) && metric >= *conv.target;
  return loss <= *conv.target + conv.tol;
}

// Algorithm: windows of tau steps; per step draw a data instance, record the
// cost (the "+1" evaluation), take the masked PSR gradient over the active
// set, update parameters and importance scores; at each window boundary run
// the freeze event. The initial active set is all parameters, so the first
// freeze happens after tau steps.
inline TrainResult train(const TrainingProblem& problem, std::span<const double> initial_params,
                         const FreezeConfig& freeze, const BaseOptimizerState& base,
                         const Budget& budget, const Convergence& conv, std::uint64_t seed,
                         const TrainOptions& options = {}) {
  validate_freeze_config(freeze);
  if (static_cast<int>(initial_params.size()) != problem.n_params) {
    throw std::invalid_argument("train: initial parameter count mismatch");
  }
  EvalCounter counter(options.seconds_per_fp);
  Rng data_rng(mix_seed(seed, 1));
  Rng mask_rng(mix_seed(seed, 2));

  TrainResult res;
  res.params.assign(initial_params.begin(), initial_params.end());
  BaseOptimizerState opt = base;
  ImportanceTracker tracker = make_tracker(problem.n_params, freeze.metric, freeze.ema_beta);
  ActiveMask mask = all_active_mask(problem.n_params);

  std::vector<double> best_loss_series;
  double best_loss = std::numeric_limits<double>::infinity();

  for (std::int64_t step = 1;; ++step) {
    if (budget.max_steps >= 0 && step > budget.max_steps) {
      res.budget_exhausted = !res.target_reached;
      break;
    }
    const std::int64_t step_cost =
        (2 * count_active(mask.active) + 1) * problem.passes_per_eval;
    if (budget.max_forward_passes >= 0 &&
        counter.forward_passes() + step_cost > budget.max_forward_passes) {
      res.budget_exhausted = !res.target_reached;
      break;
    }

    const CostFunctional cost = problem.bind_instance(data_rng);
    const double loss = counted_cost(cost, res.params, counter);
    const GradientVector grad =
        psr_gradient(cost, res.params, mask.active, counter, problem.psr_constants);
    masked_step(opt, res.params, grad, mask.active);
    importance_update(tracker, grad);

    double metric = std::numeric_limits<double>::quiet_NaN();
    if (problem.eval_metric && (step % std::max(1, options.metric_every) == 0)) {
      metric = problem.eval_metric(res.params);
      if (std::isnan(res.max_metric) || metric > res.max_metric) {
        res.max_metric = metric;
        res.fp_at_max_metric = counter.forward_passes();
      }
    }

    StepRecord row;
    row.step = step;
    row.window = (step - 1) / freeze.tau;
    row.n_active = count_active(mask.active);
    row.loss = loss;
    row.forward_passes = counter.forward_passes();
    row.shots = counter.shots_consumed();
    row.wall_estimate_s = counter.wall_clock_estimate_s();
    row.metric = metric;
    res.steps.push_back(row);
    if (options.record_param_trace) res.param_trace.push_back(res.params);
    res.final_loss = loss;

    best_loss = std::min(best_loss, loss);
    res.best_loss = best_loss;
    best_loss_series.push_back(best_loss);

    if (!res.target_reached && target_satisfied(conv, loss, metric)) {
      res.target_reached = true;
      res.fp_to_target = counter.forward_passes();
    }
    if (res.target_reached) {
      res.converged = true;
      break;
    }
    if (conv.patience > 0 && static_cast<std::int64_t>(best_loss_series.size()) > conv.patience) {
      const double before = best_loss_series[best_loss_series.size() - 1 - conv.patience];
      if (before - best_loss < conv.min_improvement) {
        res.converged = true;
        break;
      }
    }

    if (freeze.variant != FreezeVariant::NONE && step % freeze.tau == 0) {
      freeze_event(tracker, mask, freeze, mask_rng, problem.param_layer);
    }
  }

  res.counter = counter.snapshot();
  return res;
}

// ---------------------------------------------------------------------------
// gradient-free baselines

struct SpsaCoefficients {
  double a = 0.1;
  double c = 0.1;
  double stability = 0.0;  // the "A" offset in a_k = a / (k + 1 + A)^0.602
  double alpha = 0.602;
  double gamma = 0.101;
};

// One simultaneous-perturbation step at index k (0-based): two counted
// evaluations at theta +/- c_k * Delta with Rademacher Delta. Returns the
// mean of the two evaluations as the loss proxy for this step.
inline double spsa_step(const CostFunctional& cost, std::vector<double>& params, std::int64_t k,
                        const SpsaCoefficients& coeff, EvalCounter& counter, Rng& rng) {
  const double ak =
      coeff.a / std::pow(static_cast<double>(k) + 1.0 + coeff.stability, coeff.alpha);
  const double ck = coeff.c / std::pow(static_cast<double>(k) + 1.0, coeff.gamma);
  std::vector<int> delta(params.size());
  for (auto& d : delta) d = rng.rademacher();
  std::vector<double> shifted(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) shifted[i] = params[i] + ck * delta[i];
  const double plus = counted_cost(cost, shifted, counter);
  for (std::size_t i = 0; i < params.size(); ++i) shifted[i] = params[i] - ck * delta[i];
  const double minus = counted_cost(cost, shifted, counter);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = (plus - minus) / (2.0 * ck * delta[i]);
    params[i] -= ak * g;
  }
  return 0.5 * (plus + minus);
}

inline TrainResult train_spsa(const TrainingProblem& problem,
                              std::span<const double> initial_params,
                              const SpsaCoefficients& coeff, const Budget& budget,
                              const Convergence& conv, std::uint64_t seed,
                              const TrainOptions& options = {}) {
  EvalCounter counter(options.seconds_per_fp);
  Rng data_rng(mix_seed(seed, 1));
  Rng perturb_rng(mix_seed(seed, 3));
  TrainResult res;
  res.params.assign(initial_params.begin(), initial_params.end());
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<double> best_loss_series;
  for (std::int64_t step = 1;; ++step) {
    if (budget.max_steps >= 0 && step > budget.max_steps) {
      res.budget_exhausted = !res.target_reached;
      break;
    }
    if (budget.max_forward_passes >= 0 &&
        counter.forward_passes() + 2 * problem.passes_per_eval > budget.max_forward_passes) {
      res.budget_exhausted = !res.target_reached;
      break;
    }
    const CostFunctional cost = problem.bind_instance(data_rng);
    const double loss = spsa_step(cost, res.params, step - 1, coeff, counter, perturb_rng);

    double metric = std::numeric_limits<double>::quiet_NaN();
    if (problem.eval_metric && (step % std::max(1, options.metric_every) == 0)) {
      metric = problem.eval_metric(res.params);
      if (std::isnan(res.max_metric) || metric > res.max_metric) {
        res.max_metric = metric;
        res.fp_at_max_metric = counter.forward_passes();
      }
    }
    StepRecord row;
    row.step = step;
    row.window = 0;
    row.n_active = problem.n_params;
    row.loss = loss;
    row.forward_passes = counter.forward_passes();
    row.shots = counter.shots_consumed();
    row.wall_estimate_s = counter.wall_clock_estimate_s();
    row.metric = metric;
    res.steps.push_back(row);
    if (options.record_param_trace) res.param_trace.push_back(res.params);
    res.final_loss = loss;

    best_loss = std::min(best_loss, loss);
    res.best_loss = best_loss;
    best_loss_series.push_back(best_loss);
    if (!res.target_reached && target_satisfied(conv, loss, metric)) {
      res.target_reached = true;
      res.fp_to_target = counter.forward_passes();
    }
    if (res.target_reached) {
      res.converged = true;
      break;
    }
    if (conv.patience > 0 && static_cast<std::int64_t>(best_loss_series.size()) > conv.patience) {
      const double before = best_loss_series[best_loss_series.size() - 1 - conv.patience];
      if (before - best_loss < conv.min_improvement) {
        res.converged = true;
        break;
      }
    }
  }
  res.counter = counter.snapshot();
  return res;
}

// Standard Nelder-Mead with reflection 1, expansion 2, contraction 0.5 and
// shrink 0.5. The simplex starts at the initial point with one extra vertex
// offset by 0.1 rad per coordinate; every vertex evaluation is counted
// against the forward-pass budget. A zero budget returns the initial point.
inline std::vector<double> nelder_mead_minimize(const CostFunctional& cost,
                                                std::span<const double> initial_params,
                                                std::int64_t max_forward_passes,
                                                EvalCounter& counter,
                                                std::vector<StepRecord>* trace = nullptr) {
  const std::size_t n = initial_params.size();
  std::vector<double> initial(initial_params.begin(), initial_params.end());
  if (max_forward_passes <= 0 || max_forward_passes < static_cast<std::int64_t>(n) + 1) {
    return initial;
  }
  std::int64_t used = 0;
  auto can_eval = [&](std::int64_t k) { return used + k <= max_forward_passes; };
  auto eval = [&](const std::vector<double>& x) {
    ++used;
    return counted_cost(cost, x, counter);
  };

  std::vector<std::vector<double>> simplex;
  std::vector<double> value;
  simplex.push_back(initial);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v = initial;
    v[i] += 0.1;
    simplex.push_back(std::move(v));
  }
  for (const auto& v : simplex) value.push_back(eval(v));

  auto record = [&]() {
    if (trace == nullptr) return;
    const std::size_t best = static_cast<std::size_t>(
        std::min_element(value.begin(), value.end()) - value.begin());
    StepRecord row;
    row.step = static_cast<std::int64_t>(trace->size()) + 1;
    row.n_active = static_cast<int>(n);
    row.loss = value[best];
    row.forward_passes = counter.forward_passes();
    row.shots = counter.shots_consumed();
    row.wall_estimate_s = counter.wall_clock_estimate_s();
    trace->push_back(row);
  };
  record();

  while (can_eval(1)) {
    std::vector<std::size_t> order(simplex.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (value[a] != value[b]) return value[a] < value[b];
      return a < b;
    });
    const std::size_t best = order.front();
    const std::size_t worst = order.back();
    const std::size_t second_worst = order[order.size() - 2];

    std::vector<double> centroid(n, 0.0);
    for (std::size_t oi = 0; oi + 1 < order.size(); ++oi) {
      for (std::size_t i = 0; i < n; ++i) centroid[i] += simplex[order[oi]][i];
    }
    for (double& c : centroid) c /= static_cast<double>(n);

    std::vector<double> reflected(n);
    for (std::size_t i = 0; i < n; ++i) {
      reflected[i] = centroid[i] + (centroid[i] - simplex[worst][i]);
    }
    const double f_reflected = eval(reflected);

    if (f_reflected < value[best]) {
      if (!can_eval(1)) {
        if (f_reflected < value[worst]) { simplex[worst] = reflected; value[worst] = f_reflected; }
        record();
        break;
      }
      std::vector<double> expanded(n);
      for (std::size_t i = 0; i < n; ++i) {
        expanded[i] = centroid[i] + 2.0 * (reflected[i] - centroid[i]);
      }
      const double f_expanded = eval(expanded);
      if (f_expanded < f_reflected) {
        simplex[worst] = std::move(expanded);
        value[worst] = f_expanded;
      } else {
        simplex[worst] = std::move(reflected);
        value[worst] = f_reflected;
      }
    } else if (f_reflected < value[second_worst]) {
      simplex[worst] = std::move(reflected);
      value[worst] = f_reflected;
    } else {
      if (!can_eval(1)) { record(); break; }
      std::vector<double> contracted(n);
      for (std::size_t i = 0; i < n; ++i) {
        contracted[i] = centroid[i] + 0.5 * (simplex[worst][i] - centroid[i]);
      }
      const double f_contracted = eval(contracted);
      if (f_contracted < value[worst]) {
        simplex[worst] = std::move(contracted);
        value[worst] = f_contracted;
      } else {
        if (!can_eval(static_cast<std::int64_t>(n))) { record(); break; }
        for (std::size_t oi = 1; oi < order.size(); ++oi) {
          const std::size_t v = order[oi];
          for (std::size_t i = 0; i < n; ++i) {
            simplex[v][i] = simplex[best][i] + 0.5 * (simplex[v][i] - simplex[best][i]);
          }
          value[v] = eval(simplex[v]);
        }
      }
    }
    record();
  }

  const std::size_t best = static_cast<std::size_t>(
      std::min_element(value.begin(), value.end()) - value.begin());
  return simplex[best];
}

}  // namespace wsbd
