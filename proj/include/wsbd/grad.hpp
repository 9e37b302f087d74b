// Parameter-shift-rule gradients over the active set, a finite-difference
// oracle, a barren-plateau variance probe, and the forward-pass / shot ledger
// every benchmarked evaluation is charged to.

#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "wsbd/circuit.hpp"
#include "wsbd/observables.hpp"
#include "wsbd/rng.hpp"

namespace wsbd {

using MaskBits = std::vector<std::uint8_t>;  // 1 = active, 0 = frozen

// Monotone ledger of circuit cost evaluations. Increments are atomic so the
// shifted evaluations of one gradient call may run concurrently.
class EvalCounter {
 public:
  struct Snapshot {
    std::int64_t forward_passes = 0;
    std::int64_t shots_consumed = 0;
    double wall_clock_estimate_s = 0.0;
  };

  explicit EvalCounter(double seconds_per_fp = 4.74) : seconds_per_fp_(seconds_per_fp) {}

  void add(std::int64_t forward_passes, std::int64_t shots) {
    fp_.fetch_add(forward_passes, std::memory_order_relaxed);
    shots_.fetch_add(shots, std::memory_order_relaxed);
  }

  std::int64_t forward_passes() const { return fp_.load(std::memory_order_relaxed); }
  std::int64_t shots_consumed() const { return shots_.load(std::memory_order_relaxed); }
  double seconds_per_fp() const { return seconds_per_fp_; }
  double wall_clock_estimate_s() const {
    return static_cast<double>(forward_passes()) * seconds_per_fp_;
  }

  Snapshot snapshot() const {
    return Snapshot{forward_passes(), shots_consumed(), wall_clock_estimate_s()};
  }

 private:
  std::atomic<std::int64_t> fp_{0};
  std::atomic<std::int64_t> shots_{0};
  double seconds_per_fp_;
};

// A pure cost evaluation plus its ledger price: one evaluation charges
// passes_per_eval forward passes (the batch size; 1 for single-instance
// steps) at shots_per_pass shots each, zero in exact-expectation mode.
// Charging happens only through counted_cost.
struct CostFunctional {
  std::function<double(std::span<const double>)> eval;
  std::int64_t shots_per_pass = 0;
  std::int64_t passes_per_eval = 1;
};

inline double counted_cost(const CostFunctional& cost, std::span<const double> params,
                           EvalCounter& counter) {
  counter.add(cost.passes_per_eval, cost.passes_per_eval * cost.shots_per_pass);
  return cost.eval(params);
}

struct GradientVector {
  std::vector<double> values;
  MaskBits active_mask;  // values[k] == 0 wherever active_mask[k] == 0
};

// g_k = sigma * [C(theta + pi/(4 sigma) e_k) - C(theta - pi/(4 sigma) e_k)]
// for each active k; frozen entries are exactly zero and cost nothing. The
// counter advances by exactly 2 * |active| forward passes.
inline GradientVector psr_gradient(const CostFunctional& cost, std::span<const double> params,
                                   const MaskBits& active_mask, EvalCounter& counter,
                                   std::span<const double> psr_constants = {}) {
  if (active_mask.size() != params.size()) {
    throw std::invalid_argument("psr_gradient: mask length must equal parameter count");
  }
  if (!psr_constants.empty() && psr_constants.size() != params.size()) {
    throw std::invalid_argument("psr_gradient: psr constant count mismatch");
  }
  GradientVector g;
  g.values.assign(params.size(), 0.0);
  g.active_mask = active_mask;
  std::vector<double> shifted(params.begin(), params.end());
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!active_mask[k]) continue;
    const double sigma = psr_constants.empty() ? 0.5 : psr_constants[k];
    if (!(sigma > 0.0)) {
      throw std::invalid_argument("psr_gradient: parameter " + std::to_string(k) +
                                  " has no positive shift constant");
    }
    const double shift = std::numbers::pi / (4.0 * sigma);
    shifted[k] = params[k] + shift;
    const double plus = counted_cost(cost, shifted, counter);
    shifted[k] = params[k] - shift;
    const double minus = counted_cost(cost, shifted, counter);
    shifted[k] = params[k];
    g.values[k] = sigma * (plus - minus);
  }
  return g;
}

// Central differences over every parameter; an oracle for PSR correctness.
// Not charged to the benchmark counter.
inline GradientVector finite_difference_gradient(const CostFunctional& cost,
                                                 std::span<const double> params,
                                                 double step = 1e-5) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_difference_gradient: step must be > 0");
  GradientVector g;
  g.values.assign(params.size(), 0.0);
  g.active_mask.assign(params.size(), 1);
  std::vector<double> shifted(params.begin(), params.end());
  for (std::size_t k = 0; k < params.size(); ++k) {
    shifted[k] = params[k] + step;
    const double plus = cost.eval(shifted);
    shifted[k] = params[k] - step;
    const double minus = cost.eval(shifted);
    shifted[k] = params[k];
    g.values[k] = (plus - minus) / (2.0 * step);
  }
  return g;
}

// Single-pass mean/variance accumulator.
struct Welford {
  std::int64_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++count;
    const double d = x - mean;
    mean += d / static_cast<double>(count);
    m2 += d * (x - mean);
  }

  void reset() { count = 0; mean = 0.0; m2 = 0.0; }

  double variance_population() const {
    return count > 0 ? m2 / static_cast<double>(count) : 0.0;
  }
};

// Per-parameter sample variance of the exact cost gradient over uniformly
// drawn parameter vectors in [0, 2 pi); the barren-plateau diagnostic.
inline std::vector<double> gradient_variance_probe(const Circuit& circuit,
                                                   const Hamiltonian& observable, int n_samples,
                                                   std::uint64_t rng_seed) {
  if (n_samples < 1) throw std::invalid_argument("gradient_variance_probe: n_samples must be >= 1");
  Rng rng(rng_seed);
  const CostFunctional cost{
      [&](std::span<const double> p) { return expectation(run_circuit(circuit, p), observable); },
      0};
  std::vector<Welford> acc(circuit.n_params);
  std::vector<double> params(circuit.n_params);
  const MaskBits all(circuit.n_params, 1);
  EvalCounter scratch;
  for (int s = 0; s < n_samples; ++s) {
    for (double& p : params) p = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const GradientVector g = psr_gradient(cost, params, all, scratch);
    for (int k = 0; k < circuit.n_params; ++k) acc[k].add(g.values[k]);
  }
  std::vector<double> var(circuit.n_params);
  for (int k = 0; k < circuit.n_params; ++k) var[k] = acc[k].variance_population();
  return var;
}

}  // namespace wsbd
