#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <numbers>
#include <set>

#include "oracles.hpp"
#include "wsbd/grad.hpp"
#include "wsbd/optim.hpp"
#include "wsbd/tasks.hpp"

using namespace wsbd;
using Catch::Matchers::WithinAbs;

namespace {

constexpr double kPi = std::numbers::pi;

// cost = <Z> after RX(theta) on one qubit, i.e. cos(theta)
CostFunctional one_qubit_cos_cost() {
  return CostFunctional{[](std::span<const double> p) { return std::cos(p[0]); }, 0};
}

CostFunctional vqe_cost_functional(std::shared_ptr<const VqeTask> task) {
  auto rng = std::make_shared<Rng>(0);
  return CostFunctional{
      [task, rng](std::span<const double> p) { return vqe_cost(p, *task, *rng); }, 0};
}

bool bits_equal(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

}  // namespace

// ---------------------------------------------------------------------------
// counting ledger

TEST_CASE("counted_cost charges passes, shots and wall time") {
  EvalCounter counter(4.74);
  CostFunctional f{[](std::span<const double>) { return 1.0; }, 1000};
  counted_cost(f, {}, counter);
  counted_cost(f, {}, counter);
  REQUIRE(counter.forward_passes() == 2);
  REQUIRE(counter.shots_consumed() == 2000);

  for (int i = 0; i < 98; ++i) counted_cost(f, {}, counter);
  REQUIRE(counter.forward_passes() == 100);
  REQUIRE_THAT(counter.wall_clock_estimate_s(), WithinAbs(474.0, 1e-9));
}

// ---------------------------------------------------------------------------
// parameter-shift gradients

TEST_CASE("psr gradient of cos") {
  EvalCounter counter;
  const MaskBits all = {1};
  std::vector<double> theta = {0.0};
  GradientVector g = psr_gradient(one_qubit_cos_cost(), theta, all, counter);
  REQUIRE_THAT(g.values[0], WithinAbs(0.0, 1e-12));

  theta[0] = kPi / 2;
  g = psr_gradient(one_qubit_cos_cost(), theta, all, counter);
  REQUIRE_THAT(g.values[0], WithinAbs(-1.0, 1e-12));
}

TEST_CASE("psr charges exactly two passes per active parameter") {
  const auto task = std::make_shared<VqeTask>(make_vqe_task(2, 1, 1.0, 1.0));
  const CostFunctional cost = vqe_cost_functional(task);
  std::vector<double> params(task->circuit.n_params, 0.3);
  EvalCounter counter;
  MaskBits mask(params.size(), 1);
  psr_gradient(cost, params, mask, counter);
  REQUIRE(counter.forward_passes() == 2 * static_cast<std::int64_t>(params.size()));

  mask.assign(params.size(), 0);
  mask[0] = mask[3] = mask[5] = mask[6] = 1;
  const std::int64_t before = counter.forward_passes();
  const GradientVector g = psr_gradient(cost, params, mask, counter);
  REQUIRE(counter.forward_passes() - before == 8);
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!mask[k]) REQUIRE(bits_equal(g.values[k], 0.0));
  }
}

TEST_CASE("psr agrees with finite differences on random circuits") {
  const struct { int n, l; } shapes[] = {{1, 1}, {2, 2}, {4, 2}};
  for (const auto& shape : shapes) {
    const auto task = std::make_shared<VqeTask>(make_vqe_task(shape.n, shape.l, 1.0, 1.0));
    const CostFunctional cost = vqe_cost_functional(task);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      Rng rng(seed);
      std::vector<double> params(task->circuit.n_params);
      for (double& p : params) p = rng.uniform(-kPi, kPi);
      EvalCounter counter;
      const GradientVector psr =
          psr_gradient(cost, params, MaskBits(params.size(), 1), counter);
      const GradientVector fd = finite_difference_gradient(cost, params, 1e-5);
      for (std::size_t k = 0; k < params.size(); ++k) {
        REQUIRE_THAT(psr.values[k], WithinAbs(fd.values[k], 1e-6));
      }
    }
  }
}

TEST_CASE("finite differences: constant cost and second-order accuracy") {
  const CostFunctional constant{[](std::span<const double>) { return 3.5; }, 0};
  const std::vector<double> p = {0.4, -1.0};
  const GradientVector g = finite_difference_gradient(constant, p, 1e-5);
  REQUIRE_THAT(g.values[0], WithinAbs(0.0, 1e-12));
  REQUIRE_THAT(g.values[1], WithinAbs(0.0, 1e-12));

  const std::vector<double> theta = {0.7};
  const double exact = -std::sin(0.7);
  const double err_big =
      std::abs(finite_difference_gradient(one_qubit_cos_cost(), theta, 1e-3).values[0] - exact);
  const double err_small =
      std::abs(finite_difference_gradient(one_qubit_cos_cost(), theta, 5e-4).values[0] - exact);
  REQUIRE(err_small < err_big);
}

TEST_CASE("gradient variance probe") {
  Circuit one_rx;
  one_rx.n_qubits = 1;
  one_rx.n_params = 1;
  one_rx.n_layers = 1;
  one_rx.layer_of = {1};
  one_rx.gates.push_back(GateInstance{GateKind::RX, {0}, 0, std::nullopt, 1});

  const Hamiltonian z = single_z_observable(1, 0);
  // Var of -sin(theta) over uniform theta is 1/2
  const auto var = gradient_variance_probe(one_rx, z, 20000, 7);
  REQUIRE_THAT(var[0], WithinAbs(0.5, 0.02));

  const auto degenerate = gradient_variance_probe(one_rx, z, 1, 7);
  REQUIRE_THAT(degenerate[0], WithinAbs(0.0, 0.0));
}

TEST_CASE("welford accumulates mean and population variance") {
  Welford w;
  for (double x : {1.0, 1.0, 1.0}) w.add(x);
  REQUIRE_THAT(w.variance_population(), WithinAbs(0.0, 1e-15));
  w.reset();
  for (double x : {1.0, 2.0, 3.0, 4.0}) w.add(x);
  REQUIRE_THAT(w.mean, WithinAbs(2.5, 1e-12));
  REQUIRE_THAT(w.variance_population(), WithinAbs(1.25, 1e-12));
}

// ---------------------------------------------------------------------------
// importance tracking and selection

TEST_CASE("active set size snaps exactly") {
  REQUIRE(active_set_size(0.7, 20) == 6);
  REQUIRE(active_set_size(0.7, 16) == 5);
  REQUIRE(active_set_size(0.7, 8) == 3);
  REQUIRE(active_set_size(0.0, 13) == 13);
  REQUIRE(active_set_size(0.9, 10) == 1);
  REQUIRE(active_set_size(0.99, 4) == 1);
}

TEST_CASE("importance metrics accumulate as specified") {
  GradientVector g;
  g.active_mask = {1};

  ImportanceTracker sum = make_tracker(1, ImportanceMetric::SUM);
  for (double x : {0.1, 0.2, -0.4}) {
    g.values = {x};
    importance_update(sum, g);
  }
  REQUIRE_THAT(sum.raw[0], WithinAbs(-0.1, 1e-15));

  ImportanceTracker var = make_tracker(1, ImportanceMetric::VARIANCE);
  for (int i = 0; i < 3; ++i) {
    g.values = {1.0};
    importance_update(var, g);
  }
  const ActiveMask all = all_active_mask(1);
  REQUIRE_THAT(finalize_scores(var, all, 1e-8)[0], WithinAbs(1e-8, 1e-20));

  ImportanceTracker ema = make_tracker(1, ImportanceMetric::EMA, 0.9);
  for (int i = 0; i < 400; ++i) {
    g.values = {1.0};
    importance_update(ema, g);
  }
  REQUIRE_THAT(ema.raw[0], WithinAbs(1.0, 1e-10));

  ImportanceTracker recent = make_tracker(1, ImportanceMetric::RECENT);
  for (double x : {0.5, -0.2, 0.9}) {
    g.values = {x};
    importance_update(recent, g);
  }
  REQUIRE_THAT(recent.raw[0], WithinAbs(0.9, 1e-15));

  ImportanceTracker fisher = make_tracker(1, ImportanceMetric::FISHER);
  for (double x : {1.0, 2.0}) {
    g.values = {x};
    importance_update(fisher, g);
  }
  REQUIRE_THAT(finalize_scores(fisher, all, 1e-8)[0], WithinAbs(2.5 + 1e-8, 1e-12));
}

TEST_CASE("finalize applies the absolute-value-plus-epsilon floor") {
  ImportanceTracker t = make_tracker(2, ImportanceMetric::SUM);
  GradientVector g;
  g.active_mask = {1, 1};
  g.values = {0.0, -0.5};
  importance_update(t, g);
  const ActiveMask all = all_active_mask(2);
  const auto scores = finalize_scores(t, all, 1e-8);
  REQUIRE_THAT(scores[0], WithinAbs(1e-8, 1e-20));
  REQUIRE_THAT(scores[1], WithinAbs(0.5 + 1e-8, 1e-15));
}

TEST_CASE("frozen parameters keep cached scores across windows") {
  ImportanceTracker t = make_tracker(2, ImportanceMetric::SUM);
  ActiveMask mask = all_active_mask(2);
  GradientVector g;
  g.active_mask = {1, 1};
  g.values = {0.3, 0.1};
  importance_update(t, g);

  FreezeConfig cfg;
  cfg.lambda_f = 0.5;
  cfg.variant = FreezeVariant::DBD;  // deterministic: keeps index 0 (higher score)
  Rng rng(1);
  freeze_event(t, mask, cfg, rng);
  REQUIRE(mask.active[0] == 1);
  REQUIRE(mask.active[1] == 0);
  const double cached = mask.cached_scores[1];
  REQUIRE_THAT(cached, WithinAbs(0.1 + cfg.epsilon, 1e-15));

  // parameter 1 stays frozen through another window; its score is untouched
  g.active_mask = mask.active;
  g.values = {0.7, 0.0};
  importance_update(t, g);
  freeze_event(t, mask, cfg, rng);
  REQUIRE_THAT(mask.cached_scores[1], WithinAbs(cached, 0.0));

  // active parameter restarted from zero after the first freeze
  REQUIRE_THAT(mask.cached_scores[0], WithinAbs(0.7 + cfg.epsilon, 1e-15));
}

TEST_CASE("no-reset variant keeps accumulating") {
  ImportanceTracker t = make_tracker(1, ImportanceMetric::SUM);
  ActiveMask mask = all_active_mask(1);
  GradientVector g;
  g.active_mask = {1};
  g.values = {0.4};
  importance_update(t, g);
  reset_scores(t, mask, FreezeVariant::NO_RESET);
  importance_update(t, g);
  REQUIRE_THAT(t.raw[0], WithinAbs(0.8, 1e-15));

  reset_scores(t, mask, FreezeVariant::WSBD);
  REQUIRE_THAT(t.raw[0], WithinAbs(0.0, 0.0));
}

TEST_CASE("selection probabilities normalize and stay positive") {
  const std::vector<double> equal = {1.0, 1.0, 1.0, 1.0};
  for (double p : selection_probabilities(equal)) REQUIRE_THAT(p, WithinAbs(0.25, 1e-15));

  const double eps = 1e-8;
  const std::vector<double> pair = {1.0 + eps, 3.0 + eps};
  const auto probs = selection_probabilities(pair);
  REQUIRE_THAT(probs[0], WithinAbs(0.25, 1e-7));
  REQUIRE_THAT(probs[1], WithinAbs(0.75, 1e-7));
  REQUIRE_THAT(probs[0] + probs[1], WithinAbs(1.0, 1e-12));

  const std::vector<double> floored = {eps, eps, eps, 1.0 + eps};
  for (double p : selection_probabilities(floored)) REQUIRE(p > 0.0);

  REQUIRE_THROWS_AS(selection_probabilities(std::vector<double>{1.0, 0.0}),
                    std::invalid_argument);
}

TEST_CASE("sampling variants produce the right cardinality") {
  const std::vector<double> probs = {0.1, 0.2, 0.3, 0.15, 0.25};
  for (auto variant : {FreezeVariant::WSBD, FreezeVariant::DBD, FreezeVariant::SBD,
                       FreezeVariant::NO_RESET}) {
    const MaskBits m = sample_active_set(probs, 2, std::uint64_t{5}, variant);
    REQUIRE(count_active(m) == 2);
  }
  // lambda_f = 0: everything stays active for every variant
  for (auto variant : {FreezeVariant::WSBD, FreezeVariant::DBD, FreezeVariant::SBD,
                       FreezeVariant::LAYERWISE, FreezeVariant::NO_RESET}) {
    const std::vector<int> layers = {1, 1, 2, 2, 3};
    const MaskBits m = sample_active_set(probs, 5, std::uint64_t{5}, variant, layers);
    REQUIRE(count_active(m) == 5);
  }
  REQUIRE_THROWS_AS(sample_active_set(probs, 0, std::uint64_t{1}, FreezeVariant::WSBD),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(sample_active_set(probs, 6, std::uint64_t{1}, FreezeVariant::WSBD),
                    std::invalid_argument);
}

TEST_CASE("dbd takes the top scores with index tie-break") {
  const std::vector<double> scores = {5.0, 1.0, 9.0, 3.0};
  const auto probs = selection_probabilities(scores);
  const MaskBits m = sample_active_set(probs, 2, std::uint64_t{0}, FreezeVariant::DBD);
  REQUIRE(m[2] == 1);
  REQUIRE(m[0] == 1);
  REQUIRE(m[1] == 0);
  REQUIRE(m[3] == 0);

  const std::vector<double> tied = {0.25, 0.25, 0.25, 0.25};
  const MaskBits tm = sample_active_set(tied, 2, std::uint64_t{0}, FreezeVariant::DBD);
  REQUIRE(tm[0] == 1);
  REQUIRE(tm[1] == 1);
}

TEST_CASE("weighted sampling matches probabilities at n_active = 1") {
  const std::vector<double> probs = {0.2, 0.3, 0.5};
  std::vector<std::int64_t> hits(3, 0);
  Rng rng(123);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const MaskBits m = sample_active_set(probs, 1, rng, FreezeVariant::WSBD);
    for (int k = 0; k < 3; ++k) {
      if (m[k]) ++hits[k];
    }
  }
  for (int k = 0; k < 3; ++k) {
    REQUIRE_THAT(static_cast<double>(hits[k]) / draws, WithinAbs(probs[k], 0.01));
  }
}

TEST_CASE("sampling is deterministic per seed") {
  const std::vector<double> probs = {0.1, 0.4, 0.2, 0.3};
  const MaskBits a = sample_active_set(probs, 2, std::uint64_t{77}, FreezeVariant::WSBD);
  const MaskBits b = sample_active_set(probs, 2, std::uint64_t{77}, FreezeVariant::WSBD);
  REQUIRE(a == b);
}

TEST_CASE("layerwise selection keeps whole layers and may overshoot") {
  const std::vector<int> layers = {1, 1, 1, 1, 2, 2, 2, 2};
  std::vector<double> scores = {9, 9, 9, 9, 1e-8, 1e-8, 1e-8, 1e-8};
  const auto aggregate = layer_aggregate_weights(scores, layers);
  REQUIRE_THAT(aggregate[1], WithinAbs(36.0, 0.0));
  REQUIRE_THAT(aggregate[2], WithinAbs(4e-8, 1e-22));

  const auto probs = selection_probabilities(scores);
  const MaskBits m = sample_active_set(probs, 3, std::uint64_t{3}, FreezeVariant::LAYERWISE, layers);
  const int active = count_active(m);
  REQUIRE(active >= 3);
  REQUIRE(active % 4 == 0);  // whole layers only
  // members of a layer are all-in or all-out
  for (int l = 1; l <= 2; ++l) {
    int seen = -1;
    for (int k = 0; k < 8; ++k) {
      if (layers[k] != l) continue;
      if (seen < 0) seen = m[k];
      REQUIRE(m[k] == seen);
    }
  }
}

// ---------------------------------------------------------------------------
// masked updates

TEST_CASE("masked sgd is plain sgd when everything is active") {
  BaseOptimizerState opt = SgdState{0.1};
  std::vector<double> params = {1.0, -2.0};
  GradientVector g;
  g.values = {0.5, -1.0};
  g.active_mask = {1, 1};
  masked_step(opt, params, g, g.active_mask);
  REQUIRE_THAT(params[0], WithinAbs(1.0 - 0.1 * 0.5, 1e-15));
  REQUIRE_THAT(params[1], WithinAbs(-2.0 + 0.1, 1e-15));
}

TEST_CASE("frozen parameters never move, any optimizer") {
  for (int which = 0; which < 2; ++which) {
    BaseOptimizerState opt;
    if (which == 0) opt = SgdState{0.1};
    else opt = AdamState{};
    std::vector<double> params = {0.123456789, -0.987654321, 2.5};
    const double frozen_value = params[1];
    GradientVector g;
    g.active_mask = {1, 0, 1};
    for (int step = 0; step < 25; ++step) {
      g.values = {0.3, 0.0, -0.2};
      masked_step(opt, params, g, g.active_mask);
      REQUIRE(bits_equal(params[1], frozen_value));
    }
  }
}

TEST_CASE("first adam step follows the bias-corrected formula") {
  AdamState adam;
  adam.eta = 0.01;
  BaseOptimizerState opt = adam;
  std::vector<double> params = {1.0};
  GradientVector g;
  g.values = {0.5};
  g.active_mask = {1};
  masked_step(opt, params, g, g.active_mask);
  // m_hat = g, v_hat = g^2 at t = 1
  const double want = 1.0 - 0.01 * 0.5 / (std::sqrt(0.25) + 1e-8);
  REQUIRE_THAT(params[0], WithinAbs(want, 1e-15));
  REQUIRE(std::get<AdamState>(opt).t == 1);
}

TEST_CASE("amsgrad keeps the running maximum of the second moment") {
  AdamState adam;
  adam.amsgrad = true;
  BaseOptimizerState opt = adam;
  std::vector<double> params = {0.0};
  GradientVector g;
  g.active_mask = {1};
  g.values = {2.0};
  masked_step(opt, params, g, g.active_mask);
  const double vmax_after_big = std::get<AdamState>(opt).v_max[0];
  g.values = {0.001};
  masked_step(opt, params, g, g.active_mask);
  REQUIRE(std::get<AdamState>(opt).v_max[0] >= vmax_after_big);
}

// ---------------------------------------------------------------------------
// the training loop

namespace {

TrainingProblem small_vqe_problem(int n, int l, std::shared_ptr<const VqeTask>* out_task = nullptr) {
  auto task = std::make_shared<VqeTask>(make_vqe_task(n, l, 1.0, 1.0));
  if (out_task != nullptr) *out_task = task;
  return make_problem(task, 0);
}

}  // namespace

TEST_CASE("lambda_f = 0 reproduces the base optimizer bit for bit") {
  const TrainingProblem problem = small_vqe_problem(2, 2);
  const std::vector<double> init = initial_params(problem.n_params, 11);
  Budget budget;
  budget.max_steps = 120;
  Convergence conv;  // no target, no patience
  TrainOptions opts;
  opts.record_param_trace = true;

  for (int which = 0; which < 2; ++which) {
    BaseOptimizerState base;
    if (which == 0) base = SgdState{0.1};
    else base = AdamState{};

    FreezeConfig none;
    none.variant = FreezeVariant::NONE;
    none.tau = 25;
    FreezeConfig wsbd0;
    wsbd0.variant = FreezeVariant::WSBD;
    wsbd0.lambda_f = 0.0;
    wsbd0.tau = 25;

    const TrainResult a = train(problem, init, none, base, budget, conv, 42, opts);
    const TrainResult b = train(problem, init, wsbd0, base, budget, conv, 42, opts);
    REQUIRE(a.steps.size() == b.steps.size());
    for (std::size_t i = 0; i < a.steps.size(); ++i) {
      REQUIRE(bits_equal(a.steps[i].loss, b.steps[i].loss));
      REQUIRE(a.steps[i].forward_passes == b.steps[i].forward_passes);
      REQUIRE(a.steps[i].n_active == b.steps[i].n_active);
      for (std::size_t k = 0; k < a.param_trace[i].size(); ++k) {
        REQUIRE(bits_equal(a.param_trace[i][k], b.param_trace[i][k]));
      }
    }
  }
}

TEST_CASE("window boundaries and freeze counts") {
  const TrainingProblem problem = small_vqe_problem(2, 1);
  const std::vector<double> init = initial_params(problem.n_params, 3);
  FreezeConfig cfg;
  cfg.variant = FreezeVariant::WSBD;
  cfg.lambda_f = 0.5;
  cfg.tau = 100;
  Budget budget;
  budget.max_steps = 250;
  const TrainResult res = train(problem, init, cfg, SgdState{0.1}, budget, {}, 7);
  REQUIRE(res.steps.size() == 250);
  // steps 1..100 all-active, 101..200 frozen after first event, 201.. after second
  REQUIRE(res.steps[0].n_active == problem.n_params);
  REQUIRE(res.steps[99].n_active == problem.n_params);
  REQUIRE(res.steps[100].n_active == active_set_size(0.5, problem.n_params));
  REQUIRE(res.steps[200].n_active == active_set_size(0.5, problem.n_params));
  REQUIRE(res.steps[100].window == 1);
  REQUIRE(res.steps[249].window == 2);
}

TEST_CASE("forward passes per step match the active-set formula") {
  const TrainingProblem problem = small_vqe_problem(2, 2);
  const std::vector<double> init = initial_params(problem.n_params, 5);
  FreezeConfig cfg;
  cfg.variant = FreezeVariant::WSBD;
  cfg.lambda_f = 0.7;
  cfg.tau = 20;
  Budget budget;
  budget.max_steps = 100;
  const TrainResult res = train(problem, init, cfg, AdamState{}, budget, {}, 9);
  std::int64_t prev = 0;
  for (const auto& row : res.steps) {
    const std::int64_t delta = row.forward_passes - prev;
    REQUIRE(delta == 2 * row.n_active + 1);
    prev = row.forward_passes;
  }
  // after the first freeze: 2 * ceil(0.3 * 16) + 1 = 11
  REQUIRE(res.steps[25].n_active == 5);
  REQUIRE(res.steps[25].forward_passes - res.steps[24].forward_passes == 11);
}

TEST_CASE("frozen parameters are immobile within each window") {
  const TrainingProblem problem = small_vqe_problem(2, 2);
  const std::vector<double> init = initial_params(problem.n_params, 21);
  FreezeConfig cfg;
  cfg.variant = FreezeVariant::WSBD;
  cfg.lambda_f = 0.5;
  cfg.tau = 30;
  Budget budget;
  budget.max_steps = 150;
  TrainOptions opts;
  opts.record_param_trace = true;
  const TrainResult res = train(problem, init, cfg, AdamState{}, budget, {}, 13, opts);

  for (std::size_t i = 1; i < res.steps.size(); ++i) {
    if (res.steps[i].window == res.steps[i - 1].window) {
      int moved = 0;
      for (std::size_t k = 0; k < res.param_trace[i].size(); ++k) {
        if (!bits_equal(res.param_trace[i][k], res.param_trace[i - 1][k])) ++moved;
      }
      REQUIRE(moved <= res.steps[i].n_active);
    }
  }
}

TEST_CASE("budget exhaustion yields a partial trace flagged incomplete") {
  const TrainingProblem problem = small_vqe_problem(2, 1);
  const std::vector<double> init = initial_params(problem.n_params, 2);
  Budget budget;
  budget.max_forward_passes = 50;  // a 2q1l step costs 2*8+1 = 17
  const TrainResult res = train(problem, init, FreezeConfig{0.7, 100, 1e-8, FreezeVariant::NONE,
                                                            ImportanceMetric::SUM, 0.9},
                                SgdState{0.1}, budget, {}, 1);
  REQUIRE(res.budget_exhausted);
  REQUIRE(res.steps.size() == 2);
  REQUIRE(res.counter.forward_passes <= 50);
}

TEST_CASE("masked sgd drives the full gradient norm to zero on a small vqe") {
  std::shared_ptr<const VqeTask> task;
  const TrainingProblem problem = small_vqe_problem(1, 2, &task);
  const CostFunctional cost = vqe_cost_functional(task);
  for (const double lambda : {0.0, 0.5}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const std::vector<double> init = initial_params(problem.n_params, seed);
      FreezeConfig cfg;
      cfg.variant = FreezeVariant::WSBD;
      cfg.lambda_f = lambda;
      cfg.tau = 100;
      Budget budget;
      budget.max_steps = 5000;
      TrainOptions opts;
      opts.record_param_trace = true;
      const TrainResult res = train(problem, init, cfg, SgdState{0.1}, budget, {}, seed, opts);
      double best_norm = std::numeric_limits<double>::infinity();
      EvalCounter scratch;
      for (std::size_t i = 99; i < res.param_trace.size(); i += 100) {
        const GradientVector g = psr_gradient(cost, res.param_trace[i],
                                              MaskBits(problem.n_params, 1), scratch);
        double norm = 0.0;
        for (double v : g.values) norm += v * v;
        best_norm = std::min(best_norm, std::sqrt(norm));
        if (best_norm < 1e-3) break;
      }
      REQUIRE(best_norm < 1e-3);
    }
  }
}

// ---------------------------------------------------------------------------
// gradient-free baselines

TEST_CASE("spsa charges two passes per step and shrinks a quadratic") {
  TrainingProblem quad;
  quad.n_params = 1;
  quad.bind_instance = [](Rng&) {
    return CostFunctional{[](std::span<const double> p) { return p[0] * p[0]; }, 0};
  };
  Budget budget;
  budget.max_steps = 100;
  double mean_final = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const std::vector<double> init = {1.0};
    const TrainResult res = train_spsa(quad, init, SpsaCoefficients{}, budget, {}, seed);
    REQUIRE(res.counter.forward_passes == 200);
    std::int64_t prev = 0;
    for (const auto& row : res.steps) {
      REQUIRE(row.forward_passes - prev == 2);
      prev = row.forward_passes;
    }
    mean_final += std::abs(res.params[0]);
  }
  mean_final /= 100.0;
  REQUIRE(mean_final < 0.5);  // started at |theta| = 1
}

TEST_CASE("nelder-mead finds the minimum of cos") {
  const CostFunctional cost = one_qubit_cos_cost();
  EvalCounter counter;
  const std::vector<double> init = {1.0};
  const std::vector<double> best = nelder_mead_minimize(cost, init, 400, counter);
  REQUIRE_THAT(best[0], WithinAbs(kPi, 1e-3));
  REQUIRE(counter.forward_passes() > 0);
  REQUIRE(counter.forward_passes() <= 400);
}

TEST_CASE("nelder-mead with zero budget returns the initial point") {
  const CostFunctional cost = one_qubit_cos_cost();
  EvalCounter counter;
  const std::vector<double> init = {1.25};
  const std::vector<double> best = nelder_mead_minimize(cost, init, 0, counter);
  REQUIRE_THAT(best[0], WithinAbs(1.25, 0.0));
  REQUIRE(counter.forward_passes() == 0);
}

TEST_CASE("probability normalization holds after every freeze event") {
  ImportanceTracker t = make_tracker(6, ImportanceMetric::SUM);
  ActiveMask mask = all_active_mask(6);
  FreezeConfig cfg;
  cfg.lambda_f = 0.5;
  cfg.variant = FreezeVariant::WSBD;
  Rng rng(5);
  Rng grads(6);
  for (int window = 0; window < 20; ++window) {
    for (int s = 0; s < 10; ++s) {
      GradientVector g;
      g.active_mask = mask.active;
      g.values.assign(6, 0.0);
      for (int k = 0; k < 6; ++k) {
        if (mask.active[k]) g.values[k] = grads.uniform(-1.0, 1.0);
      }
      importance_update(t, g);
    }
    const auto scores = finalize_scores(t, mask, cfg.epsilon);
    const auto probs = selection_probabilities(scores);
    double sum = 0.0;
    for (double p : probs) {
      REQUIRE(p > 0.0);
      sum += p;
    }
    REQUIRE_THAT(sum, WithinAbs(1.0, 1e-12));
    freeze_event(t, mask, cfg, rng);
    REQUIRE(count_active(mask.active) == active_set_size(cfg.lambda_f, 6));
  }
}
