// Hardware-style noise model: amplitude/phase damping derived from T1/T2 and
// gate times, depolarizing errors on one- and two-qubit gates, per-layer idle
// errors, and readout confusion. The schedule interleaves Kraus channels with
// the gate list for execution on the density-matrix backend.

#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "wsbd/circuit.hpp"
#include "wsbd/observables.hpp"
#include "wsbd/qsim.hpp"

namespace wsbd {

// Times in seconds, probabilities unitless. t1 = t2 = infinity disables
// damping. readout row-major per qubit: [P(0|0), P(1|0), P(0|1), P(1|1)];
// an empty vector means ideal readout on every qubit.
struct NoiseModel {
  double t1 = std::numeric_limits<double>::infinity();
  double t2 = std::numeric_limits<double>::infinity();
  double gate_time_1q = 0.0;
  double gate_time_2q = 0.0;
  double depol_1q = 0.0;
  double depol_2q = 0.0;
  double idle_error = 0.0;
  std::vector<std::array<double, 4>> readout_confusion;
};

inline void validate_noise_model(const NoiseModel& m) {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw std::invalid_argument(std::string("NoiseModel: ") + name + " must be in [0, 1]");
    }
  };
  prob(m.depol_1q, "depol_1q");
  prob(m.depol_2q, "depol_2q");
  prob(m.idle_error, "idle_error");
  if (!(m.t1 > 0.0) || !(m.t2 > 0.0)) {
    throw std::invalid_argument("NoiseModel: t1 and t2 must be positive");
  }
  if (m.t2 > 2.0 * m.t1) {
    throw std::invalid_argument("NoiseModel: requires t2 <= 2 * t1");
  }
  if (m.gate_time_1q < 0.0 || m.gate_time_2q < 0.0) {
    throw std::invalid_argument("NoiseModel: gate times must be non-negative");
  }
  for (const auto& row : m.readout_confusion) {
    for (double p : row) prob(p, "readout entry");
    if (std::abs(row[0] + row[1] - 1.0) > 1e-12 || std::abs(row[2] + row[3] - 1.0) > 1e-12) {
      throw std::invalid_argument("NoiseModel: readout confusion rows must sum to 1");
    }
  }
}

inline NoiseModel no_noise() { return NoiseModel{}; }

// Order-of-magnitude values for a present-day superconducting device; not
// calibrated against any specific machine and fully overridable from config.
inline NoiseModel default_noise_preset(int n_qubits) {
  NoiseModel m;
  m.t1 = 200e-6;
  m.t2 = 150e-6;
  m.gate_time_1q = 50e-9;
  m.gate_time_2q = 300e-9;
  m.depol_1q = 3e-4;
  m.depol_2q = 3e-3;
  m.idle_error = 1e-4;
  m.readout_confusion.assign(n_qubits, {0.99, 0.01, 0.01, 0.99});
  validate_noise_model(m);
  return m;
}

inline std::array<double, 4> readout_row(const NoiseModel& m, int qubit) {
  if (qubit < static_cast<int>(m.readout_confusion.size())) {
    return m.readout_confusion[qubit];
  }
  return {1.0, 0.0, 0.0, 1.0};
}

// ---------------------------------------------------------------------------
// elementary channels

inline KrausChannel amplitude_damping_channel(double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw std::invalid_argument("amplitude_damping_channel: gamma must be in [0, 1]");
  }
  const double s = std::sqrt(1.0 - gamma);
  return make_channel(2, {{1, 0, 0, s}, {0, std::sqrt(gamma), 0, 0}});
}

inline KrausChannel phase_damping_channel(double lambda_pd) {
  if (!(lambda_pd >= 0.0 && lambda_pd <= 1.0)) {
    throw std::invalid_argument("phase_damping_channel: lambda must be in [0, 1]");
  }
  const double s = std::sqrt(1.0 - lambda_pd);
  return make_channel(2, {{1, 0, 0, s}, {0, 0, 0, std::sqrt(lambda_pd)}});
}

// rho -> (1-p) rho + p I/2^k on the targeted qubits
inline KrausChannel depolarizing_channel(double p, int k_qubits) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::invalid_argument("depolarizing_channel: p must be in [0, 1]");
  }
  if (k_qubits != 1 && k_qubits != 2) {
    throw std::invalid_argument("depolarizing_channel: k_qubits must be 1 or 2");
  }
  const std::vector<std::vector<cplx>> paulis = {
      {1, 0, 0, 1},                       // I
      {0, 1, 1, 0},                       // X
      {0, cplx{0, -1}, cplx{0, 1}, 0},    // Y
      {1, 0, 0, -1},                      // Z
  };
  if (k_qubits == 1) {
    std::vector<std::vector<cplx>> ops;
    const double w0 = std::sqrt(1.0 - 3.0 * p / 4.0);
    ops.push_back({w0, 0, 0, w0});
    const double w = std::sqrt(p / 4.0);
    for (int i = 1; i < 4; ++i) {
      std::vector<cplx> k = paulis[i];
      for (auto& e : k) e *= w;
      ops.push_back(std::move(k));
    }
    return make_channel(2, std::move(ops));
  }
  std::vector<std::vector<cplx>> ops;
  const double w0 = std::sqrt(1.0 - 15.0 * p / 16.0);
  const double w = std::sqrt(p / 16.0);
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 4; ++b) {
      const double scale = (a == 0 && b == 0) ? w0 : w;
      if (scale == 0.0) continue;
      std::vector<cplx> k(16);
      for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) {
          k[r * 4 + c] = scale * paulis[a][(r >> 1) * 2 + (c >> 1)] *
                         paulis[b][(r & 1) * 2 + (c & 1)];
        }
      }
      ops.push_back(std::move(k));
    }
  }
  return make_channel(4, std::move(ops));
}

// gamma accumulated over a gate of duration t
inline double damping_gamma(double t, double t1) {
  if (t <= 0.0 || std::isinf(t1)) return 0.0;
  return 1.0 - std::exp(-t / t1);
}

// Pure-dephasing parameter over duration t, with rate 1/T_phi = 1/T2 - 1/(2 T1),
// chosen so that amplitude damping followed by this channel contracts
// off-diagonals by exactly exp(-t/T2).
inline double dephasing_lambda(double t, double t1, double t2) {
  if (t2 > 2.0 * t1) throw std::invalid_argument("dephasing_lambda: requires t2 <= 2 * t1");
  if (t <= 0.0) return 0.0;
  const double inv_t1 = std::isinf(t1) ? 0.0 : 1.0 / t1;
  const double inv_t2 = std::isinf(t2) ? 0.0 : 1.0 / t2;
  const double rate = inv_t2 - 0.5 * inv_t1;
  if (rate <= 0.0) return 0.0;
  return 1.0 - std::exp(-2.0 * t * rate);
}

// ---------------------------------------------------------------------------
// readout confusion on a basis distribution

inline std::vector<double> apply_readout_confusion(std::span<const double> probabilities,
                                                   const NoiseModel& model, int n_qubits) {
  double sum = 0.0;
  for (double p : probabilities) sum += p;
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument("apply_readout_confusion: input distribution must sum to 1");
  }
  std::vector<double> out(probabilities.begin(), probabilities.end());
  for (int q = 0; q < n_qubits; ++q) {
    const std::array<double, 4> c = readout_row(model, q);
    if (c[1] == 0.0 && c[2] == 0.0) continue;
    const std::size_t mask = std::size_t{1} << (n_qubits - 1 - q);
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (i & mask) continue;
      const double p0 = out[i];
      const double p1 = out[i | mask];
      out[i] = c[0] * p0 + c[2] * p1;
      out[i | mask] = c[1] * p0 + c[3] * p1;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// schedule

enum class NoiseCause { Gate1q, Gate2q, Idle };

struct ChannelApplication {
  KrausChannel channel;
  std::vector<int> targets;
};

// One insertion event: all channels triggered by the gate at `after_gate`
// (index into the flattened gate list), or an idle error pinned to the last
// gate of its layer.
struct NoiseEvent {
  int after_gate = -1;
  NoiseCause cause = NoiseCause::Gate1q;
  std::vector<ChannelApplication> channels;
};

struct NoisyProgram {
  std::vector<GateInstance> gates;  // encoding first, then circuit gates
  std::vector<NoiseEvent> events;   // sorted by after_gate
};

inline NoisyProgram noisy_schedule(const Circuit& circuit, std::span<const GateInstance> encoding,
                                   const NoiseModel& model) {
  validate_noise_model(model);
  NoisyProgram prog;
  prog.gates.assign(encoding.begin(), encoding.end());
  prog.gates.insert(prog.gates.end(), circuit.gates.begin(), circuit.gates.end());

  const double g1 = damping_gamma(model.gate_time_1q, model.t1);
  const double l1 = dephasing_lambda(model.gate_time_1q, model.t1, model.t2);
  const double g2 = damping_gamma(model.gate_time_2q, model.t1);
  const double l2 = dephasing_lambda(model.gate_time_2q, model.t1, model.t2);

  auto damping_for = [&](std::vector<ChannelApplication>& out, int qubit, double g, double l) {
    if (g > 0.0) out.push_back({amplitude_damping_channel(g), {qubit}});
    if (l > 0.0) out.push_back({phase_damping_channel(l), {qubit}});
  };

  std::vector<int> last_gate_of_layer(circuit.n_layers + 1, -1);
  std::vector<std::vector<bool>> touched(circuit.n_layers + 1,
                                         std::vector<bool>(circuit.n_qubits, false));

  for (int gi = 0; gi < static_cast<int>(prog.gates.size()); ++gi) {
    const GateInstance& g = prog.gates[gi];
    NoiseEvent ev;
    ev.after_gate = gi;
    if (gate_arity(g.kind) == 1) {
      ev.cause = NoiseCause::Gate1q;
      if (model.depol_1q > 0.0) {
        ev.channels.push_back({depolarizing_channel(model.depol_1q, 1), {g.qubits[0]}});
      }
      damping_for(ev.channels, g.qubits[0], g1, l1);
    } else {
      ev.cause = NoiseCause::Gate2q;
      if (model.depol_2q > 0.0) {
        ev.channels.push_back({depolarizing_channel(model.depol_2q, 2), g.qubits});
      }
      for (int q : g.qubits) damping_for(ev.channels, q, g2, l2);
    }
    if (!ev.channels.empty()) prog.events.push_back(std::move(ev));
    if (g.layer >= 1 && g.layer <= circuit.n_layers) {
      last_gate_of_layer[g.layer] = gi;
      for (int q : g.qubits) touched[g.layer][q] = true;
    }
  }

  if (model.idle_error > 0.0) {
    for (int l = 1; l <= circuit.n_layers; ++l) {
      if (last_gate_of_layer[l] < 0) continue;
      for (int q = 0; q < circuit.n_qubits; ++q) {
        if (touched[l][q]) continue;
        NoiseEvent ev;
        ev.after_gate = last_gate_of_layer[l];
        ev.cause = NoiseCause::Idle;
        ev.channels.push_back({depolarizing_channel(model.idle_error, 1), {q}});
        prog.events.push_back(std::move(ev));
      }
    }
  }
  return prog;
}

// Executes the interleaved program on the density-matrix backend. With
// validate set, trace and Hermiticity are checked after every operation.
inline DensityMatrix run_circuit_noisy(const Circuit& circuit, std::span<const double> params,
                                       std::span<const GateInstance> encoding,
                                       const NoiseModel& model, bool validate = false) {
  if (static_cast<int>(params.size()) != circuit.n_params) {
    throw std::invalid_argument("run_circuit_noisy: parameter count mismatch");
  }
  const NoisyProgram prog = noisy_schedule(circuit, encoding, model);
  DensityMatrix rho = density_from_state(zero_state(circuit.n_qubits));
  auto check = [&](const char* where) {
    if (!validate) return;
    if (std::abs(trace(rho).real() - 1.0) > kQsimTol || std::abs(trace(rho).imag()) > kQsimTol) {
      throw std::runtime_error(std::string("run_circuit_noisy: trace drift after ") + where);
    }
    if (max_hermiticity_violation(rho) > kQsimTol) {
      throw std::runtime_error(std::string("run_circuit_noisy: Hermiticity lost after ") + where);
    }
  };
  std::size_t next_event = 0;
  for (int gi = 0; gi < static_cast<int>(prog.gates.size()); ++gi) {
    const GateInstance& g = prog.gates[gi];
    apply_gate_inplace(rho, gate_matrix_for(g, params), g.qubits);
    check(gate_name(g.kind));
    while (next_event < prog.events.size() && prog.events[next_event].after_gate == gi) {
      for (const auto& app : prog.events[next_event].channels) {
        apply_channel_inplace(rho, app.channel, app.targets);
        check("channel");
      }
      ++next_event;
    }
  }
  return rho;
}

// Measured expectation on the noisy backend: per measurement group, rotate,
// push the outcome distribution through readout confusion, then either take
// the exact weighted sum (shots = kExactShots) or sample.
inline double noisy_expectation(const DensityMatrix& rho, const Hamiltonian& observable,
                                const NoiseModel& model, std::int64_t shots, Rng& rng) {
  if (rho.n_qubits != observable.n_qubits) {
    throw std::invalid_argument("noisy_expectation: dimension mismatch");
  }
  const int n = observable.n_qubits;
  double total = 0.0;
  for (const auto& t : observable.terms) {
    bool identity_only = true;
    for (Pauli p : t.letters) {
      if (p != Pauli::I) { identity_only = false; break; }
    }
    if (identity_only) total += t.coefficient;
  }
  for (const auto& g : measurement_groups(observable)) {
    std::vector<double> probs = detail::rotated_probabilities(rho, g);
    probs = apply_readout_confusion(probs, model, n);
    for (std::size_t ti : g.term_indices) {
      const auto& term = observable.terms[ti];
      std::size_t support = 0;
      for (int q = 0; q < n; ++q) {
        if (term.letters[q] != Pauli::I) support |= std::size_t{1} << (n - 1 - q);
      }
      double est = 0.0;
      if (shots == kExactShots) {
        for (std::size_t i = 0; i < probs.size(); ++i) {
          est += (std::popcount(i & support) & 1) ? -probs[i] : probs[i];
        }
      } else {
        const auto counts = sample_distribution(probs, shots, rng);
        std::int64_t signed_sum = 0;
        for (const auto& [idx, cnt] : counts) {
          const int parity = std::popcount(static_cast<std::size_t>(idx) & support) & 1;
          signed_sum += parity ? -cnt : cnt;
        }
        est = static_cast<double>(signed_sum) / static_cast<double>(shots);
      }
      total += term.coefficient * est;
    }
  }
  return total;
}

}  // namespace wsbd
