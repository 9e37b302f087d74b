// Circuit intermediate representation: an ordered gate list with parameter
// slots and layer tags, the hardware-efficient ansatz builder, and the two
// input encodings (angle rotations and basis flips).

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "wsbd/qsim.hpp"

namespace wsbd {

enum class GateKind { RX, RZ, X, H, CNOT, CZ };

inline bool is_rotation(GateKind k) { return k == GateKind::RX || k == GateKind::RZ; }

inline int gate_arity(GateKind k) {
  return (k == GateKind::CNOT || k == GateKind::CZ) ? 2 : 1;
}

// Parameter-shift constant for Pauli-generated rotations; the shift angle is
// pi / (4 * psr_constant) = pi/2.
inline double psr_constant(GateKind k) {
  if (!is_rotation(k)) {
    throw std::invalid_argument("psr_constant: gate kind is not a rotation");
  }
  return 0.5;
}

inline const char* gate_name(GateKind k) {
  switch (k) {
    case GateKind::RX: return "rx";
    case GateKind::RZ: return "rz";
    case GateKind::X: return "x";
    case GateKind::H: return "h";
    case GateKind::CNOT: return "cnot";
    case GateKind::CZ: return "cz";
  }
  return "?";
}

// A rotation gate carries exactly one of param_slot (trainable) or
// fixed_angle (encoding); constant gates carry neither. layer is 1-based for
// ansatz gates and 0 for encoding or free-standing gates.
struct GateInstance {
  GateKind kind = GateKind::X;
  std::vector<int> qubits;
  std::optional<int> param_slot;
  std::optional<double> fixed_angle;
  int layer = 0;
};

struct Circuit {
  int n_qubits = 0;
  std::vector<GateInstance> gates;
  int n_params = 0;
  std::vector<int> layer_of;  // per parameter slot, values in 1..n_layers
  int n_layers = 0;
};

using ParamVector = std::vector<double>;

inline void validate_gate(const GateInstance& g, int n_qubits, int n_params) {
  if (static_cast<int>(g.qubits.size()) != gate_arity(g.kind)) {
    throw std::invalid_argument("gate has wrong qubit count");
  }
  for (int q : g.qubits) {
    if (q < 0 || q >= n_qubits) throw std::invalid_argument("gate qubit out of range");
  }
  if (g.qubits.size() == 2 && g.qubits[0] == g.qubits[1]) {
    throw std::invalid_argument("gate has duplicate qubits");
  }
  if (is_rotation(g.kind)) {
    if (g.param_slot.has_value() == g.fixed_angle.has_value()) {
      throw std::invalid_argument("rotation gate needs exactly one of slot or angle");
    }
    if (g.param_slot && (*g.param_slot < 0 || *g.param_slot >= n_params)) {
      throw std::invalid_argument("parameter slot out of range");
    }
  } else if (g.param_slot || g.fixed_angle) {
    throw std::invalid_argument("constant gate cannot carry slot or angle");
  }
}

inline void validate_circuit(const Circuit& c) {
  std::vector<int> uses(c.n_params, 0);
  for (const auto& g : c.gates) {
    validate_gate(g, c.n_qubits, c.n_params);
    if (g.param_slot) ++uses[*g.param_slot];
  }
  for (int k = 0; k < c.n_params; ++k) {
    if (uses[k] == 0) {
      throw std::invalid_argument("parameter slot " + std::to_string(k) + " never used");
    }
  }
  if (static_cast<int>(c.layer_of.size()) != c.n_params) {
    throw std::invalid_argument("layer_of must cover every parameter slot");
  }
  for (int l : c.layer_of) {
    if (l < 1 || l > c.n_layers) throw std::invalid_argument("layer tag out of range");
  }
}

// Per layer: RX on every qubit, RZ on every qubit (fresh slots), then the
// cyclic CNOT ring control i -> target (i+1) mod n in ascending i (no ring on
// a single qubit). Slot layout: layer l (0-based) holds slots
// [2nl, 2nl + n) for RX and [2nl + n, 2nl + 2n) for RZ.
inline Circuit build_hardware_efficient_ansatz(int n_qubits, int n_layers) {
  if (n_qubits < 1 || n_layers < 1) {
    throw std::invalid_argument("build_hardware_efficient_ansatz: need n >= 1 and L >= 1");
  }
  Circuit c;
  c.n_qubits = n_qubits;
  c.n_layers = n_layers;
  c.n_params = 2 * n_qubits * n_layers;
  c.layer_of.assign(c.n_params, 0);
  for (int l = 0; l < n_layers; ++l) {
    const int base = 2 * n_qubits * l;
    for (int q = 0; q < n_qubits; ++q) {
      c.gates.push_back(GateInstance{GateKind::RX, {q}, base + q, std::nullopt, l + 1});
      c.layer_of[base + q] = l + 1;
    }
    for (int q = 0; q < n_qubits; ++q) {
      c.gates.push_back(GateInstance{GateKind::RZ, {q}, base + n_qubits + q, std::nullopt, l + 1});
      c.layer_of[base + n_qubits + q] = l + 1;
    }
    if (n_qubits >= 2) {
      for (int q = 0; q < n_qubits; ++q) {
        c.gates.push_back(
            GateInstance{GateKind::CNOT, {q, (q + 1) % n_qubits}, std::nullopt, std::nullopt, l + 1});
      }
    }
  }
  return c;
}

// One fixed-angle RX(x_i) per qubit; consumes no parameter slots.
inline std::vector<GateInstance> angle_encoding(std::span<const double> features) {
  std::vector<GateInstance> enc;
  enc.reserve(features.size());
  for (std::size_t q = 0; q < features.size(); ++q) {
    enc.push_back(GateInstance{GateKind::RX, {static_cast<int>(q)}, std::nullopt, features[q], 0});
  }
  return enc;
}

// X on qubit k iff bit k of the input string is '1'.
inline std::vector<GateInstance> parity_encoding(const std::string& bits) {
  std::vector<GateInstance> enc;
  for (std::size_t q = 0; q < bits.size(); ++q) {
    if (bits[q] == '1') {
      enc.push_back(GateInstance{GateKind::X, {static_cast<int>(q)}, std::nullopt, std::nullopt, 0});
    } else if (bits[q] != '0') {
      throw std::invalid_argument("parity_encoding: input must be a binary string");
    }
  }
  return enc;
}

inline GateMatrix gate_matrix_for(const GateInstance& g, std::span<const double> params) {
  switch (g.kind) {
    case GateKind::RX:
      return gate_rx(g.param_slot ? params[*g.param_slot] : *g.fixed_angle);
    case GateKind::RZ:
      return gate_rz(g.param_slot ? params[*g.param_slot] : *g.fixed_angle);
    case GateKind::X: return gate_x();
    case GateKind::H: return gate_h();
    case GateKind::CNOT: return gate_cnot();
    case GateKind::CZ: return gate_cz();
  }
  throw std::logic_error("gate_matrix_for: unhandled gate kind");
}

// Exact (noiseless) execution: encoding gates first, then the ansatz gates in
// order, starting from |0...0>.
inline StateVector run_circuit(const Circuit& circuit, std::span<const double> params,
                               std::span<const GateInstance> encoding = {}) {
  if (static_cast<int>(params.size()) != circuit.n_params) {
    throw std::invalid_argument("run_circuit: expected " + std::to_string(circuit.n_params) +
                                " parameters, got " + std::to_string(params.size()));
  }
  StateVector state = zero_state(circuit.n_qubits);
  for (const auto& g : encoding) {
    validate_gate(g, circuit.n_qubits, 0);
    apply_gate_inplace(state, gate_matrix_for(g, params), g.qubits);
  }
  for (const auto& g : circuit.gates) {
    apply_gate_inplace(state, gate_matrix_for(g, params), g.qubits);
  }
  return state;
}

// Line-oriented text form used by golden tests: one gate per line with kind,
// qubits, slot or angle, and the layer tag when present.
inline std::string circuit_to_text(const Circuit& c) {
  std::ostringstream out;
  out << "qubits " << c.n_qubits << "\n";
  out << "params " << c.n_params << "\n";
  out << "layers " << c.n_layers << "\n";
  for (const auto& g : c.gates) {
    out << gate_name(g.kind);
    for (int q : g.qubits) out << " q" << q;
    if (g.param_slot) out << " slot=" << *g.param_slot;
    if (g.fixed_angle) {
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.17g", *g.fixed_angle);
      out << " angle=" << buf;
    }
    if (g.layer > 0) out << " layer=" << g.layer;
    out << "\n";
  }
  return out.str();
}

}  // namespace wsbd
