// Test-only oracles, kept independent of the library code paths they check:
// a Kronecker-product dense Hamiltonian builder, a power-iteration minimum
// eigenvalue solver, and random-circuit generators for property tests.

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "wsbd/circuit.hpp"
#include "wsbd/observables.hpp"
#include "wsbd/qsim.hpp"
#include "wsbd/rng.hpp"

namespace oracles {

using wsbd::cplx;

// Dense Hamiltonian built by explicit Kronecker products, deliberately a
// different route from the library's bit-mask construction.
inline std::vector<cplx> kron(const std::vector<cplx>& a, std::size_t da,
                              const std::vector<cplx>& b, std::size_t db) {
  std::vector<cplx> out(da * db * da * db);
  for (std::size_t ra = 0; ra < da; ++ra) {
    for (std::size_t ca = 0; ca < da; ++ca) {
      for (std::size_t rb = 0; rb < db; ++rb) {
        for (std::size_t cb = 0; cb < db; ++cb) {
          out[(ra * db + rb) * (da * db) + (ca * db + cb)] = a[ra * da + ca] * b[rb * db + cb];
        }
      }
    }
  }
  return out;
}

inline std::vector<cplx> pauli_matrix(wsbd::Pauli p) {
  switch (p) {
    case wsbd::Pauli::I: return {1, 0, 0, 1};
    case wsbd::Pauli::X: return {0, 1, 1, 0};
    case wsbd::Pauli::Y: return {0, cplx{0, -1}, cplx{0, 1}, 0};
    case wsbd::Pauli::Z: return {1, 0, 0, -1};
  }
  throw std::logic_error("pauli_matrix");
}

inline std::vector<cplx> dense_by_kron(const wsbd::Hamiltonian& h) {
  const std::size_t dim = std::size_t{1} << h.n_qubits;
  std::vector<cplx> acc(dim * dim, cplx{0, 0});
  for (const auto& term : h.terms) {
    std::vector<cplx> m = {cplx{1, 0}};
    std::size_t d = 1;
    for (int q = 0; q < h.n_qubits; ++q) {
      m = kron(m, d, pauli_matrix(term.letters[q]), 2);
      d *= 2;
    }
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += term.coefficient * m[i];
  }
  return acc;
}

// Minimum eigenvalue via power iteration on B = cI - H with c = sum|coeff|+1,
// so the dominant eigenvalue of B is c - lambda_min(H).
inline double power_iteration_min_eigenvalue(const wsbd::Hamiltonian& h, int max_iters = 200000,
                                             double tol = 1e-13) {
  const std::vector<cplx> dense = dense_by_kron(h);
  const std::size_t dim = std::size_t{1} << h.n_qubits;
  const double shift = wsbd::one_norm(h) + 1.0;

  wsbd::Rng rng(12345);
  std::vector<cplx> v(dim), w(dim);
  for (auto& x : v) x = cplx{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};

  auto normalize = [&](std::vector<cplx>& x) {
    double n = 0.0;
    for (const auto& e : x) n += std::norm(e);
    n = std::sqrt(n);
    for (auto& e : x) e /= n;
  };
  normalize(v);

  double rayleigh = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    for (std::size_t r = 0; r < dim; ++r) {
      cplx acc = shift * v[r];
      const cplx* row = dense.data() + r * dim;
      for (std::size_t c = 0; c < dim; ++c) acc -= row[c] * v[c];
      w[r] = acc;
    }
    cplx rq{0, 0};
    for (std::size_t i = 0; i < dim; ++i) rq += std::conj(v[i]) * w[i];
    const double next = rq.real();
    normalize(w);
    v.swap(w);
    if (it > 2 && std::abs(next - rayleigh) < tol) {
      rayleigh = next;
      break;
    }
    rayleigh = next;
  }
  return shift - rayleigh;
}

// Applies `count` random gates from the supported set to the state.
template <typename StateLike>
void apply_random_gates(StateLike& state, int count, wsbd::Rng& rng) {
  const int n = state.n_qubits;
  for (int i = 0; i < count; ++i) {
    const int pick = static_cast<int>(rng.below(n >= 2 ? 6 : 4));
    const int q0 = static_cast<int>(rng.below(n));
    int q1 = q0;
    if (n >= 2) {
      while (q1 == q0) q1 = static_cast<int>(rng.below(n));
    }
    const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    switch (pick) {
      case 0: { const int t[1] = {q0}; apply_gate_inplace(state, wsbd::gate_rx(angle), t); break; }
      case 1: { const int t[1] = {q0}; apply_gate_inplace(state, wsbd::gate_rz(angle), t); break; }
      case 2: { const int t[1] = {q0}; apply_gate_inplace(state, wsbd::gate_x(), t); break; }
      case 3: { const int t[1] = {q0}; apply_gate_inplace(state, wsbd::gate_h(), t); break; }
      case 4: { const int t[2] = {q0, q1}; apply_gate_inplace(state, wsbd::gate_cnot(), t); break; }
      default: { const int t[2] = {q0, q1}; apply_gate_inplace(state, wsbd::gate_cz(), t); break; }
    }
  }
}

// Random normalized state via random gates on |0...0>.
inline wsbd::StateVector random_state(int n_qubits, wsbd::Rng& rng, int gates = 30) {
  wsbd::StateVector s = wsbd::zero_state(n_qubits);
  apply_random_gates(s, gates, rng);
  return s;
}

// Random Hamiltonian with `terms` random Pauli strings and coefficients in
// [-1, 1].
inline wsbd::Hamiltonian random_hamiltonian(int n_qubits, int terms, wsbd::Rng& rng) {
  wsbd::Hamiltonian h;
  h.n_qubits = n_qubits;
  for (int t = 0; t < terms; ++t) {
    wsbd::PauliString p;
    p.coefficient = rng.uniform(-1.0, 1.0);
    for (int q = 0; q < n_qubits; ++q) {
      switch (rng.below(4)) {
        case 0: p.letters.push_back(wsbd::Pauli::I); break;
        case 1: p.letters.push_back(wsbd::Pauli::X); break;
        case 2: p.letters.push_back(wsbd::Pauli::Y); break;
        default: p.letters.push_back(wsbd::Pauli::Z); break;
      }
    }
    h.terms.push_back(std::move(p));
  }
  return h;
}

}  // namespace oracles
