// Pauli-string observables, the transverse-field Ising Hamiltonian, exact and
// shot-based expectation values, and the dense ground-energy solver.

#pragma once

#include <Eigen/Dense>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "wsbd/qsim.hpp"
#include "wsbd/rng.hpp"

namespace wsbd {

enum class Pauli : char { I = 'I', X = 'X', Y = 'Y', Z = 'Z' };

struct PauliString {
  double coefficient = 0.0;
  std::vector<Pauli> letters;  // one per qubit
};

inline PauliString pauli_string(double coefficient, const std::string& letters) {
  PauliString p;
  p.coefficient = coefficient;
  p.letters.reserve(letters.size());
  for (char c : letters) {
    switch (c) {
      case 'I': p.letters.push_back(Pauli::I); break;
      case 'X': p.letters.push_back(Pauli::X); break;
      case 'Y': p.letters.push_back(Pauli::Y); break;
      case 'Z': p.letters.push_back(Pauli::Z); break;
      default:
        throw std::invalid_argument("pauli_string: unknown letter '" + std::string(1, c) + "'");
    }
  }
  return p;
}

// Real-coefficient Pauli sum; Hermitian by construction. J and h are retained
// when the instance was built as a transverse-field Ising model.
struct Hamiltonian {
  int n_qubits = 0;
  std::vector<PauliString> terms;
  double coupling_j = 0.0;
  double field_h = 0.0;
};

inline void check_terms(const Hamiltonian& h) {
  for (const auto& t : h.terms) {
    if (static_cast<int>(t.letters.size()) != h.n_qubits) {
      throw std::invalid_argument("Hamiltonian: term letter count does not match n_qubits");
    }
    if (!std::isfinite(t.coefficient)) {
      throw std::invalid_argument("Hamiltonian: non-finite coefficient");
    }
  }
}

// sum over |coefficients|; an upper bound on the operator norm.
inline double one_norm(const Hamiltonian& h) {
  double acc = 0.0;
  for (const auto& t : h.terms) acc += std::abs(t.coefficient);
  return acc;
}

// H = -J sum_{i<n-1} Z_i Z_{i+1} - h sum_i X_i  (open boundary)
inline Hamiltonian tfim_hamiltonian(int n_qubits, double coupling_j, double field_h) {
  if (n_qubits < 1) throw std::invalid_argument("tfim_hamiltonian: n_qubits must be >= 1");
  Hamiltonian ham;
  ham.n_qubits = n_qubits;
  ham.coupling_j = coupling_j;
  ham.field_h = field_h;
  for (int i = 0; i + 1 < n_qubits; ++i) {
    PauliString t;
    t.coefficient = -coupling_j;
    t.letters.assign(n_qubits, Pauli::I);
    t.letters[i] = Pauli::Z;
    t.letters[i + 1] = Pauli::Z;
    ham.terms.push_back(std::move(t));
  }
  for (int i = 0; i < n_qubits; ++i) {
    PauliString t;
    t.coefficient = -field_h;
    t.letters.assign(n_qubits, Pauli::I);
    t.letters[i] = Pauli::X;
    ham.terms.push_back(std::move(t));
  }
  return ham;
}

// observable Z on a single qubit, identity elsewhere
inline Hamiltonian single_z_observable(int n_qubits, int qubit) {
  if (qubit < 0 || qubit >= n_qubits) {
    throw std::invalid_argument("single_z_observable: qubit out of range");
  }
  Hamiltonian ham;
  ham.n_qubits = n_qubits;
  PauliString t;
  t.coefficient = 1.0;
  t.letters.assign(n_qubits, Pauli::I);
  t.letters[qubit] = Pauli::Z;
  ham.terms.push_back(std::move(t));
  return ham;
}

namespace detail {

struct PauliAction {
  std::size_t flip_mask = 0;       // bits toggled by X/Y letters
  std::size_t y_mask = 0;          // qubit-position bits carrying Y
  std::size_t z_mask = 0;          // qubit-position bits carrying Z
};

inline PauliAction pauli_action(const PauliString& p, int n_qubits) {
  PauliAction a;
  for (int q = 0; q < n_qubits; ++q) {
    const std::size_t bit = std::size_t{1} << (n_qubits - 1 - q);
    switch (p.letters[q]) {
      case Pauli::I: break;
      case Pauli::X: a.flip_mask |= bit; break;
      case Pauli::Y: a.flip_mask |= bit; a.y_mask |= bit; break;
      case Pauli::Z: a.z_mask |= bit; break;
    }
  }
  return a;
}

// phase of P|i> = phase(i) |i ^ flip>:
//   each Y contributes +i on a 0 bit and -i on a 1 bit; each Z contributes
//   (-1)^bit.
inline cplx pauli_phase(const PauliAction& a, std::size_t i) {
  const int y_total = std::popcount(a.y_mask);
  const int y_ones = std::popcount(i & a.y_mask);
  const int z_ones = std::popcount(i & a.z_mask);
  // i^(y_total) * (-1)^(y_ones + z_ones)
  static constexpr cplx i_pow[4] = {cplx{1, 0}, cplx{0, 1}, cplx{-1, 0}, cplx{0, -1}};
  cplx phase = i_pow[y_total & 3];
  if ((y_ones + z_ones) & 1) phase = -phase;
  return phase;
}

inline cplx term_expectation(const StateVector& s, const PauliString& p) {
  const PauliAction a = pauli_action(p, s.n_qubits);
  cplx acc{0.0, 0.0};
  for (std::size_t i = 0; i < s.dim(); ++i) {
    acc += std::conj(s.amps[i ^ a.flip_mask]) * pauli_phase(a, i) * s.amps[i];
  }
  return acc;
}

inline cplx term_expectation(const DensityMatrix& rho, const PauliString& p) {
  const PauliAction a = pauli_action(p, rho.n_qubits);
  cplx acc{0.0, 0.0};
  for (std::size_t i = 0; i < rho.dim(); ++i) {
    acc += pauli_phase(a, i) * rho.at(i, i ^ a.flip_mask);
  }
  return acc;
}

}  // namespace detail

template <typename StateLike>
double expectation(const StateLike& state, const Hamiltonian& observable) {
  if (state.n_qubits != observable.n_qubits) {
    throw std::invalid_argument("expectation: observable acts on " +
                                std::to_string(observable.n_qubits) + " qubits, state has " +
                                std::to_string(state.n_qubits));
  }
  cplx acc{0.0, 0.0};
  for (const auto& t : observable.terms) {
    acc += t.coefficient * detail::term_expectation(state, t);
  }
  if (std::abs(acc.imag()) >= kQsimTol) {
    throw std::runtime_error("expectation: non-negligible imaginary residue " +
                             std::to_string(acc.imag()));
  }
  return acc.real();
}

// ---------------------------------------------------------------------------
// shot-based estimation

// Terms that can be measured from one basis rotation: on every qubit the
// letters agree or one of them is identity.
struct MeasurementGroup {
  std::vector<std::size_t> term_indices;
  std::vector<Pauli> basis;  // per qubit; I where no member term acts
};

inline std::vector<MeasurementGroup> measurement_groups(const Hamiltonian& h) {
  std::vector<MeasurementGroup> groups;
  for (std::size_t ti = 0; ti < h.terms.size(); ++ti) {
    const auto& letters = h.terms[ti].letters;
    bool identity_only = true;
    for (Pauli p : letters) {
      if (p != Pauli::I) { identity_only = false; break; }
    }
    if (identity_only) continue;  // constant offset, nothing to measure
    MeasurementGroup* home = nullptr;
    for (auto& g : groups) {
      bool ok = true;
      for (int q = 0; q < h.n_qubits; ++q) {
        if (letters[q] != Pauli::I && g.basis[q] != Pauli::I && g.basis[q] != letters[q]) {
          ok = false;
          break;
        }
      }
      if (ok) { home = &g; break; }
    }
    if (home == nullptr) {
      groups.push_back(MeasurementGroup{{}, std::vector<Pauli>(h.n_qubits, Pauli::I)});
      home = &groups.back();
    }
    home->term_indices.push_back(ti);
    for (int q = 0; q < h.n_qubits; ++q) {
      if (letters[q] != Pauli::I) home->basis[q] = letters[q];
    }
  }
  return groups;
}

namespace detail {

// U with U P U^dag = Z: H for X, H S^dag for Y.
inline GateMatrix basis_rotation(Pauli p) {
  if (p == Pauli::X) return gate_h();
  const double s = 1.0 / std::sqrt(2.0);
  return make_gate(2, {cplx{s, 0}, cplx{0, -s}, cplx{s, 0}, cplx{0, s}}, 0.0);
}

template <typename StateLike>
std::vector<double> rotated_probabilities(const StateLike& state,
                                          const MeasurementGroup& group) {
  StateLike rotated = state;
  for (int q = 0; q < rotated.n_qubits; ++q) {
    if (group.basis[q] == Pauli::I || group.basis[q] == Pauli::Z) continue;
    const int targets[1] = {q};
    apply_gate_inplace(rotated, basis_rotation(group.basis[q]), targets);
  }
  return probabilities(rotated);
}

}  // namespace detail

// Pass shots = kExactShots to get the exact expectation value ("M = infinity"
// mode); otherwise each measurement group is estimated from `shots` samples.
inline constexpr std::int64_t kExactShots = 0;

template <typename StateLike>
double estimate_expectation_shots(const StateLike& state, const Hamiltonian& observable,
                                  std::int64_t shots, Rng& rng) {
  if (shots == kExactShots) return expectation(state, observable);
  if (shots < 1) throw std::invalid_argument("estimate_expectation_shots: shots must be >= 1");
  if (state.n_qubits != observable.n_qubits) {
    throw std::invalid_argument("estimate_expectation_shots: dimension mismatch");
  }
  double total = 0.0;
  // Identity-only terms carry no sampling noise.
  for (const auto& t : observable.terms) {
    bool identity_only = true;
    for (Pauli p : t.letters) {
      if (p != Pauli::I) { identity_only = false; break; }
    }
    if (identity_only) total += t.coefficient;
  }
  const auto groups = measurement_groups(observable);
  const int n = observable.n_qubits;
  for (const auto& g : groups) {
    const std::vector<double> probs = detail::rotated_probabilities(state, g);
    const auto counts = sample_distribution(probs, shots, rng);
    for (std::size_t ti : g.term_indices) {
      const auto& term = observable.terms[ti];
      std::size_t support = 0;
      for (int q = 0; q < n; ++q) {
        if (term.letters[q] != Pauli::I) support |= std::size_t{1} << (n - 1 - q);
      }
      std::int64_t signed_sum = 0;
      for (const auto& [idx, cnt] : counts) {
        const int parity = std::popcount(static_cast<std::size_t>(idx) & support) & 1;
        signed_sum += parity ? -cnt : cnt;
      }
      total += term.coefficient * static_cast<double>(signed_sum) / static_cast<double>(shots);
    }
  }
  return total;
}

template <typename StateLike>
double estimate_expectation_shots(const StateLike& state, const Hamiltonian& observable,
                                  std::int64_t shots, std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  return estimate_expectation_shots(state, observable, shots, rng);
}

// ---------------------------------------------------------------------------
// dense form and ground energy

inline constexpr int kMaxDenseQubits = 10;

// Row-major 2^n x 2^n matrix of the Pauli sum.
inline std::vector<cplx> to_dense_matrix(const Hamiltonian& h) {
  if (h.n_qubits < 1 || h.n_qubits > kMaxDenseQubits) {
    throw std::invalid_argument("to_dense_matrix: n_qubits must be in [1, " +
                                std::to_string(kMaxDenseQubits) + "]");
  }
  check_terms(h);
  const std::size_t d = std::size_t{1} << h.n_qubits;
  std::vector<cplx> m(d * d, cplx{0.0, 0.0});
  for (const auto& t : h.terms) {
    const detail::PauliAction a = detail::pauli_action(t, h.n_qubits);
    for (std::size_t col = 0; col < d; ++col) {
      m[(col ^ a.flip_mask) * d + col] += t.coefficient * detail::pauli_phase(a, col);
    }
  }
  return m;
}

inline double exact_ground_energy(const Hamiltonian& h) {
  const std::vector<cplx> dense = to_dense_matrix(h);
  const auto d = static_cast<Eigen::Index>(std::size_t{1} << h.n_qubits);
  Eigen::MatrixXcd mat(d, d);
  for (Eigen::Index r = 0; r < d; ++r) {
    for (Eigen::Index c = 0; c < d; ++c) {
      mat(r, c) = dense[static_cast<std::size_t>(r) * d + c];
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(mat, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("exact_ground_energy: eigensolver failed");
  }
  return solver.eigenvalues().minCoeff();
}

}  // namespace wsbd
