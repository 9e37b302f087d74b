// Dense statevector / density-matrix simulation of few-qubit systems.
//
// Convention fixed here and relied on everywhere else: qubit 0 is the MOST
// significant bit of a basis index, so |10> on two qubits is index 0b10 = 2
// with qubit 0 in state |1>. A qubit q on an n-qubit register therefore
// occupies bit position (n - 1 - q).

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "wsbd/rng.hpp"

namespace wsbd {

using cplx = std::complex<double>;

// Tolerance for unitarity, norm, trace and Kraus-completeness checks.
// Double precision leaves ample headroom at the 2^14 dimensions we allow.
inline constexpr double kQsimTol = 1e-10;
inline constexpr int kMaxQubits = 14;

struct StateVector {
  int n_qubits = 0;
  std::vector<cplx> amps;

  std::size_t dim() const { return amps.size(); }
};

struct DensityMatrix {
  int n_qubits = 0;
  std::vector<cplx> m;  // row-major, dim x dim

  std::size_t dim() const { return std::size_t{1} << n_qubits; }
  cplx& at(std::size_t r, std::size_t c) { return m[r * dim() + c]; }
  const cplx& at(std::size_t r, std::size_t c) const { return m[r * dim() + c]; }
};

// Unitary gate matrix plus the operator norm of its rotation generator
// (||G|| = 1/2 for Pauli rotations exp(-i theta P/2), 0 for constant gates).
struct GateMatrix {
  int dim = 2;  // 2 or 4
  std::vector<cplx> m;
  double generator_norm = 0.0;
};

struct KrausChannel {
  int dim = 2;  // 2 (one qubit) or 4 (two qubits)
  std::vector<std::vector<cplx>> operators;
};

// ---------------------------------------------------------------------------
// construction and validation

inline StateVector zero_state(int n_qubits) {
  if (n_qubits < 1 || n_qubits > kMaxQubits) {
    throw std::invalid_argument("zero_state: n_qubits must be in [1, " +
                                std::to_string(kMaxQubits) + "], got " +
                                std::to_string(n_qubits));
  }
  StateVector s;
  s.n_qubits = n_qubits;
  s.amps.assign(std::size_t{1} << n_qubits, cplx{0.0, 0.0});
  s.amps[0] = cplx{1.0, 0.0};
  return s;
}

inline double norm_squared(const StateVector& s) {
  double acc = 0.0;
  for (const cplx& a : s.amps) acc += std::norm(a);
  return acc;
}

inline cplx trace(const DensityMatrix& rho) {
  cplx acc{0.0, 0.0};
  const std::size_t d = rho.dim();
  for (std::size_t i = 0; i < d; ++i) acc += rho.at(i, i);
  return acc;
}

// tr(rho^2); real for Hermitian rho.
inline double purity(const DensityMatrix& rho) {
  double acc = 0.0;
  for (const cplx& e : rho.m) acc += std::norm(e);
  return acc;
}

inline double max_hermiticity_violation(const DensityMatrix& rho) {
  const std::size_t d = rho.dim();
  double worst = 0.0;
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = r; c < d; ++c) {
      worst = std::max(worst, std::abs(rho.at(r, c) - std::conj(rho.at(c, r))));
    }
  }
  return worst;
}

inline DensityMatrix density_from_state(const StateVector& s) {
  DensityMatrix rho;
  rho.n_qubits = s.n_qubits;
  const std::size_t d = s.dim();
  rho.m.resize(d * d);
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      rho.m[r * d + c] = s.amps[r] * std::conj(s.amps[c]);
    }
  }
  return rho;
}

inline double max_unitarity_violation(int dim, std::span<const cplx> m) {
  // max |(U^dag U - I)_{rc}|
  double worst = 0.0;
  for (int r = 0; r < dim; ++r) {
    for (int c = 0; c < dim; ++c) {
      cplx acc{0.0, 0.0};
      for (int k = 0; k < dim; ++k) {
        acc += std::conj(m[static_cast<std::size_t>(k) * dim + r]) *
               m[static_cast<std::size_t>(k) * dim + c];
      }
      if (r == c) acc -= 1.0;
      worst = std::max(worst, std::abs(acc));
    }
  }
  return worst;
}

inline GateMatrix make_gate(int dim, std::vector<cplx> entries, double generator_norm) {
  if (dim != 2 && dim != 4) throw std::invalid_argument("make_gate: dim must be 2 or 4");
  if (entries.size() != static_cast<std::size_t>(dim) * dim) {
    throw std::invalid_argument("make_gate: entry count does not match dim");
  }
  if (max_unitarity_violation(dim, entries) > kQsimTol) {
    throw std::invalid_argument("make_gate: matrix is not unitary within tolerance");
  }
  return GateMatrix{dim, std::move(entries), generator_norm};
}

inline double max_completeness_violation(const KrausChannel& ch) {
  // max |(sum_i K_i^dag K_i - I)_{rc}|
  const int d = ch.dim;
  std::vector<cplx> acc(static_cast<std::size_t>(d) * d, cplx{0.0, 0.0});
  for (const auto& k : ch.operators) {
    for (int r = 0; r < d; ++r) {
      for (int c = 0; c < d; ++c) {
        cplx v{0.0, 0.0};
        for (int j = 0; j < d; ++j) {
          v += std::conj(k[static_cast<std::size_t>(j) * d + r]) *
               k[static_cast<std::size_t>(j) * d + c];
        }
        acc[static_cast<std::size_t>(r) * d + c] += v;
      }
    }
  }
  double worst = 0.0;
  for (int r = 0; r < d; ++r) {
    for (int c = 0; c < d; ++c) {
      cplx v = acc[static_cast<std::size_t>(r) * d + c];
      if (r == c) v -= 1.0;
      worst = std::max(worst, std::abs(v));
    }
  }
  return worst;
}

inline KrausChannel make_channel(int dim, std::vector<std::vector<cplx>> operators) {
  if (dim != 2 && dim != 4) throw std::invalid_argument("make_channel: dim must be 2 or 4");
  for (const auto& k : operators) {
    if (k.size() != static_cast<std::size_t>(dim) * dim) {
      throw std::invalid_argument("make_channel: operator size does not match dim");
    }
  }
  KrausChannel ch{dim, std::move(operators)};
  if (max_completeness_violation(ch) > kQsimTol) {
    throw std::invalid_argument("make_channel: Kraus operators do not satisfy completeness");
  }
  return ch;
}

// ---------------------------------------------------------------------------
// standard gates

inline GateMatrix gate_x() {
  return make_gate(2, {0, 1, 1, 0}, 0.0);
}

inline GateMatrix gate_h() {
  const double s = 1.0 / std::sqrt(2.0);
  return make_gate(2, {s, s, s, -s}, 0.0);
}

// exp(-i theta X / 2)
inline GateMatrix gate_rx(double theta) {
  const double c = std::cos(theta / 2.0);
  const double s = std::sin(theta / 2.0);
  return make_gate(2, {cplx{c, 0}, cplx{0, -s}, cplx{0, -s}, cplx{c, 0}}, 0.5);
}

// exp(-i theta Z / 2)
inline GateMatrix gate_rz(double theta) {
  const cplx em = std::exp(cplx{0, -theta / 2.0});
  const cplx ep = std::exp(cplx{0, theta / 2.0});
  return make_gate(2, {em, 0, 0, ep}, 0.5);
}

// Matrix basis order: (targets[0] bit, targets[1] bit), targets[0] high.
inline GateMatrix gate_cnot() {
  return make_gate(4,
                   {1, 0, 0, 0,
                    0, 1, 0, 0,
                    0, 0, 0, 1,
                    0, 0, 1, 0},
                   0.0);
}

inline GateMatrix gate_cz() {
  return make_gate(4,
                   {1, 0, 0, 0,
                    0, 1, 0, 0,
                    0, 0, 1, 0,
                    0, 0, 0, -1},
                   0.0);
}

// ---------------------------------------------------------------------------
// gate / matrix application

namespace detail {

inline void check_targets(int n_qubits, int gate_dim, std::span<const int> targets) {
  const int want = gate_dim == 2 ? 1 : 2;
  if (static_cast<int>(targets.size()) != want) {
    throw std::invalid_argument("apply_gate: target count does not match gate dimension");
  }
  for (int t : targets) {
    if (t < 0 || t >= n_qubits) {
      throw std::invalid_argument("apply_gate: qubit index " + std::to_string(t) +
                                  " out of range for " + std::to_string(n_qubits) + " qubits");
    }
  }
  if (want == 2 && targets[0] == targets[1]) {
    throw std::invalid_argument("apply_gate: duplicate target qubits");
  }
}

// Applies a 2x2 or 4x4 matrix (not necessarily unitary) to the logical
// register viewed through `base` with element spacing `stride`.
inline void apply_matrix_strided(cplx* base, std::size_t stride, int n_qubits, int dim,
                                 std::span<const cplx> m, std::span<const int> targets,
                                 bool conjugate_entries) {
  const std::size_t size = std::size_t{1} << n_qubits;
  if (dim == 2) {
    const std::size_t mask = std::size_t{1} << (n_qubits - 1 - targets[0]);
    cplx g00 = m[0], g01 = m[1], g10 = m[2], g11 = m[3];
    if (conjugate_entries) {
      g00 = std::conj(g00); g01 = std::conj(g01);
      g10 = std::conj(g10); g11 = std::conj(g11);
    }
    for (std::size_t i = 0; i < size; ++i) {
      if (i & mask) continue;
      cplx a0 = base[i * stride];
      cplx a1 = base[(i | mask) * stride];
      base[i * stride] = g00 * a0 + g01 * a1;
      base[(i | mask) * stride] = g10 * a0 + g11 * a1;
    }
    return;
  }
  const std::size_t m_hi = std::size_t{1} << (n_qubits - 1 - targets[0]);
  const std::size_t m_lo = std::size_t{1} << (n_qubits - 1 - targets[1]);
  std::array<cplx, 16> g;
  for (int k = 0; k < 16; ++k) g[k] = conjugate_entries ? std::conj(m[k]) : m[k];
  for (std::size_t i = 0; i < size; ++i) {
    if (i & (m_hi | m_lo)) continue;
    const std::array<std::size_t, 4> idx = {i, i | m_lo, i | m_hi, i | m_hi | m_lo};
    std::array<cplx, 4> v;
    for (int k = 0; k < 4; ++k) v[k] = base[idx[k] * stride];
    for (int r = 0; r < 4; ++r) {
      cplx acc{0.0, 0.0};
      for (int c = 0; c < 4; ++c) acc += g[r * 4 + c] * v[c];
      base[idx[r] * stride] = acc;
    }
  }
}

// rho <- M rho M^dag for an arbitrary (2^k)-dim matrix M on `targets`.
inline void conjugate_matrix_inplace(DensityMatrix& rho, int dim, std::span<const cplx> m,
                                     std::span<const int> targets) {
  const std::size_t d = rho.dim();
  // Left multiply: each column transforms like a statevector.
  for (std::size_t c = 0; c < d; ++c) {
    apply_matrix_strided(rho.m.data() + c, d, rho.n_qubits, dim, m, targets, false);
  }
  // Right multiply by M^dag: apply conj(M) along each row.
  for (std::size_t r = 0; r < d; ++r) {
    apply_matrix_strided(rho.m.data() + r * d, 1, rho.n_qubits, dim, m, targets, true);
  }
}

}  // namespace detail

inline void apply_gate_inplace(StateVector& state, const GateMatrix& gate,
                               std::span<const int> targets) {
  detail::check_targets(state.n_qubits, gate.dim, targets);
  detail::apply_matrix_strided(state.amps.data(), 1, state.n_qubits, gate.dim, gate.m,
                               targets, false);
}

inline StateVector apply_gate(StateVector state, const GateMatrix& gate,
                              std::span<const int> targets) {
  apply_gate_inplace(state, gate, targets);
  return state;
}

inline void apply_gate_inplace(DensityMatrix& rho, const GateMatrix& gate,
                               std::span<const int> targets) {
  detail::check_targets(rho.n_qubits, gate.dim, targets);
  detail::conjugate_matrix_inplace(rho, gate.dim, gate.m, targets);
}

inline void apply_channel_inplace(DensityMatrix& rho, const KrausChannel& channel,
                                  std::span<const int> targets) {
  detail::check_targets(rho.n_qubits, channel.dim, targets);
  if (max_completeness_violation(channel) > kQsimTol) {
    throw std::invalid_argument("apply_channel: Kraus operators do not satisfy completeness");
  }
  DensityMatrix acc;
  acc.n_qubits = rho.n_qubits;
  acc.m.assign(rho.m.size(), cplx{0.0, 0.0});
  DensityMatrix scratch;
  scratch.n_qubits = rho.n_qubits;
  for (const auto& k : channel.operators) {
    scratch.m = rho.m;
    detail::conjugate_matrix_inplace(scratch, channel.dim, k, targets);
    for (std::size_t i = 0; i < acc.m.size(); ++i) acc.m[i] += scratch.m[i];
  }
  rho.m = std::move(acc.m);
}

inline DensityMatrix apply_channel(DensityMatrix rho, const KrausChannel& channel,
                                   std::span<const int> targets) {
  apply_channel_inplace(rho, channel, targets);
  return rho;
}

// ---------------------------------------------------------------------------
// measurement sampling

inline std::vector<double> probabilities(const StateVector& s) {
  std::vector<double> p(s.dim());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::norm(s.amps[i]);
  return p;
}

inline std::vector<double> probabilities(const DensityMatrix& rho) {
  const std::size_t d = rho.dim();
  std::vector<double> p(d);
  for (std::size_t i = 0; i < d; ++i) p[i] = rho.at(i, i).real();
  return p;
}

inline std::map<std::uint64_t, std::int64_t> sample_distribution(
    std::span<const double> probs, std::int64_t shots, Rng& rng) {
  if (shots < 1) throw std::invalid_argument("sample_distribution: shots must be >= 1");
  std::vector<double> cdf(probs.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += std::max(0.0, probs[i]);
    cdf[i] = acc;
  }
  std::map<std::uint64_t, std::int64_t> counts;
  for (std::int64_t s = 0; s < shots; ++s) {
    const double u = rng.uniform() * acc;
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    std::uint64_t idx = static_cast<std::uint64_t>(it - cdf.begin());
    if (idx >= cdf.size()) idx = cdf.size() - 1;
    ++counts[idx];
  }
  return counts;
}

template <typename StateLike>
std::map<std::uint64_t, std::int64_t> sample_counts(const StateLike& state, std::int64_t shots,
                                                    std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  const std::vector<double> p = probabilities(state);
  return sample_distribution(p, shots, rng);
}

}  // namespace wsbd
