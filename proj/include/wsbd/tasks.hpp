// Benchmark problems: transverse-field Ising VQE, the parity function, and a
// reduced binary MNIST classifier. Each exposes a pure cost evaluation, the
// TrainingProblem adapter that binds per-step data instances, and an
// uncharged accuracy metric.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "wsbd/circuit.hpp"
#include "wsbd/grad.hpp"
#include "wsbd/noise.hpp"
#include "wsbd/observables.hpp"
#include "wsbd/optim.hpp"
#include "wsbd/qsim.hpp"

namespace wsbd {

// Shared execution settings: exact statevector when noisy == false, density
// matrix with the given model otherwise; shots == kExactShots selects exact
// expectation values.
struct BackendConfig {
  bool noisy = false;
  NoiseModel noise;
  bool validate = false;
  std::int64_t shots = kExactShots;
};

inline double measured_expectation(const Circuit& circuit, std::span<const double> params,
                                   std::span<const GateInstance> encoding,
                                   const Hamiltonian& observable, const BackendConfig& backend,
                                   Rng& shot_rng) {
  if (!backend.noisy) {
    const StateVector psi = run_circuit(circuit, params, encoding);
    return estimate_expectation_shots(psi, observable, backend.shots, shot_rng);
  }
  const DensityMatrix rho =
      run_circuit_noisy(circuit, params, encoding, backend.noise, backend.validate);
  return noisy_expectation(rho, observable, backend.noise, backend.shots, shot_rng);
}

inline std::int64_t shots_per_pass(const Hamiltonian& observable, std::int64_t shots) {
  if (shots == kExactShots) return 0;
  return shots * static_cast<std::int64_t>(measurement_groups(observable).size());
}

inline std::vector<double> initial_params(int n_params, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0));
  std::vector<double> p(n_params);
  for (double& x : p) x = rng.uniform(-std::numbers::pi, std::numbers::pi);
  return p;
}

// ---------------------------------------------------------------------------
// VQE

struct VqeTask {
  Hamiltonian hamiltonian;
  Circuit circuit;
  BackendConfig backend;
  double target_energy = 0.0;  // exact ground energy of the Hamiltonian
};

inline VqeTask make_vqe_task(int n_qubits, int n_layers, double coupling_j, double field_h,
                             BackendConfig backend = {}) {
  VqeTask t;
  t.hamiltonian = tfim_hamiltonian(n_qubits, coupling_j, field_h);
  t.circuit = build_hardware_efficient_ansatz(n_qubits, n_layers);
  t.backend = std::move(backend);
  t.target_energy = exact_ground_energy(t.hamiltonian);
  return t;
}

// E(theta); the ansatz prepares candidate ground states directly, no encoding.
inline double vqe_cost(std::span<const double> params, const VqeTask& task, Rng& shot_rng) {
  return measured_expectation(task.circuit, params, {}, task.hamiltonian, task.backend, shot_rng);
}

inline TrainingProblem make_problem(std::shared_ptr<const VqeTask> task, std::uint64_t seed) {
  TrainingProblem p;
  p.n_params = task->circuit.n_params;
  p.param_layer = task->circuit.layer_of;
  p.psr_constants.assign(task->circuit.n_params, 0.5);
  auto shot_rng = std::make_shared<Rng>(mix_seed(seed, 4));
  const std::int64_t spp = shots_per_pass(task->hamiltonian, task->backend.shots);
  p.bind_instance = [task, shot_rng, spp](Rng&) {
    return CostFunctional{
        [task, shot_rng](std::span<const double> theta) { return vqe_cost(theta, *task, *shot_rng); },
        spp};
  };
  return p;
}

// ---------------------------------------------------------------------------
// parity

struct ParityExample {
  std::string bits;
  int label = 0;
};

inline int parity_label(const std::string& bits) {
  int ones = 0;
  for (char c : bits) {
    if (c == '1') ++ones;
    else if (c != '0') throw std::invalid_argument("parity_label: non-binary input");
  }
  return ones & 1;
}

// Exhaustive (size < 0): all 2^n strings in index order. Sampled: uniform
// with replacement, seeded.
inline std::vector<ParityExample> generate_parity_dataset(int n_bits, std::int64_t size,
                                                          std::uint64_t rng_seed) {
  if (n_bits < 1) throw std::invalid_argument("generate_parity_dataset: n_bits must be >= 1");
  auto bits_of = [n_bits](std::uint64_t v) {
    std::string s(n_bits, '0');
    for (int q = 0; q < n_bits; ++q) {
      if (v & (std::uint64_t{1} << (n_bits - 1 - q))) s[q] = '1';
    }
    return s;
  };
  std::vector<ParityExample> data;
  if (size < 0) {
    if (n_bits > 16) {
      throw std::invalid_argument("generate_parity_dataset: exhaustive mode requires n <= 16");
    }
    const std::uint64_t total = std::uint64_t{1} << n_bits;
    data.reserve(total);
    for (std::uint64_t v = 0; v < total; ++v) {
      std::string s = bits_of(v);
      const int label = parity_label(s);
      data.push_back({std::move(s), label});
    }
    return data;
  }
  Rng rng(rng_seed);
  data.reserve(size);
  for (std::int64_t i = 0; i < size; ++i) {
    std::string s = bits_of(rng.next_u64() & ((std::uint64_t{1} << n_bits) - 1));
    const int label = parity_label(s);
    data.push_back({std::move(s), label});
  }
  return data;
}

struct ParityTask {
  int n_bits = 0;
  std::vector<ParityExample> dataset;
  Circuit circuit;
  int readout_qubit = 0;
  BackendConfig backend;
  Hamiltonian readout_observable;  // Z on the readout qubit
};

inline ParityTask make_parity_task(int n_bits, int n_layers, std::vector<ParityExample> dataset,
                                   BackendConfig backend = {}) {
  ParityTask t;
  t.n_bits = n_bits;
  t.dataset = std::move(dataset);
  t.circuit = build_hardware_efficient_ansatz(n_bits, n_layers);
  t.backend = std::move(backend);
  t.readout_observable = single_z_observable(n_bits, t.readout_qubit);
  for (const auto& ex : t.dataset) {
    if (static_cast<int>(ex.bits.size()) != n_bits) {
      throw std::invalid_argument("make_parity_task: bitstring length mismatch");
    }
    if (ex.label != parity_label(ex.bits)) {
      throw std::invalid_argument("make_parity_task: label does not equal the parity function");
    }
  }
  return t;
}

// p = (1 - <Z_readout>) / 2, in [0, 1]
inline double parity_prediction(std::span<const double> params, const std::string& bits,
                                const ParityTask& task, Rng& shot_rng) {
  const auto encoding = parity_encoding(bits);
  const double z = measured_expectation(task.circuit, params, encoding, task.readout_observable,
                                        task.backend, shot_rng);
  return 0.5 * (1.0 - z);
}

// Mean squared error of p against the 0/1 labels.
inline double parity_loss(std::span<const double> params, std::span<const ParityExample> batch,
                          const ParityTask& task, Rng& shot_rng) {
  if (batch.empty()) throw std::invalid_argument("parity_loss: batch must be non-empty");
  double acc = 0.0;
  for (const auto& ex : batch) {
    const double p = parity_prediction(params, ex.bits, task, shot_rng);
    const double d = p - static_cast<double>(ex.label);
    acc += d * d;
  }
  return acc / static_cast<double>(batch.size());
}

// Exact-expectation evaluation mode; never touches the benchmark counter.
inline double parity_accuracy(std::span<const double> params, const ParityTask& task,
                              double threshold = 0.5) {
  BackendConfig eval_backend = task.backend;
  eval_backend.shots = kExactShots;
  Rng unused(0);
  std::int64_t correct = 0;
  for (const auto& ex : task.dataset) {
    const auto encoding = parity_encoding(ex.bits);
    const double z = measured_expectation(task.circuit, params, encoding, task.readout_observable,
                                          eval_backend, unused);
    const double p = 0.5 * (1.0 - z);
    if ((p >= threshold ? 1 : 0) == ex.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(task.dataset.size());
}

inline TrainingProblem make_problem(std::shared_ptr<const ParityTask> task, std::uint64_t seed,
                                    int batch_size = 1) {
  if (batch_size < 1) throw std::invalid_argument("make_problem: batch size must be >= 1");
  TrainingProblem p;
  p.n_params = task->circuit.n_params;
  p.param_layer = task->circuit.layer_of;
  p.psr_constants.assign(task->circuit.n_params, 0.5);
  p.passes_per_eval = batch_size;
  auto shot_rng = std::make_shared<Rng>(mix_seed(seed, 4));
  const std::int64_t spp = shots_per_pass(task->readout_observable, task->backend.shots);
  p.bind_instance = [task, shot_rng, spp, batch_size](Rng& data_rng) {
    std::vector<ParityExample> batch(batch_size);
    for (auto& ex : batch) {
      ex = task->dataset[data_rng.below(task->dataset.size())];
    }
    return CostFunctional{
        [task, shot_rng, batch = std::move(batch)](std::span<const double> theta) {
          return parity_loss(theta, batch, *task, *shot_rng);
        },
        spp, batch_size};
  };
  p.eval_metric = [task](std::span<const double> theta) { return parity_accuracy(theta, *task); };
  return p;
}

// ---------------------------------------------------------------------------
// IDX ingestion

struct IdxFile {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

inline IdxFile load_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_idx: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  auto read_u32 = [&](std::size_t offset) {
    if (offset + 4 > bytes.size()) {
      throw std::runtime_error("load_idx: " + path + " truncated at byte offset " +
                               std::to_string(offset) + " (need 4 more bytes)");
    }
    return (static_cast<std::uint32_t>(bytes[offset]) << 24) |
           (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
           (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) |
           static_cast<std::uint32_t>(bytes[offset + 3]);
  };
  IdxFile f;
  f.magic = read_u32(0);
  std::size_t n_dims = 0;
  if (f.magic == kIdxImagesMagic) n_dims = 3;
  else if (f.magic == kIdxLabelsMagic) n_dims = 1;
  else {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "0x%08x", f.magic);
    throw std::runtime_error("load_idx: " + path + " has unsupported magic " + buf +
                             " at byte offset 0");
  }
  std::size_t expected = 1;
  for (std::size_t d = 0; d < n_dims; ++d) {
    const std::uint32_t v = read_u32(4 + 4 * d);
    f.dims.push_back(v);
    expected *= v;
  }
  const std::size_t header = 4 + 4 * n_dims;
  const std::size_t actual = bytes.size() - header;
  if (actual != expected) {
    throw std::runtime_error("load_idx: " + path + " payload has " + std::to_string(actual) +
                             " bytes at offset " + std::to_string(header) + ", expected " +
                             std::to_string(expected));
  }
  f.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return f;
}

// ---------------------------------------------------------------------------
// PCA with min-max scaling of the projected coordinates to [0, pi]

struct PcaModel {
  std::vector<double> mean;             // length d
  std::vector<std::vector<double>> components;  // k orthonormal rows of length d
  std::vector<double> proj_min;         // per component, over the training set
  std::vector<double> proj_max;
};

inline PcaModel pca_fit(const std::vector<std::vector<double>>& rows, int k) {
  if (rows.empty()) throw std::invalid_argument("pca_fit: no data");
  const std::size_t d = rows[0].size();
  if (k < 1 || static_cast<std::size_t>(k) > d) {
    throw std::invalid_argument("pca_fit: component count must be in [1, feature dim]");
  }
  PcaModel model;
  model.mean.assign(d, 0.0);
  for (const auto& r : rows) {
    if (r.size() != d) throw std::invalid_argument("pca_fit: ragged rows");
    for (std::size_t j = 0; j < d; ++j) model.mean[j] += r[j];
  }
  for (double& m : model.mean) m /= static_cast<double>(rows.size());

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d),
                                              static_cast<Eigen::Index>(d));
  Eigen::VectorXd centered(static_cast<Eigen::Index>(d));
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < d; ++j) centered(static_cast<Eigen::Index>(j)) = r[j] - model.mean[j];
    cov.noalias() += centered * centered.transpose();
  }
  cov /= static_cast<double>(rows.size());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw std::runtime_error("pca_fit: eigensolver failed");
  // eigenvalues ascending; take the top k
  model.components.resize(k);
  for (int c = 0; c < k; ++c) {
    const Eigen::Index col = static_cast<Eigen::Index>(d) - 1 - c;
    model.components[c].resize(d);
    for (std::size_t j = 0; j < d; ++j) {
      model.components[c][j] = solver.eigenvectors()(static_cast<Eigen::Index>(j), col);
    }
  }
  model.proj_min.assign(k, std::numeric_limits<double>::infinity());
  model.proj_max.assign(k, -std::numeric_limits<double>::infinity());
  return model;
}

inline std::vector<double> pca_project(const PcaModel& model, std::span<const double> row) {
  if (row.size() != model.mean.size()) throw std::invalid_argument("pca_project: dimension mismatch");
  std::vector<double> out(model.components.size(), 0.0);
  for (std::size_t c = 0; c < model.components.size(); ++c) {
    double acc = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      acc += model.components[c][j] * (row[j] - model.mean[j]);
    }
    out[c] = acc;
  }
  return out;
}

inline std::vector<double> pca_reconstruct(const PcaModel& model, std::span<const double> proj) {
  if (proj.size() != model.components.size()) {
    throw std::invalid_argument("pca_reconstruct: dimension mismatch");
  }
  std::vector<double> out(model.mean);
  for (std::size_t c = 0; c < model.components.size(); ++c) {
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += proj[c] * model.components[c][j];
  }
  return out;
}

// Project then min-max scale each coordinate to [0, pi] using the training
// ranges; out-of-range values (unseen data) are clamped.
inline std::vector<double> pca_apply(const PcaModel& model, std::span<const double> row) {
  std::vector<double> proj = pca_project(model, row);
  for (std::size_t c = 0; c < proj.size(); ++c) {
    const double lo = model.proj_min[c];
    const double hi = model.proj_max[c];
    const double span = hi - lo;
    double scaled = span > 0.0 ? (proj[c] - lo) / span : 0.5;
    scaled = std::clamp(scaled, 0.0, 1.0);
    proj[c] = scaled * std::numbers::pi;
  }
  return proj;
}

// Fit, record the training min/max per projected coordinate, and return the
// scaled training features.
inline std::pair<PcaModel, std::vector<std::vector<double>>> pca_fit_transform(
    const std::vector<std::vector<double>>& rows, int k) {
  PcaModel model = pca_fit(rows, k);
  std::vector<std::vector<double>> projected(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    projected[i] = pca_project(model, rows[i]);
    for (int c = 0; c < k; ++c) {
      model.proj_min[c] = std::min(model.proj_min[c], projected[i][c]);
      model.proj_max[c] = std::max(model.proj_max[c], projected[i][c]);
    }
  }
  std::vector<std::vector<double>> scaled(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) scaled[i] = pca_apply(model, rows[i]);
  return {std::move(model), std::move(scaled)};
}

// ---------------------------------------------------------------------------
// reduced MNIST (binary subset, angle encoding)

struct MnistTask {
  std::vector<std::vector<double>> train_features;  // scaled to [0, pi], dim = n_qubits
  std::vector<int> train_labels;                    // 0 / 1
  std::vector<std::vector<double>> test_features;
  std::vector<int> test_labels;
  Circuit circuit;
  int readout_qubit = 0;
  BackendConfig backend;
  Hamiltonian readout_observable;
  PcaModel pca;
};

inline double mnist_prediction(std::span<const double> params, std::span<const double> features,
                               const MnistTask& task, Rng& shot_rng) {
  const auto encoding = angle_encoding(features);
  const double z = measured_expectation(task.circuit, params, encoding, task.readout_observable,
                                        task.backend, shot_rng);
  return 0.5 * (1.0 - z);
}

inline double mnist_loss(std::span<const double> params, std::span<const std::size_t> batch,
                         const MnistTask& task, Rng& shot_rng) {
  if (batch.empty()) throw std::invalid_argument("mnist_loss: batch must be non-empty");
  double acc = 0.0;
  for (std::size_t idx : batch) {
    const double p = mnist_prediction(params, task.train_features[idx], task, shot_rng);
    const double d = p - static_cast<double>(task.train_labels[idx]);
    acc += d * d;
  }
  return acc / static_cast<double>(batch.size());
}

inline double mnist_accuracy(std::span<const double> params, const MnistTask& task,
                             double threshold = 0.5) {
  BackendConfig eval_backend = task.backend;
  eval_backend.shots = kExactShots;
  Rng unused(0);
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < task.test_features.size(); ++i) {
    const auto encoding = angle_encoding(task.test_features[i]);
    const double z = measured_expectation(task.circuit, params, encoding, task.readout_observable,
                                          eval_backend, unused);
    const double p = 0.5 * (1.0 - z);
    if ((p >= threshold ? 1 : 0) == task.test_labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(task.test_features.size());
}

// Binary subset of the IDX data (labels class_a -> 0, class_b -> 1), PCA to
// n_qubits features, min-max scaled to [0, pi].
inline MnistTask make_mnist_task(const std::string& images_path, const std::string& labels_path,
                                 int n_qubits, int n_layers, int class_a = 0, int class_b = 1,
                                 std::size_t train_count = 512, std::size_t test_count = 512,
                                 BackendConfig backend = {}) {
  const IdxFile images = load_idx(images_path);
  const IdxFile labels = load_idx(labels_path);
  if (images.magic != kIdxImagesMagic) {
    throw std::runtime_error("make_mnist_task: " + images_path + " is not an image file");
  }
  if (labels.magic != kIdxLabelsMagic) {
    throw std::runtime_error("make_mnist_task: " + labels_path + " is not a label file");
  }
  if (images.dims[0] != labels.dims[0]) {
    throw std::runtime_error("make_mnist_task: image/label counts differ");
  }
  const std::size_t n = images.dims[0];
  const std::size_t pixels = static_cast<std::size_t>(images.dims[1]) * images.dims[2];

  std::vector<std::vector<double>> raw;
  std::vector<int> raw_labels;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels.payload[i];
    if (label != class_a && label != class_b) continue;
    std::vector<double> row(pixels);
    for (std::size_t j = 0; j < pixels; ++j) {
      row[j] = static_cast<double>(images.payload[i * pixels + j]) / 255.0;
    }
    raw.push_back(std::move(row));
    raw_labels.push_back(label == class_b ? 1 : 0);
  }
  if (raw.size() < train_count + test_count) {
    throw std::runtime_error("make_mnist_task: only " + std::to_string(raw.size()) +
                             " examples of the requested classes, need " +
                             std::to_string(train_count + test_count));
  }
  std::vector<std::vector<double>> train_raw(raw.begin(),
                                             raw.begin() + static_cast<std::ptrdiff_t>(train_count));
  MnistTask t;
  t.train_labels.assign(raw_labels.begin(),
                        raw_labels.begin() + static_cast<std::ptrdiff_t>(train_count));
  auto [model, train_scaled] = pca_fit_transform(train_raw, n_qubits);
  t.pca = std::move(model);
  t.train_features = std::move(train_scaled);
  for (std::size_t i = train_count; i < train_count + test_count; ++i) {
    t.test_features.push_back(pca_apply(t.pca, raw[i]));
    t.test_labels.push_back(raw_labels[i]);
  }
  t.circuit = build_hardware_efficient_ansatz(n_qubits, n_layers);
  t.backend = std::move(backend);
  t.readout_observable = single_z_observable(n_qubits, t.readout_qubit);
  return t;
}

inline TrainingProblem make_problem(std::shared_ptr<const MnistTask> task, std::uint64_t seed,
                                    int batch_size = 1) {
  if (batch_size < 1) throw std::invalid_argument("make_problem: batch size must be >= 1");
  TrainingProblem p;
  p.n_params = task->circuit.n_params;
  p.param_layer = task->circuit.layer_of;
  p.psr_constants.assign(task->circuit.n_params, 0.5);
  p.passes_per_eval = batch_size;
  auto shot_rng = std::make_shared<Rng>(mix_seed(seed, 4));
  const std::int64_t spp = shots_per_pass(task->readout_observable, task->backend.shots);
  p.bind_instance = [task, shot_rng, spp, batch_size](Rng& data_rng) {
    std::vector<std::size_t> batch(batch_size);
    for (auto& idx : batch) idx = data_rng.below(task->train_features.size());
    return CostFunctional{
        [task, shot_rng, batch = std::move(batch)](std::span<const double> theta) {
          return mnist_loss(theta, batch, *task, *shot_rng);
        },
        spp, batch_size};
  };
  p.eval_metric = [task](std::span<const double> theta) { return mnist_accuracy(theta, *task); };
  return p;
}

}  // namespace wsbd
