#include "oblique/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "oblique/random.hpp"

namespace oblique {

namespace {

Vector gaussian_vector(Eigen::Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v[i] = normal(rng);
  return v;
}

Vector unit_sphere(Eigen::Index d, std::mt19937_64& rng) {
  for (;;) {
    Vector v = gaussian_vector(d, rng);
    const double norm = v.norm();
    if (norm > 1e-12) return v / norm;
  }
}

// Thin orthonormal frame via Householder QR of a Gaussian draw.
Eigen::MatrixXd orthonormal_frame(Eigen::Index d, Eigen::Index cols, std::mt19937_64& rng) {
  Eigen::MatrixXd g(d, cols);
  for (Eigen::Index j = 0; j < cols; ++j) g.col(j) = gaussian_vector(d, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, cols);
  return q;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (n <= 0 || d <= 0 || num_layers <= 0) raise(ErrorCode::config_error, "n, d, L must be positive");
  if (support_size < 0 || support_size > n)
    raise(ErrorCode::config_error, "support size must be in [0, n]");
  if (coeff_range.first > coeff_range.second)
    raise(ErrorCode::config_error, "coefficient range is inverted");
  if (noise_sigma < 0.0) raise(ErrorCode::config_error, "noise sigma must be >= 0");
  if (num_signals < 0) raise(ErrorCode::config_error, "num_signals must be >= 0");
  if (subspace_structure) {
    if (subspace_structure->num_subspaces <= 0 || subspace_structure->subspace_dim <= 0)
      raise(ErrorCode::config_error, "subspace structure must be positive");
    if (subspace_structure->subspace_dim > d)
      raise(ErrorCode::config_error, "subspace dimension exceeds d");
  }
}

SyntheticProblem gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticProblem problem;
  problem.dictionary.dim = spec.d;

  for (int i = 0; i < spec.n; ++i) {
    ConceptEntry entry;
    entry.concept_id = i;
    char name[32];
    std::snprintf(name, sizeof(name), "concept_%04d", i);
    entry.name = name;
    entry.stimulus_count = 0;
    problem.dictionary.entries.push_back(std::move(entry));
  }

  for (int layer = 0; layer < spec.num_layers; ++layer) {
    std::mt19937_64 rng(derive_seed(spec.seed, tag_from_name("atoms"),
                                    static_cast<std::uint64_t>(layer)));
    RowMatrixF matrix(spec.n, spec.d);
    if (spec.subspace_structure) {
      const int k = spec.subspace_structure->num_subspaces;
      const int sdim = spec.subspace_structure->subspace_dim;
      std::vector<Eigen::MatrixXd> bases;
      if (static_cast<Eigen::Index>(k) * sdim <= spec.d) {
        // One frame sliced into blocks: the subspaces are exactly orthogonal.
        const Eigen::MatrixXd frame = orthonormal_frame(spec.d, static_cast<Eigen::Index>(k) * sdim, rng);
        for (int s = 0; s < k; ++s) bases.push_back(frame.middleCols(s * sdim, sdim));
      } else {
        for (int s = 0; s < k; ++s) bases.push_back(orthonormal_frame(spec.d, sdim, rng));
      }
      // Concepts assigned to subspaces in contiguous blocks.
      for (int i = 0; i < spec.n; ++i) {
        const int s = std::min(k - 1, i / std::max(1, (spec.n + k - 1) / k));
        const Vector coords = unit_sphere(sdim, rng);
        matrix.row(i) = (bases[static_cast<std::size_t>(s)] * coords).cast<float>();
      }
    } else {
      for (int i = 0; i < spec.n; ++i) matrix.row(i) = unit_sphere(spec.d, rng).cast<float>();
    }
    problem.dictionary.layer_ids.push_back(layer);
    problem.dictionary.layer_matrices.push_back(std::move(matrix));
  }

  for (int layer = 0; layer < spec.num_layers; ++layer) {
    // Signals are built from the float-rounded atoms the solver will see.
    const RowMatrixD atoms = problem.dictionary.layer_as_double(layer);
    std::mt19937_64 rng(derive_seed(spec.seed, tag_from_name("signals"),
                                    static_cast<std::uint64_t>(layer)));
    std::uniform_real_distribution<double> coeff(spec.coeff_range.first, spec.coeff_range.second);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int t = 0; t < spec.num_signals; ++t) {
      const auto support = sample_without_replacement(static_cast<std::uint64_t>(spec.n),
                                                      static_cast<std::size_t>(spec.support_size),
                                                      rng);
      PlantedSignal signal;
      signal.layer_id = layer;
      for (const auto j : support) {
        signal.truth.indices.push_back(static_cast<int>(j));
        signal.truth.values.push_back(coeff(rng));
      }
      Vector eps = Vector::Zero(spec.d);
      if (spec.noise_sigma > 0.0)
        for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = spec.noise_sigma * noise(rng);
      signal.z = synthesize(atoms, signal.truth) + eps;
      signal.truth.residual = eps;
      problem.signals.push_back(std::move(signal));
    }
  }
  return problem;
}

RowMatrixD incoherent_atoms(int n, int d, double max_coherence, std::uint64_t seed) {
  if (n <= 0 || d <= 0) raise(ErrorCode::config_error, "n and d must be positive");
  if (!(max_coherence > 0.0)) raise(ErrorCode::config_error, "coherence bound must be > 0");
  std::mt19937_64 rng(derive_seed(seed, tag_from_name("incoherent")));
  RowMatrixD atoms(n, d);
  const int max_attempts = 50000;
  int placed = 0;
  for (int attempt = 0; attempt < max_attempts && placed < n; ++attempt) {
    const Vector candidate = unit_sphere(d, rng);
    bool ok = true;
    for (int j = 0; j < placed; ++j) {
      if (std::abs(atoms.row(j).dot(candidate)) >= max_coherence) {
        ok = false;
        break;
      }
    }
    if (ok) atoms.row(placed++) = candidate;
  }
  if (placed < n)
    raise(ErrorCode::config_error, "could not place " + std::to_string(n) +
                                       " atoms below coherence " + std::to_string(max_coherence));
  return atoms;
}

double mutual_coherence(const RowMatrixD& atoms) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < atoms.rows(); ++i)
    for (Eigen::Index j = i + 1; j < atoms.rows(); ++j)
      worst = std::max(worst, std::abs(atoms.row(i).dot(atoms.row(j))));
  return worst;
}

namespace {

constexpr double kSupportThreshold = 1e-6;

std::vector<int> support_of(const SparseCode& code) {
  std::vector<int> s;
  for (std::size_t k = 0; k < code.indices.size(); ++k)
    if (std::abs(code.values[k]) > kSupportThreshold) s.push_back(code.indices[k]);
  return s;
}

}  // namespace

RecoveryMetrics eval_recovery(const std::vector<SparseCode>& solved,
                              const std::vector<SparseCode>& truth) {
  if (solved.size() != truth.size())
    raise(ErrorCode::length_mismatch, "solved and planted batches differ in length");

  long true_pos = 0, false_pos = 0, false_neg = 0;
  double sq_sum = 0.0;
  long union_count = 0;
  double seconds = 0.0;
  for (std::size_t i = 0; i < solved.size(); ++i) {
    const auto got = support_of(solved[i]);
    const auto want = support_of(truth[i]);
    std::vector<int> union_support;
    std::set_union(got.begin(), got.end(), want.begin(), want.end(),
                   std::back_inserter(union_support));
    for (const int j : union_support) {
      const bool in_got = std::binary_search(got.begin(), got.end(), j);
      const bool in_want = std::binary_search(want.begin(), want.end(), j);
      if (in_got && in_want)
        ++true_pos;
      else if (in_got)
        ++false_pos;
      else
        ++false_neg;
      const double diff = solved[i].coefficient(j) - truth[i].coefficient(j);
      sq_sum += diff * diff;
      ++union_count;
    }
    seconds += solved[i].solve_seconds;
  }

  RecoveryMetrics metrics;
  if (true_pos + false_pos > 0)
    metrics.support_precision =
        static_cast<double>(true_pos) / static_cast<double>(true_pos + false_pos);
  if (true_pos + false_neg > 0)
    metrics.support_recall =
        static_cast<double>(true_pos) / static_cast<double>(true_pos + false_neg);
  metrics.coeff_rmse = union_count > 0 ? std::sqrt(sq_sum / static_cast<double>(union_count)) : 0.0;
  metrics.wallclock_per_solve =
      solved.empty() ? 0.0 : seconds / static_cast<double>(solved.size());
  return metrics;
}

RecoveryMetrics eval_recovery(const std::vector<SparseCode>& solved,
                              const std::vector<SparseCode>& truth,
                              const std::vector<int>& undesirable, const RowMatrixD& atoms,
                              const std::vector<double>& removed_energy) {
  RecoveryMetrics metrics = eval_recovery(solved, truth);
  if (removed_energy.size() != truth.size())
    raise(ErrorCode::length_mismatch, "removed-energy batch differs in length");
  double removed = 0.0, planted = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    Vector planted_component = Vector::Zero(atoms.cols());
    for (std::size_t k = 0; k < truth[i].indices.size(); ++k)
      if (std::binary_search(undesirable.begin(), undesirable.end(), truth[i].indices[k]))
        planted_component += truth[i].values[k] * atoms.row(truth[i].indices[k]).transpose();
    planted += planted_component.norm();
    removed += removed_energy[i];
  }
  if (planted > 0.0)
    metrics.removed_undesirable_energy_ratio = std::clamp(removed / planted, 0.0, 1.0);
  return metrics;
}

}  // namespace oblique
