#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "oblique/common.hpp"
#include "oblique/dictionary.hpp"
#include "oblique/elastic_net.hpp"
#include "oblique/intervention.hpp"

namespace oblique {

struct SubspaceStructure {
  int num_subspaces = 1;
  int subspace_dim = 1;
};

struct SyntheticSpec {
  int n = 100;
  int d = 32;
  int num_layers = 1;
  int support_size = 3;
  std::pair<double, double> coeff_range = {0.5, 1.5};
  double noise_sigma = 0.0;
  std::optional<SubspaceStructure> subspace_structure;
  std::uint64_t seed = 0;
  int num_signals = 32;  // per layer

  void validate() const;
};

struct PlantedSignal {
  int layer_id = 0;
  Vector z;
  SparseCode truth;  // planted code; residual holds the noise that was added
};

struct SyntheticProblem {
  ConceptDictionary dictionary;
  std::vector<PlantedSignal> signals;
};

// Unit atoms uniform on the sphere, or drawn inside planted subspaces carved
// from one orthonormal frame (exactly orthogonal subspaces when they fit in
// d). Each signal is an s-sparse combination plus Gaussian noise. Every draw
// comes from the spec seed, so reruns are bit-identical.
SyntheticProblem gen_synthetic(const SyntheticSpec& spec);

// Unit atoms redrawn until all pairwise |<a_i, a_j>| stay below the bound.
RowMatrixD incoherent_atoms(int n, int d, double max_coherence, std::uint64_t seed);
double mutual_coherence(const RowMatrixD& atoms);

struct RecoveryMetrics {
  std::optional<double> support_precision;
  std::optional<double> support_recall;
  double coeff_rmse = 0.0;
  std::optional<double> removed_undesirable_energy_ratio;
  double wallclock_per_solve = 0.0;

  bool exact() const {
    return support_precision && support_recall && *support_precision == 1.0 &&
           *support_recall == 1.0;
  }
};

// Support precision/recall (nonzero threshold 1e-6) and RMSE over the union
// support, aggregated over the batch.
RecoveryMetrics eval_recovery(const std::vector<SparseCode>& solved,
                              const std::vector<SparseCode>& truth);

// Adds the removed-energy ratio: intervention-removed energy relative to the
// planted energy on the undesirable set.
RecoveryMetrics eval_recovery(const std::vector<SparseCode>& solved,
                              const std::vector<SparseCode>& truth,
                              const std::vector<int>& undesirable, const RowMatrixD& atoms,
                              const std::vector<double>& removed_energy);

}  // namespace oblique
