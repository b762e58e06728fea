#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/SparseCore>
#include <nlohmann/json.hpp>

#include "oblique/common.hpp"
#include "oblique/dictionary.hpp"
#include "oblique/elastic_net.hpp"

namespace oblique {

struct ReductionConfig {
  double energy_fraction = 0.95;        // in (0, 1]
  std::vector<int> layer_subset;        // empty: all layers
};

// Concepts flattened across layers, projected to the smallest subspace
// keeping energy_fraction of the spectral energy, rows then normalized to
// unit length.
struct ConceptEmbedding {
  int reduced_dim = 0;
  RowMatrixD vectors;                 // n x reduced_dim, unit rows
  double normalization_constant = 0;  // mean pre-normalization row norm, recorded for reference
  double retained_energy = 0.0;       // fraction actually kept
};

ConceptEmbedding concat_and_reduce(const ConceptDictionary& dict, const ReductionConfig& cfg);

// Embedding over arbitrary points (rows normalized in place); lets the same
// analytics run on data that did not come from a dictionary.
ConceptEmbedding embedding_from_points(const RowMatrixD& points);

// |<e_i, e_j>| on unit rows; symmetric, 1 on the diagonal.
double similarity(const ConceptEmbedding& emb, int i, int j);

struct RetrievalHit {
  int concept_id = 0;
  double score = 0.0;
};

// k most similar concepts to the query, query excluded, descending score,
// ties by ascending concept_id.
std::vector<RetrievalHit> retrieve_top_k(const ConceptEmbedding& emb, int query_concept, int k);

struct EnscParams {
  double tau_c = 1.0;     // l1/l2 trade-off of the self-expression
  double gamma = 100.0;   // data-fit weight
  int num_clusters = 200;
  int max_iter = 10000;
  double tol = 1e-6;
};

struct AffinityMatrix {
  Eigen::SparseMatrix<double> matrix;  // symmetric, zero diagonal, non-negative
  std::vector<int> non_converged_points;

  Eigen::Index size() const { return matrix.rows(); }
};

// Self-expression of every point as an elastic-net combination of the
// others; the objective tau_c ||c||_1 + (1-tau_c)/2 ||c||^2 + gamma/2 ||x -
// X c||^2 divided by gamma is our solver's form with alpha = 1/gamma, tau =
// tau_c. A = (|C| + |C|^T) / 2; entries below 1e-10 are dropped.
AffinityMatrix ensc_affinity(const ConceptEmbedding& emb, const EnscParams& params,
                             int num_threads = 1);

struct ClusterAssignment {
  std::vector<int> labels;  // in [0, k)
  int num_clusters = 0;
  bool disconnected_warning = false;  // affinity graph has more components than clusters
  double kmeans_inertia = 0.0;
};

// Symmetric-normalized spectral clustering with seeded k-means on the
// leading eigenvector rows. Deterministic for a fixed seed.
ClusterAssignment spectral_cluster(const AffinityMatrix& affinity, int k, std::uint64_t seed = 0);

struct ReportEntry {
  int concept_id = 0;
  std::string name;
  double coefficient = 0.0;
};

// Elastic-net decomposition of z, top_m nonzero coefficients by magnitude,
// signed values preserved.
std::vector<ReportEntry> decomposition_report(const Eigen::Ref<const Vector>& z,
                                              const RowMatrixD& atoms,
                                              const std::vector<std::string>& names,
                                              const ElasticNetParams& en_params, int top_m);

std::string report_to_csv(const std::vector<ReportEntry>& report);
nlohmann::json report_to_json(const std::vector<ReportEntry>& report);

// Embedding export: .f32 payload plus manifest; affinity export: one
// "i j value" line per stored upper-triangle entry.
void save_embedding(const ConceptEmbedding& emb, const std::filesystem::path& f32_path,
                    const std::filesystem::path& manifest_path);
void save_affinity(const AffinityMatrix& affinity, const std::filesystem::path& path);

}  // namespace oblique
