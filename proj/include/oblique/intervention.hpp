#pragma once

#include <filesystem>
#include <map>
#include <vector>

#include "oblique/common.hpp"
#include "oblique/dictionary.hpp"
#include "oblique/elastic_net.hpp"

namespace oblique {

enum class InterventionMethod { oblique_projection, vector_addition, orthogonal_projection };

struct InterventionPlan {
  InterventionMethod method = InterventionMethod::oblique_projection;
  std::vector<int> undesirable;  // sorted ascending concept ids
  double vecadd_strength = 1.0;  // vector_addition only
  ElasticNetParams en_params;    // oblique_projection only
  bool reuse_coefficients = false;

  void validate(int num_concepts) const;
};

struct ActivationFrame {
  int layer_id = 0;
  Vector z;
};

// Decompose, zero the undesirable coefficients, re-synthesize against the
// original residual. Coefficients off the removal set are copied untouched.
struct InterventionResult {
  Vector z_ctrl;
  SparseCode code;        // the input decomposition c_in
  SparseCode controlled;  // c_ctrl: code with the removal set zeroed
  double removed_energy = 0.0;  // || sum_{i in I} c_i a_i ||
  bool solver_converged = true;
};

InterventionResult oblique_project(const Eigen::Ref<const Vector>& z, const RowMatrixD& atoms,
                                   const InterventionPlan& plan,
                                   const SparseCode* warm_start = nullptr);

// z - strength * v for a unit direction v.
Vector vec_add(const Eigen::Ref<const Vector>& z, const Eigen::Ref<const Vector>& v,
               double strength);

struct OrthoProjection {
  Vector z_out;
  int rank = 0;
  bool rank_deficient = false;  // directions were numerically dependent; projection still valid
};

// Remove the span of the given directions (rows of V) via an orthonormal basis.
OrthoProjection ortho_project(const Eigen::Ref<const Vector>& z, const RowMatrixD& directions);

struct StreamStats {
  int solver_calls = 0;
  int frames_processed = 0;
  bool all_converged = true;
};

// Per-frame intervention over a stream. With reuse_coefficients the first
// decomposition solved at each layer is reused for later frames at that
// layer: the coefficients are kept, the residual is recomputed against the
// new frame. One stream is sequential; distinct streams are independent.
class InterventionStream {
 public:
  InterventionStream(const ConceptDictionary& dict, InterventionPlan plan);

  ActivationFrame process(const ActivationFrame& frame);

  const StreamStats& stats() const { return stats_; }

 private:
  const ConceptDictionary& dict_;
  InterventionPlan plan_;
  std::map<int, RowMatrixD> atoms_;        // layer_id -> widened matrix
  std::map<int, SparseCode> cached_codes;  // layer_id -> first frame's code
  StreamStats stats_;

  const RowMatrixD& atoms_for(int layer_id);
};

std::vector<ActivationFrame> intervene_stream(const std::vector<ActivationFrame>& frames,
                                              const ConceptDictionary& dict,
                                              const InterventionPlan& plan,
                                              StreamStats* stats_out = nullptr);

// Frame persistence: frames.f32 (concatenated d-vectors, little-endian
// binary32) plus a sidecar JSON listing (layer_id, offset) per frame.
void save_frames(const std::vector<ActivationFrame>& frames, int dim,
                 const std::filesystem::path& f32_path, const std::filesystem::path& sidecar_path);
std::vector<ActivationFrame> load_frames(const std::filesystem::path& f32_path,
                                         const std::filesystem::path& sidecar_path, int* dim_out = nullptr);

// With a constant regularizer the decomposition against the removal atoms
// alone reduces to least squares, and removing the fit equals projecting onto
// the orthogonal complement of their span. This check solves the least
// squares problem and measures the gap to the projector route.
struct LeastSquaresProjectionCheck {
  Vector controlled;   // z - D_I c*
  double discrepancy = 0.0;  // ||controlled - P_perp z||
  double relative = 0.0;     // discrepancy / ||z||
  bool passed = false;       // relative <= 1e-6
};

LeastSquaresProjectionCheck check_least_squares_projection(const Eigen::Ref<const Vector>& z,
                                                           const RowMatrixD& removal_atoms);

// With a single atom and a pure ridge penalty the decomposition coefficient
// has the closed form <z, v> / (lambda + 1), and removing the fit equals a
// vector addition of strength |<z, v>| / (lambda + 1) along sign(<z, v>) v.
struct RidgeVecAddCheck {
  double coefficient = 0.0;        // minimizer of ||z - c v||^2 + lambda c^2
  double closed_form = 0.0;        // <z, v> / (lambda + 1)
  double coefficient_gap = 0.0;    // |coefficient - closed_form|
  double vecadd_gap = 0.0;         // ||(z - c v) - vec_add(z, v_signed, strength)||
  double solver_gap = 0.0;         // vs solve_elastic_net(tau=0, alpha=lambda); 0 when lambda <= 0
  bool passed = false;             // both gaps <= 1e-10
};

RidgeVecAddCheck check_ridge_vecadd(const Eigen::Ref<const Vector>& z,
                                    const Eigen::Ref<const Vector>& v, double lambda);

}  // namespace oblique
