#pragma once

#include <vector>

#include "oblique/common.hpp"

namespace oblique {

// Sparse coding of z against a dictionary of atoms (rows of an n x d matrix):
//
//   minimize over c:  1/2 ||z - sum_j c_j a_j||^2 + alpha * (tau ||c||_1 + (1 - tau)/2 ||c||^2)
//
// First-order optimality, per coordinate, with g_j = a_j . (z - sum c a):
//   c_j != 0 :  g_j = alpha*tau*sign(c_j) + alpha*(1-tau)*c_j
//   c_j == 0 :  |g_j| <= alpha*tau
// The maximum violation of these conditions is the KKT residual; it is zero
// exactly at the optimum and certifies a solution independently of how it was
// produced.

struct ElasticNetParams {
  double alpha = 0.05;   // overall regularization weight, > 0
  double tau = 0.95;     // l1/l2 trade-off in [0, 1]
  double tol = 1e-6;     // KKT tolerance
  int max_iter = 10000;  // coordinate sweeps (active-set) or prox steps (reference)

  void validate() const;
};

struct SparseCode {
  // Nonzero coefficients, ascending index order.
  std::vector<int> indices;
  std::vector<double> values;
  Vector residual;  // z - Dc, exactly as last computed from the stored coefficients
  double objective = 0.0;
  double kkt_residual = 0.0;
  int iterations = 0;
  bool converged = true;
  double solve_seconds = 0.0;

  int support_size() const { return static_cast<int>(indices.size()); }
  Vector to_dense(Eigen::Index n) const;
  double l1_norm() const;
  // Coefficient at index j (0 if off support).
  double coefficient(int j) const;
};

// Active-set solver: coordinate descent on a working support, then a full
// scan admits the worst KKT violators until none exceed tol. Warm starts
// seed the support but never change the optimality gate. Non-convergence is
// reported through SparseCode::converged, not thrown.
SparseCode solve_elastic_net(const Eigen::Ref<const Vector>& z, const RowMatrixD& atoms,
                             const ElasticNetParams& params,
                             const SparseCode* warm_start = nullptr);

// Reference solver: plain proximal gradient with fixed step 1/||D||_2^2,
// iterated to 1e-12 objective stationarity (and the KKT gate). Intended for
// small problems; keeps the fast solver honest.
SparseCode oracle_solve(const Eigen::Ref<const Vector>& z, const RowMatrixD& atoms,
                        const ElasticNetParams& params);

// Max KKT violation of c for the problem (z, atoms, params). 0 iff optimal.
double kkt_residual(const Eigen::Ref<const Vector>& z, const RowMatrixD& atoms,
                    const Eigen::Ref<const Vector>& c, const ElasticNetParams& params);
double kkt_residual(const Eigen::Ref<const Vector>& z, const RowMatrixD& atoms,
                    const SparseCode& code, const ElasticNetParams& params);

double elastic_net_objective(const Eigen::Ref<const Vector>& z, const RowMatrixD& atoms,
                             const Eigen::Ref<const Vector>& c, const ElasticNetParams& params);

// sum_j c_j a_j over the stored support, ascending index order.
Vector synthesize(const RowMatrixD& atoms, const SparseCode& code);
// Same sum restricted to indices NOT in `zeroed` (sorted ascending).
Vector synthesize_excluding(const RowMatrixD& atoms, const SparseCode& code,
                            const std::vector<int>& zeroed);

}  // namespace oblique
