#include "oblique/intervention.hpp"

#include <algorithm>
#include <cmath>

#include "oblique/io.hpp"

namespace oblique {

namespace fs = std::filesystem;
using nlohmann::json;

void InterventionPlan::validate(int num_concepts) const {
  if (!std::is_sorted(undesirable.begin(), undesirable.end()))
    raise(ErrorCode::config_error, "undesirable set must be sorted ascending");
  if (std::adjacent_find(undesirable.begin(), undesirable.end()) != undesirable.end())
    raise(ErrorCode::config_error, "undesirable set contains duplicates");
  if (!undesirable.empty() &&
      (undesirable.front() < 0 || undesirable.back() >= num_concepts))
    raise(ErrorCode::config_error, "undesirable concept id out of range");
  if (!std::isfinite(vecadd_strength))
    raise(ErrorCode::config_error, "vecadd strength must be finite");
}

namespace {

SparseCode zero_on(const SparseCode& code, const std::vector<int>& removal) {
  SparseCode out;
  out.indices.reserve(code.indices.size());
  out.values.reserve(code.values.size());
  for (std::size_t k = 0; k < code.indices.size(); ++k) {
    if (std::binary_search(removal.begin(), removal.end(), code.indices[k])) continue;
    out.indices.push_back(code.indices[k]);
    out.values.push_back(code.values[k]);  // benign coefficients copied bit for bit
  }
  out.converged = code.converged;
  out.iterations = code.iterations;
  return out;
}

InterventionResult apply_removal(const Eigen::Ref<const Vector>& z, const RowMatrixD& atoms,
                                 const std::vector<int>& removal, SparseCode code) {
  InterventionResult result;
  result.controlled = zero_on(code, removal);
  Vector removed = Vector::Zero(z.size());
  for (std::size_t k = 0; k < code.indices.size(); ++k)
    if (std::binary_search(removal.begin(), removal.end(), code.indices[k]))
      removed += code.values[k] * atoms.row(code.indices[k]).transpose();
  result.removed_energy = removed.norm();
  // Synthesis: r_in + D c_ctrl. Residual recomputed against this z so an
  // empty removal set returns z itself.
  const Vector synth_in = synthesize(atoms, code);
  const Vector residual = z - synth_in;
  result.z_ctrl = residual + synthesize(atoms, result.controlled);
  result.controlled.residual = z - synthesize(atoms, result.controlled);
  result.solver_converged = code.converged;
  result.code = std::move(code);
  return result;
}

}  // namespace

InterventionResult oblique_project(const Eigen::Ref<const Vector>& z, const RowMatrixD& atoms,
                                   const InterventionPlan& plan, const SparseCode* warm_start) {
  plan.validate(static_cast<int>(atoms.rows()));
  SparseCode code = solve_elastic_net(z, atoms, plan.en_params, warm_start);
  return apply_removal(z, atoms, plan.undesirable, std::move(code));
}

Vector vec_add(const Eigen::Ref<const Vector>& z, const Eigen::Ref<const Vector>& v,
               double strength) {
  if (v.size() != z.size())
    raise(ErrorCode::dimension_mismatch, "direction dimension does not match vector");
  const double norm = v.norm();
  if (std::abs(norm - 1.0) > kUnitNormTolerance)
    raise(ErrorCode::non_unit_direction,
          "direction norm " + format_double(norm) + " is not 1 within 1e-5");
  if (!std::isfinite(strength)) raise(ErrorCode::non_finite_input, "strength must be finite");
  return z - strength * v;
}

OrthoProjection ortho_project(const Eigen::Ref<const Vector>& z, const RowMatrixD& directions) {
  if (directions.rows() < 1) raise(ErrorCode::config_error, "need at least one direction");
  if (directions.cols() != z.size())
    raise(ErrorCode::dimension_mismatch, "direction dimension does not match vector");
  if (!directions.allFinite() || !z.allFinite())
    raise(ErrorCode::non_finite_input, "input contains NaN or Inf");

  // Orthonormal basis of the span from the SVD; tiny singular values are
  // treated as dependent directions, not as extra dimensions.
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(directions.transpose(), Eigen::ComputeThinU);
  const auto& sv = svd.singularValues();
  const double cutoff =
      sv.size() > 0 ? sv[0] * std::max(directions.rows(), directions.cols()) *
                          std::numeric_limits<double>::epsilon()
                    : 0.0;
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] > cutoff) ++rank;
  if (rank == 0) raise(ErrorCode::rank_deficient, "directions span nothing");

  OrthoProjection out;
  out.rank = rank;
  out.rank_deficient = rank < directions.rows();
  const auto basis = svd.matrixU().leftCols(rank);
  out.z_out = z - basis * (basis.transpose() * z);
  return out;
}

InterventionStream::InterventionStream(const ConceptDictionary& dict, InterventionPlan plan)
    : dict_(dict), plan_(std::move(plan)) {
  plan_.validate(dict_.num_concepts());
}

const RowMatrixD& InterventionStream::atoms_for(int layer_id) {
  auto it = atoms_.find(layer_id);
  if (it == atoms_.end()) it = atoms_.emplace(layer_id, dict_.layer_as_double(layer_id)).first;
  return it->second;
}

ActivationFrame InterventionStream::process(const ActivationFrame& frame) {
  if (!dict_.has_layer(frame.layer_id))
    raise(ErrorCode::missing_layer_dictionary,
          "no dictionary for layer " + std::to_string(frame.layer_id));
  if (frame.z.size() != dict_.dim)
    raise(ErrorCode::dimension_mismatch, "frame dimension does not match dictionary");
  ++stats_.frames_processed;
  const RowMatrixD& atoms = atoms_for(frame.layer_id);

  switch (plan_.method) {
    case InterventionMethod::vector_addition: {
      Vector z = frame.z;
      for (int i : plan_.undesirable)
        z = vec_add(z, atoms.row(i).transpose(), plan_.vecadd_strength);
      return {frame.layer_id, std::move(z)};
    }
    case InterventionMethod::orthogonal_projection: {
      if (plan_.undesirable.empty()) return frame;
      RowMatrixD directions(static_cast<Eigen::Index>(plan_.undesirable.size()), atoms.cols());
      for (std::size_t k = 0; k < plan_.undesirable.size(); ++k)
        directions.row(static_cast<Eigen::Index>(k)) = atoms.row(plan_.undesirable[k]);
      return {frame.layer_id, ortho_project(frame.z, directions).z_out};
    }
    case InterventionMethod::oblique_projection: {
      InterventionResult result;
      const auto cached = cached_codes.find(frame.layer_id);
      if (plan_.reuse_coefficients && cached != cached_codes.end()) {
        result = apply_removal(frame.z, atoms, plan_.undesirable, cached->second);
      } else {
        result = oblique_project(frame.z, atoms, plan_);
        ++stats_.solver_calls;
        if (plan_.reuse_coefficients) cached_codes.emplace(frame.layer_id, result.code);
      }
      stats_.all_converged = stats_.all_converged && result.solver_converged;
      return {frame.layer_id, std::move(result.z_ctrl)};
    }
  }
  raise(ErrorCode::config_error, "unknown intervention method");
}

std::vector<ActivationFrame> intervene_stream(const std::vector<ActivationFrame>& frames,
                                              const ConceptDictionary& dict,
                                              const InterventionPlan& plan,
                                              StreamStats* stats_out) {
  InterventionStream stream(dict, plan);
  std::vector<ActivationFrame> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(stream.process(f));
  if (stats_out) *stats_out = stream.stats();
  return out;
}

void save_frames(const std::vector<ActivationFrame>& frames, int dim, const fs::path& f32_path,
                 const fs::path& sidecar_path) {
  RowMatrixF data(static_cast<Eigen::Index>(frames.size()), dim);
  json listing = json::array();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].z.size() != dim)
      raise(ErrorCode::dimension_mismatch, "frame " + std::to_string(i) + " has wrong dimension");
    data.row(static_cast<Eigen::Index>(i)) = frames[i].z.cast<float>();
    listing.push_back({{"layer_id", frames[i].layer_id},
                       {"offset", static_cast<std::int64_t>(i) * dim}});
  }
  write_f32(f32_path, data);
  write_json(sidecar_path, json{{"d", dim}, {"frames", listing}});
}

std::vector<ActivationFrame> load_frames(const fs::path& f32_path, const fs::path& sidecar_path,
                                         int* dim_out) {
  const json sidecar = read_json(sidecar_path);
  const int dim = sidecar.at("d").get<int>();
  if (dim <= 0) raise(ErrorCode::dimension_mismatch, "sidecar d must be positive");
  const auto values = read_f32(f32_path);
  std::vector<ActivationFrame> frames;
  for (const auto& entry : sidecar.at("frames")) {
    const auto offset = entry.at("offset").get<std::int64_t>();
    if (offset < 0 || offset + dim > static_cast<std::int64_t>(values.size()))
      raise(ErrorCode::dimension_mismatch, "frame offset outside the f32 payload");
    ActivationFrame frame;
    frame.layer_id = entry.at("layer_id").get<int>();
    frame.z.resize(dim);
    for (int k = 0; k < dim; ++k) frame.z[k] = values[static_cast<std::size_t>(offset + k)];
    if (!frame.z.allFinite()) raise(ErrorCode::non_finite_input, "frame contains NaN or Inf");
    frames.push_back(std::move(frame));
  }
  if (dim_out) *dim_out = dim;
  return frames;
}

LeastSquaresProjectionCheck check_least_squares_projection(const Eigen::Ref<const Vector>& z,
                                                           const RowMatrixD& removal_atoms) {
  if (removal_atoms.cols() != z.size())
    raise(ErrorCode::dimension_mismatch, "atom dimension does not match vector");
  const Eigen::MatrixXd basis_input = removal_atoms.transpose();  // d x |I|
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(basis_input);
  if (qr.rank() < removal_atoms.rows())
    raise(ErrorCode::rank_deficient, "removal atoms are linearly dependent");

  const Vector coeffs = qr.solve(z);
  LeastSquaresProjectionCheck check;
  check.controlled = z - basis_input * coeffs;

  const OrthoProjection proj = ortho_project(z, removal_atoms);
  check.discrepancy = (check.controlled - proj.z_out).norm();
  const double z_norm = z.norm();
  check.relative = z_norm > 0.0 ? check.discrepancy / z_norm : check.discrepancy;
  check.passed = check.relative <= 1e-6;
  return check;
}

RidgeVecAddCheck check_ridge_vecadd(const Eigen::Ref<const Vector>& z,
                                    const Eigen::Ref<const Vector>& v, double lambda) {
  if (v.size() != z.size())
    raise(ErrorCode::dimension_mismatch, "direction dimension does not match vector");
  if (!(lambda > -1.0)) raise(ErrorCode::config_error, "lambda must exceed -1");
  const double norm = v.norm();
  if (std::abs(norm - 1.0) > kUnitNormTolerance)
    raise(ErrorCode::non_unit_direction, "direction must be unit");

  RidgeVecAddCheck check;
  const double inner = z.dot(v);
  // Unique minimizer of the univariate quadratic ||z - c v||^2 + lambda c^2.
  check.coefficient = inner / (v.squaredNorm() + lambda);
  check.closed_form = inner / (lambda + 1.0);
  check.coefficient_gap = std::abs(check.coefficient - check.closed_form);

  const Vector removed = z - check.coefficient * v;
  const double strength = std::abs(inner) / (lambda + 1.0);
  const Vector signed_dir = inner >= 0.0 ? Vector(v) : Vector(-v);
  check.vecadd_gap = (removed - vec_add(z, signed_dir, strength)).norm();

  if (lambda > 0.0) {
    // Our regularizer at tau = 0 scales the same problem by 1/2, so the
    // solver itself must land on the closed form.
    RowMatrixD single(1, v.size());
    single.row(0) = v.transpose();
    ElasticNetParams params;
    params.alpha = lambda;
    params.tau = 0.0;
    params.tol = 1e-12;
    params.max_iter = 1000;
    const SparseCode code = solve_elastic_net(z, single, params);
    check.solver_gap = std::abs(code.coefficient(0) - check.closed_form);
  }
  check.passed = check.coefficient_gap <= 1e-10 && check.vecadd_gap <= 1e-10 &&
                 check.solver_gap <= 1e-9;
  return check;
}

}  // namespace oblique
