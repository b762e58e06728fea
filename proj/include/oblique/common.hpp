#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace oblique {

inline constexpr const char* kVersion = "0.1.0";

// Atoms are stored as rows: an n x d matrix holds n directions in R^d.
// Row-major matches the on-disk layout, so file IO is a straight memcpy.
using RowMatrixD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class ErrorCode {
  // configuration / usage
  config_error,
  // dictionary construction
  empty_contrast_set,
  degenerate_set,
  insufficient_undesirable,
  // persistence
  format_version_mismatch,
  checksum_mismatch,
  dimension_mismatch,
  io_error,
  // solver / numerics
  non_finite_input,
  non_unit_direction,
  rank_deficient,
  missing_layer_dictionary,
  degenerate_spectrum,
  length_mismatch,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& what) { throw Error(code, what); }

// CLI/pipeline exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitDataError = 3;
inline constexpr int kExitNonConverged = 4;

inline bool all_finite(const Eigen::Ref<const Vector>& v) { return v.allFinite(); }
inline bool all_finite(const Eigen::Ref<const RowMatrixD>& m) { return m.allFinite(); }

}  // namespace oblique
