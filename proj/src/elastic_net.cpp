#include "oblique/elastic_net.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace oblique {

namespace {

double soft_threshold(double x, double t) {
  const double v = std::abs(x) - t;
  return v > 0.0 ? std::copysign(v, x) : 0.0;
}

void check_inputs(const Eigen::Ref<const Vector>& z, const RowMatrixD& atoms,
                  const ElasticNetParams& params) {
  params.validate();
  if (atoms.cols() != z.size())
    raise(ErrorCode::dimension_mismatch, "atom dimension " + std::to_string(atoms.cols()) +
                                             " does not match vector dimension " +
                                             std::to_string(z.size()));
  if (!z.allFinite() || !atoms.allFinite())
    raise(ErrorCode::non_finite_input, "input contains NaN or Inf");
}

Vector dense_from(const std::vector<int>& idx, const std::vector<double>& val, Eigen::Index n) {
  Vector c = Vector::Zero(n);
  for (std::size_t k = 0; k < idx.size(); ++k) c[idx[k]] = val[k];
  return c;
}

// Squared spectral norm of the dictionary (Lipschitz constant of the smooth part).
double squared_spectral_norm(const RowMatrixD& atoms) {
  const Eigen::Index n = atoms.rows(), d = atoms.cols();
  if (n == 0 || d == 0) return 0.0;
  if (std::min(n, d) <= 256) {
    Eigen::MatrixXd g;
    if (n <= d)
      g.noalias() = atoms * atoms.transpose();
    else
      g.noalias() = atoms.transpose() * atoms;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g, Eigen::EigenvaluesOnly);
    return std::max(0.0, es.eigenvalues().maxCoeff());
  }
  // Power iteration for large dictionaries; bias high so 1/L stays a valid step.
  Vector v(d);
  std::uint64_t s = 0x2545f4914f6cdd1dULL;
  for (Eigen::Index i = 0; i < d; ++i) {
    s = s * 6364136223846793005ULL + 1442695040888963407ULL;
    v[i] = static_cast<double>(s >> 11) / 9007199254740992.0 - 0.5;
  }
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < 500; ++it) {
    Vector w = atoms.transpose() * (atoms * v);
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    w /= norm;
    const double next = w.dot(atoms.transpose() * (atoms * w));
    const bool settled = std::abs(next - lambda) <= 1e-13 * std::max(1.0, next);
    lambda = next;
    v = std::move(w);
    if (settled) break;
  }
  return lambda * (1.0 + 1e-6);
}

struct KktScan {
  double max_violation = 0.0;
  Vector gradient;  // a_j . r for all j
};

KktScan scan_kkt(const RowMatrixD& atoms, const Vector& residual, const Vector& c, double l1,
                 double l2) {
  KktScan scan;
  scan.gradient.noalias() = atoms * residual;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < c.size(); ++j) {
    double v;
    if (c[j] != 0.0)
      v = std::abs(scan.gradient[j] - l1 * (c[j] > 0 ? 1.0 : -1.0) - l2 * c[j]);
    else
      v = std::max(0.0, std::abs(scan.gradient[j]) - l1);
    worst = std::max(worst, v);
  }
  scan.max_violation = worst;
  return scan;
}

}  // namespace

void ElasticNetParams::validate() const {
  if (!(alpha > 0.0)) raise(ErrorCode::config_error, "alpha must be > 0");
  if (!(tau >= 0.0 && tau <= 1.0)) raise(ErrorCode::config_error, "tau must be in [0, 1]");
  if (!(tol > 0.0)) raise(ErrorCode::config_error, "tol must be > 0");
  if (max_iter <= 0) raise(ErrorCode::config_error, "max_iter must be positive");
}

Vector SparseCode::to_dense(Eigen::Index n) const { return dense_from(indices, values, n); }

double SparseCode::l1_norm() const {
  double s = 0.0;
  for (double v : values) s += std::abs(v);
  return s;
}

double SparseCode::coefficient(int j) const {
  const auto it = std::lower_bound(indices.begin(), indices.end(), j);
  if (it == indices.end() || *it != j) return 0.0;
  return values[static_cast<std::size_t>(it - indices.begin())];
}

Vector synthesize(const RowMatrixD& atoms, const SparseCode& code) {
  Vector y = Vector::Zero(atoms.cols());
  for (std::size_t k = 0; k < code.indices.size(); ++k)
    y += code.values[k] * atoms.row(code.indices[k]).transpose();
  return y;
}

Vector synthesize_excluding(const RowMatrixD& atoms, const SparseCode& code,
                            const std::vector<int>& zeroed) {
  Vector y = Vector::Zero(atoms.cols());
  for (std::size_t k = 0; k < code.indices.size(); ++k) {
    if (std::binary_search(zeroed.begin(), zeroed.end(), code.indices[k])) continue;
    y += code.values[k] * atoms.row(code.indices[k]).transpose();
  }
  return y;
}

double elastic_net_objective(const Eigen::Ref<const Vector>& z, const RowMatrixD& atoms,
                             const Eigen::Ref<const Vector>& c,
                             const ElasticNetParams& params) {
  const Vector r = z - atoms.transpose() * c;
  return 0.5 * r.squaredNorm() +
         params.alpha * (params.tau * c.lpNorm<1>() + (1.0 - params.tau) * 0.5 * c.squaredNorm());
}

double kkt_residual(const Eigen::Ref<const Vector>& z, const RowMatrixD& atoms,
                    const Eigen::Ref<const Vector>& c, const ElasticNetParams& params) {
  check_inputs(z, atoms, params);
  if (c.size() != atoms.rows())
    raise(ErrorCode::dimension_mismatch, "coefficient length does not match atom count");
  if (!c.allFinite()) raise(ErrorCode::non_finite_input, "coefficients contain NaN or Inf");
  const Vector r = z - atoms.transpose() * c;
  const double l1 = params.alpha * params.tau;
  const double l2 = params.alpha * (1.0 - params.tau);
  return scan_kkt(atoms, r, c, l1, l2).max_violation;
}

double kkt_residual(const Eigen::Ref<const Vector>& z, const RowMatrixD& atoms,
                    const SparseCode& code, const ElasticNetParams& params) {
  return kkt_residual(z, atoms, code.to_dense(atoms.rows()), params);
}

SparseCode solve_elastic_net(const Eigen::Ref<const Vector>& z, const RowMatrixD& atoms,
                             const ElasticNetParams& params, const SparseCode* warm_start) {
  const auto t0 = std::chrono::steady_clock::now();
  check_inputs(z, atoms, params);
  const Eigen::Index n = atoms.rows();
  const double l1 = params.alpha * params.tau;
  const double l2 = params.alpha * (1.0 - params.tau);

  const Vector atom_sq = atoms.rowwise().squaredNorm();

  Vector c = Vector::Zero(n);
  std::vector<int> active;
  std::vector<int> slot(static_cast<std::size_t>(n), -1);  // atom -> position in active

  // Gram of the active atoms, grown a row/column at a time. Skipped for the
  // dense ridge regime where the active set is the whole dictionary.
  const bool use_gram = !(l1 == 0.0 && n > 2048);
  Eigen::MatrixXd gram;       // |A| x |A| when use_gram
  Vector target;              // a_j . z for j in active
  Vector coeffs;              // c restricted to active order

  auto admit = [&](int j) {
    if (slot[static_cast<std::size_t>(j)] >= 0) return;
    const int pos = static_cast<int>(active.size());
    slot[static_cast<std::size_t>(j)] = pos;
    active.push_back(j);
    if (use_gram) {
      if (gram.rows() < pos + 1) {
        const Eigen::Index grown = std::max<Eigen::Index>(16, 2 * (pos + 1));
        gram.conservativeResize(grown, grown);
        target.conservativeResize(grown);
        coeffs.conservativeResize(grown);
      }
      for (int k = 0; k <= pos; ++k) {
        const double g = atoms.row(active[static_cast<std::size_t>(k)]).dot(atoms.row(j));
        gram(k, pos) = g;
        gram(pos, k) = g;
      }
      target[pos] = atoms.row(j).dot(z);
      coeffs[pos] = c[j];
    }
  };

  if (warm_start) {
    for (std::size_t k = 0; k < warm_start->indices.size(); ++k) {
      const int j = warm_start->indices[k];
      if (j < 0 || j >= n)
        raise(ErrorCode::dimension_mismatch, "warm start index out of range");
      c[j] = warm_start->values[k];
      admit(j);
    }
  }
  if (l1 == 0.0) {
    // Pure ridge: the zero-coefficient condition |g_j| <= 0 admits everything.
    for (int j = 0; j < n; ++j) admit(j);
  }

  // Drive the internal loop slightly below tol so the certificate recomputed
  // on the stored result stays within tol.
  const double gate = 0.9 * params.tol;
  int sweeps = 0;
  double inner_thresh = 0.25 * gate;
  bool converged = false;

  Vector residual;  // z - Dc, maintained directly only on the no-gram path
  if (!use_gram) residual = z - atoms.transpose() * c;

  while (true) {
    const int m = static_cast<int>(active.size());

    if (use_gram && m > 0) {
      // h = G c on the active block, recomputed here to kill drift.
      for (int k = 0; k < m; ++k) coeffs[k] = c[active[static_cast<std::size_t>(k)]];
      Vector h = gram.topLeftCorner(m, m) * coeffs.head(m);
      const int phase_cap = std::min(params.max_iter - sweeps, 200);
      for (int phase = 0; phase < phase_cap; ++phase) {
        double max_step = 0.0;
        for (int k = 0; k < m; ++k) {
          const int j = active[static_cast<std::size_t>(k)];
          const double ajj = atom_sq[j];
          if (ajj == 0.0) continue;
          const double rho = target[k] - (h[k] - ajj * coeffs[k]);
          const double next = soft_threshold(rho, l1) / (ajj + l2);
          const double delta = next - coeffs[k];
          if (delta != 0.0) {
            h.head(m) += delta * gram.col(k).head(m);
            coeffs[k] = next;
            max_step = std::max(max_step, std::sqrt(ajj) * std::abs(delta));
          }
        }
        ++sweeps;
        if (max_step <= inner_thresh) break;
      }

      // Finish the phase by pivoting on the fixed-sign restricted problem:
      // solve it exactly; if the solution leaves the current orthant, step to
      // the first zero crossing, retire that coordinate, and re-solve. This
      // resolves the degenerate faces where plain sweeps only creep.
      {
        const auto block_obj = [&](const Vector& x) {
          return 0.5 * x.dot(gram.topLeftCorner(m, m) * x) - x.dot(target.head(m)) +
                 l1 * x.lpNorm<1>() + 0.5 * l2 * x.squaredNorm();
        };
        Vector pivot = coeffs.head(m);
        const double obj_before = block_obj(pivot);
        std::vector<int> support;
        for (int k = 0; k < m; ++k)
          if (pivot[k] != 0.0) support.push_back(k);
        bool valid = !support.empty();
        for (int round = 0; valid && round <= m; ++round) {
          const int s = static_cast<int>(support.size());
          if (s == 0) break;
          Eigen::MatrixXd sys(s, s);
          Vector rhs(s);
          for (int a = 0; a < s; ++a) {
            for (int b = 0; b < s; ++b) sys(a, b) = gram(support[static_cast<std::size_t>(a)],
                                                         support[static_cast<std::size_t>(b)]);
            rhs[a] = target[support[static_cast<std::size_t>(a)]] -
                     l1 * (pivot[support[static_cast<std::size_t>(a)]] > 0 ? 1.0 : -1.0);
          }
          // Jitter at roundoff scale keeps the factorization stable on
          // singular supports without disturbing the certificate.
          sys.diagonal().array() += l2 + 1e-15 * (1.0 + sys.trace() / s);
          const Vector solved = Eigen::LDLT<Eigen::MatrixXd>(sys).solve(rhs);
          if (!solved.allFinite()) {
            valid = false;
            break;
          }
          bool inside = true;
          for (int a = 0; a < s; ++a)
            if (solved[a] * pivot[support[static_cast<std::size_t>(a)]] < 0.0) inside = false;
          if (inside) {
            for (int a = 0; a < s; ++a) pivot[support[static_cast<std::size_t>(a)]] = solved[a];
            break;
          }
          // First zero crossing along the segment toward the solution.
          double step = 1.0;
          for (int a = 0; a < s; ++a) {
            const double from = pivot[support[static_cast<std::size_t>(a)]];
            if (solved[a] * from < 0.0) step = std::min(step, from / (from - solved[a]));
          }
          std::vector<int> survivors;
          for (int a = 0; a < s; ++a) {
            const int k = support[static_cast<std::size_t>(a)];
            const double from = pivot[k];
            const double moved = from + step * (solved[a] - from);
            if (solved[a] * from < 0.0 &&
                from / (from - solved[a]) <= step * (1.0 + 1e-12)) {
              pivot[k] = 0.0;
            } else {
              pivot[k] = moved;
              if (moved != 0.0) survivors.push_back(k);
            }
          }
          support = std::move(survivors);
        }
        if (valid && block_obj(pivot) <= obj_before + 1e-15 * (1.0 + z.squaredNorm()))
          coeffs.head(m) = pivot;
      }
      for (int k = 0; k < m; ++k) c[active[static_cast<std::size_t>(k)]] = coeffs[k];
    } else if (m > 0) {
      const int phase_cap = std::min(params.max_iter - sweeps, 200);
      for (int phase = 0; phase < phase_cap; ++phase) {
        double max_step = 0.0;
        for (int j : active) {
          const double ajj = atom_sq[j];
          if (ajj == 0.0) continue;
          const double rho = atoms.row(j).dot(residual) + c[j] * ajj;
          const double next = soft_threshold(rho, l1) / (ajj + l2);
          const double delta = next - c[j];
          if (delta != 0.0) {
            residual -= delta * atoms.row(j).transpose();
            c[j] = next;
            max_step = std::max(max_step, std::sqrt(ajj) * std::abs(delta));
          }
        }
        ++sweeps;
        if (max_step <= inner_thresh) break;
      }
    } else {
      ++sweeps;  // empty working set still costs a scan
    }

    // Drop exact zeros; they re-enter through the violation scan if needed.
    std::vector<int> kept;
    kept.reserve(active.size());
    for (int j : active) {
      if (c[j] != 0.0) {
        slot[static_cast<std::size_t>(j)] = static_cast<int>(kept.size());
        kept.push_back(j);
      } else {
        slot[static_cast<std::size_t>(j)] = -1;
      }
    }
    if (use_gram && kept.size() != active.size() && !kept.empty()) {
      // Compact the Gram block to match the surviving order.
      Eigen::MatrixXd packed(kept.size(), kept.size());
      Vector packed_target(kept.size());
      std::vector<int> old_pos;
      old_pos.reserve(kept.size());
      {
        int scan_pos = 0;
        for (int j : active) {
          if (c[j] != 0.0) old_pos.push_back(scan_pos);
          ++scan_pos;
        }
      }
      for (std::size_t a = 0; a < kept.size(); ++a) {
        packed_target[static_cast<Eigen::Index>(a)] = target[old_pos[a]];
        for (std::size_t b = 0; b < kept.size(); ++b)
          packed(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
              gram(old_pos[a], old_pos[b]);
      }
      gram.topLeftCorner(packed.rows(), packed.cols()) = packed;
      target.head(packed_target.size()) = packed_target;
    }
    active = std::move(kept);

    // Clean residual, then certify or grow the working set.
    residual = z;
    for (int j : active) residual -= c[j] * atoms.row(j).transpose();
    const KktScan scan = scan_kkt(atoms, residual, c, l1, l2);
    if (scan.max_violation <= gate) {
      converged = true;
      break;
    }
    if (sweeps >= params.max_iter) break;

    std::vector<std::pair<double, int>> violators;
    for (int j = 0; j < n; ++j) {
      if (slot[static_cast<std::size_t>(j)] >= 0) continue;
      const double v = std::max(0.0, std::abs(scan.gradient[j]) - l1);
      if (v > gate) violators.emplace_back(v, j);
    }
    if (violators.empty()) {
      // All remaining violation sits on active coordinates; tighten and iterate.
      inner_thresh = std::max(inner_thresh * 0.25, 1e-3 * gate);
      continue;
    }
    const std::size_t cap = std::max<std::size_t>(32, active.size());
    if (violators.size() > cap) {
      std::partial_sort(violators.begin(), violators.begin() + static_cast<std::ptrdiff_t>(cap),
                        violators.end(), std::greater<>());
      violators.resize(cap);
    }
    for (const auto& [v, j] : violators) admit(j);
  }

  SparseCode code;
  for (int j = 0; j < n; ++j) {
    if (c[j] != 0.0) {
      code.indices.push_back(j);
      code.values.push_back(c[j]);
    }
  }
  code.residual = z - synthesize(atoms, code);
  code.objective = 0.5 * code.residual.squaredNorm() +
                   params.alpha * (params.tau * code.l1_norm() +
                                   (1.0 - params.tau) * 0.5 * c.squaredNorm());
  code.kkt_residual = scan_kkt(atoms, code.residual, c, l1, l2).max_violation;
  code.iterations = sweeps;
  code.converged = converged && code.kkt_residual <= params.tol;
  code.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return code;
}

SparseCode oracle_solve(const Eigen::Ref<const Vector>& z, const RowMatrixD& atoms,
                        const ElasticNetParams& params) {
  const auto t0 = std::chrono::steady_clock::now();
  check_inputs(z, atoms, params);
  const Eigen::Index n = atoms.rows();
  const double l1 = params.alpha * params.tau;
  const double l2 = params.alpha * (1.0 - params.tau);

  const double lipschitz = squared_spectral_norm(atoms);
  Vector c = Vector::Zero(n);
  int iters = 0;
  bool stationary = false;
  bool kkt_ok = false;

  if (lipschitz > 0.0) {
    const double step = 1.0 / lipschitz;
    const double shrink = 1.0 / (1.0 + step * l2);
    Vector residual = z - atoms.transpose() * c;
    double obj = elastic_net_objective(z, atoms, c, params);
    while (iters < params.max_iter) {
      const Vector grad = atoms * residual;  // negative gradient of the smooth part
      Vector next(n);
      for (Eigen::Index j = 0; j < n; ++j)
        next[j] = soft_threshold(c[j] + step * grad[j], step * l1) * shrink;
      c.swap(next);
      residual = z - atoms.transpose() * c;
      ++iters;
      const double next_obj =
          0.5 * residual.squaredNorm() +
          params.alpha * (params.tau * c.lpNorm<1>() + (1.0 - params.tau) * 0.5 * c.squaredNorm());
      const bool flat = std::abs(obj - next_obj) <= 1e-12 * std::max(1.0, std::abs(obj));
      obj = next_obj;
      if (flat) {
        stationary = true;
        if (scan_kkt(atoms, residual, c, l1, l2).max_violation <= params.tol) {
          kkt_ok = true;
          break;
        }
      }
    }
  } else {
    stationary = kkt_ok = true;  // empty or all-zero dictionary: c = 0 is optimal
  }

  SparseCode code;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (c[j] != 0.0) {
      code.indices.push_back(static_cast<int>(j));
      code.values.push_back(c[j]);
    }
  }
  code.residual = z - synthesize(atoms, code);
  code.objective = 0.5 * code.residual.squaredNorm() +
                   params.alpha * (params.tau * code.l1_norm() +
                                   (1.0 - params.tau) * 0.5 * c.squaredNorm());
  code.kkt_residual = scan_kkt(atoms, code.residual, c, l1, l2).max_violation;
  code.iterations = iters;
  code.converged = stationary && kkt_ok && code.kkt_residual <= params.tol;
  code.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return code;
}

}  // namespace oblique
