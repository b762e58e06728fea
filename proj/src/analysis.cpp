#include "oblique/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>

#include "oblique/io.hpp"
#include "oblique/parallel.hpp"
#include "oblique/random.hpp"

namespace oblique {

namespace {

ConceptEmbedding reduce_rows(const RowMatrixD& data, double energy_fraction) {
  if (!(energy_fraction > 0.0 && energy_fraction <= 1.0))
    raise(ErrorCode::config_error, "energy_fraction must be in (0, 1]");
  if (data.rows() < 2) raise(ErrorCode::config_error, "need at least 2 concepts");

  Eigen::BDCSVD<Eigen::MatrixXd> svd(data, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::VectorXd sv = svd.singularValues();
  if (sv.size() == 0 || sv[0] <= 0.0)
    raise(ErrorCode::degenerate_spectrum, "all singular values are zero");

  // Values at roundoff level are rank artifacts, not energy.
  const double rank_cutoff =
      sv[0] * std::max(data.rows(), data.cols()) * std::numeric_limits<double>::epsilon();
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] <= rank_cutoff) sv[i] = 0.0;

  double total = 0.0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) total += sv[i] * sv[i];
  if (total <= 0.0) raise(ErrorCode::degenerate_spectrum, "all singular values are zero");

  // Smallest prefix whose energy reaches the requested fraction.
  const double target = energy_fraction * total;
  double running = 0.0;
  Eigen::Index keep = 0;
  while (keep < sv.size() && running < target) {
    running += sv[keep] * sv[keep];
    ++keep;
  }

  ConceptEmbedding emb;
  emb.reduced_dim = static_cast<int>(keep);
  emb.retained_energy = running / total;
  emb.vectors = data * svd.matrixV().leftCols(keep);

  double norm_sum = 0.0;
  for (Eigen::Index i = 0; i < emb.vectors.rows(); ++i) {
    const double norm = emb.vectors.row(i).norm();
    norm_sum += norm;
    if (norm > 0.0) emb.vectors.row(i) /= norm;
  }
  emb.normalization_constant = norm_sum / static_cast<double>(emb.vectors.rows());
  return emb;
}

}  // namespace

ConceptEmbedding concat_and_reduce(const ConceptDictionary& dict, const ReductionConfig& cfg) {
  std::vector<int> layers = cfg.layer_subset;
  if (layers.empty()) layers = dict.layer_ids;
  const Eigen::Index n = dict.num_concepts();
  if (n < 2) raise(ErrorCode::config_error, "need at least 2 concepts");

  RowMatrixD flat(n, static_cast<Eigen::Index>(layers.size()) * dict.dim);
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const int idx = dict.layer_index(layers[k]);
    flat.middleCols(static_cast<Eigen::Index>(k) * dict.dim, dict.dim) =
        dict.layer_matrices[static_cast<std::size_t>(idx)].cast<double>();
  }
  return reduce_rows(flat, cfg.energy_fraction);
}

ConceptEmbedding embedding_from_points(const RowMatrixD& points) {
  ConceptEmbedding emb;
  emb.reduced_dim = static_cast<int>(points.cols());
  emb.vectors = points;
  double norm_sum = 0.0;
  for (Eigen::Index i = 0; i < emb.vectors.rows(); ++i) {
    const double norm = emb.vectors.row(i).norm();
    norm_sum += norm;
    if (norm > 0.0) emb.vectors.row(i) /= norm;
  }
  emb.normalization_constant =
      emb.vectors.rows() > 0 ? norm_sum / static_cast<double>(emb.vectors.rows()) : 0.0;
  emb.retained_energy = 1.0;
  return emb;
}

double similarity(const ConceptEmbedding& emb, int i, int j) {
  const Eigen::Index n = emb.vectors.rows();
  if (i < 0 || j < 0 || i >= n || j >= n)
    raise(ErrorCode::config_error, "concept index out of range");
  return std::abs(emb.vectors.row(i).dot(emb.vectors.row(j)));
}

std::vector<RetrievalHit> retrieve_top_k(const ConceptEmbedding& emb, int query_concept, int k) {
  const Eigen::Index n = emb.vectors.rows();
  if (query_concept < 0 || query_concept >= n)
    raise(ErrorCode::config_error, "query concept out of range");
  if (k < 0 || k >= n) raise(ErrorCode::config_error, "k must be in [0, n)");

  std::vector<RetrievalHit> hits;
  hits.reserve(static_cast<std::size_t>(n) - 1);
  for (Eigen::Index j = 0; j < n; ++j) {
    if (j == query_concept) continue;
    hits.push_back({static_cast<int>(j), similarity(emb, query_concept, static_cast<int>(j))});
  }
  std::sort(hits.begin(), hits.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.concept_id < b.concept_id;
  });
  hits.resize(static_cast<std::size_t>(k));
  return hits;
}

AffinityMatrix ensc_affinity(const ConceptEmbedding& emb, const EnscParams& params,
                             int num_threads) {
  const Eigen::Index n = emb.vectors.rows();
  if (n < 3) raise(ErrorCode::config_error, "need at least 3 points");
  if (!(params.gamma > 0.0)) raise(ErrorCode::config_error, "gamma must be > 0");
  if (!(params.tau_c >= 0.0 && params.tau_c <= 1.0))
    raise(ErrorCode::config_error, "tau_c must be in [0, 1]");

  ElasticNetParams en;
  en.alpha = 1.0 / params.gamma;  // the EnSC objective divided by gamma
  en.tau = params.tau_c;
  en.tol = params.tol;
  en.max_iter = params.max_iter;

  std::vector<std::vector<std::pair<int, double>>> columns(static_cast<std::size_t>(n));
  std::vector<char> failed(static_cast<std::size_t>(n), 0);

  parallel_for(0, static_cast<int>(n), num_threads, [&](int i) {
    RowMatrixD others(n - 1, emb.vectors.cols());
    std::vector<int> owner(static_cast<std::size_t>(n) - 1);
    Eigen::Index at = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      others.row(at) = emb.vectors.row(j);
      owner[static_cast<std::size_t>(at)] = static_cast<int>(j);
      ++at;
    }
    const SparseCode code = solve_elastic_net(emb.vectors.row(i).transpose(), others, en);
    if (!code.converged) failed[static_cast<std::size_t>(i)] = 1;
    auto& column = columns[static_cast<std::size_t>(i)];
    for (std::size_t k = 0; k < code.indices.size(); ++k)
      column.emplace_back(owner[static_cast<std::size_t>(code.indices[k])], code.values[k]);
  });

  // A = (|C| + |C|^T) / 2, zero diagonal, sparsified below 1e-10.
  std::vector<Eigen::Triplet<double>> triplets;
  for (Eigen::Index i = 0; i < n; ++i)
    for (const auto& [j, value] : columns[static_cast<std::size_t>(i)]) {
      const double half = std::abs(value) / 2.0;
      if (half > 0.0) {
        triplets.emplace_back(j, static_cast<int>(i), half);
        triplets.emplace_back(static_cast<int>(i), j, half);
      }
    }
  AffinityMatrix out;
  out.matrix.resize(n, n);
  out.matrix.setFromTriplets(triplets.begin(), triplets.end());  // duplicates sum
  out.matrix.prune([](Eigen::Index, Eigen::Index, double v) { return v >= 1e-10; });
  for (Eigen::Index i = 0; i < n; ++i)
    if (failed[static_cast<std::size_t>(i)]) out.non_converged_points.push_back(static_cast<int>(i));
  return out;
}

namespace {

int count_components(const Eigen::SparseMatrix<double>& a) {
  const Eigen::Index n = a.rows();
  std::vector<int> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };
  for (Eigen::Index col = 0; col < a.outerSize(); ++col)
    for (Eigen::SparseMatrix<double>::InnerIterator it(a, col); it; ++it) {
      const int ra = find(static_cast<int>(it.row()));
      const int rb = find(static_cast<int>(it.col()));
      if (ra != rb) parent[static_cast<std::size_t>(ra)] = rb;
    }
  int components = 0;
  for (int i = 0; i < n; ++i)
    if (find(i) == i) ++components;
  return components;
}

// Seeded k-means++ with Lloyd refinement; empty clusters grab the farthest point.
std::pair<std::vector<int>, double> kmeans(const RowMatrixD& rows, int k, std::mt19937_64& rng) {
  const Eigen::Index n = rows.rows();
  std::vector<Eigen::Index> centers;
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  centers.push_back(first(rng));
  Eigen::VectorXd dist2 = (rows.rowwise() - rows.row(centers[0])).rowwise().squaredNorm();
  while (static_cast<int>(centers.size()) < k) {
    const double total = dist2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng), running = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        running += dist2[i];
        if (running >= target) {
          pick = i;
          break;
        }
      }
    } else {
      std::uniform_int_distribution<Eigen::Index> any(0, n - 1);
      pick = any(rng);
    }
    centers.push_back(pick);
    dist2 = dist2.cwiseMin((rows.rowwise() - rows.row(pick)).rowwise().squaredNorm());
  }

  RowMatrixD mean(k, rows.cols());
  for (int c = 0; c < k; ++c) mean.row(c) = rows.row(centers[static_cast<std::size_t>(c)]);

  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  double inertia = 0.0;
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = (rows.row(i) - mean.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      inertia += best_d;
      if (labels[static_cast<std::size_t>(i)] != best) {
        labels[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    RowMatrixD next = RowMatrixD::Zero(k, rows.cols());
    std::vector<int> count(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      next.row(labels[static_cast<std::size_t>(i)]) += rows.row(i);
      ++count[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c) {
      if (count[static_cast<std::size_t>(c)] > 0) {
        next.row(c) /= count[static_cast<std::size_t>(c)];
      } else {
        // Re-seat on the point farthest from its center.
        Eigen::Index far = 0;
        double far_d = -1.0;
        for (Eigen::Index i = 0; i < n; ++i) {
          const double d = (rows.row(i) - mean.row(labels[static_cast<std::size_t>(i)])).squaredNorm();
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        next.row(c) = rows.row(far);
        labels[static_cast<std::size_t>(far)] = c;
        changed = true;
      }
    }
    mean = std::move(next);
    if (!changed) break;
  }
  return {labels, inertia};
}

}  // namespace

ClusterAssignment spectral_cluster(const AffinityMatrix& affinity, int k, std::uint64_t seed) {
  const Eigen::Index n = affinity.size();
  if (k < 1 || k > n) raise(ErrorCode::config_error, "k must be in [1, n]");

  ClusterAssignment out;
  out.num_clusters = k;
  out.disconnected_warning = count_components(affinity.matrix) > k;

  if (k == static_cast<int>(n)) {
    out.labels.resize(static_cast<std::size_t>(n));
    std::iota(out.labels.begin(), out.labels.end(), 0);
    return out;
  }

  // Top-k eigenvectors of S^-1/2 A S^-1/2 (the bottom of the normalized Laplacian).
  Eigen::VectorXd degree = Eigen::VectorXd::Zero(n);
  for (Eigen::Index col = 0; col < affinity.matrix.outerSize(); ++col)
    for (Eigen::SparseMatrix<double>::InnerIterator it(affinity.matrix, col); it; ++it)
      degree[it.row()] += it.value();
  Eigen::VectorXd inv_sqrt(n);
  for (Eigen::Index i = 0; i < n; ++i)
    inv_sqrt[i] = degree[i] > 0.0 ? 1.0 / std::sqrt(degree[i]) : 0.0;

  Eigen::MatrixXd normalized = Eigen::MatrixXd(affinity.matrix);
  for (Eigen::Index i = 0; i < n; ++i)
    normalized.row(i) *= inv_sqrt[i];
  for (Eigen::Index j = 0; j < n; ++j)
    normalized.col(j) *= inv_sqrt[j];

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(normalized);
  RowMatrixD spectral_rows(n, k);
  for (int c = 0; c < k; ++c) spectral_rows.col(c) = es.eigenvectors().col(n - 1 - c);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double norm = spectral_rows.row(i).norm();
    if (norm > 0.0) spectral_rows.row(i) /= norm;
  }

  // Several seeded restarts; keep the lowest inertia.
  double best_inertia = std::numeric_limits<double>::infinity();
  for (int attempt = 0; attempt < 8; ++attempt) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    auto [labels, inertia] = kmeans(spectral_rows, k, rng);
    if (inertia < best_inertia) {
      best_inertia = inertia;
      out.labels = std::move(labels);
    }
  }
  out.kmeans_inertia = best_inertia;
  return out;
}

std::vector<ReportEntry> decomposition_report(const Eigen::Ref<const Vector>& z,
                                              const RowMatrixD& atoms,
                                              const std::vector<std::string>& names,
                                              const ElasticNetParams& en_params, int top_m) {
  if (static_cast<Eigen::Index>(names.size()) != atoms.rows())
    raise(ErrorCode::dimension_mismatch, "name count does not match atom count");
  if (top_m < 0 || top_m > atoms.rows())
    raise(ErrorCode::config_error, "top_m must be in [0, n]");

  const SparseCode code = solve_elastic_net(z, atoms, en_params);
  std::vector<ReportEntry> entries;
  for (std::size_t k = 0; k < code.indices.size(); ++k)
    entries.push_back({code.indices[k], names[static_cast<std::size_t>(code.indices[k])],
                       code.values[k]});
  std::sort(entries.begin(), entries.end(), [](const ReportEntry& a, const ReportEntry& b) {
    const double ma = std::abs(a.coefficient), mb = std::abs(b.coefficient);
    if (ma != mb) return ma > mb;
    return a.concept_id < b.concept_id;
  });
  if (static_cast<int>(entries.size()) > top_m) entries.resize(static_cast<std::size_t>(top_m));
  return entries;
}

std::string report_to_csv(const std::vector<ReportEntry>& report) {
  std::ostringstream out;
  out << "concept_id,name,coefficient\n";
  for (const auto& e : report)
    out << e.concept_id << "," << e.name << "," << format_double(e.coefficient) << "\n";
  return out.str();
}

nlohmann::json report_to_json(const std::vector<ReportEntry>& report) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : report)
    arr.push_back({{"concept_id", e.concept_id}, {"name", e.name}, {"coefficient", e.coefficient}});
  return arr;
}

void save_embedding(const ConceptEmbedding& emb, const std::filesystem::path& f32_path,
                    const std::filesystem::path& manifest_path) {
  const RowMatrixF data = emb.vectors.cast<float>();
  write_f32(f32_path, data);
  write_json(manifest_path,
             nlohmann::json{{"n", emb.vectors.rows()},
                            {"reduced_dim", emb.reduced_dim},
                            {"retained_energy", emb.retained_energy},
                            {"normalization_constant", emb.normalization_constant},
                            {"file", f32_path.filename().string()}});
}

void save_affinity(const AffinityMatrix& affinity, const std::filesystem::path& path) {
  std::ostringstream out;
  for (Eigen::Index col = 0; col < affinity.matrix.outerSize(); ++col)
    for (Eigen::SparseMatrix<double>::InnerIterator it(affinity.matrix, col); it; ++it)
      if (it.row() <= it.col())
        out << it.row() << " " << it.col() << " " << format_double(it.value()) << "\n";
  write_text(path, out.str());
}

}  // namespace oblique
