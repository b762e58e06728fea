#include "oblique/dictionary.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "oblique/io.hpp"
#include "oblique/random.hpp"

namespace oblique {

namespace fs = std::filesystem;
using nlohmann::json;

int ConceptDictionary::layer_index(int layer_id) const {
  const auto it = std::lower_bound(layer_ids.begin(), layer_ids.end(), layer_id);
  if (it == layer_ids.end() || *it != layer_id)
    raise(ErrorCode::missing_layer_dictionary, "no dictionary for layer " + std::to_string(layer_id));
  return static_cast<int>(it - layer_ids.begin());
}

bool ConceptDictionary::has_layer(int layer_id) const {
  return std::binary_search(layer_ids.begin(), layer_ids.end(), layer_id);
}

RowMatrixD ConceptDictionary::layer_as_double(int layer_id) const {
  return layer_matrices[static_cast<std::size_t>(layer_index(layer_id))].cast<double>();
}

const ConceptStimuli* StimulusActivationSet::find(int concept_id) const {
  for (const auto& g : groups)
    if (g.concept_id == concept_id) return &g;
  return nullptr;
}

void StimulusActivationSet::validate() const {
  for (const auto& g : groups) {
    if (g.activations.rows() < 2)
      raise(ErrorCode::dimension_mismatch,
            "concept " + std::to_string(g.concept_id) + " has fewer than 2 stimulus activations");
    if (g.activations.cols() != dim)
      raise(ErrorCode::dimension_mismatch,
            "concept " + std::to_string(g.concept_id) + " activations have wrong dimension");
  }
}

namespace {

// All (target stimulus, contrast stimulus) pairs, flattened in (target row,
// contrast group, contrast row) order. Contrast groups ascend by concept_id.
struct PairSpace {
  const ConceptStimuli* target = nullptr;
  std::vector<const ConceptStimuli*> contrast;
  std::uint64_t contrast_rows = 0;
  std::vector<std::uint64_t> contrast_offsets;  // cumulative row starts per group

  std::uint64_t total() const {
    return static_cast<std::uint64_t>(target->activations.rows()) * contrast_rows;
  }
};

PairSpace make_pair_space(int target_id, const StimulusActivationSet& stimuli,
                          const DirectionExtractionConfig& cfg) {
  PairSpace space;
  space.target = stimuli.find(target_id);
  if (!space.target)
    raise(ErrorCode::dimension_mismatch, "target concept " + std::to_string(target_id) +
                                             " not present in the stimulus set");
  std::set<int> wanted(cfg.contrast_concepts.begin(), cfg.contrast_concepts.end());
  for (const auto& g : stimuli.groups) {
    if (g.concept_id == target_id) continue;
    if (!wanted.empty() && !wanted.count(g.concept_id)) continue;
    if (g.activations.rows() == 0) continue;
    space.contrast.push_back(&g);
  }
  std::sort(space.contrast.begin(), space.contrast.end(),
            [](const ConceptStimuli* a, const ConceptStimuli* b) {
              return a->concept_id < b->concept_id;
            });
  for (const auto* g : space.contrast) {
    space.contrast_offsets.push_back(space.contrast_rows);
    space.contrast_rows += static_cast<std::uint64_t>(g->activations.rows());
  }
  if (space.contrast_rows == 0)
    raise(ErrorCode::empty_contrast_set,
          "no contrast activations for concept " + std::to_string(target_id));
  return space;
}

}  // namespace

RowMatrixD sample_difference_set(int target, const StimulusActivationSet& stimuli,
                                 const DirectionExtractionConfig& cfg) {
  if (cfg.max_pairs < 1) raise(ErrorCode::config_error, "max_pairs must be >= 1");
  const PairSpace space = make_pair_space(target, stimuli, cfg);

  // Seed from (root seed, target concept) only: identical stimuli at
  // different layers must sample identical pairs.
  std::mt19937_64 rng(derive_seed(cfg.rng_seed, static_cast<std::uint64_t>(target)));
  const auto picks =
      sample_without_replacement(space.total(), static_cast<std::size_t>(cfg.max_pairs), rng);

  RowMatrixD rows(static_cast<Eigen::Index>(picks.size()), stimuli.dim);
  Eigen::Index kept = 0;
  for (const std::uint64_t pick : picks) {
    const auto t_row = static_cast<Eigen::Index>(pick / space.contrast_rows);
    const std::uint64_t c_flat = pick % space.contrast_rows;
    const auto group_it = std::upper_bound(space.contrast_offsets.begin(),
                                           space.contrast_offsets.end(), c_flat) -
                          1;
    const auto group = static_cast<std::size_t>(group_it - space.contrast_offsets.begin());
    const auto c_row = static_cast<Eigen::Index>(c_flat - *group_it);

    Vector diff = space.target->activations.row(t_row) -
                  space.contrast[group]->activations.row(c_row);
    const double norm = diff.norm();
    if (norm == 0.0) continue;  // identical activations carry no direction
    rows.row(kept++) = diff / norm;
  }
  rows.conservativeResize(kept, Eigen::NoChange);
  return rows;
}

Vector extract_direction(int target, const StimulusActivationSet& stimuli,
                         const DirectionExtractionConfig& cfg) {
  const RowMatrixD diffs = sample_difference_set(target, stimuli, cfg);
  const Eigen::Index m = diffs.rows(), d = diffs.cols();
  if (m == 0)
    raise(ErrorCode::degenerate_set,
          "all sampled differences are zero for concept " + std::to_string(target));

  Vector direction(d);
  if (m < d) {
    // Gram route: top eigenvector of X X^T lifted back through X.
    Eigen::MatrixXd gram = diffs * diffs.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    const Vector w = es.eigenvectors().col(m - 1);
    direction = diffs.transpose() * w;
  } else {
    Eigen::MatrixXd cov = diffs.transpose() * diffs;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    direction = es.eigenvectors().col(d - 1);
  }
  const double norm = direction.norm();
  if (norm == 0.0 || !direction.allFinite())
    raise(ErrorCode::degenerate_set, "principal direction collapsed for concept " + std::to_string(target));
  direction /= norm;

  // Canonical sign: largest-magnitude coordinate positive.
  Eigen::Index argmax = 0;
  direction.cwiseAbs().maxCoeff(&argmax);
  if (direction[argmax] < 0.0) direction = -direction;
  return direction;
}

ConceptDictionary build_dictionary(const std::map<int, StimulusActivationSet>& per_layer_stimuli,
                                   const DirectionExtractionConfig& cfg) {
  if (per_layer_stimuli.empty()) raise(ErrorCode::config_error, "no layers given");

  // All layers must agree on the concept roster and dimension.
  const StimulusActivationSet& first = per_layer_stimuli.begin()->second;
  std::vector<std::pair<int, std::string>> roster;
  for (const auto& g : first.groups) roster.emplace_back(g.concept_id, g.name);
  std::sort(roster.begin(), roster.end());
  for (std::size_t i = 0; i < roster.size(); ++i)
    if (roster[i].first != static_cast<int>(i))
      raise(ErrorCode::dimension_mismatch, "concept ids must be contiguous from 0");
  for (const auto& [layer_id, set] : per_layer_stimuli) {
    set.validate();
    if (set.dim != first.dim)
      raise(ErrorCode::dimension_mismatch, "layer " + std::to_string(layer_id) + " has d=" +
                                               std::to_string(set.dim) + ", expected " +
                                               std::to_string(first.dim));
    std::vector<int> ids;
    for (const auto& g : set.groups) ids.push_back(g.concept_id);
    std::sort(ids.begin(), ids.end());
    std::vector<int> expected;
    for (const auto& [id, name] : roster) expected.push_back(id);
    if (ids != expected)
      raise(ErrorCode::dimension_mismatch,
            "layer " + std::to_string(layer_id) + " has a different concept set");
  }

  ConceptDictionary dict;
  dict.dim = first.dim;
  for (const auto& [id, name] : roster) {
    ConceptEntry entry;
    entry.concept_id = id;
    entry.name = name;
    entry.stimulus_count = static_cast<int>(first.find(id)->activations.rows());
    dict.entries.push_back(std::move(entry));
  }

  for (const auto& [layer_id, set] : per_layer_stimuli) {
    RowMatrixF matrix(static_cast<Eigen::Index>(roster.size()), dict.dim);
    for (std::size_t i = 0; i < roster.size(); ++i) {
      try {
        const Vector v = extract_direction(roster[i].first, set, cfg);
        matrix.row(static_cast<Eigen::Index>(i)) = v.cast<float>();
      } catch (const Error& e) {
        raise(e.code(), "concept " + std::to_string(roster[i].first) + " ('" + roster[i].second +
                            "'), layer " + std::to_string(layer_id) + ": " + e.what());
      }
    }
    dict.layer_ids.push_back(layer_id);
    dict.layer_matrices.push_back(std::move(matrix));
  }
  return dict;
}

ValidationReport validate_dictionary(const ConceptDictionary& dict) {
  ValidationReport report;
  auto fail = [&](ValidationIssue issue) {
    report.passed = false;
    report.issues.push_back(std::move(issue));
  };

  for (std::size_t k = 1; k < dict.layer_ids.size(); ++k)
    if (dict.layer_ids[k] <= dict.layer_ids[k - 1])
      fail({"layer_order", dict.layer_ids[k], -1, "layer_ids not strictly increasing"});
  if (dict.layer_matrices.size() != dict.layer_ids.size())
    fail({"shape", -1, -1, "layer matrix count does not match layer_ids"});

  std::set<std::string> seen;
  for (const auto& e : dict.entries) {
    if (e.name.empty()) fail({"empty_name", -1, e.concept_id, "concept has empty name"});
    if (!seen.insert(e.name).second)
      fail({"duplicate_name", -1, e.concept_id, "duplicate concept name '" + e.name + "'"});
  }

  for (std::size_t k = 0; k < dict.layer_matrices.size(); ++k) {
    const auto& m = dict.layer_matrices[k];
    const int layer_id = k < dict.layer_ids.size() ? dict.layer_ids[k] : -1;
    if (m.rows() != dict.num_concepts() || m.cols() != dict.dim) {
      fail({"shape", layer_id, -1, "layer matrix is not n x d"});
      continue;
    }
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      if (!m.row(i).allFinite()) {
        Eigen::Index col = 0;
        for (; col < m.cols(); ++col)
          if (!std::isfinite(m(i, col))) break;
        fail({"non_finite", layer_id, static_cast<int>(i),
              "non-finite value at column " + std::to_string(col)});
        continue;
      }
      const double deviation = std::abs(m.row(i).cast<double>().norm() - 1.0);
      report.max_norm_deviation = std::max(report.max_norm_deviation, deviation);
      if (deviation > kUnitNormTolerance)
        fail({"norm", layer_id, static_cast<int>(i),
              "row norm deviates from 1 by " + format_double(deviation)});
    }
  }
  return report;
}

void save_dictionary(const ConceptDictionary& dict, const fs::path& dir) {
  fs::create_directories(dir);
  json layers = json::array();
  for (std::size_t k = 0; k < dict.layer_ids.size(); ++k) {
    const std::string file = "layer_" + std::to_string(dict.layer_ids[k]) + ".f32";
    write_f32(dir / file, dict.layer_matrices[k]);
    layers.push_back({{"layer_id", dict.layer_ids[k]},
                      {"file", file},
                      {"crc32", crc32_of_file(dir / file)}});
  }
  json concepts = json::array();
  for (const auto& e : dict.entries)
    concepts.push_back(
        {{"id", e.concept_id}, {"name", e.name}, {"stimulus_count", e.stimulus_count}});
  const json manifest = {{"format_version", kDictionaryFormatVersion},
                         {"n", dict.num_concepts()},
                         {"d", dict.dim},
                         {"L", dict.num_layers()},
                         {"layer_ids", dict.layer_ids},
                         {"concepts", concepts},
                         {"layers", layers}};
  write_json(dir / "manifest.json", manifest);
}

ConceptDictionary load_dictionary(const fs::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  if (!manifest.contains("format_version") || !manifest["format_version"].is_number_integer() ||
      manifest["format_version"].get<int>() != kDictionaryFormatVersion)
    raise(ErrorCode::format_version_mismatch,
          "unsupported dictionary format version in " + (dir / "manifest.json").string());

  ConceptDictionary dict;
  const int n = manifest.at("n").get<int>();
  dict.dim = manifest.at("d").get<int>();
  const int L = manifest.at("L").get<int>();
  dict.layer_ids = manifest.at("layer_ids").get<std::vector<int>>();
  if (n < 0 || dict.dim <= 0 || L < 0)
    raise(ErrorCode::dimension_mismatch, "manifest has invalid n/d/L");
  if (static_cast<int>(dict.layer_ids.size()) != L)
    raise(ErrorCode::dimension_mismatch, "layer_ids length does not match L");
  for (std::size_t k = 1; k < dict.layer_ids.size(); ++k)
    if (dict.layer_ids[k] <= dict.layer_ids[k - 1])
      raise(ErrorCode::dimension_mismatch, "layer_ids not strictly increasing");

  for (const auto& c : manifest.at("concepts")) {
    ConceptEntry e;
    e.concept_id = c.at("id").get<int>();
    e.name = c.at("name").get<std::string>();
    e.stimulus_count = c.at("stimulus_count").get<int>();
    dict.entries.push_back(std::move(e));
  }
  if (static_cast<int>(dict.entries.size()) != n)
    raise(ErrorCode::dimension_mismatch, "concept list length does not match n");
  for (std::size_t i = 0; i < dict.entries.size(); ++i)
    if (dict.entries[i].concept_id != static_cast<int>(i))
      raise(ErrorCode::dimension_mismatch, "concept ids must be contiguous from 0");

  const auto& layers = manifest.at("layers");
  if (static_cast<int>(layers.size()) != L)
    raise(ErrorCode::dimension_mismatch, "layer file list length does not match L");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& entry = layers[k];
    if (entry.at("layer_id").get<int>() != dict.layer_ids[k])
      raise(ErrorCode::dimension_mismatch, "layer file order does not match layer_ids");
    const fs::path file = dir / entry.at("file").get<std::string>();
    const auto declared_crc = entry.at("crc32").get<std::uint32_t>();
    const auto actual_crc = crc32_of_file(file);
    if (declared_crc != actual_crc)
      raise(ErrorCode::checksum_mismatch,
            file.string() + ": crc32 mismatch (manifest " + std::to_string(declared_crc) +
                ", file " + std::to_string(actual_crc) + ")");
    dict.layer_matrices.push_back(read_f32_matrix(file, n, dict.dim));
  }
  return dict;
}

namespace {

const char* label_name(PartitionLabel label) {
  return label == PartitionLabel::undesirable ? "undesirable" : "benign";
}

PartitionLabel label_from(const std::string& name) {
  if (name == "undesirable") return PartitionLabel::undesirable;
  if (name == "benign") return PartitionLabel::benign;
  raise(ErrorCode::io_error, "unknown partition label '" + name + "'");
}

// The header's orientation fixes which score sign may carry which label.
bool label_consistent(double score, PartitionLabel label, bool higher_is_undesirable) {
  if (score == 0.0) return true;
  const bool scored_undesirable = higher_is_undesirable ? score > 0.0 : score < 0.0;
  return scored_undesirable == (label == PartitionLabel::undesirable);
}

}  // namespace

void save_partition(const PartitionFile& partition, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ostringstream out;
  out << json{{"task_id", partition.task_id},
              {"higher_is_undesirable", partition.higher_is_undesirable}}
             .dump()
      << "\n";
  for (const auto& a : partition.annotations)
    out << json{{"concept_id", a.concept_id}, {"score", a.score}, {"label", label_name(a.label)}}
               .dump()
        << "\n";
  write_text(path, out.str());
}

PartitionFile load_partition(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line))
    raise(ErrorCode::io_error, path.string() + ": empty partition file");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::parse_error& e) {
    raise(ErrorCode::io_error, path.string() + ": bad header: " + e.what());
  }
  PartitionFile partition;
  partition.task_id = header.at("task_id").get<std::string>();
  partition.higher_is_undesirable = header.at("higher_is_undesirable").get<bool>();

  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      raise(ErrorCode::io_error, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    PartitionAnnotation a;
    a.concept_id = obj.at("concept_id").get<int>();
    a.score = obj.at("score").get<double>();
    a.label = label_from(obj.at("label").get<std::string>());
    if (a.score < -1.0 || a.score > 1.0)
      raise(ErrorCode::io_error, path.string() + ":" + std::to_string(line_no) +
                                     ": score outside [-1, 1]");
    if (!label_consistent(a.score, a.label, partition.higher_is_undesirable))
      raise(ErrorCode::io_error, path.string() + ":" + std::to_string(line_no) +
                                     ": label contradicts the declared score orientation");
    partition.annotations.push_back(a);
  }
  return partition;
}

std::vector<int> select_undesirable(const std::vector<PartitionAnnotation>& annotations, int k,
                                    bool higher_is_undesirable) {
  if (k <= 0) raise(ErrorCode::config_error, "k must be positive");
  std::vector<const PartitionAnnotation*> undesirable;
  for (const auto& a : annotations)
    if (a.label == PartitionLabel::undesirable) undesirable.push_back(&a);
  if (static_cast<int>(undesirable.size()) < k)
    raise(ErrorCode::insufficient_undesirable,
          "need " + std::to_string(k) + " undesirable concepts, found " +
              std::to_string(undesirable.size()));
  // Most undesirable first; orientation decides what "most" means.
  std::stable_sort(undesirable.begin(), undesirable.end(),
                   [higher_is_undesirable](const PartitionAnnotation* a,
                                           const PartitionAnnotation* b) {
                     const double sa = higher_is_undesirable ? a->score : -a->score;
                     const double sb = higher_is_undesirable ? b->score : -b->score;
                     if (sa != sb) return sa > sb;
                     return a->concept_id < b->concept_id;
                   });
  std::vector<int> selected;
  selected.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) selected.push_back(undesirable[static_cast<std::size_t>(i)]->concept_id);
  std::sort(selected.begin(), selected.end());
  return selected;
}

std::vector<int> select_undesirable(const PartitionFile& partition, int k) {
  return select_undesirable(partition.annotations, k, partition.higher_is_undesirable);
}

PartitionFile mock_partition(const ConceptDictionary& dict, const std::string& task_id,
                             const std::vector<std::string>& keywords) {
  PartitionFile out;
  out.task_id = task_id;
  out.higher_is_undesirable = true;
  for (const auto& e : dict.entries) {
    const bool hit = std::any_of(keywords.begin(), keywords.end(), [&](const std::string& kw) {
      return !kw.empty() && e.name.find(kw) != std::string::npos;
    });
    PartitionAnnotation a;
    a.concept_id = e.concept_id;
    a.score = hit ? 0.9 : -0.8;
    a.label = hit ? PartitionLabel::undesirable : PartitionLabel::benign;
    out.annotations.push_back(a);
  }
  return out;
}

void save_activation_sets(const std::map<int, StimulusActivationSet>& per_layer,
                          const fs::path& dir) {
  if (per_layer.empty()) raise(ErrorCode::config_error, "no activation sets to save");
  fs::create_directories(dir);
  const StimulusActivationSet& first = per_layer.begin()->second;

  json concepts = json::array();
  Eigen::Index row = 0;
  for (const auto& g : first.groups) {
    concepts.push_back({{"id", g.concept_id},
                        {"name", g.name},
                        {"row_begin", row},
                        {"row_end", row + g.activations.rows()}});
    row += g.activations.rows();
  }
  std::vector<int> layer_ids;
  for (const auto& [layer_id, set] : per_layer) {
    layer_ids.push_back(layer_id);
    if (set.dim != first.dim || set.groups.size() != first.groups.size())
      raise(ErrorCode::dimension_mismatch,
            "layer " + std::to_string(layer_id) + " does not match the first layer's roster");
    RowMatrixF all(row, first.dim);
    Eigen::Index at = 0;
    for (std::size_t gi = 0; gi < set.groups.size(); ++gi) {
      const auto& g = set.groups[gi];
      if (g.concept_id != first.groups[gi].concept_id ||
          g.activations.rows() != first.groups[gi].activations.rows())
        raise(ErrorCode::dimension_mismatch,
              "layer " + std::to_string(layer_id) + " does not match the first layer's roster");
      all.middleRows(at, g.activations.rows()) = g.activations.cast<float>();
      at += g.activations.rows();
    }
    write_f32(dir / ("acts_layer_" + std::to_string(layer_id) + ".f32"), all);
  }
  write_json(dir / "acts_manifest.json",
             json{{"d", first.dim}, {"layer_ids", layer_ids}, {"concepts", concepts}});
}

std::map<int, StimulusActivationSet> load_activation_sets(const fs::path& manifest_path) {
  const fs::path dir = manifest_path.parent_path();
  const json manifest = read_json(manifest_path);
  const int d = manifest.at("d").get<int>();
  const auto layer_ids = manifest.at("layer_ids").get<std::vector<int>>();

  struct Range {
    int id;
    std::string name;
    Eigen::Index begin, end;
  };
  std::vector<Range> ranges;
  Eigen::Index total = 0;
  for (const auto& c : manifest.at("concepts")) {
    Range r{c.at("id").get<int>(), c.at("name").get<std::string>(),
            c.at("row_begin").get<Eigen::Index>(), c.at("row_end").get<Eigen::Index>()};
    if (r.begin != total || r.end < r.begin)
      raise(ErrorCode::dimension_mismatch, "activation row ranges must be contiguous");
    total = r.end;
    ranges.push_back(std::move(r));
  }

  std::map<int, StimulusActivationSet> out;
  for (const int layer_id : layer_ids) {
    const RowMatrixF all =
        read_f32_matrix(dir / ("acts_layer_" + std::to_string(layer_id) + ".f32"), total, d);
    StimulusActivationSet set;
    set.dim = d;
    for (const auto& r : ranges) {
      ConceptStimuli g;
      g.concept_id = r.id;
      g.name = r.name;
      g.activations = all.middleRows(r.begin, r.end - r.begin).cast<double>();
      set.groups.push_back(std::move(g));
    }
    set.validate();
    out.emplace(layer_id, std::move(set));
  }
  return out;
}

}  // namespace oblique
