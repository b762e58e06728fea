#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "oblique/common.hpp"

namespace oblique {

inline constexpr int kDictionaryFormatVersion = 1;
inline constexpr double kUnitNormTolerance = 1e-5;

struct ConceptEntry {
  int concept_id = 0;
  std::string name;
  int stimulus_count = 0;
};

// Per-layer bank of unit concept directions. Rows of layer_matrices[k] are
// the directions of layer layer_ids[k]; all layers share n and d. Immutable
// after construction; safe for concurrent reads.
struct ConceptDictionary {
  int dim = 0;
  std::vector<int> layer_ids;  // strictly increasing
  std::vector<ConceptEntry> entries;
  std::vector<RowMatrixF> layer_matrices;  // each n x d

  int num_concepts() const { return static_cast<int>(entries.size()); }
  int num_layers() const { return static_cast<int>(layer_ids.size()); }
  // Index into layer_matrices for a layer id; error if absent.
  int layer_index(int layer_id) const;
  bool has_layer(int layer_id) const;
  // Layer matrix widened to double for numeric work.
  RowMatrixD layer_as_double(int layer_id) const;
};

// Activations elicited from stimulus prompts, grouped by concept, at one layer.
struct ConceptStimuli {
  int concept_id = 0;
  std::string name;
  RowMatrixD activations;  // one row per stimulus
};

struct StimulusActivationSet {
  int dim = 0;
  std::vector<ConceptStimuli> groups;  // ascending concept_id

  const ConceptStimuli* find(int concept_id) const;
  void validate() const;  // dims match, >= 2 activations per group
};

struct DirectionExtractionConfig {
  int max_pairs = 512;
  std::uint64_t rng_seed = 0;
  // Concepts to difference against; empty means all others.
  std::vector<int> contrast_concepts;
};

// First principal direction of the unit-normalized activation differences
// (target stimulus minus contrast stimulus), over up to max_pairs pairs
// sampled without replacement from the full cross product. The sample is a
// pure function of (rng_seed, target), so layers and schedules never perturb
// it. Zero differences are dropped before normalization. The sign is fixed by
// making the largest-magnitude coordinate positive.
Vector extract_direction(int target, const StimulusActivationSet& stimuli,
                         const DirectionExtractionConfig& cfg);

// The sampled, normalized difference rows that extract_direction reduces.
// Exposed so independent checks can re-derive the principal direction.
RowMatrixD sample_difference_set(int target, const StimulusActivationSet& stimuli,
                                 const DirectionExtractionConfig& cfg);

ConceptDictionary build_dictionary(const std::map<int, StimulusActivationSet>& per_layer_stimuli,
                                   const DirectionExtractionConfig& cfg);

// Directory container: manifest.json + layer_<id>.f32 (row-major
// little-endian binary32, no header). Load validates format version, file
// sizes, and CRC32 before accepting; a successful round trip is bit-exact.
void save_dictionary(const ConceptDictionary& dict, const std::filesystem::path& dir);
ConceptDictionary load_dictionary(const std::filesystem::path& dir);

struct ValidationIssue {
  std::string kind;  // "norm", "non_finite", "duplicate_name", "empty_name", "layer_order", "shape"
  int layer_id = -1;
  int row = -1;
  std::string detail;
};

struct ValidationReport {
  bool passed = true;
  double max_norm_deviation = 0.0;
  std::vector<ValidationIssue> issues;
};

ValidationReport validate_dictionary(const ConceptDictionary& dict);

enum class PartitionLabel { benign, undesirable };

struct PartitionAnnotation {
  int concept_id = 0;
  double score = 0.0;  // in [-1, 1]
  PartitionLabel label = PartitionLabel::benign;
};

// One task's annotation file: a header line declaring the score orientation,
// then one JSON object per concept.
struct PartitionFile {
  std::string task_id;
  bool higher_is_undesirable = true;
  std::vector<PartitionAnnotation> annotations;
};

void save_partition(const PartitionFile& partition, const std::filesystem::path& path);
PartitionFile load_partition(const std::filesystem::path& path);

// The k most undesirable concept ids (per the file's score orientation),
// ties broken by ascending concept_id. Result sorted ascending.
std::vector<int> select_undesirable(const PartitionFile& partition, int k);
std::vector<int> select_undesirable(const std::vector<PartitionAnnotation>& annotations, int k,
                                    bool higher_is_undesirable = true);

// Keyword-list annotator standing in for an external partitioner: concepts
// whose name contains a keyword score +0.9 undesirable, the rest -0.8 benign.
PartitionFile mock_partition(const ConceptDictionary& dict, const std::string& task_id,
                             const std::vector<std::string>& keywords);

// Stimulus-activation ingest: acts_manifest.json (d, layer ids, per-concept
// row ranges) next to acts_layer_<id>.f32 files.
std::map<int, StimulusActivationSet> load_activation_sets(const std::filesystem::path& manifest);
void save_activation_sets(const std::map<int, StimulusActivationSet>& per_layer,
                          const std::filesystem::path& dir);

}  // namespace oblique
