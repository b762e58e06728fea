#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "oblique/dictionary.hpp"
#include "oblique/io.hpp"
#include "test_support.hpp"

using namespace oblique;
using oblique::testing::random_vector;

namespace fs = std::filesystem;

namespace {

StimulusActivationSet planted_set(int dim, const std::vector<std::pair<int, RowMatrixD>>& groups) {
  StimulusActivationSet set;
  set.dim = dim;
  for (const auto& [id, acts] : groups) {
    ConceptStimuli g;
    g.concept_id = id;
    g.name = "concept_" + std::to_string(id);
    g.activations = acts;
    set.groups.push_back(std::move(g));
  }
  return set;
}

fs::path temp_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("oblique_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ConceptDictionary random_dictionary(int n, int d, std::vector<int> layer_ids,
                                    std::mt19937_64& rng) {
  ConceptDictionary dict;
  dict.dim = d;
  dict.layer_ids = std::move(layer_ids);
  for (int i = 0; i < n; ++i)
    dict.entries.push_back({i, "concept_" + std::to_string(i), 4});
  for (std::size_t k = 0; k < dict.layer_ids.size(); ++k) {
    RowMatrixF m(n, d);
    for (int i = 0; i < n; ++i) {
      Vector v = random_vector(d, rng);
      m.row(i) = (v / v.norm()).cast<float>();
    }
    dict.layer_matrices.push_back(std::move(m));
  }
  return dict;
}

}  // namespace

TEST_CASE("collinear stimuli recover the planted offset direction") {
  std::mt19937_64 rng(42);
  const int d = 12;
  Vector base = random_vector(d, rng);
  Vector w = random_vector(d, rng).normalized();

  RowMatrixD target(3, d), contrast(4, d);
  for (int j = 0; j < 3; ++j) target.row(j) = (base + (1.0 + j) * w).transpose();
  for (int j = 0; j < 4; ++j) contrast.row(j) = base.transpose();
  // Differences are (1+j) w: exactly collinear.
  const auto set = planted_set(d, {{0, target}, {1, contrast}});
  const Vector v = extract_direction(0, set, {});
  CHECK(std::abs(v.norm() - 1.0) <= 1e-12);
  CHECK(std::abs(v.dot(w)) >= 1.0 - 1e-6);
}

TEST_CASE("anisotropic differences align with the dominant axis") {
  std::mt19937_64 rng(7);
  const int d = 16;
  Vector u1 = random_vector(d, rng).normalized();
  Vector u2 = (random_vector(d, rng) - random_vector(d, rng).dot(u1) * u1);
  u2 -= u2.dot(u1) * u1;
  u2.normalize();

  // Target activations spread 9:1 in span{u1, u2}; contrast pinned at zero,
  // so every difference is a target sample.
  std::normal_distribution<double> normal(0.0, 1.0);
  RowMatrixD target(300, d), contrast(2, d);
  for (int j = 0; j < 300; ++j)
    target.row(j) = (3.0 * normal(rng) * u1 + 1.0 * normal(rng) * u2).transpose();
  contrast.setZero();
  const auto set = planted_set(d, {{0, target}, {1, contrast}});

  DirectionExtractionConfig cfg;
  cfg.max_pairs = 600;  // 300 * 2 pairs, all taken: no sampling
  const Vector v = extract_direction(0, set, cfg);
  CHECK(std::abs(v.dot(u1)) >= 0.99);

  // Independent route: dense eigensolver on the covariance of the same set.
  const RowMatrixD diffs = sample_difference_set(0, set, cfg);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(diffs.transpose() * diffs);
  const Vector principal = es.eigenvectors().col(d - 1);
  CHECK(std::abs(v.dot(principal)) >= 1.0 - 1e-8);
}

TEST_CASE("gram and covariance routes agree on a small set") {
  std::mt19937_64 rng(3);
  const int d = 4;
  RowMatrixD a(2, d), b(2, d), c(2, d);
  for (int j = 0; j < 2; ++j) {
    a.row(j) = random_vector(d, rng).transpose();
    b.row(j) = random_vector(d, rng).transpose();
    c.row(j) = random_vector(d, rng).transpose();
  }
  const auto set = planted_set(d, {{0, a}, {1, b}, {2, c}});
  DirectionExtractionConfig cfg;
  cfg.max_pairs = 3;  // below d=4: forces the gram route and real sampling
  cfg.rng_seed = 11;
  const Vector v = extract_direction(0, set, cfg);

  const RowMatrixD diffs = sample_difference_set(0, set, cfg);
  REQUIRE(diffs.rows() == 3);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(diffs.transpose() * diffs);
  Vector principal = es.eigenvectors().col(d - 1);
  Eigen::Index arg = 0;
  principal.cwiseAbs().maxCoeff(&arg);
  if (principal[arg] < 0.0) principal = -principal;
  CHECK((v - principal).norm() <= 1e-8);
}

TEST_CASE("direction is stable across seeds up to sign") {
  std::mt19937_64 rng(19);
  const int d = 10;
  Vector w = random_vector(d, rng).normalized();
  std::normal_distribution<double> normal(0.0, 1.0);
  RowMatrixD target(40, d), contrast(40, d);
  for (int j = 0; j < 40; ++j) {
    target.row(j) = (2.5 * normal(rng) * w + 0.25 * random_vector(d, rng)).transpose();
    contrast.row(j) = (0.25 * random_vector(d, rng)).transpose();
  }
  const auto set = planted_set(d, {{0, target}, {1, contrast}});
  DirectionExtractionConfig cfg_a, cfg_b;
  cfg_a.max_pairs = cfg_b.max_pairs = 200;  // of 1600 possible: sampling differs by seed
  cfg_a.rng_seed = 1;
  cfg_b.rng_seed = 2;
  const Vector va = extract_direction(0, set, cfg_a);
  const Vector vb = extract_direction(0, set, cfg_b);
  CHECK(std::abs(va.dot(vb)) >= 0.99);
}

TEST_CASE("extraction error cases") {
  const int d = 4;
  RowMatrixD acts(2, d);
  acts.setOnes();
  const auto lonely = planted_set(d, {{0, acts}});
  try {
    extract_direction(0, lonely, {});
    FAIL("expected EmptyContrastSet");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::empty_contrast_set);
  }

  const auto twins = planted_set(d, {{0, acts}, {1, acts}});
  try {
    extract_direction(0, twins, {});  // all differences are exactly zero
    FAIL("expected DegenerateSet");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::degenerate_set);
  }
}

TEST_CASE("build assembles per-layer planted directions") {
  std::mt19937_64 rng(23);
  const int d = 24, n = 6;
  std::map<int, StimulusActivationSet> per_layer;
  std::vector<Vector> plants;
  Vector base = random_vector(d, rng);
  for (int i = 0; i < n; ++i) plants.push_back(random_vector(d, rng).normalized());
  for (const int layer : {2, 5, 9}) {
    std::vector<std::pair<int, RowMatrixD>> groups;
    for (int i = 0; i < n; ++i) {
      RowMatrixD acts(3, d);
      for (int j = 0; j < 3; ++j) acts.row(j) = (base + (1.0 + j) * plants[static_cast<std::size_t>(i)]).transpose();
      groups.emplace_back(i, acts);
    }
    // One shared zero-offset contrast concept would change the roster, so
    // instead every concept contrasts against the others; plants are far
    // apart, so the first principal direction stays near the plant.
    per_layer.emplace(layer, planted_set(d, groups));
  }
  DirectionExtractionConfig cfg;
  cfg.rng_seed = 5;
  const ConceptDictionary dict = build_dictionary(per_layer, cfg);
  CHECK(dict.num_concepts() == n);
  CHECK(dict.num_layers() == 3);
  CHECK(dict.layer_ids == std::vector<int>{2, 5, 9});
  CHECK(validate_dictionary(dict).passed);

  // Identical stimuli at every layer must give identical matrices.
  CHECK(dict.layer_matrices[0] == dict.layer_matrices[1]);
  CHECK(dict.layer_matrices[1] == dict.layer_matrices[2]);

  // Determinism: a rebuild is bit-identical.
  const ConceptDictionary again = build_dictionary(per_layer, cfg);
  for (int k = 0; k < 3; ++k)
    CHECK(dict.layer_matrices[static_cast<std::size_t>(k)] ==
          again.layer_matrices[static_cast<std::size_t>(k)]);
}

TEST_CASE("planted-direction recovery across a full build") {
  std::mt19937_64 rng(31);
  const int d = 64, n = 20;
  Vector base = random_vector(d, rng);
  std::vector<Vector> plants;
  for (int i = 0; i < n; ++i) plants.push_back(random_vector(d, rng).normalized());

  std::vector<std::pair<int, RowMatrixD>> groups;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    RowMatrixD acts(6, d);
    for (int j = 0; j < 6; ++j)
      acts.row(j) =
          (base + (1.5 + 0.5 * j) * plants[static_cast<std::size_t>(i)] +
           0.01 * random_vector(d, rng))
              .transpose();
    groups.emplace_back(i, acts);
  }
  std::map<int, StimulusActivationSet> per_layer;
  per_layer.emplace(0, planted_set(d, groups));
  per_layer.emplace(1, planted_set(d, groups));
  DirectionExtractionConfig cfg;
  cfg.rng_seed = 77;
  const ConceptDictionary dict = build_dictionary(per_layer, cfg);

  // Differences mix plant_i against -plant_j; the dominant axis is plant_i
  // because it appears in every pair for concept i.
  int recovered = 0;
  for (int layer = 0; layer < 2; ++layer)
    for (int i = 0; i < n; ++i) {
      const double cosine = std::abs(dict.layer_matrices[static_cast<std::size_t>(layer)]
                                         .row(i)
                                         .cast<double>()
                                         .dot(plants[static_cast<std::size_t>(i)]));
      if (cosine >= 0.9) ++recovered;
    }
  CHECK(recovered >= 2 * n * 9 / 10);
}

TEST_CASE("dictionary persistence round-trips bit-exactly") {
  std::mt19937_64 rng(57);
  const auto dir = temp_dir("roundtrip");
  const ConceptDictionary dict = random_dictionary(3, 8, {0, 4}, rng);
  save_dictionary(dict, dir);
  const ConceptDictionary loaded = load_dictionary(dir);
  CHECK(loaded.dim == dict.dim);
  CHECK(loaded.layer_ids == dict.layer_ids);
  REQUIRE(loaded.layer_matrices.size() == dict.layer_matrices.size());
  for (std::size_t k = 0; k < dict.layer_matrices.size(); ++k)
    CHECK(loaded.layer_matrices[k] == dict.layer_matrices[k]);
  for (std::size_t i = 0; i < dict.entries.size(); ++i) {
    CHECK(loaded.entries[i].concept_id == dict.entries[i].concept_id);
    CHECK(loaded.entries[i].name == dict.entries[i].name);
    CHECK(loaded.entries[i].stimulus_count == dict.entries[i].stimulus_count);
  }
  fs::remove_all(dir);
}

TEST_CASE("loader rejects tampered containers") {
  std::mt19937_64 rng(58);
  const auto dir = temp_dir("tampered");
  save_dictionary(random_dictionary(4, 6, {1}, rng), dir);

  SUBCASE("future format version") {
    auto manifest = read_json(dir / "manifest.json");
    manifest["format_version"] = 99;
    write_json(dir / "manifest.json", manifest);
    try {
      load_dictionary(dir);
      FAIL("expected FormatVersionMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::format_version_mismatch);
    }
  }
  SUBCASE("flipped payload byte") {
    std::fstream f(dir / "layer_1.f32", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(5);
    f.put('\x7f');
    f.close();
    try {
      load_dictionary(dir);
      FAIL("expected ChecksumMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::checksum_mismatch);
    }
  }
  SUBCASE("manifest claims an extra row") {
    auto manifest = read_json(dir / "manifest.json");
    manifest["n"] = 5;
    manifest["concepts"].push_back({{"id", 4}, {"name", "extra"}, {"stimulus_count", 1}});
    write_json(dir / "manifest.json", manifest);
    try {
      load_dictionary(dir);
      FAIL("expected DimensionMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::dimension_mismatch);
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("validation reports norm, NaN, and duplicate-name issues") {
  std::mt19937_64 rng(59);
  ConceptDictionary dict = random_dictionary(3, 5, {0}, rng);
  CHECK(validate_dictionary(dict).passed);
  CHECK(validate_dictionary(dict).max_norm_deviation <= kUnitNormTolerance);

  dict.layer_matrices[0].row(1).setZero();  // norm violation
  dict.layer_matrices[0](2, 3) = std::numeric_limits<float>::quiet_NaN();
  dict.entries[2].name = dict.entries[0].name;  // duplicate
  const ValidationReport report = validate_dictionary(dict);
  CHECK_FALSE(report.passed);
  bool saw_norm = false, saw_nan = false, saw_dup = false;
  for (const auto& issue : report.issues) {
    if (issue.kind == "norm" && issue.row == 1) saw_norm = true;
    if (issue.kind == "non_finite" && issue.row == 2 && issue.layer_id == 0) saw_nan = true;
    if (issue.kind == "duplicate_name") saw_dup = true;
  }
  CHECK(saw_norm);
  CHECK(saw_nan);
  CHECK(saw_dup);
}

TEST_CASE("partition selection follows scores and tie-breaks") {
  PartitionFile file;
  file.task_id = "detox";
  file.higher_is_undesirable = true;
  auto add = [&](int id, double score, PartitionLabel label) {
    file.annotations.push_back({id, score, label});
  };
  add(0, 0.97, PartitionLabel::undesirable);   // "Evil"-style score
  add(1, -0.84, PartitionLabel::benign);       // "Kind"-style score
  add(2, 0.5, PartitionLabel::undesirable);
  add(3, 0.5, PartitionLabel::undesirable);
  add(4, 0.1, PartitionLabel::undesirable);

  CHECK(select_undesirable(file, 1) == std::vector<int>{0});
  CHECK(select_undesirable(file, 3) == std::vector<int>{0, 2, 3});
  // Equal scores: lower concept id wins.
  PartitionFile ties;
  ties.task_id = "t";
  ties.annotations = {{7, 0.5, PartitionLabel::undesirable},
                      {3, 0.5, PartitionLabel::undesirable}};
  CHECK(select_undesirable(ties, 1) == std::vector<int>{3});

  try {
    select_undesirable(file, 5);
    FAIL("expected InsufficientUndesirable");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::insufficient_undesirable);
  }
}

TEST_CASE("partition selection respects the inverted orientation") {
  PartitionFile file;
  file.task_id = "inverted";
  file.higher_is_undesirable = false;  // lower score = more undesirable
  file.annotations = {{0, -0.9, PartitionLabel::undesirable},
                      {1, -0.2, PartitionLabel::undesirable},
                      {2, 0.8, PartitionLabel::benign}};
  CHECK(select_undesirable(file, 1) == std::vector<int>{0});
}

TEST_CASE("partition files round-trip and enforce the header convention") {
  const auto dir = temp_dir("partition");
  PartitionFile file;
  file.task_id = "detox";
  file.higher_is_undesirable = true;
  file.annotations = {{0, 0.97, PartitionLabel::undesirable},
                      {1, -0.84, PartitionLabel::benign}};
  const auto path = dir / "partitions" / "detox.jsonl";
  save_partition(file, path);
  const PartitionFile loaded = load_partition(path);
  CHECK(loaded.task_id == "detox");
  CHECK(loaded.higher_is_undesirable);
  REQUIRE(loaded.annotations.size() == 2);
  CHECK(loaded.annotations[0].score == 0.97);
  CHECK(loaded.annotations[1].label == PartitionLabel::benign);

  // A benign label on a positive score contradicts the header.
  std::ofstream bad(dir / "bad.jsonl");
  bad << R"({"task_id":"detox","higher_is_undesirable":true})" << "\n"
      << R"({"concept_id":0,"score":0.9,"label":"benign"})" << "\n";
  bad.close();
  CHECK_THROWS_AS(load_partition(dir / "bad.jsonl"), Error);

  std::ofstream range(dir / "range.jsonl");
  range << R"({"task_id":"detox","higher_is_undesirable":true})" << "\n"
        << R"({"concept_id":0,"score":1.5,"label":"undesirable"})" << "\n";
  range.close();
  CHECK_THROWS_AS(load_partition(dir / "range.jsonl"), Error);
  fs::remove_all(dir);
}

TEST_CASE("activation sets round-trip through the ingest format") {
  std::mt19937_64 rng(61);
  const int d = 6;
  std::map<int, StimulusActivationSet> per_layer;
  for (const int layer : {0, 3}) {
    RowMatrixD a(2, d), b(3, d);
    for (int j = 0; j < 2; ++j) a.row(j) = random_vector(d, rng).transpose();
    for (int j = 0; j < 3; ++j) b.row(j) = random_vector(d, rng).transpose();
    per_layer.emplace(layer, planted_set(d, {{0, a}, {1, b}}));
  }
  const auto dir = temp_dir("acts");
  save_activation_sets(per_layer, dir);
  const auto loaded = load_activation_sets(dir / "acts_manifest.json");
  REQUIRE(loaded.size() == 2);
  CHECK(loaded.at(0).dim == d);
  CHECK(loaded.at(3).groups[1].activations.rows() == 3);
  // float32 on disk: values match to float precision
  CHECK((loaded.at(0).groups[0].activations.cast<float>() -
         per_layer.at(0).groups[0].activations.cast<float>())
            .norm() == 0.0f);
  fs::remove_all(dir);
}
