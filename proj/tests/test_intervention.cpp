#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <random>

#include "oblique/intervention.hpp"
#include "oblique/synthetic.hpp"
#include "test_support.hpp"

using namespace oblique;
using oblique::testing::random_unit_atoms;
using oblique::testing::random_vector;

namespace {

InterventionPlan oblique_plan(std::vector<int> removal, double alpha = 0.05, double tau = 0.95) {
  InterventionPlan plan;
  plan.method = InterventionMethod::oblique_projection;
  plan.undesirable = std::move(removal);
  plan.en_params.alpha = alpha;
  plan.en_params.tau = tau;
  plan.en_params.tol = 1e-8;
  return plan;
}

}  // namespace

TEST_CASE("empty removal set reconstructs the input exactly") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const RowMatrixD atoms = random_unit_atoms(24, 10, rng);
    const Vector z = random_vector(10, rng, 2.0);
    const InterventionResult res = oblique_project(z, atoms, oblique_plan({}));
    CHECK((res.z_ctrl - z).norm() <= 1e-12 * z.norm());
    CHECK(res.removed_energy == 0.0);
  }
}

TEST_CASE("orthonormal red/apple pair removes only the targeted concept") {
  // z = 2 red + 3 apple; removing `red` should leave about 3 apple.
  const int d = 8;
  RowMatrixD atoms = RowMatrixD::Zero(2, d);
  atoms(0, 0) = 1.0;  // red
  atoms(1, 3) = 1.0;  // apple
  const Vector z = 2.0 * atoms.row(0).transpose() + 3.0 * atoms.row(1).transpose();
  const double alpha = 1e-4;
  const InterventionResult res = oblique_project(z, atoms, oblique_plan({0}, alpha, 0.95));
  CHECK((res.z_ctrl - 3.0 * atoms.row(1).transpose()).norm() <= 10.0 * alpha);
  CHECK(std::abs(res.removed_energy - 2.0) <= 10.0 * alpha);
}

TEST_CASE("benign coefficients survive removal bit for bit") {
  std::mt19937_64 rng(3);
  const RowMatrixD atoms = random_unit_atoms(30, 16, rng);
  const Vector z = random_vector(16, rng, 2.0);
  const std::vector<int> removal = {1, 4, 9, 20};
  const InterventionResult res = oblique_project(z, atoms, oblique_plan(removal));
  for (std::size_t k = 0; k < res.code.indices.size(); ++k) {
    const int j = res.code.indices[k];
    if (std::binary_search(removal.begin(), removal.end(), j)) {
      CHECK(res.controlled.coefficient(j) == 0.0);
    } else {
      CHECK(res.controlled.coefficient(j) == res.code.values[k]);
    }
  }
}

TEST_CASE("planted removal takes out the planted energy") {
  SyntheticSpec spec;
  spec.n = 30;
  spec.d = 16;
  spec.support_size = 4;
  spec.noise_sigma = 1e-4;
  spec.num_signals = 8;
  spec.seed = 99;
  const SyntheticProblem prob = gen_synthetic(spec);
  const RowMatrixD atoms = prob.dictionary.layer_as_double(0);
  for (const auto& sig : prob.signals) {
    // Remove the first two planted concepts.
    std::vector<int> removal(sig.truth.indices.begin(), sig.truth.indices.begin() + 2);
    std::sort(removal.begin(), removal.end());
    const InterventionResult res = oblique_project(sig.z, atoms, oblique_plan(removal, 0.001));
    Vector planted = Vector::Zero(spec.d);
    for (std::size_t k = 0; k < sig.truth.indices.size(); ++k)
      if (std::binary_search(removal.begin(), removal.end(), sig.truth.indices[k]))
        planted += sig.truth.values[k] * atoms.row(sig.truth.indices[k]).transpose();
    CHECK(std::abs(res.removed_energy - planted.norm()) <= 0.05);
  }
}

TEST_CASE("vec_add closed forms") {
  std::mt19937_64 rng(5);
  const Vector v = random_vector(12, rng).normalized();
  const Vector z = random_vector(12, rng, 3.0);
  CHECK((vec_add(z, v, 0.0) - z).norm() == 0.0);
  CHECK(vec_add(v, v, 1.0).norm() <= 1e-15);
  const Vector out = vec_add(z, v, 3.0);
  CHECK(std::abs(out.dot(v) - (z.dot(v) - 3.0)) <= 1e-12);

  try {
    vec_add(z, 2.0 * v, 1.0);
    FAIL("expected NonUnitDirection");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::non_unit_direction);
  }
}

TEST_CASE("ortho_project removes exactly the span") {
  std::mt19937_64 rng(7);
  const int d = 10;
  const RowMatrixD dirs = random_unit_atoms(3, d, rng);
  const Vector z = random_vector(d, rng, 2.0);
  const OrthoProjection proj = ortho_project(z, dirs);
  CHECK_FALSE(proj.rank_deficient);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(proj.z_out.dot(dirs.row(i))) <= 1e-8);

  // Idempotence.
  const OrthoProjection twice = ortho_project(proj.z_out, dirs);
  CHECK((twice.z_out - proj.z_out).norm() <= 1e-8);

  // z in the span collapses to zero.
  const Vector in_span = 1.5 * dirs.row(0).transpose() - 0.5 * dirs.row(2).transpose();
  CHECK(ortho_project(in_span, dirs).z_out.norm() <= 1e-10);

  // z orthogonal to the span is untouched; single direction is rank-1 closed form.
  RowMatrixD single(1, d);
  single.row(0) = dirs.row(0);
  const Vector expected = z - z.dot(dirs.row(0)) * dirs.row(0).transpose();
  CHECK((ortho_project(z, single).z_out - expected).norm() <= 1e-12);

  // Duplicated directions are flagged but still projected.
  RowMatrixD dup(2, d);
  dup.row(0) = dirs.row(0);
  dup.row(1) = dirs.row(0);
  const OrthoProjection flagged = ortho_project(z, dup);
  CHECK(flagged.rank_deficient);
  CHECK((flagged.z_out - expected).norm() <= 1e-10);
}

TEST_CASE("stream applies per-layer dictionaries in order") {
  SyntheticSpec spec;
  spec.n = 12;
  spec.d = 8;
  spec.num_layers = 19;
  spec.support_size = 3;
  spec.num_signals = 1;
  spec.seed = 123;
  const SyntheticProblem prob = gen_synthetic(spec);

  std::vector<ActivationFrame> frames;
  for (const auto& sig : prob.signals) frames.push_back({sig.layer_id, sig.z});
  REQUIRE(frames.size() == 19);

  StreamStats stats;
  const auto out = intervene_stream(frames, prob.dictionary, oblique_plan({0, 5}), &stats);
  REQUIRE(out.size() == frames.size());
  CHECK(stats.frames_processed == 19);
  CHECK(stats.solver_calls == 19);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i].layer_id == frames[i].layer_id);
}

TEST_CASE("single frame with empty removal passes through") {
  SyntheticSpec spec;
  spec.n = 10;
  spec.d = 6;
  spec.num_signals = 1;
  spec.seed = 5;
  const SyntheticProblem prob = gen_synthetic(spec);
  std::vector<ActivationFrame> frames = {{0, prob.signals[0].z}};
  const auto out = intervene_stream(frames, prob.dictionary, oblique_plan({}));
  CHECK((out[0].z - frames[0].z).norm() <= 1e-12 * frames[0].z.norm());
}

TEST_CASE("coefficient reuse skips the solver on repeat frames") {
  SyntheticSpec spec;
  spec.n = 20;
  spec.d = 10;
  spec.num_signals = 3;
  spec.seed = 31;
  const SyntheticProblem prob = gen_synthetic(spec);

  InterventionPlan plan = oblique_plan({2, 7});
  plan.reuse_coefficients = true;
  InterventionStream stream(prob.dictionary, plan);
  const auto first = stream.process({0, prob.signals[0].z});
  CHECK(stream.stats().solver_calls == 1);
  const auto second = stream.process({0, prob.signals[1].z});
  CHECK(stream.stats().solver_calls == 1);  // reused, no extra solve
  (void)first;
  (void)second;

  // Reuse keeps the identity on the empty removal set.
  InterventionPlan empty = oblique_plan({});
  empty.reuse_coefficients = true;
  InterventionStream id_stream(prob.dictionary, empty);
  (void)id_stream.process({0, prob.signals[0].z});
  const auto echoed = id_stream.process({0, prob.signals[2].z});
  CHECK((echoed.z - prob.signals[2].z).norm() <= 1e-12 * prob.signals[2].z.norm());
}

TEST_CASE("unknown layer raises MissingLayerDictionary") {
  SyntheticSpec spec;
  spec.n = 6;
  spec.d = 4;
  spec.num_signals = 1;
  spec.seed = 8;
  const SyntheticProblem prob = gen_synthetic(spec);
  InterventionStream stream(prob.dictionary, oblique_plan({}));
  try {
    stream.process({42, prob.signals[0].z});
    FAIL("expected MissingLayerDictionary");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::missing_layer_dictionary);
  }
}

TEST_CASE("least-squares removal equals the orthogonal projector") {
  std::mt19937_64 rng(11);
  SUBCASE("single atom reduces to the rank-1 form") {
    const RowMatrixD one = random_unit_atoms(1, 12, rng);
    const Vector z = random_vector(12, rng);
    const auto check = check_least_squares_projection(z, one);
    CHECK(check.discrepancy <= 1e-10);
    CHECK(check.passed);
  }
  SUBCASE("random removal sets") {
    for (int trial = 0; trial < 20; ++trial) {
      const RowMatrixD removal = random_unit_atoms(4, 12, rng);
      const Vector z = random_vector(12, rng, 2.0);
      const auto check = check_least_squares_projection(z, removal);
      CHECK(check.relative <= 1e-8);
      CHECK(check.passed);
    }
  }
  SUBCASE("z inside the removal span is annihilated") {
    const RowMatrixD removal = random_unit_atoms(3, 12, rng);
    const Vector z = removal.transpose() * Vector::LinSpaced(3, 1.0, 3.0);
    const auto check = check_least_squares_projection(z, removal);
    CHECK(check.controlled.norm() <= 1e-8);
  }
  SUBCASE("dependent atoms are rejected") {
    RowMatrixD dep(2, 12);
    dep.row(0) = random_vector(12, rng).normalized();
    dep.row(1) = dep.row(0);
    try {
      check_least_squares_projection(random_vector(12, rng), dep);
      FAIL("expected RankDeficient");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::rank_deficient);
    }
  }
}

TEST_CASE("single-atom ridge removal equals vector addition") {
  std::mt19937_64 rng(13);
  for (const double lambda : {-0.5, 0.0, 1.0, 10.0}) {
    for (int trial = 0; trial < 25; ++trial) {
      const Vector v = random_vector(9, rng).normalized();
      const Vector z = random_vector(9, rng, 2.0);
      const auto check = check_ridge_vecadd(z, v, lambda);
      CHECK(check.coefficient_gap <= 1e-10);
      CHECK(check.vecadd_gap <= 1e-10);
      CHECK(check.passed);
    }
  }
  // Spot values from the closed form.
  const Vector v = Vector::Unit(4, 1);
  CHECK(check_ridge_vecadd(2.0 * v, v, 1.0).coefficient == doctest::Approx(1.0));
  Vector z = random_vector(4, rng);
  CHECK(std::abs(check_ridge_vecadd(z, v, 0.0).coefficient - z.dot(v)) <= 1e-12);
  CHECK(std::abs(check_ridge_vecadd(z, v, -0.5).coefficient - 2.0 * z.dot(v)) <= 1e-12);
}

TEST_CASE("frames round-trip through the f32 pair") {
  std::mt19937_64 rng(17);
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "oblique_test_frames";
  fs::remove_all(dir);
  fs::create_directories(dir);

  std::vector<ActivationFrame> frames;
  for (int i = 0; i < 5; ++i) {
    const Eigen::VectorXf quantized = random_vector(6, rng).cast<float>();
    frames.push_back({i % 2, quantized.cast<double>()});  // f32-exact payload
  }
  save_frames(frames, 6, dir / "frames.f32", dir / "frames.json");
  int dim = 0;
  const auto loaded = load_frames(dir / "frames.f32", dir / "frames.json", &dim);
  CHECK(dim == 6);
  REQUIRE(loaded.size() == frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    CHECK(loaded[i].layer_id == frames[i].layer_id);
    CHECK((loaded[i].z - frames[i].z).norm() == 0.0);
  }
  fs::remove_all(dir);
}
