// SPDX-License-Identifier: Apache-2.0
#include <array>
#include <cmath>
#include <tuple>
#include <vector>

#include "doctest.h"
#include "oracle_helpers.hpp"
#include "rbfssm/errors.hpp"
#include "rbfssm/rng.hpp"
#include "rbfssm/ssm.hpp"

using namespace rbfssm;

namespace {

ControlPointSet set_from_points(std::vector<Vec3> points) {
  ControlPointSet cps;
  cps.points = std::move(points);
  cps.normals.assign(cps.points.size(), Vec3(1.0, 0.0, 0.0));
  return cps;
}

std::vector<ControlPointSet> random_cohort(std::uint64_t seed, int members, int num_points) {
  Rng rng(seed);
  std::vector<ControlPointSet> sets;
  for (int i = 0; i < members; ++i) {
    std::vector<Vec3> points;
    for (int j = 0; j < num_points; ++j) {
      points.emplace_back(rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0));
    }
    sets.push_back(set_from_points(std::move(points)));
  }
  return sets;
}

}  // namespace

TEST_CASE("a two-shape model has the closed-form eigenpair") {
  // With two shapes the single eigenvalue is half the squared distance between
  // the flattened shapes and the mode points along their difference.
  std::vector<ControlPointSet> sets{
      set_from_points({Vec3(1.0, 2.0, 3.0), Vec3(4.0, 5.0, 6.0)}),
      set_from_points({Vec3(2.0, 2.0, 3.0), Vec3(4.0, 7.0, 6.0)}),
  };
  SsmModel model = compute_pca(sets);
  CHECK(model.num_points == 2);
  CHECK(model.num_shapes == 2);
  REQUIRE(model.eigenvalues.size() == 1);
  CHECK(model.eigenvalues[0] == doctest::Approx(2.5).epsilon(1e-13));
  REQUIRE(model.retained_modes() == 1);

  Eigen::VectorXd expected_mean(6);
  expected_mean << 1.5, 2.0, 3.0, 4.0, 6.0, 6.0;
  CHECK((model.mean - expected_mean).cwiseAbs().maxCoeff() <= 1e-14);

  // The difference direction, signed so the largest component is positive.
  double inv = 1.0 / std::sqrt(5.0);
  Eigen::VectorXd expected_mode(6);
  expected_mode << inv, 0.0, 0.0, 0.0, 2.0 * inv, 0.0;
  CHECK((model.modes[0] - expected_mode).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("dual-space eigenvalues match an explicit covariance decomposition") {
  const std::array<std::tuple<std::uint64_t, int, int>, 3> cases{
      {{501, 5, 7}, {502, 10, 3}, {503, 4, 2}}};
  for (auto [seed, members, points] : cases) {
    std::vector<ControlPointSet> sets = random_cohort(seed, members, points);
    SsmModel model = compute_pca(sets);
    Eigen::VectorXd primal = oracle::primal_pca_eigenvalues(sets);
    REQUIRE(static_cast<Eigen::Index>(model.eigenvalues.size()) == primal.size());
    double scale = std::max(1.0, primal[0]);
    for (Eigen::Index m = 0; m < primal.size(); ++m) {
      CHECK(std::abs(model.eigenvalues[static_cast<std::size_t>(m)] - primal[m]) <=
            1e-10 * scale);
    }
  }
}

TEST_CASE("eigenvalues descend and capture the full covariance trace") {
  std::vector<ControlPointSet> sets = random_cohort(601, 6, 4);
  SsmModel model = compute_pca(sets);
  double trace = 0.0;
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(12);
  for (const auto& s : sets) {
    for (int j = 0; j < 4; ++j) mu.segment<3>(3 * j) += s.points[j];
  }
  mu /= 6.0;
  for (const auto& s : sets) {
    for (int j = 0; j < 4; ++j) trace += (s.points[j] - Vec3(mu.segment<3>(3 * j))).squaredNorm();
  }
  trace /= 5.0;

  double sum = 0.0;
  for (std::size_t m = 0; m < model.eigenvalues.size(); ++m) {
    CHECK(model.eigenvalues[m] >= 0.0);
    if (m > 0) CHECK(model.eigenvalues[m] <= model.eigenvalues[m - 1]);
    sum += model.eigenvalues[m];
  }
  // I-1 = 5 deviations span at most 5 directions, so the retained eigenvalues
  // account for the whole trace.
  CHECK(sum == doctest::Approx(trace).epsilon(1e-10));
}

TEST_CASE("modes are orthonormal with a positive leading component") {
  std::vector<ControlPointSet> sets = random_cohort(611, 7, 5);
  SsmModel model = compute_pca(sets);
  REQUIRE(model.retained_modes() >= 2);
  for (int a = 0; a < model.retained_modes(); ++a) {
    CHECK(model.modes[static_cast<std::size_t>(a)].norm() == doctest::Approx(1.0).epsilon(1e-12));
    Eigen::Index argmax = 0;
    model.modes[static_cast<std::size_t>(a)].cwiseAbs().maxCoeff(&argmax);
    CHECK(model.modes[static_cast<std::size_t>(a)][argmax] > 0.0);
    for (int b = a + 1; b < model.retained_modes(); ++b) {
      CHECK(std::abs(model.modes[static_cast<std::size_t>(a)]
                         .dot(model.modes[static_cast<std::size_t>(b)])) <= 1e-10);
    }
  }
}

TEST_CASE("an identical cohort has no variance and no retained modes") {
  ControlPointSet shape = set_from_points({Vec3(1.0, 0.0, 0.0), Vec3(0.0, 2.0, 0.0)});
  std::vector<ControlPointSet> sets{shape, shape, shape};
  SsmModel model = compute_pca(sets);
  for (double ev : model.eigenvalues) CHECK(ev <= 1e-12);
  CHECK(model.retained_modes() == 0);
  CHECK(compactness(model, 1) == 1.0);
}

TEST_CASE("shape models require a consistent cohort") {
  std::vector<ControlPointSet> one{set_from_points({Vec3(1.0, 0.0, 0.0)})};
  CHECK_THROWS_AS(compute_pca(one), ShapeMismatchError);
  std::vector<ControlPointSet> ragged{
      set_from_points({Vec3(1.0, 0.0, 0.0)}),
      set_from_points({Vec3(1.0, 0.0, 0.0), Vec3(2.0, 0.0, 0.0)})};
  CHECK_THROWS_AS(compute_pca(ragged), ShapeMismatchError);
}

TEST_CASE("compactness is the leading variance fraction") {
  SsmModel model;
  model.mean = Eigen::VectorXd::Zero(6);
  model.eigenvalues = {9.0, 1.0};
  model.modes = {Eigen::VectorXd::Unit(6, 0), Eigen::VectorXd::Unit(6, 1)};
  model.num_points = 2;
  model.num_shapes = 3;
  CHECK(compactness(model, 1) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(compactness(model, 2) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(compactness(model, 0), BadModeCountError);
  CHECK_THROWS_AS(compactness(model, 3), BadModeCountError);
}

TEST_CASE("zero-mode generalization reconstructs with the fold mean") {
  std::vector<ControlPointSet> sets{
      set_from_points({Vec3(0.0, 0.0, 0.0)}),
      set_from_points({Vec3(3.0, 0.0, 0.0)}),
      set_from_points({Vec3(0.0, 6.0, 0.0)}),
  };
  double expected = (std::sqrt(11.25) + std::sqrt(18.0) + std::sqrt(38.25)) / 3.0;
  CHECK(generalization(sets, 0) == doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("a cohort inside a one-dimensional subspace generalizes exactly") {
  Eigen::VectorXd base(6), dir(6);
  base << 0.0, 1.0, 2.0, 3.0, 4.0, 5.0;
  dir << 1.0, -1.0, 0.5, 0.0, 2.0, -0.25;
  std::vector<ControlPointSet> sets;
  for (double t : {0.0, 1.0, 3.0, 4.5}) {
    Eigen::VectorXd flat = base + t * dir;
    sets.push_back(set_from_points({Vec3(flat.segment<3>(0)), Vec3(flat.segment<3>(3))}));
  }
  CHECK(generalization(sets, 1) <= 1e-8);
  CHECK(generalization(sets, 0) > 0.1);
}

TEST_CASE("generalization does not get worse with more modes") {
  std::vector<ControlPointSet> sets = random_cohort(701, 6, 4);
  double previous = generalization(sets, 0);
  for (int m = 1; m <= 4; ++m) {
    double current = generalization(sets, m);
    CHECK(current <= previous + 1e-12);
    previous = current;
  }
  CHECK_THROWS_AS(generalization(sets, 5), BadModeCountError);
  CHECK_THROWS_AS(generalization(sets, -1), BadModeCountError);
}

TEST_CASE("specificity is seeded and vanishes for a variance-free model") {
  std::vector<ControlPointSet> sets = random_cohort(801, 5, 3);
  SsmModel model = compute_pca(sets);
  int m = model.retained_modes();
  double a = specificity(model, sets, m, 50, 19);
  double b = specificity(model, sets, m, 50, 19);
  double c = specificity(model, sets, m, 50, 20);
  CHECK(a == b);
  CHECK(a != c);
  CHECK(a >= 0.0);
  CHECK(std::isfinite(a));
  CHECK_THROWS_AS(specificity(model, sets, m + 1, 50, 19), BadModeCountError);

  ControlPointSet shape = set_from_points({Vec3(1.0, 2.0, 3.0), Vec3(4.0, 5.0, 6.0)});
  std::vector<ControlPointSet> twins{shape, shape};
  SsmModel flat = compute_pca(twins);
  CHECK(specificity(flat, twins, 0, 10, 3) == 0.0);
}

TEST_CASE("mode samples move along the mode by whole standard deviations") {
  std::vector<ControlPointSet> sets = random_cohort(901, 6, 4);
  SsmModel model = compute_pca(sets);
  REQUIRE(model.retained_modes() >= 1);

  Eigen::VectorXd at_zero = sample_mode(model, 0, 0.0);
  CHECK((at_zero - model.mean).cwiseAbs().maxCoeff() == 0.0);

  Eigen::VectorXd plus = sample_mode(model, 0, 2.0);
  Eigen::VectorXd minus = sample_mode(model, 0, -2.0);
  CHECK(((plus - model.mean) + (minus - model.mean)).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((plus - model.mean).norm() ==
        doctest::Approx(2.0 * std::sqrt(model.eigenvalues[0])).epsilon(1e-10));

  CHECK_THROWS_AS(sample_mode(model, -1, 1.0), BadModeCountError);
  CHECK_THROWS_AS(sample_mode(model, model.retained_modes(), 1.0), BadModeCountError);
}
