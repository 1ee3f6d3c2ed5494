// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <map>
#include <vector>

#include "doctest.h"
#include "oracle_helpers.hpp"
#include "rbfssm/errors.hpp"
#include "rbfssm/optimize.hpp"
#include "rbfssm/parallel.hpp"
#include "rbfssm/rng.hpp"

using namespace rbfssm;

namespace {

ShapeGradient constant_gradient(int num_points, double value) {
  ShapeGradient g;
  g.d_points.assign(num_points, Vec3(value, value, value));
  g.d_normals.assign(num_points, Vec3(value, value, value));
  return g;
}

// Small cohort of concentric analytic sphere fields on one grid layout.
Cohort sphere_cohort(int members, int dim, double base_radius, double radius_step) {
  Cohort cohort;
  VolumeGrid grid = oracle::make_grid(dim, dim, dim);
  Vec3 center = 0.5 * (grid.hull_min() + grid.hull_max());
  for (int i = 0; i < members; ++i) {
    cohort.volumes.push_back(oracle::sphere_sdf(grid, center, base_radius + i * radius_step));
  }
  return cohort;
}

FitConfig small_fit_config() {
  FitConfig config;
  config.num_points = 8;
  config.band_samples = 200;
  config.epochs = 3;
  config.minibatch = 2;
  config.seed = 7;
  return config;
}

}  // namespace

TEST_CASE("the first adaptive step has the closed-form magnitude") {
  // With beta1 = 0.9, beta2 = 0.999 and a fresh state, bias correction makes
  // the first step -lr * g / (|g| + eps), here -0.01 for every coordinate.
  AdamState state;
  AdamDelta delta = adam_step(state, constant_gradient(2, 5.0), 0.01, 0.9, 0.999, 1e-8);
  CHECK(state.step_count == 1);
  REQUIRE(delta.points.size() == 2);
  REQUIRE(delta.normals.size() == 2);
  for (int j = 0; j < 2; ++j) {
    for (int axis = 0; axis < 3; ++axis) {
      CHECK(std::abs(delta.points[j][axis] - (-0.01)) <= 1e-9);
      CHECK(std::abs(delta.normals[j][axis] - (-0.01)) <= 1e-9);
    }
  }
}

TEST_CASE("a constant gradient keeps the bias-corrected step constant") {
  AdamState state;
  ShapeGradient g = constant_gradient(1, 5.0);
  AdamDelta first = adam_step(state, g, 0.01, 0.9, 0.999, 1e-8);
  AdamDelta second = adam_step(state, g, 0.01, 0.9, 0.999, 1e-8);
  CHECK(state.step_count == 2);
  CHECK(std::abs(second.points[0][0] - first.points[0][0]) <= 1e-12);
}

TEST_CASE("the adaptive step rejects mismatched state") {
  AdamState state;
  adam_step(state, constant_gradient(3, 1.0), 0.01, 0.9, 0.999, 1e-8);
  CHECK_THROWS_AS(adam_step(state, constant_gradient(2, 1.0), 0.01, 0.9, 0.999, 1e-8),
                  ShapeMismatchError);
}

TEST_CASE("surface projection lands on the zero level set") {
  VolumeGrid grid = oracle::make_grid(32, 32, 32);
  Vec3 center = 0.5 * (grid.hull_min() + grid.hull_max());
  SdfVolume vol = oracle::sphere_sdf(grid, center, 8.0);
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    Vec3 dir(rng.normal(), rng.normal(), rng.normal());
    dir.normalize();
    Vec3 start = center + dir * rng.uniform(5.0, 11.0);
    Vec3 projected = project_to_surface(vol, start, 100, 0.05);
    CHECK(std::abs(sample_trilinear(vol, projected)) <= 0.05);
    CHECK((projected - center).norm() == doctest::Approx(8.0).epsilon(0.02));
  }
}

TEST_CASE("projection diverges on flat fields and runaway iterates") {
  VolumeGrid grid = oracle::make_grid(8, 8, 8);
  SdfVolume flat = oracle::volume_from_fn(grid, [](const Vec3&) { return 2.0; });
  CHECK_THROWS_AS(project_to_surface(flat, Vec3(3.5, 3.5, 3.5), 50, 0.01), DivergedError);

  // The level set of this slope lies far outside the grid, so the first full
  // Newton step exits the sampled region.
  SdfVolume slope =
      oracle::volume_from_fn(grid, [](const Vec3& x) { return x[0] - 100.0; });
  CHECK_THROWS_AS(project_to_surface(slope, Vec3(3.5, 3.5, 3.5), 50, 0.01), DivergedError);
}

TEST_CASE("initialization places corresponding near-surface points with unit normals") {
  Cohort cohort = sphere_cohort(2, 32, 8.0, 1.0);
  FitConfig config = small_fit_config();
  config.num_points = 16;
  std::vector<ControlPointSet> sets = initialize_cohort(cohort, config);
  REQUIRE(sets.size() == 2);
  for (std::size_t i = 0; i < sets.size(); ++i) {
    REQUIRE(sets[i].points.size() == 16);
    REQUIRE(sets[i].normals.size() == 16);
    for (std::size_t j = 0; j < 16; ++j) {
      CHECK(std::abs(sample_trilinear(cohort.volumes[i], sets[i].points[j])) <= 0.05);
      CHECK(sets[i].normals[j].norm() == doctest::Approx(1.0).epsilon(1e-9));
      Vec3 g = gradient(cohort.volumes[i], sets[i].points[j]);
      CHECK(sets[i].normals[j].dot(g.normalized()) > 0.99);
    }
  }
  // Shared candidates keep corresponding points nearby across members: these
  // spheres are concentric with radii 1 apart.
  for (std::size_t j = 0; j < 16; ++j) {
    CHECK((sets[0].points[j] - sets[1].points[j]).norm() <= 1.5);
  }

  std::vector<ControlPointSet> again = initialize_cohort(cohort, config);
  for (std::size_t i = 0; i < sets.size(); ++i) {
    for (std::size_t j = 0; j < 16; ++j) {
      CHECK(sets[i].points[j] == again[i].points[j]);
      CHECK(sets[i].normals[j] == again[i].normals[j]);
    }
  }
}

TEST_CASE("farthest-point selection spreads the initial points") {
  Cohort cohort = sphere_cohort(2, 32, 9.0, 0.5);
  FitConfig config = small_fit_config();
  config.num_points = 12;
  std::vector<ControlPointSet> sets = initialize_cohort(cohort, config);
  double min_sep = 1e30;
  for (std::size_t a = 0; a < 12; ++a) {
    for (std::size_t b = a + 1; b < 12; ++b) {
      min_sep = std::min(min_sep, (sets[0].points[a] - sets[0].points[b]).norm());
    }
  }
  // 12 spread points on a radius-9 sphere sit several voxels apart.
  CHECK(min_sep > 3.0);
}

TEST_CASE("the fit keeps the batch mean lagged within an epoch") {
  Cohort cohort = sphere_cohort(4, 24, 5.0, 0.4);
  FitConfig config = small_fit_config();

  std::map<int, std::vector<Eigen::VectorXd>> mu_by_epoch;
  std::vector<int> epochs_seen;
  fit_cohort(cohort, config, [&](int epoch, int iteration, const MeanShape& mean,
                                 const LossBreakdown&) {
    if (mu_by_epoch[epoch].empty()) epochs_seen.push_back(epoch);
    CHECK(iteration == static_cast<int>(mu_by_epoch[epoch].size()));
    mu_by_epoch[epoch].push_back(mean.mu);
  });

  // 4 members with minibatches of 2: two iterations per epoch, three epochs.
  REQUIRE(epochs_seen == std::vector<int>{0, 1, 2});
  for (int epoch : epochs_seen) {
    REQUIRE(mu_by_epoch[epoch].size() == 2);
    CHECK(mu_by_epoch[epoch][0] == mu_by_epoch[epoch][1]);
  }
  // The mean is refreshed at epoch boundaries while the points move.
  CHECK(mu_by_epoch[0][0] != mu_by_epoch[1][0]);
  CHECK(mu_by_epoch[1][0] != mu_by_epoch[2][0]);
}

TEST_CASE("the fit disables correspondence during the first epoch only") {
  Cohort cohort = sphere_cohort(3, 24, 5.0, 0.5);
  FitConfig config = small_fit_config();
  config.minibatch = 3;
  FitResult result = fit_cohort(cohort, config);
  REQUIRE(result.loss_history.size() == 3);
  CHECK(result.loss_history[0].correspondence == 0.0);
  CHECK(result.loss_history[1].correspondence != 0.0);
  for (const LossBreakdown& epoch : result.loss_history) {
    LossWeights w = config.weights;
    CHECK(epoch.total == w.alpha * epoch.surface + w.beta * epoch.normal +
                             w.gamma * epoch.sampling + w.zeta * epoch.correspondence);
  }
}

TEST_CASE("the fit resolves defaults and returns near-surface particles") {
  Cohort cohort = sphere_cohort(2, 24, 5.0, 0.5);
  FitConfig config = small_fit_config();
  config.band_halfwidth = 0.0;
  FitResult result = fit_cohort(cohort, config);
  CHECK(result.config.band_halfwidth == 2.0);
  REQUIRE(result.particle_sets.size() == 2);
  for (std::size_t i = 0; i < result.particle_sets.size(); ++i) {
    REQUIRE(result.particle_sets[i].points.size() == 8);
    for (const Vec3& p : result.particle_sets[i].points) {
      CHECK(std::abs(sample_trilinear(cohort.volumes[i], p)) <= 0.5);
    }
    for (const Vec3& n : result.particle_sets[i].normals) {
      CHECK(n.norm() == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("repeat fits are bitwise identical at any thread cap") {
  Cohort cohort = sphere_cohort(4, 24, 5.0, 0.4);
  FitConfig config = small_fit_config();

  set_max_threads(1);
  FitResult a = fit_cohort(cohort, config);
  FitResult b = fit_cohort(cohort, config);
  set_max_threads(4);
  FitResult c = fit_cohort(cohort, config);
  set_max_threads(1);

  auto identical = [](const FitResult& x, const FitResult& y) {
    if (x.particle_sets.size() != y.particle_sets.size()) return false;
    for (std::size_t i = 0; i < x.particle_sets.size(); ++i) {
      for (std::size_t j = 0; j < x.particle_sets[i].points.size(); ++j) {
        if (x.particle_sets[i].points[j] != y.particle_sets[i].points[j]) return false;
        if (x.particle_sets[i].normals[j] != y.particle_sets[i].normals[j]) return false;
      }
    }
    if (x.loss_history.size() != y.loss_history.size()) return false;
    for (std::size_t e = 0; e < x.loss_history.size(); ++e) {
      if (x.loss_history[e].total != y.loss_history[e].total) return false;
    }
    return true;
  };
  CHECK(identical(a, b));
  CHECK(identical(a, c));
}

TEST_CASE("different seeds draw different bands and land on different losses") {
  Cohort cohort = sphere_cohort(2, 24, 5.0, 0.5);
  FitConfig config = small_fit_config();
  FitResult a = fit_cohort(cohort, config);
  config.seed = 8;
  FitResult d = fit_cohort(cohort, config);
  CHECK(a.loss_history.back().sampling != d.loss_history.back().sampling);
}

TEST_CASE("bad fit configurations are rejected up front") {
  Cohort cohort = sphere_cohort(2, 16, 3.5, 0.3);
  FitConfig config = small_fit_config();

  FitConfig bad = config;
  bad.epochs = 0;
  CHECK_THROWS_AS(fit_cohort(cohort, bad), ConfigError);
  bad = config;
  bad.num_points = 0;
  CHECK_THROWS_AS(fit_cohort(cohort, bad), ConfigError);
  bad = config;
  bad.minibatch = 1;
  CHECK_THROWS_AS(fit_cohort(cohort, bad), ConfigError);
  bad = config;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(fit_cohort(cohort, bad), ConfigError);
  bad = config;
  bad.adam_beta1 = 1.0;
  CHECK_THROWS_AS(fit_cohort(cohort, bad), ConfigError);
  bad = config;
  bad.entropy_eps = 0.0;
  CHECK_THROWS_AS(fit_cohort(cohort, bad), ConfigError);

  Cohort single;
  single.volumes.push_back(cohort.volumes[0]);
  CHECK_THROWS_AS(fit_cohort(single, config), ShapeMismatchError);

  Cohort mismatched = cohort;
  mismatched.volumes[1] = oracle::sphere_sdf(oracle::make_grid(17, 16, 16), //
                                             Vec3(8.0, 7.5, 7.5), 3.5);
  CHECK_THROWS_AS(fit_cohort(mismatched, config), ShapeMismatchError);
}
