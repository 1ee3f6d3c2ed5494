// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include "doctest.h"
#include "oracle_helpers.hpp"
#include "rbfssm/errors.hpp"
#include "rbfssm/rbfshape.hpp"
#include "rbfssm/rng.hpp"

using namespace rbfssm;

namespace {

// Six unit points along the coordinate axes with outward radial normals.
ControlPointSet octahedron_points() {
  ControlPointSet cps;
  for (int axis = 0; axis < 3; ++axis) {
    for (double sign : {1.0, -1.0}) {
      Vec3 p = Vec3::Zero();
      p[axis] = sign;
      cps.points.push_back(p);
      cps.normals.push_back(p);
    }
  }
  return cps;
}

double constraint_residual(const RbfModel& model, const DipoleSet& dipoles) {
  Eigen::VectorXd targets = constraint_targets(dipoles.num_points(), dipoles.offset);
  double worst = 0.0;
  for (std::size_t m = 0; m < dipoles.centers.size(); ++m) {
    double f = eval_implicit(model, dipoles, dipoles.centers[m]);
    worst = std::max(worst, std::abs(f - targets[static_cast<int>(m)]));
  }
  return worst / std::max(1.0, targets.cwiseAbs().maxCoeff());
}

// Well-separated points on a sphere shell, radial-ish normals of varied length.
ControlPointSet random_shell_points(std::uint64_t seed, int count) {
  Rng rng(seed);
  ControlPointSet cps;
  while (static_cast<int>(cps.points.size()) < count) {
    Vec3 dir(rng.normal(), rng.normal(), rng.normal());
    if (dir.norm() < 1e-3) continue;
    dir.normalize();
    Vec3 p = (3.0 + rng.uniform(-0.3, 0.3)) * dir;
    bool separated = true;
    for (const Vec3& q : cps.points) separated = separated && (p - q).norm() >= 0.4;
    if (!separated) continue;
    Vec3 tangent(rng.normal(), rng.normal(), rng.normal());
    tangent -= tangent.dot(dir) * dir;
    Vec3 n = dir + 0.2 * tangent;
    cps.points.push_back(p);
    cps.normals.push_back(rng.uniform(0.8, 1.3) * n.normalized());
  }
  return cps;
}

}  // namespace

TEST_CASE("radial kernels reproduce hand-computed values") {
  CHECK(kernel_radial(KernelKind::Biharmonic, 5.0) == 5.0);
  CHECK(kernel_radial(KernelKind::Triharmonic, 2.0) == 8.0);
  CHECK(kernel_radial(KernelKind::ThinPlateSpline, 0.0) == 0.0);
  CHECK(kernel_radial(KernelKind::ThinPlateSpline, 1.0) == 0.0);
  CHECK(kernel_radial(KernelKind::ThinPlateSpline, 2.0) ==
        doctest::Approx(4.0 * std::log(2.0)).epsilon(1e-15));

  CHECK(kernel_radial_derivative(KernelKind::Biharmonic, 5.0) == 1.0);
  CHECK(kernel_radial_derivative(KernelKind::ThinPlateSpline, 1.0) == 1.0);
  CHECK(kernel_radial_derivative(KernelKind::Triharmonic, 2.0) == 12.0);
  for (KernelKind kind :
       {KernelKind::Biharmonic, KernelKind::ThinPlateSpline, KernelKind::Triharmonic}) {
    CHECK(kernel_radial_derivative(kind, 0.0) == 0.0);
  }
}

TEST_CASE("pairwise kernel evaluation reduces to the radial profile") {
  Vec3 x(1.0, -2.0, 0.5);
  Vec3 y(4.0, 2.0, 0.5);
  for (KernelKind kind :
       {KernelKind::Biharmonic, KernelKind::ThinPlateSpline, KernelKind::Triharmonic}) {
    CHECK(kernel_eval(kind, x, y) == kernel_radial(kind, (x - y).norm()));
  }
}

TEST_CASE("dipole centers follow the on-surface, outside, inside layout") {
  ControlPointSet cps;
  cps.points = {Vec3(1.0, 2.0, 3.0), Vec3(-1.0, 0.0, 5.0)};
  cps.normals = {Vec3(2.0, 0.0, 0.0), Vec3(0.0, 0.0, -0.5)};
  DipoleSet dip = build_dipoles(cps, 0.25);
  REQUIRE(dip.centers.size() == 6);
  CHECK(dip.num_points() == 2);
  CHECK(dip.offset == 0.25);
  CHECK(dip.centers[0] == cps.points[0]);
  CHECK(dip.centers[1] == cps.points[1]);
  // Offsets use the normalized directions, so the stored lengths are irrelevant.
  CHECK((dip.centers[2] - Vec3(1.25, 2.0, 3.0)).norm() == doctest::Approx(0.0));
  CHECK((dip.centers[3] - Vec3(-1.0, 0.0, 4.75)).norm() == doctest::Approx(0.0));
  CHECK((dip.centers[4] - Vec3(0.75, 2.0, 3.0)).norm() == doctest::Approx(0.0));
  CHECK((dip.centers[5] - Vec3(-1.0, 0.0, 5.25)).norm() == doctest::Approx(0.0));
}

TEST_CASE("dipole construction rejects bad inputs") {
  ControlPointSet cps = octahedron_points();
  CHECK_THROWS_AS(build_dipoles(cps, 0.0), NonPositiveOffsetError);
  CHECK_THROWS_AS(build_dipoles(cps, -1.0), NonPositiveOffsetError);

  ControlPointSet mismatched = cps;
  mismatched.normals.pop_back();
  CHECK_THROWS_AS(build_dipoles(mismatched, 0.1), ShapeMismatchError);

  ControlPointSet degenerate = cps;
  degenerate.normals[2] = Vec3(0.0, 1e-13, 0.0);
  CHECK_THROWS_AS(build_dipoles(degenerate, 0.1), DegenerateNormalError);

  ControlPointSet empty;
  CHECK_THROWS_AS(build_dipoles(empty, 0.1), ShapeMismatchError);
}

TEST_CASE("constraint targets are zero on-surface and signed off-surface") {
  Eigen::VectorXd d = constraint_targets(3, 0.2);
  REQUIRE(d.size() == 13);
  for (int j = 0; j < 3; ++j) {
    CHECK(d[j] == 0.0);
    CHECK(d[3 + j] == 0.2);
    CHECK(d[6 + j] == -0.2);
  }
  for (int m = 9; m < 13; ++m) CHECK(d[m] == 0.0);
}

TEST_CASE("octahedron interpolation satisfies its constraints and is negative inside") {
  ControlPointSet cps = octahedron_points();
  DipoleSet dip = build_dipoles(cps, 0.1);
  RbfModel model = solve_rbf(dip, KernelKind::Biharmonic);

  CHECK(constraint_residual(model, dip) <= 1e-8);
  CHECK(eval_implicit(model, dip, Vec3::Zero()) < 0.0);
  CHECK(eval_implicit(model, dip, Vec3(1.0, 0.0, 0.0)) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(eval_implicit(model, dip, Vec3(1.1, 0.0, 0.0)) == doctest::Approx(0.1).epsilon(1e-7));
  CHECK(eval_implicit(model, dip, Vec3(0.9, 0.0, 0.0)) == doctest::Approx(-0.1).epsilon(1e-7));

  // The configuration is symmetric under axis permutations and sign flips, so
  // all six on-surface weights coincide in the exact solution.
  for (int j = 1; j < 6; ++j) {
    CHECK(model.weights[j] == doctest::Approx(model.weights[0]).epsilon(1e-9));
  }
}

TEST_CASE("random interpolation problems solve to tight residuals for every kernel") {
  int counter = 0;
  for (KernelKind kind :
       {KernelKind::Biharmonic, KernelKind::ThinPlateSpline, KernelKind::Triharmonic}) {
    for (int trial = 0; trial < 4; ++trial) {
      ControlPointSet cps = random_shell_points(900 + counter++, 5 + 3 * trial);
      DipoleSet dip = build_dipoles(cps, 0.3);
      RbfModel model = solve_rbf(dip, kind);
      CHECK(model.kernel == kind);
      CHECK(constraint_residual(model, dip) <= 1e-8);
    }
  }
}

TEST_CASE("duplicate centers make the system singular") {
  ControlPointSet cps = octahedron_points();
  cps.points[1] = cps.points[0];
  cps.normals[1] = cps.normals[0];
  DipoleSet dip = build_dipoles(cps, 0.1);
  CHECK_THROWS_AS(solve_rbf(dip, KernelKind::Biharmonic), SingularSystemError);
}

TEST_CASE("batch evaluation agrees with pointwise evaluation") {
  ControlPointSet cps = random_shell_points(321, 10);
  DipoleSet dip = build_dipoles(cps, 0.3);
  RbfModel model = solve_rbf(dip, KernelKind::Triharmonic);

  Rng rng(654);
  std::vector<Vec3> queries;
  for (int i = 0; i < 40; ++i) {
    queries.emplace_back(rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0));
  }
  std::vector<double> batch = eval_implicit_batch(model, dip, queries);
  REQUIRE(batch.size() == queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    CHECK(batch[i] == eval_implicit(model, dip, queries[i]));
  }
}

TEST_CASE("grid reconstruction evaluates the implicit function at voxel centers") {
  ControlPointSet cps = octahedron_points();
  DipoleSet dip = build_dipoles(cps, 0.1);
  RbfModel model = solve_rbf(dip, KernelKind::Biharmonic);

  std::array<int, 3> dims{7, 6, 5};
  Vec3 spacing(0.5, 0.6, 0.7);
  Vec3 origin(-1.5, -1.5, -1.4);
  SdfVolume vol = reconstruct_sdf_grid(model, dip, dims, spacing, origin);
  REQUIRE(vol.values.size() == static_cast<std::size_t>(7 * 6 * 5));
  for (int k = 0; k < dims[2]; ++k) {
    for (int j = 0; j < dims[1]; ++j) {
      for (int i = 0; i < dims[0]; ++i) {
        Vec3 x = vol.grid.voxel_center(i, j, k);
        CHECK(vol.values[vol.grid.index(i, j, k)] ==
              static_cast<float>(eval_implicit(model, dip, x)));
      }
    }
  }
}
