// SPDX-License-Identifier: Apache-2.0
#include "rbfssm/rbfshape.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "rbfssm/errors.hpp"
#include "rbfssm/parallel.hpp"

namespace rbfssm {

double kernel_radial(KernelKind kind, double r) {
  switch (kind) {
    case KernelKind::Biharmonic:
      return r;
    case KernelKind::ThinPlateSpline:
      return r > 0.0 ? r * r * std::log(r) : 0.0;
    case KernelKind::Triharmonic:
      return r * r * r;
  }
  return 0.0;
}

double kernel_radial_derivative(KernelKind kind, double r) {
  switch (kind) {
    case KernelKind::Biharmonic:
      return 1.0;
    case KernelKind::ThinPlateSpline:
      return r > 0.0 ? r * (2.0 * std::log(r) + 1.0) : 0.0;
    case KernelKind::Triharmonic:
      return 3.0 * r * r;
  }
  return 0.0;
}

double kernel_eval(KernelKind kind, const Vec3& x, const Vec3& y) {
  return kernel_radial(kind, (x - y).norm());
}

DipoleSet build_dipoles(const ControlPointSet& cps, double offset) {
  if (!(offset > 0.0)) throw NonPositiveOffsetError("dipole offset must be positive");
  if (cps.points.size() != cps.normals.size())
    throw ShapeMismatchError("control point and normal counts differ");
  if (cps.points.empty()) throw ShapeMismatchError("control point set is empty");

  const std::size_t count = cps.points.size();
  DipoleSet dipoles;
  dipoles.offset = offset;
  dipoles.centers.resize(3 * count);
  for (std::size_t j = 0; j < count; ++j) {
    const double len = cps.normals[j].norm();
    if (!(len >= 1e-12)) throw DegenerateNormalError("normal too short to orient a dipole");
    const Vec3 unit = cps.normals[j] / len;
    dipoles.centers[j] = cps.points[j];
    dipoles.centers[count + j] = cps.points[j] + offset * unit;
    dipoles.centers[2 * count + j] = cps.points[j] - offset * unit;
  }
  return dipoles;
}

Eigen::VectorXd constraint_targets(int num_points, double offset) {
  Eigen::VectorXd targets = Eigen::VectorXd::Zero(3 * num_points + 4);
  targets.segment(num_points, num_points).setConstant(offset);
  targets.segment(2 * num_points, num_points).setConstant(-offset);
  return targets;
}

RbfModel solve_rbf(const DipoleSet& dipoles, KernelKind kind) {
  const int m = static_cast<int>(dipoles.centers.size());
  if (m == 0 || m % 3 != 0) throw ShapeMismatchError("dipole set must hold 3J centers");

  for (int a = 0; a < m; ++a)
    for (int b = a + 1; b < m; ++b)
      if (dipoles.centers[a] == dipoles.centers[b])
        throw SingularSystemError("duplicate interpolation centers");

  const int n = m + 4;
  Eigen::MatrixXd system(n, n);
  for (int a = 0; a < m; ++a) {
    system(a, a) = kernel_radial(kind, 0.0);
    for (int b = a + 1; b < m; ++b) {
      const double value = kernel_eval(kind, dipoles.centers[a], dipoles.centers[b]);
      system(a, b) = value;
      system(b, a) = value;
    }
  }
  for (int a = 0; a < m; ++a) {
    system(a, m) = 1.0;
    system(m, a) = 1.0;
    for (int c = 0; c < 3; ++c) {
      system(a, m + 1 + c) = dipoles.centers[a][c];
      system(m + 1 + c, a) = dipoles.centers[a][c];
    }
  }
  system.block(m, m, 4, 4).setZero();

  const Eigen::VectorXd targets = constraint_targets(m / 3, dipoles.offset);
  const Eigen::VectorXd solution = Eigen::PartialPivLU<Eigen::MatrixXd>(system).solve(targets);
  if (!solution.allFinite())
    throw SingularSystemError("interpolation system is singular");

  // Backstop for ill-conditioning the factorization does not surface: the
  // optimizer can drive centers arbitrarily close together mid-run, and a
  // silently garbage interpolant would poison everything downstream.
  const double residual = (system * solution - targets).lpNorm<Eigen::Infinity>();
  const double scale = std::max(1.0, targets.lpNorm<Eigen::Infinity>());
  if (!(residual / scale <= 1e-4))
    throw SingularSystemError("interpolation residual exceeds 1e-4");

  RbfModel model;
  model.kernel = kind;
  model.weights = solution.head(m);
  model.constant = solution(m);
  model.linear = Vec3(solution(m + 1), solution(m + 2), solution(m + 3));
  return model;
}

double eval_implicit(const RbfModel& model, const DipoleSet& dipoles, const Vec3& x) {
  const int m = static_cast<int>(dipoles.centers.size());
  if (model.weights.size() != m)
    throw ShapeMismatchError("model weight count does not match the dipole set");
  double value = model.constant + model.linear.dot(x);
  for (int a = 0; a < m; ++a)
    value += model.weights(a) * kernel_radial(model.kernel, (x - dipoles.centers[a]).norm());
  return value;
}

std::vector<double> eval_implicit_batch(const RbfModel& model, const DipoleSet& dipoles,
                                        std::span<const Vec3> points) {
  std::vector<double> values(points.size());
  for (std::size_t i = 0; i < points.size(); ++i)
    values[i] = eval_implicit(model, dipoles, points[i]);
  return values;
}

SdfVolume reconstruct_sdf_grid(const RbfModel& model, const DipoleSet& dipoles,
                               const std::array<int, 3>& dims, const Vec3& spacing,
                               const Vec3& origin) {
  SdfVolume vol;
  vol.grid.dims = dims;
  vol.grid.spacing = spacing;
  vol.grid.origin = origin;
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 1) throw ConfigError("grid dimension must be >= 1");
    if (!(spacing[a] > 0.0)) throw ConfigError("grid spacing must be positive");
  }
  vol.values.resize(vol.grid.voxel_count());

  const std::size_t slice = static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]);
  parallel_for(static_cast<std::size_t>(dims[2]), [&](std::size_t k) {
    std::size_t at = k * slice;
    for (int j = 0; j < dims[1]; ++j)
      for (int i = 0; i < dims[0]; ++i, ++at) {
        const Vec3 x = vol.grid.voxel_center(i, j, static_cast<int>(k));
        vol.values[at] = static_cast<float>(eval_implicit(model, dipoles, x));
      }
  });
  return vol;
}

}  // namespace rbfssm
