// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "rbfssm/volume.hpp"

namespace rbfssm {

enum class KernelKind { Biharmonic, ThinPlateSpline, Triharmonic };

// phi(r) for the polyharmonic family. ThinPlateSpline is r^2 log r with the
// removable singularity at r = 0 evaluated as 0.
double kernel_radial(KernelKind kind, double r);
// d phi / d r. Zero at r = 0 for every kind.
double kernel_radial_derivative(KernelKind kind, double r);
double kernel_eval(KernelKind kind, const Vec3& x, const Vec3& y);

// Oriented surface samples. points and normals have equal length J >= 1;
// normals need not be unit for storage, but consumers that build dipoles
// normalize them and reject near-zero ones.
struct ControlPointSet {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;
};

// Interpolation centers in fixed order [P, P+, P-]: for j < J,
// centers[j] = p_j, centers[J+j] = p_j + offset*n_j/|n_j|,
// centers[2J+j] = p_j - offset*n_j/|n_j|.
struct DipoleSet {
  std::vector<Vec3> centers;
  double offset = 0.0;
  int num_points() const { return static_cast<int>(centers.size()) / 3; }
};

// f(x) = sum_m weights[m] * phi(|x - centers[m]|) + linear . x + constant.
struct RbfModel {
  Eigen::VectorXd weights;  // 3J kernel weights
  Vec3 linear{0.0, 0.0, 0.0};
  double constant = 0.0;
  KernelKind kernel = KernelKind::Biharmonic;
};

// Throws NonPositiveOffsetError for offset <= 0, ShapeMismatchError when
// points/normals disagree, DegenerateNormalError for |n| < 1e-12.
DipoleSet build_dipoles(const ControlPointSet& cps, double offset);

// Target values the interpolant must take at the dipole centers, followed by
// the four zero moment conditions: [0 x J, +offset x J, -offset x J, 0,0,0,0].
Eigen::VectorXd constraint_targets(int num_points, double offset);

// Solves the augmented symmetric system (kernel block bordered by [1, x, y, z])
// with a dense partially pivoted factorization. Throws SingularSystemError on
// duplicate centers, non-finite solutions, or a residual above 1e-4 relative.
RbfModel solve_rbf(const DipoleSet& dipoles, KernelKind kind);

double eval_implicit(const RbfModel& model, const DipoleSet& dipoles, const Vec3& x);
std::vector<double> eval_implicit_batch(const RbfModel& model, const DipoleSet& dipoles,
                                        std::span<const Vec3> points);

// Evaluates the implicit function at every voxel center of the requested grid.
SdfVolume reconstruct_sdf_grid(const RbfModel& model, const DipoleSet& dipoles,
                               const std::array<int, 3>& dims, const Vec3& spacing,
                               const Vec3& origin);

}  // namespace rbfssm
