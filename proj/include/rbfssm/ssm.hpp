// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "rbfssm/rbfshape.hpp"

namespace rbfssm {

// Point distribution model over flattened particle positions
// (x0 y0 z0 x1 y1 z1 ...). Eigenvalues descend and are clamped at zero;
// their count is min(3J, I-1). Mode vectors exist only for the numerically
// positive eigenvalues, are unit length, mutually orthogonal, and signed so
// that each vector's largest-magnitude component is positive.
struct SsmModel {
  Eigen::VectorXd mean;
  std::vector<double> eigenvalues;
  std::vector<Eigen::VectorXd> modes;
  int num_points = 0;
  int num_shapes = 0;

  int retained_modes() const { return static_cast<int>(modes.size()); }
};

// PCA over positions (normals excluded) with the 1/(I-1) covariance, computed
// in the I x I dual space and lifted. Requires I >= 2 shapes of equal size.
SsmModel compute_pca(std::span<const ControlPointSet> sets);

// Fraction of total variance captured by the first m eigenvalues.
// Returns 1.0 when the total variance is zero. 1 <= m <= eigenvalue count.
double compactness(const SsmModel& model, int m);

// Leave-one-out reconstruction error with m modes (m = 0 reconstructs with
// the fold mean): mean over shapes of the mean per-point Euclidean error.
double generalization(std::span<const ControlPointSet> sets, int m);

// Mean distance from model samples to their nearest training shape. Samples
// draw each of the first m latent coordinates from N(0, eigenvalue).
double specificity(const SsmModel& model, std::span<const ControlPointSet> sets, int m,
                   int num_samples, std::uint64_t seed);

// mean + stddevs * sqrt(eigenvalue) * mode, flattened.
Eigen::VectorXd sample_mode(const SsmModel& model, int mode_index, double stddevs);

}  // namespace rbfssm
