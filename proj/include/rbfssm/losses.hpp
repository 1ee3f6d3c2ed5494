// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "rbfssm/rbfshape.hpp"
#include "rbfssm/volume.hpp"

namespace rbfssm {

struct LossWeights {
  double alpha = 1e2;   // surface term
  double beta = 1e2;    // normal term
  double gamma = 1e4;   // sampling term
  double zeta = 1e3;    // correspondence term
};

// Raw (unweighted) loss values. total is always the weighted combination of
// the other four fields, computed exactly as
// alpha*surface + beta*normal + gamma*sampling + zeta*correspondence.
struct LossBreakdown {
  double surface = 0.0;
  double normal = 0.0;
  double sampling = 0.0;
  double correspondence = 0.0;
  double total = 0.0;
};

// Flattened cohort mean (x0 y0 z0 x1 y1 z1 ...), length 3J.
struct MeanShape {
  Eigen::VectorXd mu;
};

// Intermediate matrices of the sampling loss, exposed for inspection. Rows
// index band points, columns control points. weights rows sum to 1.
struct SamplingLossTerms {
  Eigen::MatrixXd pair_distances;   // R x J
  Eigen::MatrixXd softmin_weights;  // R x J
  Eigen::VectorXd squared_errors;   // R (per band point, shared across columns)
};

// Sum over control points of |trilinear D(p_j)|.
double surface_loss(const ControlPointSet& cps, const SdfVolume& vol);

// Sum over control points of the angle, in degrees, between the stored normal
// and the sampled field gradient at p_j. Throws DegenerateNormalError when
// either vector is shorter than 1e-12.
double normal_loss(const ControlPointSet& cps, const SdfVolume& vol);

MeanShape mean_shape(std::span<const ControlPointSet> sets);

// Entropy of the minibatch's deviations from the supplied mean, evaluated in
// the K x K dual space: 0.5 * sum of log(lambda_m + eps) over the top
// min(3J, K) eigenvalues of Y^T Y / (3JK). Requires K >= 2 and eps > 0.
double correspondence_loss(std::span<const ControlPointSet> sets, const MeanShape& mean,
                           double eps);

// Mean over all R x J elements of softmin(K) (x) K (x) E, where K holds the
// point-to-control-point distances, E repeats the squared interpolation error
// [f(b_r) - D(b_r)]^2 across columns, and softmin rows use exp(-k) stabilized
// by the row minimum.
std::pair<double, SamplingLossTerms> sampling_loss(const ControlPointSet& cps,
                                                   const RbfModel& model,
                                                   const DipoleSet& dipoles,
                                                   const NarrowBandBatch& band,
                                                   const SdfVolume& vol);

// Everything total_loss / grad_total_loss need to know about one minibatch
// member. The model must have been solved from dipoles, and dipoles built
// from control_points, for the gradients to mean anything.
struct ShapeLossContext {
  const ControlPointSet* control_points = nullptr;
  const SdfVolume* volume = nullptr;
  const RbfModel* model = nullptr;
  const DipoleSet* dipoles = nullptr;
  const NarrowBandBatch* band = nullptr;
};

// Per-shape terms summed over the minibatch; the correspondence value is
// supplied by the caller (it is a property of the whole batch).
LossBreakdown total_loss(std::span<const ShapeLossContext> shapes,
                         double correspondence_value, const LossWeights& weights);

struct ShapeGradient {
  std::vector<Vec3> d_points;
  std::vector<Vec3> d_normals;
};

// Gradient of the weighted minibatch total with respect to every control
// point and normal. RBF weights stay frozen at their solved values: the
// derivative flows through kernel distances and dipole centers, never through
// the linear solve. The correspondence term is included only when
// weights.zeta != 0, using the supplied (lagged) mean.
std::vector<ShapeGradient> grad_total_loss(std::span<const ShapeLossContext> shapes,
                                           const MeanShape& mean,
                                           const LossWeights& weights, double eps);

}  // namespace rbfssm
