// SPDX-License-Identifier: Apache-2.0
#include "rbfssm/losses.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "rbfssm/errors.hpp"
#include "rbfssm/parallel.hpp"

namespace rbfssm {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDegreesPerRadian = 180.0 / kPi;

void check_set(const ControlPointSet& cps) {
  if (cps.points.size() != cps.normals.size())
    throw ShapeMismatchError("control point and normal counts differ");
  if (cps.points.empty()) throw ShapeMismatchError("control point set is empty");
}

Eigen::VectorXd flatten_points(const ControlPointSet& cps) {
  Eigen::VectorXd flat(3 * static_cast<int>(cps.points.size()));
  for (std::size_t j = 0; j < cps.points.size(); ++j)
    flat.segment<3>(3 * static_cast<int>(j)) = cps.points[j];
  return flat;
}

// Shared state of one shape's sampling term. value and the per-(r,j) factors
// are needed by both the loss and its gradient.
struct SamplingEval {
  double value = 0.0;
  SamplingLossTerms terms;
  Eigen::VectorXd signed_errors;  // f(b_r) - D(b_r), before squaring
};

SamplingEval eval_sampling(const ControlPointSet& cps, const RbfModel& model,
                           const DipoleSet& dipoles, const NarrowBandBatch& band,
                           const SdfVolume& vol) {
  check_set(cps);
  const int num_points = static_cast<int>(cps.points.size());
  const int num_samples = static_cast<int>(band.points.size());
  if (dipoles.num_points() != num_points)
    throw ShapeMismatchError("dipole set does not match the control point set");
  if (num_samples == 0) throw ShapeMismatchError("narrow-band batch is empty");

  SamplingEval eval;
  eval.terms.pair_distances.resize(num_samples, num_points);
  eval.terms.softmin_weights.resize(num_samples, num_points);
  eval.terms.squared_errors.resize(num_samples);
  eval.signed_errors.resize(num_samples);

  double sum = 0.0;
  for (int r = 0; r < num_samples; ++r) {
    const Vec3& b = band.points[r];

    double row_min = std::numeric_limits<double>::infinity();
    for (int j = 0; j < num_points; ++j) {
      const double k = (b - cps.points[j]).norm();
      eval.terms.pair_distances(r, j) = k;
      row_min = std::min(row_min, k);
    }
    double norm = 0.0;
    for (int j = 0; j < num_points; ++j) {
      const double w = std::exp(-(eval.terms.pair_distances(r, j) - row_min));
      eval.terms.softmin_weights(r, j) = w;
      norm += w;
    }
    eval.terms.softmin_weights.row(r) /= norm;

    const double err = eval_implicit(model, dipoles, b) - sample_trilinear(vol, b);
    eval.signed_errors(r) = err;
    eval.terms.squared_errors(r) = err * err;

    double weighted_distance = 0.0;
    for (int j = 0; j < num_points; ++j)
      weighted_distance += eval.terms.softmin_weights(r, j) * eval.terms.pair_distances(r, j);
    sum += weighted_distance * eval.terms.squared_errors(r);
  }
  eval.value = sum / (static_cast<double>(num_samples) * static_cast<double>(num_points));
  return eval;
}

void check_context(const ShapeLossContext& ctx) {
  if (!ctx.control_points || !ctx.volume || !ctx.model || !ctx.dipoles || !ctx.band)
    throw ConfigError("incomplete shape loss context");
}

}  // namespace

double surface_loss(const ControlPointSet& cps, const SdfVolume& vol) {
  check_set(cps);
  double sum = 0.0;
  for (const Vec3& p : cps.points) sum += std::abs(sample_trilinear(vol, p));
  return sum;
}

double normal_loss(const ControlPointSet& cps, const SdfVolume& vol) {
  check_set(cps);
  double sum = 0.0;
  for (std::size_t j = 0; j < cps.points.size(); ++j) {
    const Vec3 g = gradient(vol, cps.points[j]);
    const double normal_len = cps.normals[j].norm();
    const double grad_len = g.norm();
    if (!(normal_len >= 1e-12) || !(grad_len >= 1e-12))
      throw DegenerateNormalError("cannot measure the angle against a vanishing vector");
    const double cosine =
        std::clamp(cps.normals[j].dot(g) / (normal_len * grad_len), -1.0, 1.0);
    sum += kDegreesPerRadian * std::acos(cosine);
  }
  return sum;
}

MeanShape mean_shape(std::span<const ControlPointSet> sets) {
  if (sets.empty()) throw ShapeMismatchError("cannot average an empty cohort");
  check_set(sets[0]);
  const std::size_t count = sets[0].points.size();
  MeanShape mean;
  mean.mu = Eigen::VectorXd::Zero(3 * static_cast<int>(count));
  for (const auto& set : sets) {
    check_set(set);
    if (set.points.size() != count)
      throw ShapeMismatchError("cohort members have different point counts");
    mean.mu += flatten_points(set);
  }
  mean.mu /= static_cast<double>(sets.size());
  return mean;
}

double correspondence_loss(std::span<const ControlPointSet> sets, const MeanShape& mean,
                           double eps) {
  if (sets.size() < 2) throw ShapeMismatchError("correspondence needs at least 2 shapes");
  if (!(eps > 0.0)) throw ConfigError("entropy regularizer must be positive");
  const int batch = static_cast<int>(sets.size());
  const int dim = static_cast<int>(mean.mu.size());

  Eigen::MatrixXd deviations(dim, batch);
  for (int k = 0; k < batch; ++k) {
    check_set(sets[k]);
    if (3 * static_cast<int>(sets[k].points.size()) != dim)
      throw ShapeMismatchError("shape size does not match the mean");
    deviations.col(k) = flatten_points(sets[k]) - mean.mu;
  }

  const Eigen::MatrixXd dual =
      (deviations.transpose() * deviations) / (static_cast<double>(dim) * batch);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(dual);
  if (solver.info() != Eigen::Success)
    throw SingularSystemError("eigendecomposition failed");

  // Eigenvalues ascend; the top min(3J, K) carry the nonzero spectrum shared
  // with the primal covariance, so the rest are structural zeros.
  const int keep = std::min(dim, batch);
  double sum = 0.0;
  for (int m = 0; m < keep; ++m) sum += std::log(solver.eigenvalues()(batch - 1 - m) + eps);
  return 0.5 * sum;
}

std::pair<double, SamplingLossTerms> sampling_loss(const ControlPointSet& cps,
                                                   const RbfModel& model,
                                                   const DipoleSet& dipoles,
                                                   const NarrowBandBatch& band,
                                                   const SdfVolume& vol) {
  SamplingEval eval = eval_sampling(cps, model, dipoles, band, vol);
  return {eval.value, std::move(eval.terms)};
}

LossBreakdown total_loss(std::span<const ShapeLossContext> shapes,
                         double correspondence_value, const LossWeights& weights) {
  if (shapes.empty()) throw ShapeMismatchError("minibatch is empty");
  struct Terms {
    double surface = 0.0, normal = 0.0, sampling = 0.0;
  };
  std::vector<Terms> per_shape(shapes.size());
  parallel_for(shapes.size(), [&](std::size_t i) {
    const ShapeLossContext& ctx = shapes[i];
    check_context(ctx);
    per_shape[i].surface = surface_loss(*ctx.control_points, *ctx.volume);
    per_shape[i].normal = normal_loss(*ctx.control_points, *ctx.volume);
    per_shape[i].sampling =
        eval_sampling(*ctx.control_points, *ctx.model, *ctx.dipoles, *ctx.band, *ctx.volume)
            .value;
  });

  LossBreakdown breakdown;
  breakdown.correspondence = correspondence_value;
  for (const Terms& terms : per_shape) {
    breakdown.surface += terms.surface;
    breakdown.normal += terms.normal;
    breakdown.sampling += terms.sampling;
  }
  breakdown.total = weights.alpha * breakdown.surface + weights.beta * breakdown.normal +
                    weights.gamma * breakdown.sampling +
                    weights.zeta * breakdown.correspondence;
  return breakdown;
}

namespace {

// Accumulates the weighted per-shape terms (surface, normal, sampling) for one
// minibatch member. The model's weights are treated as constants throughout.
void accumulate_shape_gradient(const ShapeLossContext& ctx, const LossWeights& weights,
                               ShapeGradient& grad) {
  const ControlPointSet& cps = *ctx.control_points;
  const SdfVolume& vol = *ctx.volume;
  const RbfModel& model = *ctx.model;
  const DipoleSet& dipoles = *ctx.dipoles;
  const NarrowBandBatch& band = *ctx.band;
  const int num_points = static_cast<int>(cps.points.size());

  grad.d_points.assign(cps.points.size(), Vec3::Zero());
  grad.d_normals.assign(cps.points.size(), Vec3::Zero());

  // Surface term: d|T(p)|/dp follows the interpolant inside its current cell.
  for (int j = 0; j < num_points; ++j) {
    const double d = sample_trilinear(vol, cps.points[j]);
    if (d == 0.0) continue;
    const double sign = d > 0.0 ? 1.0 : -1.0;
    grad.d_points[static_cast<std::size_t>(j)] +=
        weights.alpha * sign * trilinear_cell_gradient(vol, cps.points[j]);
  }

  // Normal term. The sampled gradient g depends on p, so the chain runs both
  // through the normal and through the gradient's own Jacobian.
  for (int j = 0; j < num_points; ++j) {
    const Vec3& n = cps.normals[j];
    const Vec3 g = gradient(vol, cps.points[j]);
    const double n_len = n.norm();
    const double g_len = g.norm();
    if (!(n_len >= 1e-12) || !(g_len >= 1e-12))
      throw DegenerateNormalError("cannot measure the angle against a vanishing vector");
    const Vec3 n_hat = n / n_len;
    const Vec3 g_hat = g / g_len;
    const double cosine = std::clamp(n_hat.dot(g_hat), -1.0, 1.0);
    const double dangle_dcos =
        -1.0 / std::sqrt(std::max(1.0 - cosine * cosine, 1e-24));
    const double scale = weights.beta * kDegreesPerRadian * dangle_dcos;

    const Vec3 dcos_dn = (g_hat - cosine * n_hat) / n_len;
    const Vec3 dcos_dg = (n_hat - cosine * g_hat) / g_len;
    const Eigen::Matrix3d jac = gradient_jacobian(vol, cps.points[j]);
    grad.d_normals[static_cast<std::size_t>(j)] += scale * dcos_dn;
    grad.d_points[static_cast<std::size_t>(j)] += scale * (jac.transpose() * dcos_dg);
  }

  // Sampling term.
  const SamplingEval eval = eval_sampling(cps, model, dipoles, band, vol);
  const int num_samples = static_cast<int>(band.points.size());
  const double coeff = weights.gamma / (static_cast<double>(num_samples) *
                                        static_cast<double>(num_points));
  const double offset = dipoles.offset;

  std::vector<double> normal_lengths(cps.normals.size());
  std::vector<Vec3> unit_normals(cps.normals.size());
  for (std::size_t j = 0; j < cps.normals.size(); ++j) {
    normal_lengths[j] = cps.normals[j].norm();
    unit_normals[j] = cps.normals[j] / normal_lengths[j];
  }

  for (int r = 0; r < num_samples; ++r) {
    const Vec3& b = band.points[r];
    const double err_sq = eval.terms.squared_errors(r);
    const double err = eval.signed_errors(r);

    double weighted_distance = 0.0;
    for (int j = 0; j < num_points; ++j)
      weighted_distance += eval.terms.softmin_weights(r, j) * eval.terms.pair_distances(r, j);

    // Distance path: d/dk of sum_j softmin_j * k_j, row-coupled through the
    // softmin normalization.
    for (int j = 0; j < num_points; ++j) {
      const double k = eval.terms.pair_distances(r, j);
      if (k < 1e-12) continue;
      const double w = eval.terms.softmin_weights(r, j);
      const double dA_dk = w * (1.0 + weighted_distance - k);
      grad.d_points[static_cast<std::size_t>(j)] +=
          (coeff * err_sq * dA_dk / k) * (cps.points[j] - b);
    }

    // Error path: f moves with the dipole centers while its weights stay put.
    const double err_factor = coeff * weighted_distance * 2.0 * err;
    for (int j = 0; j < num_points; ++j) {
      Vec3 d_center_sum = Vec3::Zero();
      Vec3 d_center_diff = Vec3::Zero();
      for (int side = 0; side < 3; ++side) {
        const int m = side * num_points + j;
        const Vec3 to_center = dipoles.centers[static_cast<std::size_t>(m)] - b;
        const double r_m = to_center.norm();
        if (r_m < 1e-12) continue;
        const Vec3 df_dc = model.weights(m) *
                           kernel_radial_derivative(model.kernel, r_m) / r_m * to_center;
        d_center_sum += df_dc;
        if (side == 1) d_center_diff += df_dc;
        if (side == 2) d_center_diff -= df_dc;
      }
      grad.d_points[static_cast<std::size_t>(j)] += err_factor * d_center_sum;
      const Vec3& n_hat = unit_normals[static_cast<std::size_t>(j)];
      const Vec3 tangent =
          d_center_diff - n_hat.dot(d_center_diff) * n_hat;  // (I - nn^T) d
      grad.d_normals[static_cast<std::size_t>(j)] +=
          err_factor * (offset / normal_lengths[static_cast<std::size_t>(j)]) * tangent;
    }
  }
}

}  // namespace

std::vector<ShapeGradient> grad_total_loss(std::span<const ShapeLossContext> shapes,
                                           const MeanShape& mean,
                                           const LossWeights& weights, double eps) {
  if (shapes.empty()) throw ShapeMismatchError("minibatch is empty");
  std::vector<ShapeGradient> grads(shapes.size());
  parallel_for(shapes.size(), [&](std::size_t i) {
    check_context(shapes[i]);
    accumulate_shape_gradient(shapes[i], weights, grads[i]);
  });

  if (weights.zeta != 0.0) {
    const int batch = static_cast<int>(shapes.size());
    if (batch < 2) throw ShapeMismatchError("correspondence needs at least 2 shapes");
    const int dim = static_cast<int>(mean.mu.size());
    Eigen::MatrixXd deviations(dim, batch);
    for (int k = 0; k < batch; ++k) {
      const ControlPointSet& cps = *shapes[static_cast<std::size_t>(k)].control_points;
      if (3 * static_cast<int>(cps.points.size()) != dim)
        throw ShapeMismatchError("shape size does not match the mean");
      deviations.col(k) = flatten_points(cps) - mean.mu;
    }
    // d/dY of 0.5 log det(C + eps I) with C = Y^T Y / (3JK). The structurally
    // zero eigenvalues beyond min(3J, K) contribute constants, so this equals
    // the gradient of the truncated eigenvalue sum used for the value.
    const double denom = static_cast<double>(dim) * batch;
    Eigen::MatrixXd regularized =
        (deviations.transpose() * deviations) / denom;
    regularized.diagonal().array() += eps;
    const Eigen::MatrixXd d_deviations =
        deviations * regularized.llt().solve(
                         Eigen::MatrixXd::Identity(batch, batch)) / denom;
    for (int k = 0; k < batch; ++k) {
      auto& d_points = grads[static_cast<std::size_t>(k)].d_points;
      for (std::size_t j = 0; j < d_points.size(); ++j)
        d_points[j] += weights.zeta *
                       d_deviations.col(k).segment<3>(3 * static_cast<int>(j));
    }
  }
  return grads;
}

}  // namespace rbfssm
