// SPDX-License-Identifier: Apache-2.0
#include "rbfssm/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "rbfssm/errors.hpp"
#include "rbfssm/rng.hpp"

namespace rbfssm {

namespace {

Eigen::MatrixXd stack_flattened(std::span<const ControlPointSet> sets) {
  if (sets.size() < 2) throw ShapeMismatchError("PCA needs at least 2 shapes");
  const std::size_t count = sets[0].points.size();
  if (count == 0) throw ShapeMismatchError("control point set is empty");
  Eigen::MatrixXd columns(3 * static_cast<int>(count), static_cast<int>(sets.size()));
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (sets[i].points.size() != count)
      throw ShapeMismatchError("cohort members have different point counts");
    for (std::size_t j = 0; j < count; ++j)
      columns.col(static_cast<int>(i)).segment<3>(3 * static_cast<int>(j)) = sets[i].points[j];
  }
  return columns;
}

double mean_point_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const int points = static_cast<int>(a.size()) / 3;
  double sum = 0.0;
  for (int j = 0; j < points; ++j) sum += (a.segment<3>(3 * j) - b.segment<3>(3 * j)).norm();
  return sum / points;
}

}  // namespace

SsmModel compute_pca(std::span<const ControlPointSet> sets) {
  const Eigen::MatrixXd columns = stack_flattened(sets);
  const int dim = static_cast<int>(columns.rows());
  const int shapes = static_cast<int>(columns.cols());

  SsmModel model;
  model.num_points = dim / 3;
  model.num_shapes = shapes;
  model.mean = columns.rowwise().mean();

  Eigen::MatrixXd deviations = columns;
  deviations.colwise() -= model.mean;

  // Dual-space trick: the I x I Gram spectrum carries the nonzero covariance
  // spectrum, which keeps the eigenproblem small for large J.
  const Eigen::MatrixXd dual =
      (deviations.transpose() * deviations) / static_cast<double>(shapes - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(dual);
  if (solver.info() != Eigen::Success)
    throw SingularSystemError("eigendecomposition failed");

  const int retained = std::min(dim, shapes - 1);
  model.eigenvalues.reserve(static_cast<std::size_t>(retained));
  const double top = std::max(solver.eigenvalues()(shapes - 1), 0.0);
  for (int m = 0; m < retained; ++m) {
    const double value = std::max(solver.eigenvalues()(shapes - 1 - m), 0.0);
    model.eigenvalues.push_back(value);
    // Zero eigenvalues carry no direction worth lifting; stop at numerical rank.
    if (!(value > top * 1e-12) || top == 0.0) continue;
    if (static_cast<int>(model.modes.size()) != m) continue;  // keep the prefix contiguous
    Eigen::VectorXd lifted = deviations * solver.eigenvectors().col(shapes - 1 - m);
    const double len = lifted.norm();
    if (!(len > 0.0)) continue;
    lifted /= len;
    int largest = 0;
    for (int c = 1; c < dim; ++c)
      if (std::abs(lifted(c)) > std::abs(lifted(largest))) largest = c;
    if (lifted(largest) < 0.0) lifted = -lifted;
    model.modes.push_back(std::move(lifted));
  }
  return model;
}

double compactness(const SsmModel& model, int m) {
  if (m < 1 || m > static_cast<int>(model.eigenvalues.size()))
    throw BadModeCountError("mode count outside the retained spectrum");
  double total = 0.0;
  for (const double value : model.eigenvalues) total += value;
  if (total == 0.0) return 1.0;
  double partial = 0.0;
  for (int i = 0; i < m; ++i) partial += model.eigenvalues[static_cast<std::size_t>(i)];
  return partial / total;
}

double generalization(std::span<const ControlPointSet> sets, int m) {
  if (sets.size() < 3) throw ShapeMismatchError("leave-one-out needs at least 3 shapes");
  if (m < 0) throw BadModeCountError("mode count must be non-negative");

  const Eigen::MatrixXd columns = stack_flattened(sets);
  const int shapes = static_cast<int>(columns.cols());

  double total_error = 0.0;
  for (int held_out = 0; held_out < shapes; ++held_out) {
    std::vector<ControlPointSet> fold;
    fold.reserve(sets.size() - 1);
    for (int i = 0; i < shapes; ++i)
      if (i != held_out) fold.push_back(sets[static_cast<std::size_t>(i)]);
    const SsmModel model = compute_pca(fold);
    if (m > model.retained_modes())
      throw BadModeCountError("fold retains fewer modes than requested");

    const Eigen::VectorXd deviation = columns.col(held_out) - model.mean;
    Eigen::VectorXd reconstructed = model.mean;
    for (int i = 0; i < m; ++i) {
      const Eigen::VectorXd& mode = model.modes[static_cast<std::size_t>(i)];
      reconstructed += mode.dot(deviation) * mode;
    }
    total_error += mean_point_distance(reconstructed, columns.col(held_out));
  }
  return total_error / shapes;
}

double specificity(const SsmModel& model, std::span<const ControlPointSet> sets, int m,
                   int num_samples, std::uint64_t seed) {
  if (m < 1 || m > static_cast<int>(model.eigenvalues.size()))
    throw BadModeCountError("mode count outside the retained spectrum");
  if (num_samples < 1) throw ConfigError("specificity needs at least 1 sample");
  const Eigen::MatrixXd columns = stack_flattened(sets);
  if (columns.rows() != model.mean.size())
    throw ShapeMismatchError("training shapes do not match the model");

  Rng rng(seed);
  double total = 0.0;
  for (int s = 0; s < num_samples; ++s) {
    Eigen::VectorXd sample = model.mean;
    for (int i = 0; i < m; ++i) {
      const double coord =
          rng.normal() * std::sqrt(model.eigenvalues[static_cast<std::size_t>(i)]);
      if (i < model.retained_modes())
        sample += coord * model.modes[static_cast<std::size_t>(i)];
    }
    double nearest = std::numeric_limits<double>::infinity();
    for (int i = 0; i < columns.cols(); ++i)
      nearest = std::min(nearest, mean_point_distance(sample, columns.col(i)));
    total += nearest;
  }
  return total / num_samples;
}

Eigen::VectorXd sample_mode(const SsmModel& model, int mode_index, double stddevs) {
  if (mode_index < 0 || mode_index >= model.retained_modes())
    throw BadModeCountError("mode index outside the retained modes");
  return model.mean +
         stddevs * std::sqrt(model.eigenvalues[static_cast<std::size_t>(mode_index)]) *
             model.modes[static_cast<std::size_t>(mode_index)];
}

}  // namespace rbfssm
