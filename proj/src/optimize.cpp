// SPDX-License-Identifier: Apache-2.0
#include "rbfssm/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "rbfssm/errors.hpp"
#include "rbfssm/parallel.hpp"
#include "rbfssm/rng.hpp"

namespace rbfssm {

namespace {

constexpr double kProjectTol = 0.05;
constexpr int kProjectMaxIters = 100;
constexpr std::uint64_t kInitTag = 0x696e697473656cull;   // candidate selection
constexpr std::uint64_t kShuffleTag = 0x7368756666ull;    // minibatch partition
constexpr std::uint64_t kBandTag = 0x62616e64ull;         // narrow-band draws

void validate_cohort(const Cohort& cohort) {
  if (cohort.volumes.size() < 2)
    throw ShapeMismatchError("a cohort needs at least 2 members");
  const VolumeGrid& grid = cohort.volumes[0].grid;
  for (const SdfVolume& vol : cohort.volumes) {
    if (vol.grid.dims != grid.dims || vol.grid.spacing != grid.spacing ||
        vol.grid.origin != grid.origin)
      throw ShapeMismatchError("cohort members must share one grid layout");
    if (vol.values.size() != vol.grid.voxel_count())
      throw ShapeMismatchError("volume value count does not match its grid");
  }
}

FitConfig resolve_config(const Cohort& cohort, const FitConfig& config) {
  FitConfig resolved = config;
  if (resolved.band_halfwidth <= 0.0) {
    const Vec3& spacing = cohort.volumes[0].grid.spacing;
    resolved.band_halfwidth = 2.0 * spacing.maxCoeff();
  }
  const int members = static_cast<int>(cohort.volumes.size());
  if (resolved.minibatch > members) resolved.minibatch = members;

  if (resolved.num_points < 1) throw ConfigError("num_points must be >= 1");
  if (resolved.band_samples < 1) throw ConfigError("band_samples must be >= 1");
  if (resolved.minibatch < 2) throw ConfigError("minibatch must be >= 2");
  if (resolved.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(resolved.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(resolved.adam_beta1 >= 0.0 && resolved.adam_beta1 < 1.0) ||
      !(resolved.adam_beta2 >= 0.0 && resolved.adam_beta2 < 1.0))
    throw ConfigError("adam betas must lie in [0, 1)");
  if (!(resolved.adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (!(resolved.entropy_eps > 0.0)) throw ConfigError("entropy_eps must be positive");
  if (resolved.weights.alpha < 0.0 || resolved.weights.beta < 0.0 ||
      resolved.weights.gamma < 0.0 || resolved.weights.zeta < 0.0)
    throw ConfigError("loss weights must be non-negative");
  return resolved;
}

void renormalize(ControlPointSet& cps) {
  for (Vec3& n : cps.normals) {
    const double len = n.norm();
    if (!(len >= 1e-12)) throw DegenerateNormalError("normal collapsed during optimization");
    n /= len;
  }
}

}  // namespace

AdamDelta adam_step(AdamState& state, const ShapeGradient& grads, double learning_rate,
                    double beta1, double beta2, double eps) {
  const std::size_t count = grads.d_points.size();
  if (grads.d_normals.size() != count || state.m_points.size() != count ||
      state.v_points.size() != count || state.m_normals.size() != count ||
      state.v_normals.size() != count)
    throw ShapeMismatchError("optimizer state does not match the gradient");

  ++state.step_count;
  const double correction1 = 1.0 - std::pow(beta1, static_cast<double>(state.step_count));
  const double correction2 = 1.0 - std::pow(beta2, static_cast<double>(state.step_count));

  AdamDelta delta;
  delta.points.resize(count);
  delta.normals.resize(count);
  const auto update = [&](Vec3& m, Vec3& v, const Vec3& g, Vec3& out) {
    for (int c = 0; c < 3; ++c) {
      m[c] = beta1 * m[c] + (1.0 - beta1) * g[c];
      v[c] = beta2 * v[c] + (1.0 - beta2) * g[c] * g[c];
      const double m_hat = m[c] / correction1;
      const double v_hat = v[c] / correction2;
      out[c] = -learning_rate * m_hat / (std::sqrt(v_hat) + eps);
    }
  };
  for (std::size_t j = 0; j < count; ++j) {
    update(state.m_points[j], state.v_points[j], grads.d_points[j], delta.points[j]);
    update(state.m_normals[j], state.v_normals[j], grads.d_normals[j], delta.normals[j]);
  }
  return delta;
}

Vec3 project_to_surface(const SdfVolume& vol, Vec3 x, int max_iters, double tol) {
  double d = sample_trilinear(vol, x);
  for (int iter = 0; iter < max_iters && std::abs(d) > tol; ++iter) {
    Vec3 g;
    try {
      g = gradient(vol, x);
    } catch (const OutOfBoundsError&) {
      throw DivergedError("projection reached the volume boundary");
    }
    const double g_norm = g.norm();
    if (!(g_norm >= 1e-9)) throw DivergedError("field gradient vanished during projection");
    x -= d / (g_norm * g_norm) * g;
    try {
      d = sample_trilinear(vol, x);
    } catch (const OutOfBoundsError&) {
      throw DivergedError("projection left the volume hull");
    }
  }
  return x;
}

std::vector<ControlPointSet> initialize_cohort(const Cohort& cohort, const FitConfig& config) {
  validate_cohort(cohort);
  const FitConfig resolved = resolve_config(cohort, config);
  const int num_points = resolved.num_points;
  const SdfVolume& first = cohort.volumes[0];
  const VolumeGrid& grid = first.grid;
  const double diagonal = grid.spacing.norm();

  // Candidate pool: near-surface voxels of member 0, projected. Voxels in the
  // outermost shell are skipped; the gradient is not defined there, and a
  // shape that fits the grid has its whole surface further inside anyway.
  std::vector<Vec3> candidates;
  for (int k = 1; k < grid.dims[2] - 1; ++k)
    for (int j = 1; j < grid.dims[1] - 1; ++j)
      for (int i = 1; i < grid.dims[0] - 1; ++i) {
        const float value = first.values[grid.index(i, j, k)];
        if (std::abs(static_cast<double>(value)) > diagonal) continue;
        try {
          candidates.push_back(project_to_surface(first, grid.voxel_center(i, j, k),
                                                  kProjectMaxIters, kProjectTol));
        } catch (const DivergedError& err) {
          throw DivergedError(std::string(err.what()) + " (shape 0, candidate " +
                              std::to_string(candidates.size()) + ")");
        }
      }
  if (static_cast<int>(candidates.size()) < num_points)
    throw EmptyBandError("fewer near-surface candidates than requested control points");

  // Farthest-point subset, seeded start, ties to the lowest index.
  Rng rng(derive_seed(resolved.seed, kInitTag));
  std::vector<std::size_t> chosen;
  chosen.reserve(static_cast<std::size_t>(num_points));
  chosen.push_back(static_cast<std::size_t>(rng.next_below(candidates.size())));
  std::vector<double> nearest_sq(candidates.size(),
                                 std::numeric_limits<double>::infinity());
  for (int round = 1; round < num_points; ++round) {
    const Vec3& latest = candidates[chosen.back()];
    std::size_t best = 0;
    double best_sq = -1.0;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      nearest_sq[c] = std::min(nearest_sq[c], (candidates[c] - latest).squaredNorm());
      if (nearest_sq[c] > best_sq) {
        best_sq = nearest_sq[c];
        best = c;
      }
    }
    chosen.push_back(best);
  }

  std::vector<ControlPointSet> sets(cohort.volumes.size());
  std::vector<Vec3> base;
  base.reserve(chosen.size());
  for (const std::size_t c : chosen) base.push_back(candidates[c]);

  for (std::size_t i = 0; i < cohort.volumes.size(); ++i) {
    const SdfVolume& vol = cohort.volumes[i];
    ControlPointSet& cps = sets[i];
    cps.points.reserve(base.size());
    cps.normals.reserve(base.size());
    for (std::size_t j = 0; j < base.size(); ++j) {
      Vec3 p = base[j];
      if (i > 0) {
        try {
          p = project_to_surface(vol, p, kProjectMaxIters, kProjectTol);
        } catch (const DivergedError& err) {
          throw DivergedError(std::string(err.what()) + " (shape " + std::to_string(i) +
                              ", point " + std::to_string(j) + ")");
        }
        if (std::abs(sample_trilinear(vol, p)) > kProjectTol)
          throw DivergedError("projection did not converge (shape " + std::to_string(i) +
                              ", point " + std::to_string(j) + ")");
      }
      const Vec3 g = gradient(vol, p);
      const double len = g.norm();
      if (!(len >= 1e-9))
        throw DegenerateNormalError("field gradient vanished at an initial point (shape " +
                                    std::to_string(i) + ", point " + std::to_string(j) + ")");
      cps.points.push_back(p);
      cps.normals.push_back(g / len);
    }
  }
  return sets;
}

FitResult fit_cohort(const Cohort& cohort, const FitConfig& config,
                     const FitObserver& observer) {
  validate_cohort(cohort);
  const FitConfig resolved = resolve_config(cohort, config);
  const int members = static_cast<int>(cohort.volumes.size());
  const int batch_size = resolved.minibatch;

  std::vector<ControlPointSet> sets = initialize_cohort(cohort, resolved);

  std::vector<AdamState> adam(static_cast<std::size_t>(members));
  for (AdamState& state : adam) {
    state.m_points.assign(static_cast<std::size_t>(resolved.num_points), Vec3::Zero());
    state.v_points.assign(static_cast<std::size_t>(resolved.num_points), Vec3::Zero());
    state.m_normals.assign(static_cast<std::size_t>(resolved.num_points), Vec3::Zero());
    state.v_normals.assign(static_cast<std::size_t>(resolved.num_points), Vec3::Zero());
  }

  // One seeded partition for the whole run: every epoch walks the same
  // minibatches, so per-epoch loss records differ only by optimization
  // progress, not by how the cohort happened to be split that epoch.
  std::vector<int> order(static_cast<std::size_t>(members));
  for (int i = 0; i < members; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng shuffle_rng(derive_seed(resolved.seed, kShuffleTag));
  for (int i = members - 1; i > 0; --i)
    std::swap(order[static_cast<std::size_t>(i)],
              order[static_cast<std::size_t>(shuffle_rng.next_below(
                  static_cast<std::uint64_t>(i) + 1))]);
  const int batch_count = std::max(1, members / batch_size);
  std::vector<std::vector<int>> batches(static_cast<std::size_t>(batch_count));
  for (int b = 0; b < batch_count; ++b) {
    const int begin = b * batch_size;
    const int end = (b == batch_count - 1) ? members : (b + 1) * batch_size;
    batches[static_cast<std::size_t>(b)].assign(order.begin() + begin, order.begin() + end);
  }

  FitResult result;
  result.config = resolved;
  result.loss_history.reserve(static_cast<std::size_t>(resolved.epochs));

  for (int epoch = 0; epoch < resolved.epochs; ++epoch) {
    const MeanShape lagged_mean = mean_shape(sets);
    const bool entropy_active = epoch > 0 && resolved.weights.zeta != 0.0;

    LossBreakdown epoch_sum;
    for (int iteration = 0; iteration < batch_count; ++iteration) {
      const std::vector<int>& batch = batches[static_cast<std::size_t>(iteration)];
      const std::size_t k = batch.size();

      std::vector<ControlPointSet> snapshot(k);
      std::vector<DipoleSet> dipoles(k);
      std::vector<RbfModel> models(k);
      std::vector<NarrowBandBatch> bands(k);
      parallel_for(k, [&](std::size_t member) {
        const int shape = batch[member];
        ControlPointSet& live = sets[static_cast<std::size_t>(shape)];
        renormalize(live);
        snapshot[member] = live;
        dipoles[member] = build_dipoles(snapshot[member], resolved.band_halfwidth);
        try {
          models[member] = solve_rbf(dipoles[member], resolved.kernel);
        } catch (const SingularSystemError& err) {
          throw SingularSystemError(std::string(err.what()) + " (shape " +
                                    std::to_string(shape) + ", epoch " +
                                    std::to_string(epoch + 1) + ")");
        }
        const std::uint64_t band_seed = derive_seed(
            derive_seed(resolved.seed, kBandTag, static_cast<std::uint64_t>(epoch),
                        static_cast<std::uint64_t>(iteration)),
            static_cast<std::uint64_t>(shape));
        bands[member] =
            sample_narrow_band(cohort.volumes[static_cast<std::size_t>(shape)],
                               resolved.band_halfwidth,
                               static_cast<std::size_t>(resolved.band_samples), band_seed);
      });

      std::vector<ShapeLossContext> contexts(k);
      for (std::size_t member = 0; member < k; ++member)
        contexts[member] = {&snapshot[member],
                            &cohort.volumes[static_cast<std::size_t>(batch[member])],
                            &models[member], &dipoles[member], &bands[member]};

      const double correspondence =
          entropy_active ? correspondence_loss(snapshot, lagged_mean, resolved.entropy_eps)
                         : 0.0;
      const LossBreakdown breakdown =
          total_loss(contexts, correspondence, resolved.weights);

      LossWeights grad_weights = resolved.weights;
      if (!entropy_active) grad_weights.zeta = 0.0;
      const std::vector<ShapeGradient> grads =
          grad_total_loss(contexts, lagged_mean, grad_weights, resolved.entropy_eps);

      for (std::size_t member = 0; member < k; ++member) {
        const int shape = batch[member];
        const AdamDelta delta = adam_step(adam[static_cast<std::size_t>(shape)],
                                          grads[member], resolved.learning_rate,
                                          resolved.adam_beta1, resolved.adam_beta2,
                                          resolved.adam_eps);
        ControlPointSet& live = sets[static_cast<std::size_t>(shape)];
        for (std::size_t j = 0; j < delta.points.size(); ++j) {
          live.points[j] += delta.points[j];
          live.normals[j] += delta.normals[j];
        }
      }

      epoch_sum.surface += breakdown.surface;
      epoch_sum.normal += breakdown.normal;
      epoch_sum.sampling += breakdown.sampling;
      epoch_sum.correspondence += breakdown.correspondence;
      if (observer) observer(epoch, iteration, lagged_mean, breakdown);
    }

    for (ControlPointSet& cps : sets) renormalize(cps);

    LossBreakdown epoch_mean;
    const double batches_run = static_cast<double>(batch_count);
    epoch_mean.surface = epoch_sum.surface / batches_run;
    epoch_mean.normal = epoch_sum.normal / batches_run;
    epoch_mean.sampling = epoch_sum.sampling / batches_run;
    epoch_mean.correspondence = epoch_sum.correspondence / batches_run;
    epoch_mean.total = resolved.weights.alpha * epoch_mean.surface +
                       resolved.weights.beta * epoch_mean.normal +
                       resolved.weights.gamma * epoch_mean.sampling +
                       resolved.weights.zeta * epoch_mean.correspondence;
    result.loss_history.push_back(epoch_mean);
  }

  result.particle_sets = std::move(sets);
  return result;
}

}  // namespace rbfssm
