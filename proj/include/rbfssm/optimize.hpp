// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "rbfssm/losses.hpp"
#include "rbfssm/rbfshape.hpp"
#include "rbfssm/volume.hpp"

namespace rbfssm {

struct FitConfig {
  int num_points = 128;         // control points per shape (J)
  double band_halfwidth = 0.0;  // dipole offset = band halfwidth; <= 0 resolves
                                // to 2x the largest voxel spacing in the cohort
  int band_samples = 10000;     // narrow-band points per shape per iteration (R)
  KernelKind kernel = KernelKind::Biharmonic;
  LossWeights weights{};
  double entropy_eps = 1e-6;
  int epochs = 50;
  int minibatch = 5;  // shapes per minibatch (K); clamped to the cohort size
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
};

// Pre-aligned cohort on a shared grid layout. At least 2 members.
struct Cohort {
  std::vector<SdfVolume> volumes;
};

struct FitResult {
  std::vector<ControlPointSet> particle_sets;  // one per cohort member
  std::vector<LossBreakdown> loss_history;     // per-epoch means
  FitConfig config;                            // with defaults resolved
};

// First-order moment state for one shape's points and normals.
struct AdamState {
  std::int64_t step_count = 0;
  std::vector<Vec3> m_points, v_points;
  std::vector<Vec3> m_normals, v_normals;
};

struct AdamDelta {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;
};

// One bias-corrected adaptive step. Updates the state in place and returns the
// additive update for each variable.
AdamDelta adam_step(AdamState& state, const ShapeGradient& grads, double learning_rate,
                    double beta1, double beta2, double eps);

// Newton-style projection x <- x - D(x) * g / |g|^2 onto the zero level set,
// where g is the sampled field gradient. Stops once |D(x)| <= tol; throws
// DivergedError when the iterate leaves the region where the gradient is
// defined or |g| falls below 1e-9.
Vec3 project_to_surface(const SdfVolume& vol, Vec3 x, int max_iters, double tol);

// Shared-correspondence initialization: candidates on member 0 are projected
// surface voxels, J of them are chosen by seeded farthest-point sampling, the
// same positions are projected onto every other member, and normals are the
// unit field gradients. Projection failures carry the shape and point index.
std::vector<ControlPointSet> initialize_cohort(const Cohort& cohort, const FitConfig& config);

// Called after every minibatch step with the epoch (0-based), the iteration
// within the epoch, the lagged mean in use, and that minibatch's losses.
using FitObserver =
    std::function<void(int epoch, int iteration, const MeanShape&, const LossBreakdown&)>;

// Full optimization loop. Deterministic for a given config on a given cohort,
// independent of the thread cap. The correspondence term is disabled during
// the first epoch; the cohort mean it uses afterwards is refreshed only at
// epoch boundaries.
FitResult fit_cohort(const Cohort& cohort, const FitConfig& config,
                     const FitObserver& observer = nullptr);

}  // namespace rbfssm
