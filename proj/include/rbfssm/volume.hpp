// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <variant>
#include <vector>

#include <Eigen/Core>

namespace rbfssm {

using Vec3 = Eigen::Vector3d;

// Regular 3D lattice. Voxel (i,j,k) has its center at
// origin + (i*sx, j*sy, k*sz); linear storage is x-fastest.
struct VolumeGrid {
  std::array<int, 3> dims{0, 0, 0};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
           static_cast<std::size_t>(dims[2]);
  }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(j) +
                static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(k));
  }
  Vec3 voxel_center(int i, int j, int k) const {
    return origin + Vec3(i * spacing[0], j * spacing[1], k * spacing[2]);
  }
  // Inclusive bounds of the voxel-center hull.
  Vec3 hull_min() const { return origin; }
  Vec3 hull_max() const {
    return origin + Vec3((dims[0] - 1) * spacing[0], (dims[1] - 1) * spacing[1],
                         (dims[2] - 1) * spacing[2]);
  }
};

// Binary labeling of a grid: 1 = foreground, 0 = background.
// Grids must have at least 2 voxels per axis and positive spacing.
struct Segmentation {
  VolumeGrid grid;
  std::vector<std::uint8_t> labels;
};

// Signed distance sampled at voxel centers: negative inside the shape,
// positive outside. Values are stored as f32 (the on-disk payload type);
// all interpolation arithmetic runs in double.
struct SdfVolume {
  VolumeGrid grid;
  std::vector<float> values;
};

// Points drawn near the zero level set, with the interpolated distance
// at each point. |distances[i]| <= halfwidth for every i.
struct NarrowBandBatch {
  std::vector<Vec3> points;
  std::vector<double> distances;
  double halfwidth = 0.0;
};

// Analytic solids for synthetic cohorts. All in physical units.
struct SphereSpec {
  Vec3 center;
  double radius;
};
struct EllipsoidSpec {
  Vec3 center;
  Vec3 semi_axes;
};
struct CapsuleSpec {
  Vec3 end_a;
  Vec3 end_b;
  double radius;
};
struct SphereWithBumpSpec {
  Vec3 center;
  double radius;
  Vec3 bump_offset;  // from center to the bump sphere's center
  double bump_radius;
};
using ShapeSpec =
    std::variant<SphereSpec, EllipsoidSpec, CapsuleSpec, SphereWithBumpSpec>;

// True when the voxel-center point x lies inside the solid (boundary counts
// as inside). A sphere is evaluated exactly as the equal-axes ellipsoid, so
// the two agree voxel for voxel in the degenerate case.
bool shape_contains(const ShapeSpec& spec, const Vec3& x);

// Rasterizes the solid onto the grid. The shape's bounding box must keep a
// margin of at least 2 voxels to every grid face (SpecOutOfGridError).
Segmentation synth_segmentation(const ShapeSpec& spec, const std::array<int, 3>& dims,
                                const Vec3& spacing, const Vec3& origin);

// Squared Euclidean distance (physical units) from every voxel center to the
// nearest voxel center of the requested label. Exact separable transform; at
// unit spacing the results are exact integers. Voxels already carrying the
// requested label get 0.
std::vector<double> squared_distance_field(const Segmentation& seg,
                                           bool to_foreground);

// Signed distance from a segmentation: background voxels get +distance to the
// nearest foreground center, foreground voxels -distance to the nearest
// background center. Throws AllOneLabelError when only one label is present.
SdfVolume sdf_from_segmentation(const Segmentation& seg);

// Trilinear interpolation of the stored values at a physical point. The point
// must lie inside the voxel-center hull (OutOfBoundsError). Sampling exactly
// at a voxel center reproduces the stored value.
double sample_trilinear(const SdfVolume& vol, const Vec3& x);

// Central-difference gradient of the sampled field, step = half the spacing
// per axis. Requires x at least one voxel from the hull boundary.
Vec3 gradient(const SdfVolume& vol, const Vec3& x);

// Analytic gradient of the trilinear interpolant inside the cell containing x.
// Discontinuous across cell faces; used to differentiate sampled quantities.
Vec3 trilinear_cell_gradient(const SdfVolume& vol, const Vec3& x);

// 3x3 Jacobian of gradient() at x (row a = d gradient_a / dx).
Eigen::Matrix3d gradient_jacobian(const SdfVolume& vol, const Vec3& x);

// Draws exactly `count` points uniformly from the voxel-center hull, keeping
// those with |trilinear value| <= halfwidth. Deterministic for a given seed.
// Throws EmptyBandError when no voxel value lies within the band and
// SamplingStalledError when the acceptance rate drops below 1e-6.
NarrowBandBatch sample_narrow_band(const SdfVolume& vol, double halfwidth,
                                   std::size_t count, std::uint64_t seed);

}  // namespace rbfssm
