// SPDX-License-Identifier: Apache-2.0
#include "rbfssm/volume.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rbfssm/errors.hpp"
#include "rbfssm/rng.hpp"

namespace rbfssm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void validate_grid(const VolumeGrid& grid, int min_dim) {
  for (int a = 0; a < 3; ++a) {
    if (grid.dims[a] < min_dim)
      throw ConfigError("grid dimension must be >= " + std::to_string(min_dim));
    if (!(grid.spacing[a] > 0.0)) throw ConfigError("grid spacing must be positive");
  }
}

bool ellipsoid_contains(const Vec3& center, const Vec3& semi, const Vec3& x) {
  // Common-denominator form: avoids per-axis divisions so that the equal-axes
  // case is arithmetically identical to the sphere test.
  const double dx2 = (x[0] - center[0]) * (x[0] - center[0]);
  const double dy2 = (x[1] - center[1]) * (x[1] - center[1]);
  const double dz2 = (x[2] - center[2]) * (x[2] - center[2]);
  const double a2 = semi[0] * semi[0];
  const double b2 = semi[1] * semi[1];
  const double c2 = semi[2] * semi[2];
  return dx2 * (b2 * c2) + dy2 * (a2 * c2) + dz2 * (a2 * b2) <= a2 * b2 * c2;
}

bool capsule_contains(const CapsuleSpec& spec, const Vec3& x) {
  const Vec3 axis = spec.end_b - spec.end_a;
  const double len2 = axis.squaredNorm();
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp((x - spec.end_a).dot(axis) / len2, 0.0, 1.0);
  const Vec3 closest = spec.end_a + t * axis;
  return (x - closest).squaredNorm() <= spec.radius * spec.radius;
}

struct Bounds {
  Vec3 lo, hi;
};

Bounds shape_bounds(const ShapeSpec& spec) {
  return std::visit(
      [](const auto& s) -> Bounds {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, SphereSpec>) {
          const Vec3 r(s.radius, s.radius, s.radius);
          return {s.center - r, s.center + r};
        } else if constexpr (std::is_same_v<T, EllipsoidSpec>) {
          return {s.center - s.semi_axes, s.center + s.semi_axes};
        } else if constexpr (std::is_same_v<T, CapsuleSpec>) {
          const Vec3 r(s.radius, s.radius, s.radius);
          return {s.end_a.cwiseMin(s.end_b) - r, s.end_a.cwiseMax(s.end_b) + r};
        } else {
          const Vec3 r(s.radius, s.radius, s.radius);
          const Vec3 br(s.bump_radius, s.bump_radius, s.bump_radius);
          const Vec3 bc = s.center + s.bump_offset;
          return {(s.center - r).cwiseMin(bc - br), (s.center + r).cwiseMax(bc + br)};
        }
      },
      spec);
}

void validate_shape(const ShapeSpec& spec) {
  std::visit(
      [](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, SphereSpec>) {
          if (!(s.radius > 0.0)) throw ConfigError("sphere radius must be positive");
        } else if constexpr (std::is_same_v<T, EllipsoidSpec>) {
          for (int a = 0; a < 3; ++a)
            if (!(s.semi_axes[a] > 0.0))
              throw ConfigError("ellipsoid semi-axes must be positive");
        } else if constexpr (std::is_same_v<T, CapsuleSpec>) {
          if (!(s.radius > 0.0)) throw ConfigError("capsule radius must be positive");
        } else {
          if (!(s.radius > 0.0) || !(s.bump_radius > 0.0))
            throw ConfigError("sphere and bump radii must be positive");
        }
      },
      spec);
}

// One-dimensional squared-distance transform: out[x] = min_v f[v] + w*(x-v)^2.
// Lower envelope of parabolas; entries with f = +inf contribute nothing.
// With w = 1 and integer f the outputs are exact.
void dt1d(const double* f, double* out, int n, double w, int* v, double* z) {
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double s = 0.0;
    for (;;) {
      const int p = v[k];
      s = ((f[q] + w * q * q) - (f[p] + w * p * p)) / (2.0 * w * (q - p));
      if (s <= z[k] && --k >= 0) continue;
      break;
    }
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
    } else {
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = kInf;
    }
  }
  if (k < 0) {
    std::fill(out, out + n, kInf);
    return;
  }
  int idx = 0;
  for (int x = 0; x < n; ++x) {
    while (z[idx + 1] < x) ++idx;
    const int p = v[idx];
    out[x] = f[p] + w * (x - p) * (x - p);
  }
}

// Applies dt1d along one axis of the whole field, in place.
void dt_axis(std::vector<double>& field, const VolumeGrid& grid, int axis) {
  const int n = grid.dims[axis];
  const double w = grid.spacing[axis] * grid.spacing[axis];
  std::vector<double> line(static_cast<std::size_t>(n));
  std::vector<double> out(static_cast<std::size_t>(n));
  std::vector<int> v(static_cast<std::size_t>(n));
  std::vector<double> z(static_cast<std::size_t>(n) + 1);

  const int other[2] = {(axis + 1) % 3, (axis + 2) % 3};
  std::size_t stride = 1;
  for (int a = 0; a < axis; ++a) stride *= static_cast<std::size_t>(grid.dims[a]);

  int c[3];
  for (c[other[1]] = 0; c[other[1]] < grid.dims[other[1]]; ++c[other[1]]) {
    for (c[other[0]] = 0; c[other[0]] < grid.dims[other[0]]; ++c[other[0]]) {
      c[axis] = 0;
      const std::size_t base = grid.index(c[0], c[1], c[2]);
      for (int i = 0; i < n; ++i) line[static_cast<std::size_t>(i)] = field[base + i * stride];
      dt1d(line.data(), out.data(), n, w, v.data(), z.data());
      for (int i = 0; i < n; ++i) field[base + i * stride] = out[static_cast<std::size_t>(i)];
    }
  }
}

struct CellAnchor {
  int i0[3];
  int i1[3];
  double t[3];
};

// Locates the interpolation cell for x. Throws when x leaves the voxel-center
// hull. t is clamped to [0,1] so sampling exactly at a node stays exact even
// when the coordinate division rounds.
CellAnchor locate_cell(const VolumeGrid& grid, const Vec3& x) {
  CellAnchor cell{};
  for (int a = 0; a < 3; ++a) {
    const double lo = grid.origin[a];
    const double hi = grid.origin[a] + (grid.dims[a] - 1) * grid.spacing[a];
    if (!(x[a] >= lo && x[a] <= hi))
      throw OutOfBoundsError("sample point outside the voxel-center hull");
    if (grid.dims[a] == 1) {
      cell.i0[a] = cell.i1[a] = 0;
      cell.t[a] = 0.0;
      continue;
    }
    const double u = (x[a] - lo) / grid.spacing[a];
    int i0 = static_cast<int>(std::floor(u));
    i0 = std::clamp(i0, 0, grid.dims[a] - 2);
    cell.i0[a] = i0;
    cell.i1[a] = i0 + 1;
    cell.t[a] = std::clamp(u - i0, 0.0, 1.0);
  }
  return cell;
}

inline double lerp(double a, double b, double t) { return a * (1.0 - t) + b * t; }

}  // namespace

bool shape_contains(const ShapeSpec& spec, const Vec3& x) {
  return std::visit(
      [&x](const auto& s) -> bool {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, SphereSpec>) {
          return ellipsoid_contains(s.center, Vec3(s.radius, s.radius, s.radius), x);
        } else if constexpr (std::is_same_v<T, EllipsoidSpec>) {
          return ellipsoid_contains(s.center, s.semi_axes, x);
        } else if constexpr (std::is_same_v<T, CapsuleSpec>) {
          return capsule_contains(s, x);
        } else {
          return ellipsoid_contains(s.center, Vec3(s.radius, s.radius, s.radius), x) ||
                 ellipsoid_contains(s.center + s.bump_offset,
                                    Vec3(s.bump_radius, s.bump_radius, s.bump_radius), x);
        }
      },
      spec);
}

Segmentation synth_segmentation(const ShapeSpec& spec, const std::array<int, 3>& dims,
                                const Vec3& spacing, const Vec3& origin) {
  Segmentation seg;
  seg.grid.dims = dims;
  seg.grid.spacing = spacing;
  seg.grid.origin = origin;
  validate_grid(seg.grid, 2);
  validate_shape(spec);

  const Bounds bounds = shape_bounds(spec);
  for (int a = 0; a < 3; ++a) {
    const double lo_limit = origin[a] + 2.0 * spacing[a];
    const double hi_limit = origin[a] + (dims[a] - 3) * spacing[a];
    if (!(bounds.lo[a] >= lo_limit && bounds.hi[a] <= hi_limit))
      throw SpecOutOfGridError("shape does not fit inside the grid with a 2-voxel margin");
  }

  seg.labels.assign(seg.grid.voxel_count(), 0);
  for (int k = 0; k < dims[2]; ++k)
    for (int j = 0; j < dims[1]; ++j)
      for (int i = 0; i < dims[0]; ++i)
        if (shape_contains(spec, seg.grid.voxel_center(i, j, k)))
          seg.labels[seg.grid.index(i, j, k)] = 1;
  return seg;
}

std::vector<double> squared_distance_field(const Segmentation& seg, bool to_foreground) {
  validate_grid(seg.grid, 2);
  if (seg.labels.size() != seg.grid.voxel_count())
    throw ConfigError("segmentation label count does not match the grid");

  std::vector<double> field(seg.labels.size());
  for (std::size_t i = 0; i < seg.labels.size(); ++i) {
    const bool is_source = (seg.labels[i] != 0) == to_foreground;
    field[i] = is_source ? 0.0 : kInf;
  }
  for (int axis = 0; axis < 3; ++axis) dt_axis(field, seg.grid, axis);
  return field;
}

SdfVolume sdf_from_segmentation(const Segmentation& seg) {
  bool any_fg = false, any_bg = false;
  for (const auto label : seg.labels) {
    (label != 0 ? any_fg : any_bg) = true;
    if (any_fg && any_bg) break;
  }
  if (!any_fg || !any_bg)
    throw AllOneLabelError("segmentation contains a single label; distances are undefined");

  const std::vector<double> to_fg = squared_distance_field(seg, true);
  const std::vector<double> to_bg = squared_distance_field(seg, false);

  SdfVolume vol;
  vol.grid = seg.grid;
  vol.values.resize(seg.labels.size());
  for (std::size_t i = 0; i < seg.labels.size(); ++i) {
    const double magnitude = std::sqrt(seg.labels[i] != 0 ? to_bg[i] : to_fg[i]);
    vol.values[i] = static_cast<float>(seg.labels[i] != 0 ? -magnitude : magnitude);
  }
  return vol;
}

double sample_trilinear(const SdfVolume& vol, const Vec3& x) {
  const CellAnchor cell = locate_cell(vol.grid, x);
  const auto value = [&](int i, int j, int k) -> double {
    return vol.values[vol.grid.index(i, j, k)];
  };
  const double c00 = lerp(value(cell.i0[0], cell.i0[1], cell.i0[2]),
                          value(cell.i1[0], cell.i0[1], cell.i0[2]), cell.t[0]);
  const double c10 = lerp(value(cell.i0[0], cell.i1[1], cell.i0[2]),
                          value(cell.i1[0], cell.i1[1], cell.i0[2]), cell.t[0]);
  const double c01 = lerp(value(cell.i0[0], cell.i0[1], cell.i1[2]),
                          value(cell.i1[0], cell.i0[1], cell.i1[2]), cell.t[0]);
  const double c11 = lerp(value(cell.i0[0], cell.i1[1], cell.i1[2]),
                          value(cell.i1[0], cell.i1[1], cell.i1[2]), cell.t[0]);
  const double c0 = lerp(c00, c10, cell.t[1]);
  const double c1 = lerp(c01, c11, cell.t[1]);
  return lerp(c0, c1, cell.t[2]);
}

Vec3 trilinear_cell_gradient(const SdfVolume& vol, const Vec3& x) {
  const CellAnchor cell = locate_cell(vol.grid, x);
  const auto value = [&](int i, int j, int k) -> double {
    return vol.values[vol.grid.index(i, j, k)];
  };
  const double v000 = value(cell.i0[0], cell.i0[1], cell.i0[2]);
  const double v100 = value(cell.i1[0], cell.i0[1], cell.i0[2]);
  const double v010 = value(cell.i0[0], cell.i1[1], cell.i0[2]);
  const double v110 = value(cell.i1[0], cell.i1[1], cell.i0[2]);
  const double v001 = value(cell.i0[0], cell.i0[1], cell.i1[2]);
  const double v101 = value(cell.i1[0], cell.i0[1], cell.i1[2]);
  const double v011 = value(cell.i0[0], cell.i1[1], cell.i1[2]);
  const double v111 = value(cell.i1[0], cell.i1[1], cell.i1[2]);
  const double tx = cell.t[0], ty = cell.t[1], tz = cell.t[2];

  Vec3 g;
  g[0] = (lerp(lerp(v100 - v000, v110 - v010, ty), lerp(v101 - v001, v111 - v011, ty), tz)) /
         vol.grid.spacing[0];
  g[1] = (lerp(lerp(v010 - v000, v110 - v100, tx), lerp(v011 - v001, v111 - v101, tx), tz)) /
         vol.grid.spacing[1];
  g[2] = (lerp(lerp(v001 - v000, v101 - v100, tx), lerp(v011 - v010, v111 - v110, tx), ty)) /
         vol.grid.spacing[2];
  for (int a = 0; a < 3; ++a)
    if (vol.grid.dims[a] == 1) g[a] = 0.0;
  return g;
}

namespace {

void require_one_voxel_inside(const VolumeGrid& grid, const Vec3& x) {
  for (int a = 0; a < 3; ++a) {
    const double lo = grid.origin[a] + grid.spacing[a];
    const double hi = grid.origin[a] + (grid.dims[a] - 2) * grid.spacing[a];
    if (!(x[a] >= lo && x[a] <= hi))
      throw OutOfBoundsError("gradient needs the point at least one voxel inside the hull");
  }
}

}  // namespace

Vec3 gradient(const SdfVolume& vol, const Vec3& x) {
  require_one_voxel_inside(vol.grid, x);
  Vec3 g;
  for (int a = 0; a < 3; ++a) {
    const double h = vol.grid.spacing[a];
    Vec3 fwd = x, bwd = x;
    fwd[a] += 0.5 * h;
    bwd[a] -= 0.5 * h;
    g[a] = (sample_trilinear(vol, fwd) - sample_trilinear(vol, bwd)) / h;
  }
  return g;
}

Eigen::Matrix3d gradient_jacobian(const SdfVolume& vol, const Vec3& x) {
  require_one_voxel_inside(vol.grid, x);
  Eigen::Matrix3d jac;
  for (int a = 0; a < 3; ++a) {
    const double h = vol.grid.spacing[a];
    Vec3 fwd = x, bwd = x;
    fwd[a] += 0.5 * h;
    bwd[a] -= 0.5 * h;
    const Vec3 row =
        (trilinear_cell_gradient(vol, fwd) - trilinear_cell_gradient(vol, bwd)) / h;
    jac.row(a) = row.transpose();
  }
  return jac;
}

NarrowBandBatch sample_narrow_band(const SdfVolume& vol, double halfwidth,
                                   std::size_t count, std::uint64_t seed) {
  if (!(halfwidth > 0.0)) throw ConfigError("band halfwidth must be positive");
  if (vol.values.size() != vol.grid.voxel_count())
    throw ConfigError("volume value count does not match the grid");

  bool band_nonempty = false;
  for (const float v : vol.values) {
    if (std::abs(static_cast<double>(v)) <= halfwidth) {
      band_nonempty = true;
      break;
    }
  }
  if (!band_nonempty)
    throw EmptyBandError("no voxel value lies within the requested band");

  NarrowBandBatch batch;
  batch.halfwidth = halfwidth;
  batch.points.reserve(count);
  batch.distances.reserve(count);

  Rng rng(seed);
  const Vec3 lo = vol.grid.hull_min();
  const Vec3 hi = vol.grid.hull_max();
  std::uint64_t attempts = 0;
  while (batch.points.size() < count) {
    Vec3 x;
    for (int a = 0; a < 3; ++a) x[a] = rng.uniform(lo[a], hi[a]);
    ++attempts;
    const double d = sample_trilinear(vol, x);
    if (std::abs(d) <= halfwidth) {
      batch.points.push_back(x);
      batch.distances.push_back(d);
    }
    if (attempts >= 10'000'000 &&
        static_cast<double>(batch.points.size()) < 1e-6 * static_cast<double>(attempts))
      throw SamplingStalledError("narrow-band acceptance rate below 1e-6");
  }
  return batch;
}

}  // namespace rbfssm
