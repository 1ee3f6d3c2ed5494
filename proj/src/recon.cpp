// SPDX-License-Identifier: Apache-2.0
#include "rbfssm/recon.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <unordered_map>
#include <vector>

#include <Eigen/Geometry>

#include "mc_tables.hpp"
#include "rbfssm/errors.hpp"
#include "rbfssm/parallel.hpp"

namespace rbfssm {

namespace {

// Cube corners in the order the lookup tables expect: 0..3 walk the lower
// z face counter-clockwise starting at the cell origin, 4..7 repeat one
// voxel up.
constexpr int kCornerOffset[8][3] = {
    {0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
    {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1},
};

// Every cube edge is a grid edge: kEdgeAxis gives its direction and
// kEdgeBase the cell-relative coordinates of its lower corner. Keying
// vertices by (lower corner, axis) welds them exactly across cells.
constexpr int kEdgeAxis[12] = {0, 1, 0, 1, 0, 1, 0, 1, 2, 2, 2, 2};
constexpr int kEdgeBase[12][3] = {
    {0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 0},
    {0, 0, 1}, {1, 0, 1}, {0, 1, 1}, {0, 0, 1},
    {0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
};

std::int64_t grid_edge_key(const VolumeGrid& grid, int ix, int iy, int iz, int axis) {
  std::int64_t flat = (static_cast<std::int64_t>(iz) * grid.dims[1] + iy) * grid.dims[0] + ix;
  return flat * 3 + axis;
}

// Drops triangles that collapsed to a point, segment, or exactly zero area,
// then removes vertices nothing references while keeping creation order.
void remove_degenerate_triangles(TriangleMesh& mesh) {
  std::vector<std::array<int, 3>> kept;
  kept.reserve(mesh.triangles.size());
  for (const auto& tri : mesh.triangles) {
    if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) continue;
    Vec3 u = mesh.vertices[tri[1]] - mesh.vertices[tri[0]];
    Vec3 v = mesh.vertices[tri[2]] - mesh.vertices[tri[0]];
    if (u.cross(v).squaredNorm() == 0.0) continue;
    kept.push_back(tri);
  }
  std::vector<int> remap(mesh.vertices.size(), -1);
  for (const auto& tri : kept) {
    for (int c = 0; c < 3; ++c) remap[tri[c]] = 0;
  }
  std::vector<Vec3> compacted;
  compacted.reserve(mesh.vertices.size());
  int next = 0;
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    if (remap[i] < 0) continue;
    remap[i] = next++;
    compacted.push_back(mesh.vertices[i]);
  }
  for (auto& tri : kept) {
    for (int c = 0; c < 3; ++c) tri[c] = remap[tri[c]];
  }
  mesh.vertices = std::move(compacted);
  mesh.triangles = std::move(kept);
}

}  // namespace

TriangleMesh marching_cubes(const SdfVolume& vol, double iso) {
  const VolumeGrid& grid = vol.grid;
  for (int a = 0; a < 3; ++a) {
    if (grid.dims[a] < 2) {
      throw ConfigError("marching cubes needs at least 2 voxels per axis");
    }
  }

  TriangleMesh mesh;
  std::unordered_map<std::int64_t, int> edge_vertex_ids;

  // Creates (or reuses) the vertex where the level set crosses the grid edge
  // starting at voxel (ix, iy, iz) and running along +axis. Interpolation is
  // done in the edge's canonical orientation, so every incident cell derives
  // the identical position.
  auto edge_vertex = [&](int ix, int iy, int iz, int axis) {
    std::int64_t key = grid_edge_key(grid, ix, iy, iz, axis);
    auto it = edge_vertex_ids.find(key);
    if (it != edge_vertex_ids.end()) return it->second;
    double va = vol.values[grid.index(ix, iy, iz)];
    int jx = ix + (axis == 0), jy = iy + (axis == 1), jz = iz + (axis == 2);
    double vb = vol.values[grid.index(jx, jy, jz)];
    double t = (iso - va) / (vb - va);
    Vec3 pos = grid.voxel_center(ix, iy, iz);
    pos[axis] += t * grid.spacing[axis];
    int id = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back(pos);
    edge_vertex_ids.emplace(key, id);
    return id;
  };

  for (int z = 0; z + 1 < grid.dims[2]; ++z) {
    for (int y = 0; y + 1 < grid.dims[1]; ++y) {
      for (int x = 0; x + 1 < grid.dims[0]; ++x) {
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          double v = vol.values[grid.index(x + kCornerOffset[c][0], y + kCornerOffset[c][1],
                                           z + kCornerOffset[c][2])];
          if (v < iso) cube |= 1 << c;
        }
        if (kMcEdgeTable[cube] == 0) continue;

        int ids[12];
        for (int e = 0; e < 12; ++e) {
          if (!(kMcEdgeTable[cube] & (1 << e))) continue;
          ids[e] = edge_vertex(x + kEdgeBase[e][0], y + kEdgeBase[e][1], z + kEdgeBase[e][2],
                               kEdgeAxis[e]);
        }
        const int* tri = kMcTriTable[cube];
        for (int i = 0; tri[i] != -1; i += 3) {
          // The tables wind toward the below-iso side; emitting the last two
          // corners swapped orients triangles counter-clockwise from outside.
          mesh.triangles.push_back({ids[tri[i]], ids[tri[i + 2]], ids[tri[i + 1]]});
        }
      }
    }
  }

  remove_degenerate_triangles(mesh);
  return mesh;
}

TriangleMesh reconstruct_mesh(const ControlPointSet& cps, double offset, KernelKind kernel,
                              const VolumeGrid& grid) {
  DipoleSet dipoles = build_dipoles(cps, offset);
  Vec3 lo = grid.hull_min();
  Vec3 hi = grid.hull_max();
  for (const Vec3& c : dipoles.centers) {
    for (int a = 0; a < 3; ++a) {
      if (c[a] < lo[a] + offset || c[a] > hi[a] - offset) {
        throw SpecOutOfGridError(
            "reconstruction grid must enclose every dipole center with margin >= offset");
      }
    }
  }
  RbfModel model = solve_rbf(dipoles, kernel);
  SdfVolume vol = reconstruct_sdf_grid(model, dipoles, grid.dims, grid.spacing, grid.origin);
  return marching_cubes(vol, 0.0);
}

namespace {

Vec3 closest_point_on_segment(const Vec3& p, const Vec3& a, const Vec3& b) {
  Vec3 ab = b - a;
  double len_sq = ab.squaredNorm();
  if (len_sq == 0.0) return a;
  double t = std::clamp(ab.dot(p - a) / len_sq, 0.0, 1.0);
  return a + t * ab;
}

// Voronoi-region classification of p against triangle (a, b, c); exact up to
// rounding, no tolerance knobs. Collapsed triangles fall through to the
// nearest edge.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  Vec3 ab = b - a;
  Vec3 ac = c - a;
  Vec3 ap = p - a;
  double d1 = ab.dot(ap);
  double d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;

  Vec3 bp = p - b;
  double d3 = ab.dot(bp);
  double d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;

  double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    double denom = d1 - d3;
    if (denom > 0.0) return a + (d1 / denom) * ab;
  }

  Vec3 cp = p - c;
  double d5 = ab.dot(cp);
  double d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;

  double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    double denom = d2 - d6;
    if (denom > 0.0) return a + (d2 / denom) * ac;
  }

  double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && d4 - d3 >= 0.0 && d5 - d6 >= 0.0) {
    double denom = (d4 - d3) + (d5 - d6);
    if (denom > 0.0) return b + ((d4 - d3) / denom) * (c - b);
  }

  double denom = va + vb + vc;
  if (denom <= 0.0) {
    Vec3 best = closest_point_on_segment(p, a, b);
    double best_sq = (p - best).squaredNorm();
    for (const Vec3& q : {closest_point_on_segment(p, b, c), closest_point_on_segment(p, c, a)}) {
      double d_sq = (p - q).squaredNorm();
      if (d_sq < best_sq) {
        best_sq = d_sq;
        best = q;
      }
    }
    return best;
  }
  double v = vb / denom;
  double w = vc / denom;
  return a + v * ab + w * ac;
}

double triangle_distance_sq(const TriangleMesh& mesh, int tri_index, const Vec3& p) {
  const auto& tri = mesh.triangles[tri_index];
  Vec3 q = closest_point_on_triangle(p, mesh.vertices[tri[0]], mesh.vertices[tri[1]],
                                     mesh.vertices[tri[2]]);
  return (p - q).squaredNorm();
}

struct BvhNode {
  Vec3 lo;
  Vec3 hi;
  int left = -1;
  int right = -1;
  int begin = 0;
  int end = 0;
};

// Median-split hierarchy over triangle bounds. Construction sorts by
// (centroid, triangle index), so the tree layout is a pure function of the
// mesh and queries replay identically run to run.
class TriangleBvh {
 public:
  explicit TriangleBvh(const TriangleMesh& mesh) : mesh_(&mesh) {
    int n = static_cast<int>(mesh.triangles.size());
    order_.resize(n);
    centroids_.resize(n);
    for (int i = 0; i < n; ++i) {
      order_[i] = i;
      const auto& tri = mesh.triangles[i];
      centroids_[i] =
          (mesh.vertices[tri[0]] + mesh.vertices[tri[1]] + mesh.vertices[tri[2]]) / 3.0;
    }
    if (n > 0) root_ = build(0, n);
  }

  double distance_sq(const Vec3& p) const {
    double best = std::numeric_limits<double>::infinity();
    query(root_, p, best);
    return best;
  }

 private:
  static constexpr int kLeafSize = 4;
  // Nodes whose box is farther than the current best by more than this
  // relative slack get skipped; the slack absorbs rounding in the box
  // distance so the reported minimum matches an exhaustive scan exactly.
  static constexpr double kPruneSlack = 1e-9;

  int build(int begin, int end) {
    BvhNode node;
    node.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    node.hi = Vec3::Constant(-std::numeric_limits<double>::infinity());
    Vec3 centroid_lo = node.lo;
    Vec3 centroid_hi = node.hi;
    for (int i = begin; i < end; ++i) {
      const auto& tri = mesh_->triangles[order_[i]];
      for (int c = 0; c < 3; ++c) {
        node.lo = node.lo.cwiseMin(mesh_->vertices[tri[c]]);
        node.hi = node.hi.cwiseMax(mesh_->vertices[tri[c]]);
      }
      centroid_lo = centroid_lo.cwiseMin(centroids_[order_[i]]);
      centroid_hi = centroid_hi.cwiseMax(centroids_[order_[i]]);
    }
    Vec3 extent = centroid_hi - centroid_lo;
    int axis = 0;
    if (extent[1] > extent[axis]) axis = 1;
    if (extent[2] > extent[axis]) axis = 2;
    if (end - begin <= kLeafSize || extent[axis] <= 0.0) {
      node.begin = begin;
      node.end = end;
      nodes_.push_back(node);
      return static_cast<int>(nodes_.size()) - 1;
    }
    std::sort(order_.begin() + begin, order_.begin() + end, [&](int x, int y) {
      double cx = centroids_[x][axis];
      double cy = centroids_[y][axis];
      if (cx != cy) return cx < cy;
      return x < y;
    });
    int mid = begin + (end - begin) / 2;
    int self = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    int left = build(begin, mid);
    int right = build(mid, end);
    nodes_[self].left = left;
    nodes_[self].right = right;
    return self;
  }

  double box_distance_sq(const BvhNode& node, const Vec3& p) const {
    double sum = 0.0;
    for (int a = 0; a < 3; ++a) {
      double d = std::max({node.lo[a] - p[a], 0.0, p[a] - node.hi[a]});
      sum += d * d;
    }
    return sum;
  }

  void query(int index, const Vec3& p, double& best) const {
    const BvhNode& node = nodes_[index];
    if (node.left < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        best = std::min(best, triangle_distance_sq(*mesh_, order_[i], p));
      }
      return;
    }
    double dl = box_distance_sq(nodes_[node.left], p);
    double dr = box_distance_sq(nodes_[node.right], p);
    int first = node.left;
    int second = node.right;
    if (dr < dl) {
      std::swap(first, second);
      std::swap(dl, dr);
    }
    if (dl <= best * (1.0 + kPruneSlack)) query(first, p, best);
    if (dr <= best * (1.0 + kPruneSlack)) query(second, p, best);
  }

  const TriangleMesh* mesh_;
  std::vector<int> order_;
  std::vector<Vec3> centroids_;
  std::vector<BvhNode> nodes_;
  int root_ = -1;
};

void require_nonempty(const TriangleMesh& mesh, const char* which) {
  if (mesh.vertices.empty() || mesh.triangles.empty()) {
    throw EmptyMeshError(std::string("surface distance needs a nonempty ") + which + " mesh");
  }
}

// Distance from every vertex of `from` to the surface of `to`.
std::vector<double> directed_distances(const TriangleMesh& from, const TriangleBvh& to_bvh) {
  std::vector<double> out(from.vertices.size());
  parallel_for(from.vertices.size(), [&](std::size_t i) {
    out[i] = std::sqrt(to_bvh.distance_sq(from.vertices[i]));
  });
  return out;
}

double mean_of(const std::vector<double>& values) {
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double max_of(const std::vector<double>& values) {
  double best = 0.0;
  for (double v : values) best = std::max(best, v);
  return best;
}

}  // namespace

double point_to_mesh_distance(const Vec3& point, const TriangleMesh& mesh) {
  require_nonempty(mesh, "target");
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < static_cast<int>(mesh.triangles.size()); ++i) {
    best = std::min(best, triangle_distance_sq(mesh, i, point));
  }
  return std::sqrt(best);
}

SurfaceDistanceReport surface_to_surface_distance(const TriangleMesh& a, const TriangleMesh& b) {
  require_nonempty(a, "first");
  require_nonempty(b, "second");
  TriangleBvh bvh_a(a);
  TriangleBvh bvh_b(b);
  SurfaceDistanceReport report;
  report.per_vertex_a = directed_distances(a, bvh_b);
  std::vector<double> per_vertex_b = directed_distances(b, bvh_a);
  report.mean = 0.5 * (mean_of(report.per_vertex_a) + mean_of(per_vertex_b));
  report.max = std::max(max_of(report.per_vertex_a), max_of(per_vertex_b));
  return report;
}

}  // namespace rbfssm
