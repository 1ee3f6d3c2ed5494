// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <vector>

#include "rbfssm/rbfshape.hpp"
#include "rbfssm/volume.hpp"

namespace rbfssm {

// Triangles are counter-clockwise when seen from outside (negative field side
// toward the viewer for meshes extracted from a signed distance volume).
struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;

  bool empty() const { return triangles.empty(); }
};

struct SurfaceDistanceReport {
  double mean = 0.0;
  double max = 0.0;
  // Distance from each vertex of the first mesh to the second mesh's surface.
  std::vector<double> per_vertex_a;
};

// 256-case cube polygonization of the iso level set.  Vertices lie on the
// trilinear level set in physical coordinates and are welded by grid-edge
// identity, so closed level sets strictly inside the grid come out watertight.
// Returns an empty mesh when the field never crosses iso.
TriangleMesh marching_cubes(const SdfVolume& vol, double iso);

// Fits an implicit surface through the control points and extracts its zero
// level set on the requested grid.  The grid hull must enclose every dipole
// center with margin >= offset; throws SpecOutOfGridError otherwise.
TriangleMesh reconstruct_mesh(const ControlPointSet& cps, double offset,
                              KernelKind kernel, const VolumeGrid& grid);

// Exact distance from a point to the closest triangle of the mesh.
double point_to_mesh_distance(const Vec3& point, const TriangleMesh& mesh);

// Symmetric surface comparison: mean averages the two directed vertex-to-mesh
// means, max takes the larger directed maximum.  Both meshes must be nonempty.
SurfaceDistanceReport surface_to_surface_distance(const TriangleMesh& a,
                                                  const TriangleMesh& b);

}  // namespace rbfssm
