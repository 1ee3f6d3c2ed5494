// SPDX-License-Identifier: Apache-2.0
#pragma once

// Oracles and instance builders shared across the test suite. Expected values
// are recomputed here through routes independent of the code under test:
// exhaustive scans, central finite differences, and closed forms.

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rbfssm/losses.hpp"
#include "rbfssm/optimize.hpp"
#include "rbfssm/recon.hpp"
#include "rbfssm/rbfshape.hpp"
#include "rbfssm/rng.hpp"
#include "rbfssm/volume.hpp"

namespace oracle {

inline rbfssm::VolumeGrid make_grid(int nx, int ny, int nz, double sx = 1.0, double sy = 1.0,
                                    double sz = 1.0, double ox = 0.0, double oy = 0.0,
                                    double oz = 0.0) {
  rbfssm::VolumeGrid grid;
  grid.dims = {nx, ny, nz};
  grid.spacing = rbfssm::Vec3(sx, sy, sz);
  grid.origin = rbfssm::Vec3(ox, oy, oz);
  return grid;
}

template <typename Fn>
rbfssm::SdfVolume volume_from_fn(const rbfssm::VolumeGrid& grid, Fn&& fn) {
  rbfssm::SdfVolume vol;
  vol.grid = grid;
  vol.values.resize(grid.voxel_count());
  for (int k = 0; k < grid.dims[2]; ++k) {
    for (int j = 0; j < grid.dims[1]; ++j) {
      for (int i = 0; i < grid.dims[0]; ++i) {
        vol.values[grid.index(i, j, k)] = static_cast<float>(fn(grid.voxel_center(i, j, k)));
      }
    }
  }
  return vol;
}

inline rbfssm::SdfVolume sphere_sdf(const rbfssm::VolumeGrid& grid, const rbfssm::Vec3& center,
                                    double radius) {
  return volume_from_fn(grid, [&](const rbfssm::Vec3& x) { return (x - center).norm() - radius; });
}

// Exhaustive O(n^2) counterpart of the separable distance transform.
inline std::vector<double> brute_squared_distance(const rbfssm::Segmentation& seg,
                                                  bool to_foreground) {
  const rbfssm::VolumeGrid& grid = seg.grid;
  std::uint8_t target = to_foreground ? 1 : 0;
  std::vector<std::array<int, 3>> sources;
  for (int k = 0; k < grid.dims[2]; ++k) {
    for (int j = 0; j < grid.dims[1]; ++j) {
      for (int i = 0; i < grid.dims[0]; ++i) {
        if (seg.labels[grid.index(i, j, k)] == target) sources.push_back({i, j, k});
      }
    }
  }
  std::vector<double> out(grid.voxel_count(), std::numeric_limits<double>::infinity());
  for (int k = 0; k < grid.dims[2]; ++k) {
    for (int j = 0; j < grid.dims[1]; ++j) {
      for (int i = 0; i < grid.dims[0]; ++i) {
        std::size_t at = grid.index(i, j, k);
        if (seg.labels[at] == target) {
          out[at] = 0.0;
          continue;
        }
        double best = std::numeric_limits<double>::infinity();
        for (const auto& s : sources) {
          double dx = (i - s[0]) * grid.spacing[0];
          double dy = (j - s[1]) * grid.spacing[1];
          double dz = (k - s[2]) * grid.spacing[2];
          double d = dx * dx + dy * dy + dz * dz;
          if (d < best) best = d;
        }
        out[at] = best;
      }
    }
  }
  return out;
}

inline rbfssm::SdfVolume brute_signed_distance(const rbfssm::Segmentation& seg) {
  std::vector<double> to_fg = brute_squared_distance(seg, true);
  std::vector<double> to_bg = brute_squared_distance(seg, false);
  rbfssm::SdfVolume vol;
  vol.grid = seg.grid;
  vol.values.resize(seg.grid.voxel_count());
  for (std::size_t i = 0; i < vol.values.size(); ++i) {
    double d = seg.labels[i] ? -std::sqrt(to_bg[i]) : std::sqrt(to_fg[i]);
    vol.values[i] = static_cast<float>(d);
  }
  return vol;
}

// Random binary volume guaranteed to contain both labels.
inline rbfssm::Segmentation random_segmentation(const rbfssm::VolumeGrid& grid, double fill,
                                                rbfssm::Rng& rng) {
  rbfssm::Segmentation seg;
  seg.grid = grid;
  seg.labels.resize(grid.voxel_count());
  for (auto& label : seg.labels) label = rng.next_double() < fill ? 1 : 0;
  seg.labels.front() = 1;
  seg.labels.back() = 0;
  return seg;
}

// Fractional coordinate in [0.07, 0.43] or [0.57, 0.93]: at least 0.07 from
// every cell face, where the interpolant and its in-cell gradient are smooth
// under +-1e-3 probes (and remain so after the +-half-spacing shifts the
// gradient stencil applies).
inline double safe_frac(rbfssm::Rng& rng) {
  double u = rng.next_double();
  if (u < 0.5) return 0.07 + 0.36 * (2.0 * u);
  return 0.57 + 0.36 * (2.0 * u - 1.0);
}

inline double snap_to_safe_frac(double x, rbfssm::Rng& rng) {
  return std::floor(x) + safe_frac(rng);
}

// --- finite-difference oracle for the weighted total loss -------------------

// Snapshot of everything the fitter holds fixed during one gradient: solved
// kernel weights, the band draw, and the lagged mean. Perturbations move
// control points and raw normals only; dipole centers are rebuilt from them.
struct FrozenInstance {
  std::vector<rbfssm::SdfVolume> volumes;
  std::vector<rbfssm::ControlPointSet> sets;
  std::vector<rbfssm::RbfModel> models;
  std::vector<rbfssm::NarrowBandBatch> bands;
  rbfssm::MeanShape mean;
  rbfssm::LossWeights weights;
  double offset = 0.35;
  double eps = 1e-6;
};

inline double frozen_total(const FrozenInstance& inst) {
  double surface = 0.0;
  double normal = 0.0;
  double sampling = 0.0;
  for (std::size_t i = 0; i < inst.sets.size(); ++i) {
    surface += rbfssm::surface_loss(inst.sets[i], inst.volumes[i]);
    normal += rbfssm::normal_loss(inst.sets[i], inst.volumes[i]);
    rbfssm::DipoleSet dipoles = rbfssm::build_dipoles(inst.sets[i], inst.offset);
    sampling +=
        rbfssm::sampling_loss(inst.sets[i], inst.models[i], dipoles, inst.bands[i], inst.volumes[i])
            .first;
  }
  double correspondence = 0.0;
  if (inst.weights.zeta != 0.0) {
    correspondence = rbfssm::correspondence_loss(inst.sets, inst.mean, inst.eps);
  }
  return inst.weights.alpha * surface + inst.weights.beta * normal +
         inst.weights.gamma * sampling + inst.weights.zeta * correspondence;
}

// Central difference on one scalar variable of one shape. `normal_var` selects
// the raw normal instead of the position.
inline double fd_component(FrozenInstance& inst, std::size_t shape, bool normal_var, int j,
                           int axis, double h = 1e-3) {
  double& slot = normal_var ? inst.sets[shape].normals[j][axis] : inst.sets[shape].points[j][axis];
  double saved = slot;
  slot = saved + h;
  double plus = frozen_total(inst);
  slot = saved - h;
  double minus = frozen_total(inst);
  slot = saved;
  return (plus - minus) / (2.0 * h);
}

// Builds a smooth, well-conditioned random instance: every control point sits
// strictly inside a trilinear cell, off the zero level set, and away from its
// peers; normals stay clear of both degeneracy and arccos saturation.
inline FrozenInstance random_gradient_instance(std::uint64_t seed, int num_shapes, int max_points,
                                               int max_band) {
  rbfssm::Rng rng(seed);
  FrozenInstance inst;
  int J = 3 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(max_points - 2)));
  int R = 8 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(max_band - 7)));

  for (int s = 0; s < num_shapes; ++s) {
    rbfssm::VolumeGrid grid = make_grid(22, 22, 22);
    rbfssm::Vec3 center = 0.5 * (grid.hull_min() + grid.hull_max()) +
                          rbfssm::Vec3(rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8),
                                       rng.uniform(-0.8, 0.8));
    double radius = 5.0 + 0.7 * s + rng.uniform(-0.4, 0.4);
    inst.volumes.push_back(sphere_sdf(grid, center, radius));
    const rbfssm::SdfVolume& vol = inst.volumes.back();

    rbfssm::ControlPointSet cps;
    while (static_cast<int>(cps.points.size()) < J) {
      rbfssm::Vec3 dir(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
      if (dir.norm() < 0.3) continue;
      dir.normalize();
      rbfssm::Vec3 p = center + dir * (radius + rng.uniform(-1.4, 1.4));
      for (int a = 0; a < 3; ++a) p[a] = snap_to_safe_frac(p[a], rng);
      bool inside = true;
      for (int a = 0; a < 3; ++a) {
        if (p[a] < grid.hull_min()[a] + 2.0 || p[a] > grid.hull_max()[a] - 2.0) inside = false;
      }
      if (!inside) continue;
      if (std::abs(rbfssm::sample_trilinear(vol, p)) < 0.05) continue;
      bool separated = true;
      for (const rbfssm::Vec3& q : cps.points) {
        if ((p - q).norm() < 0.9) separated = false;
      }
      if (!separated) continue;
      rbfssm::Vec3 g = rbfssm::gradient(vol, p);
      rbfssm::Vec3 n;
      while (true) {
        n = rbfssm::Vec3(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
        double len = n.norm();
        if (len < 0.3) continue;
        n *= rng.uniform(0.7, 1.6) / len;
        double cosine = n.dot(g) / (n.norm() * g.norm());
        if (std::abs(cosine) <= 0.95) break;
      }
      cps.points.push_back(p);
      cps.normals.push_back(n);
    }

    rbfssm::NarrowBandBatch band;
    band.halfwidth = 2.5;
    while (static_cast<int>(band.points.size()) < R) {
      rbfssm::Vec3 dir(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
      if (dir.norm() < 0.3) continue;
      dir.normalize();
      rbfssm::Vec3 b = center + dir * (radius + rng.uniform(-2.0, 2.0));
      for (int a = 0; a < 3; ++a) b[a] = snap_to_safe_frac(b[a], rng);
      bool inside = true;
      for (int a = 0; a < 3; ++a) {
        if (b[a] < grid.hull_min()[a] + 2.0 || b[a] > grid.hull_max()[a] - 2.0) inside = false;
      }
      if (!inside) continue;
      bool separated = true;
      for (const rbfssm::Vec3& q : cps.points) {
        if ((b - q).norm() < 0.15) separated = false;
      }
      if (!separated) continue;
      band.points.push_back(b);
      band.distances.push_back(rbfssm::sample_trilinear(vol, b));
    }

    inst.models.push_back(
        rbfssm::solve_rbf(rbfssm::build_dipoles(cps, inst.offset), rbfssm::KernelKind::Biharmonic));
    inst.sets.push_back(std::move(cps));
    inst.bands.push_back(std::move(band));
  }

  // Lagged mean: near, but deliberately not equal to, the current mean.
  inst.mean = rbfssm::mean_shape(inst.sets);
  for (Eigen::Index i = 0; i < inst.mean.mu.size(); ++i) {
    inst.mean.mu[i] += rng.uniform(-0.3, 0.3);
  }
  return inst;
}

// --- PCA oracle --------------------------------------------------------------

// Explicit 3J x 3J covariance eigendecomposition; returns the top
// min(3J, I-1) eigenvalues in descending order, clamped at zero.
inline Eigen::VectorXd primal_pca_eigenvalues(std::span<const rbfssm::ControlPointSet> sets) {
  const auto I = static_cast<Eigen::Index>(sets.size());
  const auto J = static_cast<Eigen::Index>(sets[0].points.size());
  Eigen::MatrixXd data(3 * J, I);
  for (Eigen::Index i = 0; i < I; ++i) {
    for (Eigen::Index j = 0; j < J; ++j) {
      data.col(i).segment<3>(3 * j) = sets[i].points[j];
    }
  }
  Eigen::VectorXd mu = data.rowwise().mean();
  data.colwise() -= mu;
  Eigen::MatrixXd cov = data * data.transpose() / static_cast<double>(I - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  Eigen::VectorXd ascending = solver.eigenvalues();
  Eigen::Index count = std::min(3 * J, I - 1);
  Eigen::VectorXd out(count);
  for (Eigen::Index m = 0; m < count; ++m) {
    out[m] = std::max(0.0, ascending[ascending.size() - 1 - m]);
  }
  return out;
}

// --- mesh oracles ------------------------------------------------------------

inline double mesh_signed_volume(const rbfssm::TriangleMesh& mesh) {
  double total = 0.0;
  for (const auto& tri : mesh.triangles) {
    const rbfssm::Vec3& a = mesh.vertices[tri[0]];
    const rbfssm::Vec3& b = mesh.vertices[tri[1]];
    const rbfssm::Vec3& c = mesh.vertices[tri[2]];
    total += a.dot(b.cross(c));
  }
  return total / 6.0;
}

struct EdgeAudit {
  bool every_edge_shared_twice = true;
  bool orientation_consistent = true;
};

// Closed-manifold check: each undirected edge borders exactly two triangles,
// and the two cross it in opposite directions.
inline EdgeAudit audit_edges(const rbfssm::TriangleMesh& mesh) {
  std::map<std::pair<int, int>, int> undirected;
  std::map<std::pair<int, int>, int> directed;
  for (const auto& tri : mesh.triangles) {
    for (int c = 0; c < 3; ++c) {
      int a = tri[c];
      int b = tri[(c + 1) % 3];
      undirected[{std::min(a, b), std::max(a, b)}]++;
      directed[{a, b}]++;
    }
  }
  EdgeAudit audit;
  for (const auto& [edge, count] : undirected) {
    if (count != 2) audit.every_edge_shared_twice = false;
  }
  for (const auto& [edge, count] : directed) {
    if (count != 1) audit.orientation_consistent = false;
  }
  return audit;
}

// --- subprocess driver -------------------------------------------------------

struct CommandResult {
  int exit_code = -1;
  std::string output;
};

inline CommandResult run_cli(const std::string& args) {
  std::string command = std::string(RBFSSM_CLI_PATH) + " " + args + " 2>&1";
  CommandResult result;
  FILE* pipe = popen(command.c_str(), "r");
  if (pipe == nullptr) {
    result.output = "popen failed";
    return result;
  }
  char buffer[4096];
  while (fgets(buffer, sizeof(buffer), pipe) != nullptr) result.output += buffer;
  int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -2;
  return result;
}

inline std::string make_temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  std::filesystem::path dir = std::filesystem::temp_directory_path() /
                              ("rbfssm_test_" + tag + "_" + std::to_string(getpid()) + "_" +
                               std::to_string(counter.fetch_add(1)));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

inline std::string read_file_bytes(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (f == nullptr) return std::string();
  std::string data;
  char buffer[4096];
  std::size_t got;
  while ((got = std::fread(buffer, 1, sizeof(buffer), f)) > 0) data.append(buffer, got);
  std::fclose(f);
  return data;
}

}  // namespace oracle
