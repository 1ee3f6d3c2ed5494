// SPDX-License-Identifier: Apache-2.0
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "rbfssm/errors.hpp"
#include "rbfssm/io.hpp"
#include "rbfssm/optimize.hpp"
#include "rbfssm/parallel.hpp"
#include "rbfssm/recon.hpp"
#include "rbfssm/rng.hpp"
#include "rbfssm/ssm.hpp"
#include "rbfssm/volume.hpp"

namespace {

using namespace rbfssm;
namespace fs = std::filesystem;

constexpr std::uint64_t kSynthSeedTag = 0x53594e5448ull;

std::string zero_padded(std::size_t value, int width = 3) {
  std::string s = std::to_string(value);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

std::ofstream open_csv(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  return out;
}

void finish_csv(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw IoError("failed while writing " + path);
}

void ensure_directory(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

struct GridOptions {
  std::vector<int> dims{64, 64, 64};
  std::vector<double> spacing{1.0, 1.0, 1.0};
  std::vector<double> origin{0.0, 0.0, 0.0};
};

void add_grid_options(CLI::App* cmd, GridOptions& grid) {
  cmd->add_option("--dims", grid.dims, "voxels along x y z")->expected(3);
  cmd->add_option("--spacing", grid.spacing, "voxel spacing along x y z")->expected(3);
  cmd->add_option("--origin", grid.origin, "physical center of voxel (0,0,0)")->expected(3);
}

VolumeGrid make_grid(const GridOptions& options) {
  VolumeGrid grid;
  for (int a = 0; a < 3; ++a) {
    if (options.dims[a] < 1) throw ConfigError("grid dims must be >= 1");
    if (!(options.spacing[a] > 0.0)) throw ConfigError("grid spacing must be positive");
    grid.dims[a] = options.dims[a];
    grid.spacing[a] = options.spacing[a];
    grid.origin[a] = options.origin[a];
  }
  return grid;
}

// Zero means "derive from the grid": twice the largest voxel spacing, the
// same rule the fitter applies to its narrow band.
double resolve_offset(double requested, const VolumeGrid& grid) {
  if (requested > 0.0) return requested;
  return 2.0 * grid.spacing.maxCoeff();
}

struct SynthOptions {
  std::string output_dir;
  GridOptions grid;
  std::string shape = "ellipsoid";
  int count = 10;
  std::vector<double> center;
  double radius = 0.0;
  double radius_end = 0.0;
  std::vector<double> axes;
  std::vector<double> axes_end;
  double jitter = 0.0;
  std::uint64_t seed = 0;
};

double lerp(double a, double b, double t) { return a * (1.0 - t) + b * t; }

ShapeSpec make_swept_spec(const SynthOptions& options, const Vec3& center, int index) {
  double t = options.count > 1 ? static_cast<double>(index) / (options.count - 1) : 0.0;
  Rng rng(derive_seed(options.seed, kSynthSeedTag, static_cast<std::uint64_t>(index)));
  if (options.shape == "sphere") {
    double end = options.radius_end > 0.0 ? options.radius_end : options.radius;
    double radius = lerp(options.radius, end, t) + rng.uniform(-options.jitter, options.jitter);
    if (!(radius > 0.0)) throw ConfigError("swept radius is not positive");
    return SphereSpec{center, radius};
  }
  Vec3 axes;
  for (int a = 0; a < 3; ++a) {
    double end = options.axes_end.size() == 3 ? options.axes_end[a] : options.axes[a];
    axes[a] = lerp(options.axes[a], end, t) + rng.uniform(-options.jitter, options.jitter);
    if (!(axes[a] > 0.0)) throw ConfigError("swept semi-axis is not positive");
  }
  return EllipsoidSpec{center, axes};
}

void run_synth(const SynthOptions& options) {
  VolumeGrid grid = make_grid(options.grid);
  if (options.count < 1) throw ConfigError("--count must be >= 1");
  if (options.jitter < 0.0) throw ConfigError("--jitter must be >= 0");
  if (options.shape == "sphere") {
    if (!(options.radius > 0.0)) throw ConfigError("sphere synthesis needs --radius > 0");
  } else {
    if (options.axes.size() != 3) throw ConfigError("ellipsoid synthesis needs --axes ax ay az");
    for (double a : options.axes) {
      if (!(a > 0.0)) throw ConfigError("--axes values must be positive");
    }
  }
  Vec3 center = 0.5 * (grid.hull_min() + grid.hull_max());
  if (options.center.size() == 3) center = Vec3(options.center[0], options.center[1], options.center[2]);

  // Everything is rasterized before the first write so an invalid member
  // cannot leave a partial cohort on disk.
  std::vector<Segmentation> segmentations;
  std::vector<SdfVolume> fields;
  segmentations.reserve(options.count);
  fields.reserve(options.count);
  for (int i = 0; i < options.count; ++i) {
    try {
      ShapeSpec spec = make_swept_spec(options, center, i);
      segmentations.push_back(synth_segmentation(spec, grid.dims, grid.spacing, grid.origin));
      fields.push_back(sdf_from_segmentation(segmentations.back()));
    } catch (const ConfigError& e) {
      throw ConfigError("shape " + std::to_string(i) + ": " + e.what());
    }
  }

  ensure_directory(options.output_dir);
  fs::path dir(options.output_dir);
  for (int i = 0; i < options.count; ++i) {
    write_segmentation((dir / ("seg_" + zero_padded(i) + ".svol")).string(), segmentations[i]);
    write_sdf_volume((dir / ("sdf_" + zero_padded(i) + ".svol")).string(), fields[i]);
  }
}

void run_sdf(const std::string& input, const std::string& output) {
  Segmentation seg = read_segmentation(input);
  SdfVolume vol = sdf_from_segmentation(seg);
  write_sdf_volume(output, vol);
}

void run_fit(const std::string& config_path) {
  FitRunConfig config = read_fit_config(config_path);
  if (config.inputs.size() < 2) throw ConfigError("fit needs at least 2 input volumes");
  if (config.output_dir.empty()) throw ConfigError("fit config must set output_dir");

  Cohort cohort;
  cohort.volumes.reserve(config.inputs.size());
  for (const std::string& path : config.inputs) {
    cohort.volumes.push_back(read_sdf_volume(path));
  }

  FitResult result = fit_cohort(cohort, config.fit);

  ensure_directory(config.output_dir);
  fs::path dir(config.output_dir);
  for (std::size_t i = 0; i < result.particle_sets.size(); ++i) {
    write_particles((dir / ("particles_" + zero_padded(i) + ".txt")).string(),
                    result.particle_sets[i]);
  }
  write_fit_log((dir / "fit_log.csv").string(), result.loss_history);
  FitRunConfig resolved = config;
  resolved.fit = result.config;
  write_resolved_config((dir / "config_resolved.txt").string(), resolved);
}

std::vector<ControlPointSet> read_particle_sets(const std::vector<std::string>& paths) {
  std::vector<ControlPointSet> sets;
  sets.reserve(paths.size());
  for (const std::string& path : paths) sets.push_back(read_particles(path));
  return sets;
}

struct StatsOptions {
  std::vector<std::string> inputs;
  std::string output;
  int max_modes = 0;
  int specificity_samples = 1000;
  std::uint64_t seed = 0;
};

void run_stats(const StatsOptions& options) {
  std::vector<ControlPointSet> sets = read_particle_sets(options.inputs);
  SsmModel model = compute_pca(sets);
  int limit = options.max_modes > 0 ? options.max_modes : model.retained_modes();

  // Leave-one-out folds retain fewer modes than the full model; the
  // generalization column saturates there instead of cutting the range short.
  int fold_limit = model.retained_modes();
  for (std::size_t f = 0; f < sets.size(); ++f) {
    std::vector<ControlPointSet> fold;
    fold.reserve(sets.size() - 1);
    for (std::size_t i = 0; i < sets.size(); ++i) {
      if (i != f) fold.push_back(sets[i]);
    }
    fold_limit = std::min(fold_limit, compute_pca(fold).retained_modes());
  }

  auto out = open_csv(options.output);
  out << "modes,compactness,generalization,specificity\n";
  for (int m = 1; m <= limit; ++m) {
    double c = compactness(model, m);
    double g = generalization(sets, std::min(m, fold_limit));
    double s = specificity(model, sets, m, options.specificity_samples, options.seed);
    out << m << ',' << format_real(c) << ',' << format_real(g) << ',' << format_real(s) << '\n';
  }
  finish_csv(out, options.output);
}

struct ModesOptions {
  std::vector<std::string> inputs;
  std::string output_dir;
  int mode = 0;
  std::vector<double> stddevs{-2.0, -1.0, 0.0, 1.0, 2.0};
  GridOptions grid;
  std::string kernel = "biharmonic";
  double offset = 0.0;
};

void run_modes(const ModesOptions& options) {
  std::vector<ControlPointSet> sets = read_particle_sets(options.inputs);
  SsmModel model = compute_pca(sets);
  int J = model.num_points;

  // Mode walks move only positions; orientations come from the cohort's mean
  // normal at each point, renormalized to unit length.
  std::vector<Vec3> normals(J, Vec3::Zero());
  for (const ControlPointSet& set : sets) {
    for (int j = 0; j < J; ++j) normals[j] += set.normals[j];
  }
  for (int j = 0; j < J; ++j) {
    double len = normals[j].norm();
    if (len < 1e-12) {
      throw DegenerateNormalError("cohort normals cancel at point " + std::to_string(j));
    }
    normals[j] /= len;
  }

  VolumeGrid grid = make_grid(options.grid);
  double offset = resolve_offset(options.offset, grid);
  KernelKind kernel = kernel_from_name(options.kernel);

  ensure_directory(options.output_dir);
  fs::path dir(options.output_dir);
  for (double sd : options.stddevs) {
    Eigen::VectorXd flat = sample_mode(model, options.mode, sd);
    ControlPointSet cps;
    cps.points.resize(J);
    cps.normals = normals;
    for (int j = 0; j < J; ++j) {
      cps.points[j] = Vec3(flat[3 * j], flat[3 * j + 1], flat[3 * j + 2]);
    }
    std::string base = "mode" + std::to_string(options.mode) + "_sd" + format_real(sd);
    write_particles((dir / (base + "_particles.txt")).string(), cps);
    TriangleMesh mesh = reconstruct_mesh(cps, offset, kernel, grid);
    write_mesh((dir / (base + "_mesh.obj")).string(), mesh);
  }
}

struct ReconstructOptions {
  std::string input;
  std::string output;
  GridOptions grid;
  std::string kernel = "biharmonic";
  double offset = 0.0;
};

void run_reconstruct(const ReconstructOptions& options) {
  ControlPointSet cps = read_particles(options.input);
  VolumeGrid grid = make_grid(options.grid);
  TriangleMesh mesh =
      reconstruct_mesh(cps, resolve_offset(options.offset, grid), kernel_from_name(options.kernel),
                       grid);
  write_mesh(options.output, mesh);
}

struct DistanceOptions {
  std::string mesh_a;
  std::string mesh_b;
  std::string output;
};

void run_distance(const DistanceOptions& options) {
  TriangleMesh a = read_mesh(options.mesh_a);
  TriangleMesh b = read_mesh(options.mesh_b);
  SurfaceDistanceReport report = surface_to_surface_distance(a, b);
  std::cout << "mean = " << format_real(report.mean) << '\n';
  std::cout << "max = " << format_real(report.max) << '\n';
  if (!options.output.empty()) {
    auto out = open_csv(options.output);
    out << "vertex,distance\n";
    for (std::size_t i = 0; i < report.per_vertex_a.size(); ++i) {
      out << i << ',' << format_real(report.per_vertex_a[i]) << '\n';
    }
    finish_csv(out, options.output);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"implicit-surface statistical shape modeling"};
  app.require_subcommand(1);

  int threads = 1;
  app.add_option("--threads", threads, "worker thread cap (results do not depend on it)")
      ->check(CLI::PositiveNumber);

  SynthOptions synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "rasterize a synthetic shape cohort");
  synth_cmd->fallthrough();
  synth_cmd->add_option("--output-dir", synth.output_dir, "directory for seg_*/sdf_* volumes")
      ->required();
  add_grid_options(synth_cmd, synth.grid);
  synth_cmd->add_option("--shape", synth.shape, "cohort shape family")
      ->check(CLI::IsMember({"sphere", "ellipsoid"}));
  synth_cmd->add_option("--count", synth.count, "number of cohort members");
  synth_cmd->add_option("--center", synth.center, "shape center (default: grid center)")
      ->expected(3);
  synth_cmd->add_option("--radius", synth.radius, "sphere radius at the start of the sweep");
  synth_cmd->add_option("--radius-end", synth.radius_end,
                        "sphere radius at the end of the sweep (default: --radius)");
  synth_cmd->add_option("--axes", synth.axes, "ellipsoid semi-axes at the start of the sweep")
      ->expected(3);
  synth_cmd->add_option("--axes-end", synth.axes_end,
                        "ellipsoid semi-axes at the end of the sweep (default: --axes)")
      ->expected(3);
  synth_cmd->add_option("--jitter", synth.jitter, "uniform per-shape size jitter half-range");
  synth_cmd->add_option("--seed", synth.seed, "jitter seed");
  synth_cmd->callback([&] {
    set_max_threads(threads);
    run_synth(synth);
  });

  std::string sdf_input, sdf_output;
  CLI::App* sdf_cmd = app.add_subcommand("sdf", "signed distance field from a segmentation");
  sdf_cmd->fallthrough();
  sdf_cmd->add_option("--input", sdf_input, "segmentation volume (u8)")->required();
  sdf_cmd->add_option("--output", sdf_output, "distance volume to write (f32)")->required();
  sdf_cmd->callback([&] {
    set_max_threads(threads);
    run_sdf(sdf_input, sdf_output);
  });

  std::string fit_config;
  CLI::App* fit_cmd = app.add_subcommand("fit", "fit corresponding particles to a cohort");
  fit_cmd->fallthrough();
  fit_cmd->add_option("--config", fit_config, "fit configuration file")->required();
  fit_cmd->callback([&] {
    set_max_threads(threads);
    run_fit(fit_config);
  });

  StatsOptions stats;
  CLI::App* stats_cmd = app.add_subcommand("stats", "shape-model quality metrics");
  stats_cmd->fallthrough();
  stats_cmd->add_option("--inputs", stats.inputs, "particle files (one per shape)")
      ->required()
      ->expected(-2);
  stats_cmd->add_option("--output", stats.output, "metrics CSV path")->required();
  stats_cmd->add_option("--max-modes", stats.max_modes,
                        "largest mode count to report (default: all retained)");
  stats_cmd->add_option("--specificity-samples", stats.specificity_samples,
                        "model samples per specificity row");
  stats_cmd->add_option("--seed", stats.seed, "specificity sampling seed");
  stats_cmd->callback([&] {
    set_max_threads(threads);
    run_stats(stats);
  });

  ModesOptions modes;
  CLI::App* modes_cmd = app.add_subcommand("modes", "walk a variation mode and mesh each step");
  modes_cmd->fallthrough();
  modes_cmd->add_option("--inputs", modes.inputs, "particle files (one per shape)")
      ->required()
      ->expected(-2);
  modes_cmd->add_option("--output-dir", modes.output_dir, "directory for per-step outputs")
      ->required();
  modes_cmd->add_option("--mode", modes.mode, "mode index (0 = largest variance)");
  modes_cmd->add_option("--stddevs", modes.stddevs, "standard-deviation steps to sample")
      ->expected(-1);
  add_grid_options(modes_cmd, modes.grid);
  modes_cmd->add_option("--kernel", modes.kernel, "radial kernel")
      ->check(CLI::IsMember({"biharmonic", "thin-plate", "triharmonic"}));
  modes_cmd->add_option("--offset", modes.offset, "dipole offset (0 = 2x max spacing)");
  modes_cmd->callback([&] {
    set_max_threads(threads);
    run_modes(modes);
  });

  ReconstructOptions reconstruct;
  CLI::App* reconstruct_cmd = app.add_subcommand("reconstruct", "mesh the surface of a particle set");
  reconstruct_cmd->fallthrough();
  reconstruct_cmd->add_option("--input", reconstruct.input, "particle file")->required();
  reconstruct_cmd->add_option("--output", reconstruct.output, "mesh file to write")->required();
  add_grid_options(reconstruct_cmd, reconstruct.grid);
  reconstruct_cmd->add_option("--kernel", reconstruct.kernel, "radial kernel")
      ->check(CLI::IsMember({"biharmonic", "thin-plate", "triharmonic"}));
  reconstruct_cmd->add_option("--offset", reconstruct.offset, "dipole offset (0 = 2x max spacing)");
  reconstruct_cmd->callback([&] {
    set_max_threads(threads);
    run_reconstruct(reconstruct);
  });

  DistanceOptions distance;
  CLI::App* distance_cmd = app.add_subcommand("distance", "symmetric surface-to-surface distance");
  distance_cmd->fallthrough();
  distance_cmd->add_option("--mesh-a", distance.mesh_a, "first mesh")->required();
  distance_cmd->add_option("--mesh-b", distance.mesh_b, "second mesh")->required();
  distance_cmd->add_option("--output", distance.output, "per-vertex distance CSV (optional)");
  distance_cmd->callback([&] {
    set_max_threads(threads);
    run_distance(distance);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const rbfssm::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const rbfssm::NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const rbfssm::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
