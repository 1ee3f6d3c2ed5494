// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "rbfssm/losses.hpp"
#include "rbfssm/optimize.hpp"
#include "rbfssm/recon.hpp"
#include "rbfssm/ssm.hpp"
#include "rbfssm/volume.hpp"

namespace rbfssm {

// Shortest text form that reads back to the identical double (17 significant
// digits, general format). Used by every ASCII writer below.
std::string format_real(double value);

const char* kernel_name(KernelKind kind);
// Accepts the names kernel_name produces; throws ConfigError otherwise.
KernelKind kernel_from_name(const std::string& name);

// Binary voxel container: magic "SVOL0001", a 4-byte little-endian header
// length, a text header (dims, spacing, origin, dtype, order), then the raw
// little-endian payload. Segmentations store u8, distance fields f32.
void write_segmentation(const std::string& path, const Segmentation& seg);
Segmentation read_segmentation(const std::string& path);
void write_sdf_volume(const std::string& path, const SdfVolume& vol);
SdfVolume read_sdf_volume(const std::string& path);

// One "x y z nx ny nz" line per particle, no header.
void write_particles(const std::string& path, const ControlPointSet& cps);
ControlPointSet read_particles(const std::string& path);

// Wavefront-style subset: "v x y z" and "f i j k" lines, indices 1-based.
void write_mesh(const std::string& path, const TriangleMesh& mesh);
TriangleMesh read_mesh(const std::string& path);

// Key-value text holding counts, mean, eigenvalues, and one line per mode.
void write_ssm_model(const std::string& path, const SsmModel& model);
SsmModel read_ssm_model(const std::string& path);

// Fit run description: optimizer settings plus input volumes and the output
// directory. Every optimizer field is optional in the file and falls back to
// the FitConfig default.
struct FitRunConfig {
  FitConfig fit;
  std::vector<std::string> inputs;
  std::string output_dir;
};

// Parses "key = value" lines with '#' comments. Unknown keys are rejected so
// a typo cannot silently fall back to a default.
FitRunConfig read_fit_config(const std::string& path);
// Echoes every field explicitly so a run can be reproduced from its output.
void write_resolved_config(const std::string& path, const FitRunConfig& config);

// CSV of per-epoch mean losses, epochs numbered from 1.
void write_fit_log(const std::string& path, const std::vector<LossBreakdown>& history);

}  // namespace rbfssm
