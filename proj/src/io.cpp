// SPDX-License-Identifier: Apache-2.0
#include "rbfssm/io.hpp"

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "rbfssm/errors.hpp"

namespace rbfssm {

namespace {

std::ofstream open_for_writing(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  return out;
}

void finish_writing(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw IoError("failed while writing " + path);
}

std::string read_entire_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) throw IoError("failed while reading " + path);
  return buffer.str();
}

std::string trim(const std::string& s) {
  auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return std::string();
  auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_tokens(const std::string& s) {
  std::vector<std::string> tokens;
  std::istringstream stream(s);
  std::string token;
  while (stream >> token) tokens.push_back(std::move(token));
  return tokens;
}

// Strict numeric parsing: the whole token must be consumed.
double parse_real(const std::string& token, const std::string& what, int line) {
  double value = 0.0;
  auto result = std::from_chars(token.data(), token.data() + token.size(), value);
  if (result.ec != std::errc() || result.ptr != token.data() + token.size()) {
    throw ParseError("invalid number for " + what + ": '" + token + "'", line);
  }
  return value;
}

long long parse_int(const std::string& token, const std::string& what, int line) {
  long long value = 0;
  auto result = std::from_chars(token.data(), token.data() + token.size(), value);
  if (result.ec != std::errc() || result.ptr != token.data() + token.size()) {
    throw ParseError("invalid integer for " + what + ": '" + token + "'", line);
  }
  return value;
}

std::uint64_t parse_u64(const std::string& token, const std::string& what, int line) {
  std::uint64_t value = 0;
  auto result = std::from_chars(token.data(), token.data() + token.size(), value);
  if (result.ec != std::errc() || result.ptr != token.data() + token.size()) {
    throw ParseError("invalid unsigned integer for " + what + ": '" + token + "'", line);
  }
  return value;
}

int parse_bounded_int(const std::string& token, const std::string& what, int line) {
  long long value = parse_int(token, what, line);
  if (value < -2147483647LL || value > 2147483647LL) {
    throw ParseError(what + " out of range: '" + token + "'", line);
  }
  return static_cast<int>(value);
}

struct KeyValue {
  std::string value;
  int line = 0;
};

struct KeyValueEntry {
  std::string key;
  std::string value;
  int line = 0;
};

// Scans "key = value" lines; '#' starts a comment line, blank lines are
// skipped. Line numbers are 1-based within the given text.
std::vector<KeyValueEntry> scan_key_values(const std::string& text) {
  std::vector<KeyValueEntry> entries;
  std::istringstream stream(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(stream, raw)) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("expected 'key = value', got '" + line + "'", line_no);
    }
    KeyValueEntry entry;
    entry.key = trim(line.substr(0, eq));
    entry.value = trim(line.substr(eq + 1));
    entry.line = line_no;
    if (entry.key.empty()) throw ParseError("missing key before '='", line_no);
    entries.push_back(std::move(entry));
  }
  return entries;
}

// Map view that rejects duplicate keys; input-style repeatable keys must be
// handled before building the map.
std::map<std::string, KeyValue> unique_key_map(const std::vector<KeyValueEntry>& entries) {
  std::map<std::string, KeyValue> map;
  for (const auto& entry : entries) {
    auto [it, inserted] = map.emplace(entry.key, KeyValue{entry.value, entry.line});
    (void)it;
    if (!inserted) throw ParseError("duplicate key '" + entry.key + "'", entry.line);
  }
  return map;
}

const KeyValue& require_key(const std::map<std::string, KeyValue>& map, const std::string& key,
                            const std::string& context) {
  auto it = map.find(key);
  if (it == map.end()) throw ParseError(context + ": missing key '" + key + "'");
  return it->second;
}

std::vector<double> parse_real_array(const KeyValue& kv, std::size_t expected,
                                     const std::string& what) {
  auto tokens = split_tokens(kv.value);
  if (tokens.size() != expected) {
    throw ParseError(what + ": expected " + std::to_string(expected) + " values, got " +
                         std::to_string(tokens.size()),
                     kv.line);
  }
  std::vector<double> values(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    values[i] = parse_real(tokens[i], what, kv.line);
  }
  return values;
}

constexpr char kVolumeMagic[8] = {'S', 'V', 'O', 'L', '0', '0', '0', '1'};

std::string join_reals(const double* values, int count) {
  std::string out;
  for (int i = 0; i < count; ++i) {
    if (i > 0) out += ' ';
    out += format_real(values[i]);
  }
  return out;
}

std::string volume_header_text(const VolumeGrid& grid, const char* dtype) {
  std::string header;
  header += "dims = " + std::to_string(grid.dims[0]) + ' ' + std::to_string(grid.dims[1]) + ' ' +
            std::to_string(grid.dims[2]) + '\n';
  header += "spacing = " + join_reals(grid.spacing.data(), 3) + '\n';
  header += "origin = " + join_reals(grid.origin.data(), 3) + '\n';
  header += "dtype = " + std::string(dtype) + '\n';
  header += "order = x-fastest\n";
  return header;
}

void write_volume_file(const std::string& path, const VolumeGrid& grid, const char* dtype,
                       const void* payload, std::size_t payload_bytes) {
  std::string header = volume_header_text(grid, dtype);
  auto out = open_for_writing(path);
  out.write(kVolumeMagic, sizeof(kVolumeMagic));
  auto length = static_cast<std::uint32_t>(header.size());
  unsigned char length_bytes[4] = {
      static_cast<unsigned char>(length & 0xff),
      static_cast<unsigned char>((length >> 8) & 0xff),
      static_cast<unsigned char>((length >> 16) & 0xff),
      static_cast<unsigned char>((length >> 24) & 0xff),
  };
  out.write(reinterpret_cast<const char*>(length_bytes), 4);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(static_cast<const char*>(payload), static_cast<std::streamsize>(payload_bytes));
  finish_writing(out, path);
}

struct VolumeFileContents {
  VolumeGrid grid;
  std::string dtype;
  std::vector<char> payload;
};

VolumeFileContents read_volume_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");

  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kVolumeMagic, sizeof(magic)) != 0) {
    throw ParseError(path + ": not a volume file (bad magic)");
  }
  unsigned char length_bytes[4];
  if (!in.read(reinterpret_cast<char*>(length_bytes), 4)) {
    throw ParseError(path + ": truncated header length");
  }
  std::uint32_t header_length = static_cast<std::uint32_t>(length_bytes[0]) |
                                (static_cast<std::uint32_t>(length_bytes[1]) << 8) |
                                (static_cast<std::uint32_t>(length_bytes[2]) << 16) |
                                (static_cast<std::uint32_t>(length_bytes[3]) << 24);
  std::string header(header_length, '\0');
  if (header_length > 0 && !in.read(header.data(), header_length)) {
    throw ParseError(path + ": truncated header");
  }

  auto map = unique_key_map(scan_key_values(header));
  VolumeFileContents contents;

  const KeyValue& dims_kv = require_key(map, "dims", path);
  auto dims_tokens = split_tokens(dims_kv.value);
  if (dims_tokens.size() != 3) throw ParseError(path + ": dims needs 3 integers", dims_kv.line);
  for (int a = 0; a < 3; ++a) {
    int d = parse_bounded_int(dims_tokens[a], "dims", dims_kv.line);
    if (d < 1) throw ParseError(path + ": dims must be >= 1", dims_kv.line);
    contents.grid.dims[a] = d;
  }
  const KeyValue& spacing_kv = require_key(map, "spacing", path);
  auto spacing = parse_real_array(spacing_kv, 3, path + ": spacing");
  for (int a = 0; a < 3; ++a) {
    if (!(spacing[a] > 0.0)) throw ParseError(path + ": spacing must be positive", spacing_kv.line);
    contents.grid.spacing[a] = spacing[a];
  }
  const KeyValue& origin_kv = require_key(map, "origin", path);
  auto origin = parse_real_array(origin_kv, 3, path + ": origin");
  for (int a = 0; a < 3; ++a) contents.grid.origin[a] = origin[a];

  const KeyValue& dtype_kv = require_key(map, "dtype", path);
  if (dtype_kv.value != "f32" && dtype_kv.value != "u8") {
    throw ParseError(path + ": dtype must be f32 or u8", dtype_kv.line);
  }
  contents.dtype = dtype_kv.value;
  const KeyValue& order_kv = require_key(map, "order", path);
  if (order_kv.value != "x-fastest") {
    throw ParseError(path + ": unsupported order '" + order_kv.value + "'", order_kv.line);
  }

  std::size_t voxel_bytes = contents.dtype == "f32" ? 4 : 1;
  std::size_t expected = contents.grid.voxel_count() * voxel_bytes;
  contents.payload.resize(expected);
  if (expected > 0 && !in.read(contents.payload.data(), static_cast<std::streamsize>(expected))) {
    throw ParseError(path + ": truncated payload");
  }
  if (in.get() != std::ifstream::traits_type::eof()) {
    throw ParseError(path + ": trailing bytes after payload");
  }
  return contents;
}

}  // namespace

std::string format_real(double value) {
  char buffer[64];
  auto result =
      std::to_chars(buffer, buffer + sizeof(buffer), value, std::chars_format::general, 17);
  return std::string(buffer, result.ptr);
}

const char* kernel_name(KernelKind kind) {
  switch (kind) {
    case KernelKind::Biharmonic: return "biharmonic";
    case KernelKind::ThinPlateSpline: return "thin-plate";
    case KernelKind::Triharmonic: return "triharmonic";
  }
  return "biharmonic";
}

KernelKind kernel_from_name(const std::string& name) {
  if (name == "biharmonic") return KernelKind::Biharmonic;
  if (name == "thin-plate") return KernelKind::ThinPlateSpline;
  if (name == "triharmonic") return KernelKind::Triharmonic;
  throw ConfigError("unknown kernel '" + name +
                    "' (expected biharmonic, thin-plate, or triharmonic)");
}

void write_segmentation(const std::string& path, const Segmentation& seg) {
  if (seg.labels.size() != seg.grid.voxel_count()) {
    throw ShapeMismatchError("segmentation label count does not match its grid");
  }
  write_volume_file(path, seg.grid, "u8", seg.labels.data(), seg.labels.size());
}

Segmentation read_segmentation(const std::string& path) {
  VolumeFileContents contents = read_volume_file(path);
  if (contents.dtype != "u8") {
    throw ParseError(path + ": expected a u8 segmentation volume, found dtype " + contents.dtype);
  }
  Segmentation seg;
  seg.grid = contents.grid;
  seg.labels.resize(contents.payload.size());
  std::memcpy(seg.labels.data(), contents.payload.data(), contents.payload.size());
  for (std::size_t i = 0; i < seg.labels.size(); ++i) {
    if (seg.labels[i] > 1) {
      throw ParseError(path + ": segmentation labels must be 0 or 1 (voxel " + std::to_string(i) +
                       " is " + std::to_string(int(seg.labels[i])) + ")");
    }
  }
  return seg;
}

void write_sdf_volume(const std::string& path, const SdfVolume& vol) {
  if (vol.values.size() != vol.grid.voxel_count()) {
    throw ShapeMismatchError("distance field value count does not match its grid");
  }
  write_volume_file(path, vol.grid, "f32", vol.values.data(), vol.values.size() * sizeof(float));
}

SdfVolume read_sdf_volume(const std::string& path) {
  VolumeFileContents contents = read_volume_file(path);
  if (contents.dtype != "f32") {
    throw ParseError(path + ": expected an f32 distance volume, found dtype " + contents.dtype);
  }
  SdfVolume vol;
  vol.grid = contents.grid;
  vol.values.resize(contents.payload.size() / sizeof(float));
  std::memcpy(vol.values.data(), contents.payload.data(), contents.payload.size());
  return vol;
}

void write_particles(const std::string& path, const ControlPointSet& cps) {
  if (cps.points.size() != cps.normals.size()) {
    throw ShapeMismatchError("particle points and normals differ in count");
  }
  auto out = open_for_writing(path);
  for (std::size_t j = 0; j < cps.points.size(); ++j) {
    const Vec3& p = cps.points[j];
    const Vec3& n = cps.normals[j];
    out << format_real(p[0]) << ' ' << format_real(p[1]) << ' ' << format_real(p[2]) << ' '
        << format_real(n[0]) << ' ' << format_real(n[1]) << ' ' << format_real(n[2]) << '\n';
  }
  finish_writing(out, path);
}

ControlPointSet read_particles(const std::string& path) {
  std::string text = read_entire_file(path);
  ControlPointSet cps;
  std::istringstream stream(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(stream, raw)) {
    ++line_no;
    auto tokens = split_tokens(raw);
    if (tokens.empty()) continue;
    if (tokens.size() != 6) {
      throw ParseError(path + ": particle line needs 6 numbers (x y z nx ny nz)", line_no);
    }
    Vec3 p, n;
    for (int a = 0; a < 3; ++a) p[a] = parse_real(tokens[a], "particle position", line_no);
    for (int a = 0; a < 3; ++a) n[a] = parse_real(tokens[3 + a], "particle normal", line_no);
    cps.points.push_back(p);
    cps.normals.push_back(n);
  }
  return cps;
}

void write_mesh(const std::string& path, const TriangleMesh& mesh) {
  auto out = open_for_writing(path);
  for (const Vec3& v : mesh.vertices) {
    out << "v " << format_real(v[0]) << ' ' << format_real(v[1]) << ' ' << format_real(v[2])
        << '\n';
  }
  for (const auto& tri : mesh.triangles) {
    out << "f " << tri[0] + 1 << ' ' << tri[1] + 1 << ' ' << tri[2] + 1 << '\n';
  }
  finish_writing(out, path);
}

TriangleMesh read_mesh(const std::string& path) {
  std::string text = read_entire_file(path);
  TriangleMesh mesh;
  std::istringstream stream(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(stream, raw)) {
    ++line_no;
    auto tokens = split_tokens(raw);
    if (tokens.empty() || tokens[0][0] == '#') continue;
    if (tokens[0] == "v") {
      if (tokens.size() != 4) {
        throw ParseError(path + ": vertex line needs 3 coordinates", line_no);
      }
      Vec3 v;
      for (int a = 0; a < 3; ++a) v[a] = parse_real(tokens[1 + a], "vertex coordinate", line_no);
      mesh.vertices.push_back(v);
    } else if (tokens[0] == "f") {
      if (tokens.size() != 4) {
        throw ParseError(path + ": face line needs 3 vertex indices", line_no);
      }
      std::array<int, 3> tri;
      for (int c = 0; c < 3; ++c) {
        long long index = parse_int(tokens[1 + c], "face index", line_no);
        if (index < 1 || index > static_cast<long long>(mesh.vertices.size())) {
          throw ParseError(path + ": face index " + std::to_string(index) + " out of range",
                           line_no);
        }
        tri[c] = static_cast<int>(index) - 1;
      }
      mesh.triangles.push_back(tri);
    } else {
      throw ParseError(path + ": unsupported line type '" + tokens[0] + "'", line_no);
    }
  }
  return mesh;
}

void write_ssm_model(const std::string& path, const SsmModel& model) {
  auto out = open_for_writing(path);
  out << "num_points = " << model.num_points << '\n';
  out << "num_shapes = " << model.num_shapes << '\n';
  out << "num_eigenvalues = " << model.eigenvalues.size() << '\n';
  out << "num_modes = " << model.modes.size() << '\n';
  out << "mean =";
  for (Eigen::Index i = 0; i < model.mean.size(); ++i) out << ' ' << format_real(model.mean[i]);
  out << '\n';
  out << "eigenvalues =";
  for (double ev : model.eigenvalues) out << ' ' << format_real(ev);
  out << '\n';
  for (std::size_t m = 0; m < model.modes.size(); ++m) {
    out << "mode_" << m << " =";
    const Eigen::VectorXd& mode = model.modes[m];
    for (Eigen::Index i = 0; i < mode.size(); ++i) out << ' ' << format_real(mode[i]);
    out << '\n';
  }
  finish_writing(out, path);
}

SsmModel read_ssm_model(const std::string& path) {
  auto map = unique_key_map(scan_key_values(read_entire_file(path)));
  SsmModel model;

  const KeyValue& points_kv = require_key(map, "num_points", path);
  model.num_points = parse_bounded_int(points_kv.value, "num_points", points_kv.line);
  if (model.num_points < 1) throw ParseError(path + ": num_points must be >= 1", points_kv.line);

  const KeyValue& shapes_kv = require_key(map, "num_shapes", path);
  model.num_shapes = parse_bounded_int(shapes_kv.value, "num_shapes", shapes_kv.line);
  if (model.num_shapes < 2) throw ParseError(path + ": num_shapes must be >= 2", shapes_kv.line);

  const KeyValue& eig_count_kv = require_key(map, "num_eigenvalues", path);
  int num_eigenvalues = parse_bounded_int(eig_count_kv.value, "num_eigenvalues", eig_count_kv.line);
  const KeyValue& mode_count_kv = require_key(map, "num_modes", path);
  int num_modes = parse_bounded_int(mode_count_kv.value, "num_modes", mode_count_kv.line);
  if (num_eigenvalues < 0 || num_modes < 0 || num_modes > num_eigenvalues) {
    throw ParseError(path + ": invalid eigenvalue/mode counts", mode_count_kv.line);
  }

  std::size_t dim = static_cast<std::size_t>(model.num_points) * 3;
  auto mean = parse_real_array(require_key(map, "mean", path), dim, path + ": mean");
  model.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(dim));

  model.eigenvalues = parse_real_array(require_key(map, "eigenvalues", path),
                                       static_cast<std::size_t>(num_eigenvalues),
                                       path + ": eigenvalues");

  model.modes.reserve(static_cast<std::size_t>(num_modes));
  for (int m = 0; m < num_modes; ++m) {
    std::string key = "mode_" + std::to_string(m);
    auto mode = parse_real_array(require_key(map, key, path), dim, path + ": " + key);
    model.modes.push_back(
        Eigen::Map<const Eigen::VectorXd>(mode.data(), static_cast<Eigen::Index>(dim)));
  }
  return model;
}

FitRunConfig read_fit_config(const std::string& path) {
  auto entries = scan_key_values(read_entire_file(path));
  FitRunConfig config;
  std::map<std::string, int> seen;
  for (const auto& entry : entries) {
    const std::string& key = entry.key;
    const std::string& value = entry.value;
    int line = entry.line;
    if (key == "input") {
      config.inputs.push_back(value);
      continue;
    }
    if (++seen[key] > 1) throw ParseError(path + ": duplicate key '" + key + "'", line);
    if (key == "num_points") {
      config.fit.num_points = parse_bounded_int(value, key, line);
    } else if (key == "band_halfwidth") {
      config.fit.band_halfwidth = parse_real(value, key, line);
    } else if (key == "band_samples") {
      config.fit.band_samples = parse_bounded_int(value, key, line);
    } else if (key == "kernel") {
      try {
        config.fit.kernel = kernel_from_name(value);
      } catch (const ConfigError& e) {
        throw ParseError(path + ": " + e.what(), line);
      }
    } else if (key == "alpha") {
      config.fit.weights.alpha = parse_real(value, key, line);
    } else if (key == "beta") {
      config.fit.weights.beta = parse_real(value, key, line);
    } else if (key == "gamma") {
      config.fit.weights.gamma = parse_real(value, key, line);
    } else if (key == "zeta") {
      config.fit.weights.zeta = parse_real(value, key, line);
    } else if (key == "entropy_eps") {
      config.fit.entropy_eps = parse_real(value, key, line);
    } else if (key == "epochs") {
      config.fit.epochs = parse_bounded_int(value, key, line);
    } else if (key == "minibatch") {
      config.fit.minibatch = parse_bounded_int(value, key, line);
    } else if (key == "learning_rate") {
      config.fit.learning_rate = parse_real(value, key, line);
    } else if (key == "adam_beta1") {
      config.fit.adam_beta1 = parse_real(value, key, line);
    } else if (key == "adam_beta2") {
      config.fit.adam_beta2 = parse_real(value, key, line);
    } else if (key == "adam_eps") {
      config.fit.adam_eps = parse_real(value, key, line);
    } else if (key == "seed") {
      config.fit.seed = parse_u64(value, key, line);
    } else if (key == "output_dir") {
      config.output_dir = value;
    } else {
      throw ParseError(path + ": unknown config key '" + key + "'", line);
    }
  }
  return config;
}

void write_resolved_config(const std::string& path, const FitRunConfig& config) {
  auto out = open_for_writing(path);
  const FitConfig& fit = config.fit;
  out << "num_points = " << fit.num_points << '\n';
  out << "band_halfwidth = " << format_real(fit.band_halfwidth) << '\n';
  out << "band_samples = " << fit.band_samples << '\n';
  out << "kernel = " << kernel_name(fit.kernel) << '\n';
  out << "alpha = " << format_real(fit.weights.alpha) << '\n';
  out << "beta = " << format_real(fit.weights.beta) << '\n';
  out << "gamma = " << format_real(fit.weights.gamma) << '\n';
  out << "zeta = " << format_real(fit.weights.zeta) << '\n';
  out << "entropy_eps = " << format_real(fit.entropy_eps) << '\n';
  out << "epochs = " << fit.epochs << '\n';
  out << "minibatch = " << fit.minibatch << '\n';
  out << "learning_rate = " << format_real(fit.learning_rate) << '\n';
  out << "adam_beta1 = " << format_real(fit.adam_beta1) << '\n';
  out << "adam_beta2 = " << format_real(fit.adam_beta2) << '\n';
  out << "adam_eps = " << format_real(fit.adam_eps) << '\n';
  out << "seed = " << fit.seed << '\n';
  for (const std::string& input : config.inputs) out << "input = " << input << '\n';
  if (!config.output_dir.empty()) out << "output_dir = " << config.output_dir << '\n';
  finish_writing(out, path);
}

void write_fit_log(const std::string& path, const std::vector<LossBreakdown>& history) {
  auto out = open_for_writing(path);
  out << "epoch,surface,normal,sampling,correspondence,total\n";
  for (std::size_t e = 0; e < history.size(); ++e) {
    const LossBreakdown& row = history[e];
    out << e + 1 << ',' << format_real(row.surface) << ',' << format_real(row.normal) << ','
        << format_real(row.sampling) << ',' << format_real(row.correspondence) << ','
        << format_real(row.total) << '\n';
  }
  finish_writing(out, path);
}

}  // namespace rbfssm
