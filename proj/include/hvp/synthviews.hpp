// Copyright 2026 The HVP Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hvp/container.hpp"
#include "hvp/errors.hpp"

namespace hvp::synth {

inline constexpr std::size_t kViews = 20;

using Vec3 = std::array<double, 3>;

inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator-(const Vec3& a) { return {-a[0], -a[1], -a[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(const Vec3& a) {
  const double n = norm(a);
  return {a[0] / n, a[1] / n, a[2] / n};
}

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;
  int class_id = -1;

  double max_norm() const {
    double m = 0;
    for (const auto& v : vertices) m = std::max(m, norm(v));
    return m;
  }
};

/// Scales vertices so the farthest one sits on the unit sphere.
inline void normalize(Mesh& mesh) {
  const double m = mesh.max_norm();
  if (m == 0) return;
  for (auto& v : mesh.vertices) v = (1.0 / m) * v;
}

// ---------------------------------------------------------------------------
// Cameras

struct CameraRig {
  std::array<Vec3, kViews> positions;
  std::array<std::size_t, kViews> opposite;
};

/// Cameras on the 20 vertices of a regular dodecahedron. Each family of
/// vertices is enumerated by sign bits, so the antipode of a vertex is the
/// one with every sign bit flipped.
inline CameraRig make_dodecahedron_rig() {
  const double phi = std::numbers::phi;
  const double inv = 1.0 / phi;
  CameraRig rig{};
  std::size_t idx = 0;
  auto sgn = [](std::size_t bits, int b) { return ((bits >> b) & 1u) ? -1.0 : 1.0; };
  // (+-1, +-1, +-1)
  for (std::size_t s = 0; s < 8; ++s, ++idx) {
    rig.positions[idx] = normalized({sgn(s, 2), sgn(s, 1), sgn(s, 0)});
    rig.opposite[idx] = 0 + (7 - s);
  }
  // (0, +-1/phi, +-phi), (+-1/phi, +-phi, 0), (+-phi, 0, +-1/phi)
  const std::array<std::array<double, 3>, 3> families{{{0, inv, phi}, {inv, phi, 0}, {phi, 0, inv}}};
  for (const auto& fam : families) {
    const std::size_t base = idx;
    // The two nonzero coordinates carry the sign bits.
    std::array<int, 2> nz{};
    int k = 0;
    for (int c = 0; c < 3; ++c)
      if (fam[static_cast<std::size_t>(c)] != 0) nz[static_cast<std::size_t>(k++)] = c;
    for (std::size_t s = 0; s < 4; ++s, ++idx) {
      Vec3 v{fam[0], fam[1], fam[2]};
      v[static_cast<std::size_t>(nz[0])] *= sgn(s, 1);
      v[static_cast<std::size_t>(nz[1])] *= sgn(s, 0);
      rig.positions[idx] = normalized(v);
      rig.opposite[idx] = base + (3 - s);
    }
  }
  return rig;
}

// ---------------------------------------------------------------------------
// Procedural shapes

enum class ShapeClass : int { box = 0, sphere = 1, cylinder = 2, cone = 3 };
inline constexpr int kNumShapeClasses = 4;

inline const char* class_name(int class_id) {
  switch (class_id) {
    case 0: return "box";
    case 1: return "sphere";
    case 2: return "cylinder";
    case 3: return "cone";
    default: return "unknown";
  }
}

/// Per-instance variation drawn from a shape seed.
struct ShapeVariation {
  Vec3 scale{1, 1, 1};        // anisotropic, each axis in [0.6, 1.0]
  double jitter = 0.0;        // max absolute per-coordinate vertex offset
  std::uint64_t jitter_seed = 0;
};

inline constexpr double kJitter = 0.02;

inline ShapeVariation sample_variation(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> s(0.6, 1.0);
  ShapeVariation v;
  v.scale = {s(rng), s(rng), s(rng)};
  v.jitter = kJitter;
  v.jitter_seed = rng();
  return v;
}

namespace detail {

inline constexpr std::uint32_t kSlices = 16;
inline constexpr std::uint32_t kStacks = 8;

inline Mesh box() {
  Mesh m;
  for (int i = 0; i < 8; ++i)
    m.vertices.push_back({(i & 4) ? 1.0 : -1.0, (i & 2) ? 1.0 : -1.0, (i & 1) ? 1.0 : -1.0});
  const std::array<std::array<std::uint32_t, 4>, 6> faces{{
      {0, 1, 3, 2}, {4, 6, 7, 5}, {0, 4, 5, 1}, {2, 3, 7, 6}, {0, 2, 6, 4}, {1, 5, 7, 3}}};
  for (const auto& f : faces) {
    m.triangles.push_back({f[0], f[1], f[2]});
    m.triangles.push_back({f[0], f[2], f[3]});
  }
  return m;
}

inline Mesh sphere() {
  Mesh m;
  m.vertices.push_back({0, 0, 1});
  for (std::uint32_t i = 1; i < kStacks; ++i) {
    const double theta = std::numbers::pi * i / kStacks;
    for (std::uint32_t j = 0; j < kSlices; ++j) {
      const double p = 2 * std::numbers::pi * j / kSlices;
      m.vertices.push_back({std::sin(theta) * std::cos(p), std::sin(theta) * std::sin(p), std::cos(theta)});
    }
  }
  m.vertices.push_back({0, 0, -1});
  const std::uint32_t south = static_cast<std::uint32_t>(m.vertices.size() - 1);
  auto ring = [](std::uint32_t i, std::uint32_t j) { return 1 + (i - 1) * kSlices + (j % kSlices); };
  for (std::uint32_t j = 0; j < kSlices; ++j) m.triangles.push_back({0, ring(1, j), ring(1, j + 1)});
  for (std::uint32_t i = 1; i + 1 < kStacks; ++i) {
    for (std::uint32_t j = 0; j < kSlices; ++j) {
      m.triangles.push_back({ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)});
      m.triangles.push_back({ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)});
    }
  }
  for (std::uint32_t j = 0; j < kSlices; ++j)
    m.triangles.push_back({south, ring(kStacks - 1, j + 1), ring(kStacks - 1, j)});
  return m;
}

inline Mesh cylinder() {
  Mesh m;
  for (std::uint32_t j = 0; j < kSlices; ++j) {
    const double p = 2 * std::numbers::pi * j / kSlices;
    m.vertices.push_back({std::cos(p), std::sin(p), 1});
    m.vertices.push_back({std::cos(p), std::sin(p), -1});
  }
  const std::uint32_t top = static_cast<std::uint32_t>(m.vertices.size());
  m.vertices.push_back({0, 0, 1});
  m.vertices.push_back({0, 0, -1});
  for (std::uint32_t j = 0; j < kSlices; ++j) {
    const std::uint32_t a = 2 * j, b = 2 * ((j + 1) % kSlices);
    m.triangles.push_back({a, a + 1, b + 1});
    m.triangles.push_back({a, b + 1, b});
    m.triangles.push_back({top, a, b});
    m.triangles.push_back({top + 1, b + 1, a + 1});
  }
  return m;
}

inline Mesh cone() {
  Mesh m;
  for (std::uint32_t j = 0; j < kSlices; ++j) {
    const double p = 2 * std::numbers::pi * j / kSlices;
    m.vertices.push_back({std::cos(p), std::sin(p), -1});
  }
  const std::uint32_t apex = kSlices, base = kSlices + 1;
  m.vertices.push_back({0, 0, 1});
  m.vertices.push_back({0, 0, -1});
  for (std::uint32_t j = 0; j < kSlices; ++j) {
    const std::uint32_t a = j, b = (j + 1) % kSlices;
    m.triangles.push_back({apex, a, b});
    m.triangles.push_back({base, b, a});
  }
  return m;
}

}  // namespace detail

/// Canonical (unscaled, unjittered) tessellation of a class.
inline Mesh base_shape(int class_id) {
  switch (class_id) {
    case 0: return detail::box();
    case 1: return detail::sphere();
    case 2: return detail::cylinder();
    case 3: return detail::cone();
    default:
      throw ConfigError("unknown shape class " + std::to_string(class_id) + " (expected 0.." +
                        std::to_string(kNumShapeClasses - 1) + ")");
  }
}

/// Applies scale and jitter without normalizing.
inline Mesh apply_variation(Mesh mesh, const ShapeVariation& var) {
  std::mt19937_64 rng(var.jitter_seed);
  std::uniform_real_distribution<double> j(-var.jitter, var.jitter);
  for (auto& v : mesh.vertices) {
    for (std::size_t a = 0; a < 3; ++a) v[a] = v[a] * var.scale[a] + j(rng);
  }
  return mesh;
}

inline Mesh make_shape(int class_id, std::uint64_t seed) {
  Mesh mesh = apply_variation(base_shape(class_id), sample_variation(seed));
  mesh.class_id = class_id;
  normalize(mesh);
  return mesh;
}

// ---------------------------------------------------------------------------
// Rendering

/// Orthographic camera basis. `forward` points from the camera to the origin.
struct CameraBasis {
  Vec3 forward, right, up;
};

inline CameraBasis camera_basis(const Vec3& cam_position) {
  CameraBasis b;
  b.forward = normalized(-cam_position);
  Vec3 world_up{0, 0, 1};
  if (std::abs(dot(b.forward, world_up)) > 1.0 - 1e-6) world_up = {1, 0, 0};
  const double along = dot(world_up, b.forward);
  b.up = normalized(world_up - along * b.forward);
  b.right = normalized(cross(b.forward, b.up));
  return b;
}

/// Z-buffered, flat Lambertian render of `mesh` seen from `cam_position`
/// (light at the camera, two-sided). The unit disk maps onto the W x W frame;
/// pixel centers are symmetric about the image center. Background is 0.
inline std::vector<float> render_view(const Mesh& mesh, const Vec3& cam_position, std::size_t size) {
  std::vector<float> image(size * size, 0.0f);
  if (size == 0) return image;
  std::vector<double> depth(size * size, std::numeric_limits<double>::infinity());
  const CameraBasis cam = camera_basis(cam_position);
  const double center = (static_cast<double>(size) - 1.0) / 2.0;
  const double pix = 2.0 / static_cast<double>(size);

  for (const auto& tri : mesh.triangles) {
    const Vec3& A = mesh.vertices[tri[0]];
    const Vec3& B = mesh.vertices[tri[1]];
    const Vec3& C = mesh.vertices[tri[2]];
    const Vec3 n = cross(B - A, C - A);
    const double n_len = norm(n);
    if (n_len == 0) continue;
    const float shade = static_cast<float>(std::abs(dot(n, cam.forward)) / n_len);

    const double ax = dot(A, cam.right), ay = dot(A, cam.up), az = dot(A, cam.forward);
    const double bx = dot(B, cam.right), by = dot(B, cam.up), bz = dot(B, cam.forward);
    const double cx = dot(C, cam.right), cy = dot(C, cam.up), cz = dot(C, cam.forward);
    const double area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
    if (area == 0) continue;

    const double min_x = std::min({ax, bx, cx}), max_x = std::max({ax, bx, cx});
    const double min_y = std::min({ay, by, cy}), max_y = std::max({ay, by, cy});
    // Screen coordinate s maps to pixel index s / pix + center (rows flip y).
    const long c0 = std::max(0L, static_cast<long>(std::floor(min_x / pix + center)));
    const long c1 = std::min(static_cast<long>(size) - 1, static_cast<long>(std::ceil(max_x / pix + center)));
    const long r0 = std::max(0L, static_cast<long>(std::floor(center - max_y / pix)));
    const long r1 = std::min(static_cast<long>(size) - 1, static_cast<long>(std::ceil(center - min_y / pix)));

    for (long row = r0; row <= r1; ++row) {
      const double py = (center - static_cast<double>(row)) * pix;
      for (long col = c0; col <= c1; ++col) {
        const double px = (static_cast<double>(col) - center) * pix;
        const double w0 = (bx - px) * (cy - py) - (by - py) * (cx - px);
        const double w1 = (cx - px) * (ay - py) - (cy - py) * (ax - px);
        const double w2 = (ax - px) * (by - py) - (ay - py) * (bx - px);
        const bool inside = (w0 >= 0 && w1 >= 0 && w2 >= 0) || (w0 <= 0 && w1 <= 0 && w2 <= 0);
        if (!inside) continue;
        const double z = (w0 * az + w1 * bz + w2 * cz) / area;
        const std::size_t idx = static_cast<std::size_t>(row) * size + static_cast<std::size_t>(col);
        if (z < depth[idx]) {
          depth[idx] = z;
          image[idx] = shade;
        }
      }
    }
  }
  return image;
}

// ---------------------------------------------------------------------------
// Dataset

/// One shape's 20 views, without any label.
struct ShapeViews {
  int shape_id = 0;
  std::size_t view_size = 0;
  std::vector<float> pixels;  // [view][row][col]

  std::span<const float> view(std::size_t i) const {
    const std::size_t n = view_size * view_size;
    return std::span<const float>(pixels).subspan(i * n, n);
  }
};

enum class Split { train, test };

inline const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

struct ViewSet {
  ShapeViews views;
  int class_id = 0;
  Split split = Split::train;

  int shape_id() const { return views.shape_id; }
};

struct DatasetConfig {
  int classes = kNumShapeClasses;
  int train_per_class = 8;
  int test_per_class = 4;
  std::size_t view_size = 64;
  std::uint64_t seed = 0;
};

struct Dataset {
  DatasetConfig config;
  std::vector<ViewSet> shapes;  // ordered by shape_id

  std::vector<ShapeViews> unlabeled(bool include_train, bool include_test) const {
    std::vector<ShapeViews> out;
    for (const auto& s : shapes) {
      if ((s.split == Split::train && include_train) || (s.split == Split::test && include_test))
        out.push_back(s.views);
    }
    return out;
  }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t shape_seed(std::uint64_t dataset_seed, int shape_id) {
  return splitmix64(splitmix64(dataset_seed) ^ static_cast<std::uint64_t>(shape_id));
}

inline ShapeViews render_all(const Mesh& mesh, const CameraRig& rig, int shape_id, std::size_t size) {
  ShapeViews sv;
  sv.shape_id = shape_id;
  sv.view_size = size;
  sv.pixels.reserve(kViews * size * size);
  for (const auto& p : rig.positions) {
    const auto img = render_view(mesh, p, size);
    sv.pixels.insert(sv.pixels.end(), img.begin(), img.end());
  }
  return sv;
}

inline void validate(const DatasetConfig& cfg) {
  if (cfg.classes < 1 || cfg.classes > kNumShapeClasses)
    throw ConfigError("classes must be in [1, " + std::to_string(kNumShapeClasses) + "]");
  if (cfg.train_per_class < 0 || cfg.test_per_class < 0 || cfg.train_per_class + cfg.test_per_class == 0)
    throw ConfigError("per-class shape counts must be nonnegative and not both zero");
  if (cfg.view_size == 0) throw ConfigError("view_size must be positive");
}

/// Shape ids run over train shapes first (class-major), then test shapes.
inline Dataset generate_dataset(const DatasetConfig& cfg) {
  validate(cfg);
  Dataset ds;
  ds.config = cfg;
  const CameraRig rig = make_dodecahedron_rig();
  int next_id = 0;
  for (Split split : {Split::train, Split::test}) {
    const int per_class = split == Split::train ? cfg.train_per_class : cfg.test_per_class;
    for (int c = 0; c < cfg.classes; ++c) {
      for (int i = 0; i < per_class; ++i) {
        const int id = next_id++;
        const Mesh mesh = make_shape(c, shape_seed(cfg.seed, id));
        ViewSet vs;
        vs.views = render_all(mesh, rig, id, cfg.view_size);
        vs.class_id = c;
        vs.split = split;
        ds.shapes.push_back(std::move(vs));
      }
    }
  }
  return ds;
}

/// A view and the view from the antipodal camera. Spans alias the ShapeViews.
struct ViewPair {
  std::size_t current_index = 0;
  std::span<const float> current;
  std::span<const float> opposite;
};

inline std::vector<ViewPair> view_pairs(const ShapeViews& views, const CameraRig& rig) {
  std::vector<ViewPair> pairs;
  pairs.reserve(kViews);
  for (std::size_t i = 0; i < kViews; ++i) pairs.push_back({i, views.view(i), views.view(rig.opposite[i])});
  return pairs;
}

// ---------------------------------------------------------------------------
// Persistence: manifest.json + one little-endian float32 file per shape.

inline std::string shape_file_name(int shape_id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "shape_%05d.f32", shape_id);
  return buf;
}

inline nlohmann::json dataset_manifest(const Dataset& ds) {
  using nlohmann::json;
  const CameraRig rig = make_dodecahedron_rig();
  json m;
  m["format"] = "hvp-dataset";
  m["version"] = 1;
  m["classes"] = ds.config.classes;
  json names = json::array();
  for (int c = 0; c < ds.config.classes; ++c) names.push_back(class_name(c));
  m["class_names"] = names;
  m["train_per_class"] = ds.config.train_per_class;
  m["test_per_class"] = ds.config.test_per_class;
  m["view_size"] = ds.config.view_size;
  m["views"] = kViews;
  m["seed"] = ds.config.seed;
  m["layout"] = "float32 little-endian [view][row][col]";
  json positions = json::array();
  for (const auto& p : rig.positions) positions.push_back({p[0], p[1], p[2]});
  m["rig_positions"] = positions;
  m["rig_opposite"] = rig.opposite;
  json shapes = json::array();
  for (const auto& s : ds.shapes) {
    shapes.push_back({{"shape_id", s.shape_id()},
                      {"class_id", s.class_id},
                      {"split", split_name(s.split)},
                      {"file", shape_file_name(s.shape_id())}});
  }
  m["shapes"] = shapes;
  return m;
}

inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& s : ds.shapes) io::write_f32_file(dir / shape_file_name(s.shape_id()), s.views.pixels);
  io::write_file(dir / "manifest.json", dataset_manifest(ds).dump(1) + "\n");
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  using nlohmann::json;
  json m;
  try {
    m = json::parse(io::read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw IoError((dir / "manifest.json").string() + ": " + e.what());
  }
  Dataset ds;
  try {
    ds.config.classes = m.at("classes").get<int>();
    ds.config.train_per_class = m.at("train_per_class").get<int>();
    ds.config.test_per_class = m.at("test_per_class").get<int>();
    ds.config.view_size = m.at("view_size").get<std::size_t>();
    ds.config.seed = m.at("seed").get<std::uint64_t>();
    if (m.at("views").get<std::size_t>() != kViews) throw IoError("dataset must have 20 views per shape");
    for (const auto& e : m.at("shapes")) {
      ViewSet vs;
      vs.views.shape_id = e.at("shape_id").get<int>();
      vs.views.view_size = ds.config.view_size;
      vs.class_id = e.at("class_id").get<int>();
      vs.split = e.at("split").get<std::string>() == "test" ? Split::test : Split::train;
      vs.views.pixels = io::read_f32_file(dir / e.at("file").get<std::string>());
      const std::size_t expected = kViews * ds.config.view_size * ds.config.view_size;
      if (vs.views.pixels.size() != expected) {
        throw IoError(e.at("file").get<std::string>() + ": expected " + std::to_string(expected) +
                      " floats, found " + std::to_string(vs.views.pixels.size()));
      }
      ds.shapes.push_back(std::move(vs));
    }
  } catch (const json::exception& e) {
    throw IoError((dir / "manifest.json").string() + ": malformed manifest: " + e.what());
  }
  return ds;
}

/// FNV-1a over the manifest and every shape file, in manifest order.
inline std::uint64_t dataset_hash(const std::filesystem::path& dir) {
  std::uint64_t h = io::fnv1a(io::read_file(dir / "manifest.json"));
  const auto m = nlohmann::json::parse(io::read_file(dir / "manifest.json"));
  for (const auto& e : m.at("shapes")) h = io::fnv1a(io::read_file(dir / e.at("file").get<std::string>()), h);
  return h;
}

// ---------------------------------------------------------------------------
// PGM (P5, 8-bit) export; [0,1] maps linearly onto [0,255].

inline std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

inline void write_pgm(const std::filesystem::path& path, std::span<const float> pixels, std::size_t width,
                      std::size_t height) {
  if (pixels.size() != width * height) throw ShapeError("write_pgm: pixel count does not match size");
  std::string bytes = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  for (float v : pixels) bytes.push_back(static_cast<char>(to_byte(v)));
  io::write_file(path, bytes);
}

struct PgmImage {
  std::size_t width = 0, height = 0;
  std::vector<float> pixels;  // in [0,1]
};

inline PgmImage read_pgm(const std::filesystem::path& path) {
  const std::string bytes = io::read_file(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  if (token() != "P5") throw IoError(path.string() + ": not a P5 PGM");
  PgmImage img;
  img.width = std::stoul(token());
  img.height = std::stoul(token());
  if (token() != "255") throw IoError(path.string() + ": only maxval 255 is supported");
  ++pos;  // single whitespace before the raster
  if (bytes.size() - pos != img.width * img.height) throw IoError(path.string() + ": truncated raster");
  img.pixels.resize(img.width * img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    img.pixels[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / 255.0f;
  return img;
}

}  // namespace hvp::synth
