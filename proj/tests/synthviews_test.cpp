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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include <gtest/gtest.h>

#include "hvp/synthviews.hpp"

namespace fs = std::filesystem;
using namespace hvp::synth;

namespace {

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("hvp_synth_" + name);
  fs::remove_all(dir);
  return dir;
}

Mesh single_triangle_facing(const Vec3& cam) {
  // Large triangle through the origin in the plane orthogonal to `cam`.
  const auto basis = camera_basis(cam);
  Mesh m;
  m.vertices = {(-0.5) * basis.right - 0.5 * basis.up, 0.6 * basis.right - 0.4 * basis.up, 0.7 * basis.up};
  m.triangles = {{0, 1, 2}};
  return m;
}

}  // namespace

TEST(Rig, TwentyUnitVectorsInTenAntipodalPairs) {
  const auto rig = make_dodecahedron_rig();
  std::set<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < kViews; ++i) {
    EXPECT_NEAR(norm(rig.positions[i]), 1.0, 1e-12);
    const auto j = rig.opposite[i];
    EXPECT_NE(j, i);
    EXPECT_EQ(rig.opposite[j], i);
    for (int a = 0; a < 3; ++a) EXPECT_EQ(rig.positions[j][a], -rig.positions[i][a]);
    pairs.insert({std::min(i, j), std::max(i, j)});
  }
  EXPECT_EQ(pairs.size(), 10u);
}

TEST(Rig, CubeCornerOppositeIsNegatedCorner) {
  const auto rig = make_dodecahedron_rig();
  const double s = 1.0 / std::sqrt(3.0);
  auto it = std::find_if(rig.positions.begin(), rig.positions.end(), [&](const Vec3& p) {
    return std::abs(p[0] - s) < 1e-12 && std::abs(p[1] - s) < 1e-12 && std::abs(p[2] - s) < 1e-12;
  });
  ASSERT_NE(it, rig.positions.end());
  const auto& q = rig.positions[rig.opposite[static_cast<std::size_t>(it - rig.positions.begin())]];
  for (int a = 0; a < 3; ++a) EXPECT_NEAR(q[a], -s, 1e-12);
}

TEST(Rig, PositionsAreDodecahedronVertices) {
  // Every vertex of a regular dodecahedron has exactly 3 nearest neighbours.
  const auto rig = make_dodecahedron_rig();
  double best = 10;
  for (std::size_t i = 0; i < kViews; ++i)
    for (std::size_t j = i + 1; j < kViews; ++j) best = std::min(best, norm(rig.positions[i] - rig.positions[j]));
  for (std::size_t i = 0; i < kViews; ++i) {
    int n = 0;
    for (std::size_t j = 0; j < kViews; ++j)
      if (i != j && std::abs(norm(rig.positions[i] - rig.positions[j]) - best) < 1e-9) ++n;
    EXPECT_EQ(n, 3);
  }
}

TEST(Shapes, BoxTessellation) {
  const auto m = base_shape(0);
  EXPECT_EQ(m.vertices.size(), 8u);
  EXPECT_EQ(m.triangles.size(), 12u);
  const auto jittered = make_shape(0, 5);
  EXPECT_EQ(jittered.vertices.size(), 8u);
  EXPECT_EQ(jittered.triangles.size(), 12u);
}

TEST(Shapes, DeterministicPerSeed) {
  for (int c = 0; c < kNumShapeClasses; ++c) {
    const auto a = make_shape(c, 17), b = make_shape(c, 17), other = make_shape(c, 18);
    EXPECT_EQ(a.vertices, b.vertices);
    EXPECT_EQ(a.triangles, b.triangles);
    EXPECT_NE(a.vertices, other.vertices);
  }
}

TEST(Shapes, TriangleIndicesInRangeAndNormalized) {
  for (int c = 0; c < kNumShapeClasses; ++c) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto m = make_shape(c, seed);
      EXPECT_EQ(m.class_id, c);
      for (const auto& t : m.triangles)
        for (auto i : t) EXPECT_LT(i, m.vertices.size());
      EXPECT_NEAR(m.max_norm(), 1.0, 1e-12);
    }
  }
}

TEST(Shapes, SphereNormEnvelopeBeforeNormalization) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto var = sample_variation(seed);
    for (double s : var.scale) {
      EXPECT_GE(s, 0.6);
      EXPECT_LE(s, 1.0);
    }
    const auto raw = apply_variation(base_shape(1), var);
    const double slack = var.jitter * std::sqrt(3.0);
    const double lo = *std::min_element(var.scale.begin(), var.scale.end());
    const double hi = *std::max_element(var.scale.begin(), var.scale.end());
    for (const auto& v : raw.vertices) {
      EXPECT_GE(norm(v), lo - slack);
      EXPECT_LE(norm(v), hi + slack);
    }
    auto m = raw;
    normalize(m);
    EXPECT_DOUBLE_EQ(m.max_norm(), 1.0);
  }
}

TEST(Shapes, UnknownClassIsConfigError) {
  EXPECT_THROW(make_shape(4, 0), hvp::ConfigError);
  EXPECT_THROW(make_shape(-1, 0), hvp::ConfigError);
}

TEST(Render, EmptyMeshIsBlack) {
  const auto img = render_view(Mesh{}, {0, 0, 1}, 16);
  EXPECT_TRUE(std::all_of(img.begin(), img.end(), [](float v) { return v == 0.0f; }));
}

TEST(Render, FacingTriangleCoversCenter) {
  const auto rig = make_dodecahedron_rig();
  for (const auto& cam : rig.positions) {
    const auto img = render_view(single_triangle_facing(cam), cam, 33);
    EXPECT_GT(img[16 * 33 + 16], 0.99f);  // facing the light: cos = 1
  }
}

TEST(Render, DegenerateTriangleSkipped) {
  Mesh m;
  m.vertices = {{0, 0, 0}, {0.5, 0, 0}, {1, 0, 0}};
  m.triangles = {{0, 1, 2}};
  const auto img = render_view(m, {0, 0, 1}, 16);
  EXPECT_TRUE(std::all_of(img.begin(), img.end(), [](float v) { return v == 0.0f; }));
}

TEST(Render, PointMirrorFromAntipodeIsVerticalFlip) {
  // Mirroring the mesh through the origin and viewing from -p reproduces the
  // view from p up to a flip about the horizontal image axis.
  const auto rig = make_dodecahedron_rig();
  const std::size_t w = 40;
  for (int c = 0; c < kNumShapeClasses; ++c) {
    const auto mesh = make_shape(c, 3);
    auto mirrored = mesh;
    for (auto& v : mirrored.vertices) v = -v;
    for (const auto& p : rig.positions) {
      const auto a = render_view(mesh, p, w);
      const auto b = render_view(mirrored, -p, w);
      for (std::size_t r = 0; r < w; ++r)
        for (std::size_t col = 0; col < w; ++col) ASSERT_EQ(a[r * w + col], b[(w - 1 - r) * w + col]);
    }
  }
}

TEST(Render, PointMirrorOfSymmetricMeshFromAntipodeIsIdentical) {
  // A centred box is symmetric about z = 0, which is the horizontal image
  // plane for any camera on the equator.
  auto box = base_shape(0);
  for (auto& v : box.vertices) v = Vec3{0.31 * v[0], 0.47 * v[1], 0.53 * v[2]};
  auto mirrored = box;
  for (auto& v : mirrored.vertices) v = -v;
  const Vec3 p = normalized({1, 0.37, 0});
  const auto a = render_view(box, p, 48);
  const auto b = render_view(mirrored, -p, 48);
  EXPECT_EQ(a, b);
}

TEST(Render, UpVectorFallbackAtPoles) {
  const auto top = camera_basis({0, 0, 1});
  EXPECT_NEAR(std::abs(top.up[0]), 1.0, 1e-12);
  const auto side = camera_basis({1, 0, 0});
  EXPECT_NEAR(side.up[2], 1.0, 1e-12);
  const auto img = render_view(make_shape(1, 0), {0, 0, 1}, 16);
  EXPECT_GT(*std::max_element(img.begin(), img.end()), 0.0f);
}

TEST(Render, DeterministicAndInRange) {
  const auto mesh = make_shape(3, 9);
  const auto a = render_view(mesh, {0.6, 0, 0.8}, 64);
  const auto b = render_view(mesh, {0.6, 0, 0.8}, 64);
  EXPECT_EQ(a, b);
  for (float v : a) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Dataset, DefaultCountsAndCoverage) {
  DatasetConfig cfg;
  cfg.view_size = 32;  // same geometry, faster
  const auto ds = generate_dataset(cfg);
  ASSERT_EQ(ds.shapes.size(), 48u);
  int train = 0, test = 0;
  for (std::size_t s = 0; s < ds.shapes.size(); ++s) {
    const auto& vs = ds.shapes[s];
    EXPECT_EQ(vs.shape_id(), static_cast<int>(s));
    (vs.split == Split::train ? train : test)++;
    ASSERT_EQ(vs.views.pixels.size(), kViews * 32 * 32);
    for (std::size_t v = 0; v < kViews; ++v) {
      const auto img = vs.views.view(v);
      EXPECT_TRUE(std::any_of(img.begin(), img.end(), [](float x) { return x > 0; }));
      EXPECT_TRUE(std::any_of(img.begin(), img.end(), [](float x) { return x == 0; }));
      EXPECT_TRUE(std::all_of(img.begin(), img.end(), [](float x) { return x >= 0 && x <= 1; }));
    }
  }
  EXPECT_EQ(train, 32);
  EXPECT_EQ(test, 16);
  EXPECT_EQ(ds.unlabeled(true, false).size(), 32u);
  EXPECT_EQ(ds.unlabeled(false, true).size(), 16u);
}

TEST(Dataset, PersistenceIsDeterministicAndRoundTrips) {
  DatasetConfig cfg;
  cfg.view_size = 16;
  cfg.train_per_class = 2;
  cfg.test_per_class = 1;
  cfg.seed = 7;
  const auto a = temp_dir("a"), b = temp_dir("b");
  write_dataset(generate_dataset(cfg), a);
  write_dataset(generate_dataset(cfg), b);
  EXPECT_EQ(dataset_hash(a), dataset_hash(b));
  for (const auto& entry : fs::directory_iterator(a))
    EXPECT_EQ(hvp::io::read_file(entry.path()), hvp::io::read_file(b / entry.path().filename()));

  const auto loaded = read_dataset(a);
  const auto fresh = generate_dataset(cfg);
  ASSERT_EQ(loaded.shapes.size(), fresh.shapes.size());
  for (std::size_t i = 0; i < fresh.shapes.size(); ++i) {
    EXPECT_EQ(loaded.shapes[i].views.pixels, fresh.shapes[i].views.pixels);
    EXPECT_EQ(loaded.shapes[i].class_id, fresh.shapes[i].class_id);
    EXPECT_EQ(loaded.shapes[i].split, fresh.shapes[i].split);
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Dataset, MissingDirectoryIsIoError) {
  EXPECT_THROW(read_dataset(temp_dir("missing")), hvp::IoError);
}

TEST(ViewPairs, PairingSymmetryAndPermutation) {
  DatasetConfig cfg;
  cfg.view_size = 16;
  cfg.train_per_class = 1;
  cfg.test_per_class = 0;
  cfg.classes = 1;
  const auto ds = generate_dataset(cfg);
  const auto rig = make_dodecahedron_rig();
  const auto pairs = view_pairs(ds.shapes[0].views, rig);
  ASSERT_EQ(pairs.size(), 20u);
  std::multiset<std::vector<float>> cur, opp;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_EQ(pairs[i].current_index, i);
    const auto& o = pairs[rig.opposite[i]];
    EXPECT_EQ(pairs[i].opposite.data(), o.current.data());
    cur.insert({pairs[i].current.begin(), pairs[i].current.end()});
    opp.insert({pairs[i].opposite.begin(), pairs[i].opposite.end()});
  }
  EXPECT_EQ(cur, opp);
}

TEST(Pgm, RoundTripQuantizesLinearly) {
  const auto dir = temp_dir("pgm");
  fs::create_directories(dir);
  std::vector<float> px{0.0f, 1.0f, 0.5f, 0.25f, 0.999f, 0.001f};
  write_pgm(dir / "x.pgm", px, 3, 2);
  const auto img = read_pgm(dir / "x.pgm");
  ASSERT_EQ(img.width, 3u);
  ASSERT_EQ(img.height, 2u);
  for (std::size_t i = 0; i < px.size(); ++i) EXPECT_NEAR(img.pixels[i], px[i], 0.5 / 255 + 1e-7);
  EXPECT_EQ(img.pixels[0], 0.0f);
  EXPECT_EQ(img.pixels[1], 1.0f);
  fs::remove_all(dir);
}
