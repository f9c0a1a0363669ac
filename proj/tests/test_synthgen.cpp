#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <queue>

#include "pathmamba/synthgen.hpp"

using namespace pathmamba;
namespace fs = std::filesystem;

namespace {

std::size_t components8(const BinaryMask& m) {
  std::vector<std::uint8_t> seen(m.bits.size(), 0);
  std::size_t n = 0;
  for (std::size_t s = 0; s < m.bits.size(); ++s) {
    if (!m.bits[s] || seen[s]) continue;
    ++n;
    std::queue<std::size_t> q;
    q.push(s);
    seen[s] = 1;
    while (!q.empty()) {
      const long r = static_cast<long>(q.front() / m.width), c = static_cast<long>(q.front() % m.width);
      q.pop();
      for (long dr = -1; dr <= 1; ++dr)
        for (long dc = -1; dc <= 1; ++dc) {
          if (!m.get(r + dr, c + dc)) continue;
          const std::size_t j = static_cast<std::size_t>(r + dr) * m.width + static_cast<std::size_t>(c + dc);
          if (!seen[j]) {
            seen[j] = 1;
            q.push(j);
          }
        }
    }
  }
  return n;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pathmamba_synth_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(SceneConfig, Validation) {
  SceneConfig c;
  EXPECT_NO_THROW(c.validate());
  c.size = 16;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SceneConfig{};
  c.road_width = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SceneConfig{};
  c.n_roads = {3, 2};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(SceneConfig, JsonRoundTrip) {
  SceneConfig c;
  c.size = 96;
  c.dashed_mode = true;
  c.seed = 0xFFFFFFFFFFFFull;
  c.n_occluders = {0, 1};
  const SceneConfig r = nlohmann::json(c).get<SceneConfig>();
  EXPECT_EQ(r.size, 96u);
  EXPECT_TRUE(r.dashed_mode);
  EXPECT_EQ(r.seed, c.seed);
  EXPECT_EQ(r.n_occluders, c.n_occluders);
}

TEST(Scene, Deterministic) {
  SceneConfig c;
  c.seed = 11;
  const Scene a = generate_scene(c, 5), b = generate_scene(c, 5);
  EXPECT_EQ(a.image.vec(), b.image.vec());
  EXPECT_EQ(a.gt_mask, b.gt_mask);
  EXPECT_NE(generate_scene(c, 6).gt_mask, a.gt_mask);
  c.seed = 12;
  EXPECT_NE(generate_scene(c, 5).gt_mask, a.gt_mask);
}

TEST(Scene, ShapesAndRange) {
  const Scene s = generate_scene(SceneConfig{}, 0);
  EXPECT_EQ(s.image.shape(), (Shape{64, 64, 3}));
  for (float v : s.image.vec()) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
}

TEST(Scene, RoadsSeparableWithoutOccluders) {
  SceneConfig c;
  c.n_occluders = {0, 0};
  for (std::uint64_t i = 0; i < 20; ++i) {
    const Scene s = generate_scene(c, i);
    float road_min = 3, bg_max = 0;
    for (std::size_t p = 0; p < 64 * 64; ++p) {
      const float lum = s.image[p * 3] + s.image[p * 3 + 1] + s.image[p * 3 + 2];
      if (s.gt_mask.bits[p])
        road_min = std::min(road_min, lum);
      else
        bg_max = std::max(bg_max, lum);
    }
    EXPECT_GT(road_min, bg_max) << "scene " << i;
  }
}

TEST(Scene, StrokesAreConnectedAndCoverMask) {
  SceneConfig c;
  c.seed = 3;
  for (std::uint64_t i = 0; i < 30; ++i) {
    const Scene s = generate_scene(c, i);
    ASSERT_GE(s.stroke_masks.size(), 2u);
    ASSERT_LE(s.stroke_masks.size(), 4u);
    BinaryMask u(64, 64);
    for (const auto& m : s.stroke_masks) {
      EXPECT_EQ(components8(m), 1u);
      for (std::size_t p = 0; p < u.bits.size(); ++p) u.bits[p] |= m.bits[p];
    }
    EXPECT_EQ(u, s.gt_mask);
  }
}

TEST(Scene, RoadFractionWithinBounds) {
  for (std::uint64_t i = 0; i < 50; ++i) {
    const double f = static_cast<double>(generate_scene(SceneConfig{}, i).gt_mask.count()) / (64.0 * 64.0);
    EXPECT_GE(f, 0.01);
    EXPECT_LE(f, 0.25);
  }
}

TEST(Scene, OccludersAndDashesLeaveMaskAlone) {
  SceneConfig plain;
  plain.n_occluders = {0, 0};
  SceneConfig occluded = plain;
  occluded.n_occluders = {8, 8};
  occluded.occluder_size = {10, 10};
  SceneConfig dashed = plain;
  dashed.dashed_mode = true;
  for (std::uint64_t i = 0; i < 10; ++i) {
    const Scene a = generate_scene(plain, i), b = generate_scene(occluded, i), d = generate_scene(dashed, i);
    EXPECT_EQ(a.gt_mask, b.gt_mask);
    EXPECT_EQ(a.gt_mask, d.gt_mask);
    EXPECT_NE(a.image.vec(), b.image.vec());
    EXPECT_NE(a.image.vec(), d.image.vec());
  }
}

TEST(Scene, GraphIsSkeletonGraphAndSelfApls) {
  for (std::uint64_t i = 0; i < 10; ++i) {
    const Scene s = generate_scene(SceneConfig{}, i);
    const RoadGraph g = skeleton_to_graph(skeletonize(s.gt_mask));
    EXPECT_EQ(s.gt_graph.nodes.size(), g.nodes.size());
    EXPECT_EQ(s.gt_graph.edges.size(), g.edges.size());
    EXPECT_FALSE(g.empty());
    EXPECT_EQ(apls(s.gt_graph, s.gt_graph).score, 1.0);
    EXPECT_EQ(apls(s.gt_graph, mask_to_graph(BinaryMask(64, 64))).score, 0.0);
  }
}

TEST(Dataset, WriteReadAndIdempotent) {
  const fs::path dir = scratch("ds");
  SceneConfig c;
  c.seed = 9;
  const Manifest m = generate_dataset(c, 3, dir);
  ASSERT_EQ(m.items.size(), 3u);
  EXPECT_EQ(m.items[1].image, "images/0001.png");
  EXPECT_EQ(m.items[2].mask, "masks/0002.png");
  const std::string first = slurp(dir / "images/0002.png") + slurp(dir / "manifest.json");
  generate_dataset(c, 3, dir);
  EXPECT_EQ(slurp(dir / "images/0002.png") + slurp(dir / "manifest.json"), first);

  const Manifest back = read_manifest(dir);
  EXPECT_EQ(back.config.seed, 9u);
  const auto samples = load_dataset(dir);
  ASSERT_EQ(samples.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    const Scene s = generate_scene(c, i);
    EXPECT_EQ(samples[i].mask, s.gt_mask);
    EXPECT_EQ(samples[i].image.vec(), s.image.vec());  // images are on the 8-bit grid
  }
  fs::remove_all(dir);
}

TEST(Dataset, UnwritableDirectory) {
  const fs::path f = scratch("file");
  std::ofstream(f) << "x";
  EXPECT_THROW(generate_dataset(SceneConfig{}, 1, f / "sub"), IoError);
  fs::remove_all(f);
  EXPECT_THROW(read_manifest(scratch("missing")), IoError);
}

TEST(Item, StemPadding) {
  EXPECT_EQ(item_stem(0), "0000");
  EXPECT_EQ(item_stem(42), "0042");
  EXPECT_EQ(item_stem(12345), "12345");
}
