#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pathmamba/error.hpp"
#include "pathmamba/image_io.hpp"
#include "pathmamba/mask.hpp"
#include "pathmamba/rng.hpp"
#include "pathmamba/tensor.hpp"
#include "pathmamba/topology.hpp"

namespace pathmamba {

struct SceneConfig {
  std::size_t size = 64;
  std::array<std::size_t, 2> n_roads{2, 4};
  std::size_t road_width = 3;
  std::array<std::size_t, 2> n_occluders{3, 8};
  std::array<std::size_t, 2> occluder_size{4, 10};
  double noise_amplitude = 0.08;
  bool dashed_mode = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (size < 32) throw ConfigError("scene size must be at least 32");
    if (road_width < 1) throw ConfigError("road_width must be at least 1");
    if (n_roads[0] < 1 || n_roads[0] > n_roads[1]) throw ConfigError("n_roads must be a range [lo, hi] with lo >= 1");
    if (n_occluders[0] > n_occluders[1]) throw ConfigError("n_occluders must be a range [lo, hi]");
    if (occluder_size[0] < 1 || occluder_size[0] > occluder_size[1])
      throw ConfigError("occluder_size must be a range [lo, hi] with lo >= 1");
    if (noise_amplitude < 0 || noise_amplitude > 0.1) throw ConfigError("noise_amplitude must be in [0, 0.1]");
  }
};

inline void to_json(nlohmann::json& j, const SceneConfig& c) {
  j = {{"size", c.size},
       {"n_roads", c.n_roads},
       {"road_width", c.road_width},
       {"n_occluders", c.n_occluders},
       {"occluder_size", c.occluder_size},
       {"noise_amplitude", c.noise_amplitude},
       {"dashed_mode", c.dashed_mode},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SceneConfig& c) {
  c = SceneConfig{};
  if (j.contains("size")) j.at("size").get_to(c.size);
  if (j.contains("n_roads")) j.at("n_roads").get_to(c.n_roads);
  if (j.contains("road_width")) j.at("road_width").get_to(c.road_width);
  if (j.contains("n_occluders")) j.at("n_occluders").get_to(c.n_occluders);
  if (j.contains("occluder_size")) j.at("occluder_size").get_to(c.occluder_size);
  if (j.contains("noise_amplitude")) j.at("noise_amplitude").get_to(c.noise_amplitude);
  if (j.contains("dashed_mode")) j.at("dashed_mode").get_to(c.dashed_mode);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
}

struct Scene {
  Tensor<float> image;  // [H, W, 3], values on the 8-bit grid k/255
  BinaryMask gt_mask;
  RoadGraph gt_graph;
  std::vector<BinaryMask> stroke_masks;  // one per road, union == gt_mask
};

namespace detail {

inline constexpr double kMinRoadFraction = 0.01;
inline constexpr double kMaxRoadFraction = 0.25;
inline constexpr double kDashPeriod = 8.0;  // px of arc length; first half painted

struct Stroke {
  BinaryMask mask;
  BinaryMask painted;  // pixels coloured as road in the image
};

// Point on side s (0 top, 1 right, 2 bottom, 3 left) at fraction t.
inline Point border_point(int side, double t, double n) {
  const double m = n - 1;
  switch (side) {
    case 0: return {0, t * m};
    case 1: return {t * m, m};
    case 2: return {m, t * m};
    default: return {t * m, 0};
  }
}

inline Stroke draw_stroke(const SceneConfig& cfg, SplitMix64& rng) {
  const double n = static_cast<double>(cfg.size);
  const int s0 = static_cast<int>(rng.integer(0, 3));
  const int s1 = (s0 + 1 + static_cast<int>(rng.integer(0, 2))) % 4;
  const Point p0 = border_point(s0, rng.uniform(0.1, 0.9), n);
  const Point p2 = border_point(s1, rng.uniform(0.1, 0.9), n);
  const Point p1{rng.uniform(0.2, 0.8) * (n - 1), rng.uniform(0.2, 0.8) * (n - 1)};
  const double bound = distance(p0, p1) + distance(p1, p2);
  const auto steps = static_cast<std::size_t>(std::ceil(bound * 4.0)) + 1;

  Stroke s{BinaryMask(cfg.size, cfg.size), BinaryMask(cfg.size, cfg.size)};
  const double r = static_cast<double>(cfg.road_width) / 2.0;
  const long reach = static_cast<long>(std::ceil(r));
  const long lim = static_cast<long>(cfg.size);
  double arc = 0;
  Point prev = p0;
  for (std::size_t i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(steps);
    const double a = (1 - t) * (1 - t), b = 2 * (1 - t) * t, c = t * t;
    const Point q{a * p0.row + b * p1.row + c * p2.row, a * p0.col + b * p1.col + c * p2.col};
    arc += distance(prev, q);
    prev = q;
    const bool paint = !cfg.dashed_mode || std::fmod(arc, kDashPeriod) < kDashPeriod / 2;
    const long cr = std::lround(q.row), cc = std::lround(q.col);
    for (long dy = -reach; dy <= reach; ++dy)
      for (long dx = -reach; dx <= reach; ++dx) {
        if (static_cast<double>(dy * dy + dx * dx) > r * r && !(dy == 0 && dx == 0)) continue;
        const long y = cr + dy, x = cc + dx;
        if (y < 0 || x < 0 || y >= lim || x >= lim) continue;
        s.mask.set(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
        if (paint) s.painted.set(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
      }
  }
  return s;
}

inline float quantize(double v) { return static_cast<float>(to_byte(v)) / 255.0f; }

}  // namespace detail

/// Deterministic scene keyed by (cfg.seed, index): quadratic Bezier roads from
/// border to border, textured background, occluding patches on the image only.
inline Scene generate_scene(const SceneConfig& cfg, std::uint64_t index) {
  cfg.validate();
  const std::size_t n = cfg.size;
  Scene scene;
  std::vector<detail::Stroke> strokes;
  for (std::uint64_t attempt = 0;; ++attempt) {
    SplitMix64 rng = SplitMix64::keyed(cfg.seed, index, attempt);
    const auto count = static_cast<std::size_t>(
        rng.integer(static_cast<std::int64_t>(cfg.n_roads[0]), static_cast<std::int64_t>(cfg.n_roads[1])));
    strokes.clear();
    BinaryMask mask(n, n);
    for (std::size_t k = 0; k < count; ++k) {
      strokes.push_back(detail::draw_stroke(cfg, rng));
      for (std::size_t i = 0; i < mask.bits.size(); ++i) mask.bits[i] |= strokes.back().mask.bits[i];
    }
    const double frac = static_cast<double>(mask.count()) / static_cast<double>(n * n);
    if ((frac >= detail::kMinRoadFraction && frac <= detail::kMaxRoadFraction) || attempt >= 1000) {
      scene.gt_mask = std::move(mask);
      break;
    }
  }

  SplitMix64 rng = SplitMix64::keyed(cfg.seed, index, 0xC0102);
  const double amp = cfg.noise_amplitude;
  std::array<double, 3> base{}, road{};
  for (auto& v : base) v = rng.uniform(0.15, 0.35 - amp / 2);
  for (auto& v : road) v = rng.uniform(0.65, 0.8);
  std::vector<double> img(n * n * 3);
  for (std::size_t p = 0; p < n * n; ++p)
    for (std::size_t ch = 0; ch < 3; ++ch) img[p * 3 + ch] = base[ch] + rng.uniform(-amp, amp);
  for (const auto& s : strokes)
    for (std::size_t p = 0; p < n * n; ++p)
      if (s.painted.bits[p])
        for (std::size_t ch = 0; ch < 3; ++ch) img[p * 3 + ch] = road[ch] + rng.uniform(-amp, amp) / 2;

  // occluders: background-like squares centred on road pixels
  std::vector<std::size_t> road_pixels;
  for (std::size_t p = 0; p < n * n; ++p)
    if (scene.gt_mask.bits[p]) road_pixels.push_back(p);
  const auto n_occ = rng.integer(static_cast<std::int64_t>(cfg.n_occluders[0]),
                                 static_cast<std::int64_t>(cfg.n_occluders[1]));
  for (std::int64_t k = 0; k < n_occ && !road_pixels.empty(); ++k) {
    const std::size_t centre = road_pixels[static_cast<std::size_t>(
        rng.integer(0, static_cast<std::int64_t>(road_pixels.size()) - 1))];
    const auto side = static_cast<long>(rng.integer(static_cast<std::int64_t>(cfg.occluder_size[0]),
                                                    static_cast<std::int64_t>(cfg.occluder_size[1])));
    const std::array<double, 3> tint{base[0] + rng.uniform(-0.05, 0.05), base[1] + rng.uniform(-0.05, 0.05),
                                     base[2] + rng.uniform(-0.05, 0.05)};
    const long r0 = static_cast<long>(centre / n) - side / 2, c0 = static_cast<long>(centre % n) - side / 2;
    for (long y = r0; y < r0 + side; ++y)
      for (long x = c0; x < c0 + side; ++x) {
        if (y < 0 || x < 0 || y >= static_cast<long>(n) || x >= static_cast<long>(n)) continue;
        const std::size_t p = static_cast<std::size_t>(y) * n + static_cast<std::size_t>(x);
        for (std::size_t ch = 0; ch < 3; ++ch) img[p * 3 + ch] = tint[ch] + rng.uniform(-amp, amp);
      }
  }

  scene.image = Tensor<float>({n, n, 3}, 0.0f);
  for (std::size_t i = 0; i < img.size(); ++i) scene.image[i] = detail::quantize(img[i]);
  for (auto& s : strokes) scene.stroke_masks.push_back(std::move(s.mask));
  scene.gt_graph = mask_to_graph(scene.gt_mask);
  return scene;
}

struct DatasetItem {
  std::string image;  // paths relative to the dataset directory
  std::string mask;
};

struct Manifest {
  SceneConfig config;
  std::vector<DatasetItem> items;
};

inline std::string item_stem(std::size_t i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 4 ? 4 - s.size() : 0, '0') + s;
}

/// Writes images/NNNN.png, masks/NNNN.png and manifest.json under out_dir.
inline Manifest generate_dataset(const SceneConfig& cfg, std::size_t count, const std::filesystem::path& out_dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (!ec) fs::create_directories(out_dir / "masks", ec);
  if (ec) throw IoError("cannot create dataset directory " + out_dir.string() + ": " + ec.message());
  Manifest m;
  m.config = cfg;
  for (std::size_t i = 0; i < count; ++i) {
    const Scene s = generate_scene(cfg, i);
    DatasetItem item{"images/" + item_stem(i) + ".png", "masks/" + item_stem(i) + ".png"};
    write_rgb_png((out_dir / item.image).string(), s.image);
    write_mask_png((out_dir / item.mask).string(), s.gt_mask);
    m.items.push_back(std::move(item));
  }
  nlohmann::json j;
  j["config"] = cfg;
  j["items"] = nlohmann::json::array();
  for (const auto& it : m.items) j["items"].push_back({{"image", it.image}, {"mask", it.mask}});
  std::ofstream os(out_dir / "manifest.json");
  if (!os) throw IoError("cannot write " + (out_dir / "manifest.json").string());
  os << j.dump(2) << '\n';
  if (!os) throw IoError("cannot write " + (out_dir / "manifest.json").string());
  return m;
}

inline Manifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw IoError("cannot open " + (dir / "manifest.json").string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("manifest.json: " + std::string(e.what()));
  }
  Manifest m;
  if (j.contains("config")) m.config = j.at("config").get<SceneConfig>();
  for (const auto& it : j.at("items")) m.items.push_back({it.at("image").get<std::string>(), it.at("mask").get<std::string>()});
  return m;
}

struct Sample {
  Tensor<float> image;
  BinaryMask mask;
};

/// Loads every manifest entry of a dataset directory.
inline std::vector<Sample> load_dataset(const std::filesystem::path& dir) {
  const Manifest m = read_manifest(dir);
  std::vector<Sample> out;
  for (const auto& it : m.items) {
    Sample s{read_rgb_png<float>((dir / it.image).string()), read_mask_png((dir / it.mask).string())};
    if (s.image.dim(0) != s.mask.height || s.image.dim(1) != s.mask.width)
      throw DimensionError("image/mask size mismatch for " + it.image);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace pathmamba
