#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pathmamba/backbone.hpp"
#include "pathmamba/checkpoint.hpp"
#include "pathmamba/error.hpp"
#include "pathmamba/supervision.hpp"
#include "pathmamba/synthgen.hpp"
#include "pathmamba/topology.hpp"

namespace pathmamba {

using json = nlohmann::json;

struct OptimConfig {
  double lr = 6e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::int64_t warmup_iters = 1500;
  double warmup_start_lr = 1e-6;
  std::int64_t total_iters = 160000;
  double poly_power = 1.0;
  double min_lr = 0.0;

  void validate() const {
    if (total_iters < 1) throw ConfigError("total_iters must be positive");
    if (warmup_iters < 0 || warmup_iters > total_iters) throw ConfigError("warmup_iters must be in [0, total_iters]");
    if (!(lr > warmup_start_lr)) throw ConfigError("lr must exceed warmup_start_lr");
    if (warmup_start_lr < 0 || min_lr < 0) throw ConfigError("learning rates must be >= 0");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("betas must be in [0,1)");
    if (!(eps > 0)) throw ConfigError("eps must be positive");
    if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
    if (!(poly_power > 0)) throw ConfigError("poly_power must be positive");
  }
};

/// Linear warm-up from warmup_start_lr, then polynomial decay to zero,
/// floored at min_lr.
inline double lr_at(std::int64_t iter, const OptimConfig& oc) {
  if (iter < 0 || iter > oc.total_iters)
    throw DomainError("lr_at: iteration " + std::to_string(iter) + " outside [0, " +
                      std::to_string(oc.total_iters) + "]");
  if (iter < oc.warmup_iters)
    return oc.warmup_start_lr + (oc.lr - oc.warmup_start_lr) * static_cast<double>(iter) /
                                    static_cast<double>(oc.warmup_iters);
  const std::int64_t span = oc.total_iters - oc.warmup_iters;
  const double frac = span == 0 ? 1.0 : static_cast<double>(iter - oc.warmup_iters) / static_cast<double>(span);
  return std::max(oc.min_lr, oc.lr * std::pow(1.0 - frac, oc.poly_power));
}

/// First and second moments, keyed like the parameters they track.
template <class T>
struct AdamWState {
  std::int64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

/// One AdamW update from the gradients stored on the parameters (absent
/// gradients count as zero). Weight decay is decoupled and applied first.
template <class T>
void adamw_step(NamedParams<T>& params, AdamWState<T>& st, const OptimConfig& oc, double lr) {
  if (st.m.size() != params.size()) {
    st.m.clear();
    st.v.clear();
    for (const auto& [name, p] : params) {
      st.m.emplace_back(p.numel(), T(0));
      st.v.emplace_back(p.numel(), T(0));
    }
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(oc.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(oc.beta2, static_cast<double>(st.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& p = params[k].second;
    auto& m = st.m[k];
    auto& v = st.v[k];
    const bool has = p.has_grad();
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double g = has ? static_cast<double>(p.grad()[i]) : 0.0;
      double w = static_cast<double>(p[i]);
      w -= lr * oc.weight_decay * w;
      const double mi = oc.beta1 * static_cast<double>(m[i]) + (1 - oc.beta1) * g;
      const double vi = oc.beta2 * static_cast<double>(v[i]) + (1 - oc.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      w -= lr * (mi / c1) / (std::sqrt(vi / c2) + oc.eps);
      p[i] = static_cast<T>(w);
    }
  }
}

// ---------------------------------------------------------------------------
// Configuration

struct DataConfig {
  std::string path;     // dataset directory; empty = generate from `scene`
  SceneConfig scene;
  std::size_t count = 300;      // scenes generated when path is empty
  std::size_t eval_count = 60;  // trailing items held out for evaluation
};

struct RunConfig {
  BackboneConfig backbone;
  LossConfig loss;
  OptimConfig optim;
  DataConfig data;
  std::size_t batch_size = 4;
  std::int64_t eval_interval = 500;
  std::int64_t checkpoint_interval = 0;  // 0 = only at the end
  std::uint64_t seed = 0;
  std::string output_dir = "run";
  bool augment = true;  // random horizontal / vertical flips
  double aux_weight = 0.4;
  APLSOptions apls;

  void validate() const {
    backbone.validate();
    loss.validate();
    optim.validate();
    data.scene.validate();
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (eval_interval < 1) throw ConfigError("eval_interval must be positive");
    if (checkpoint_interval < 0) throw ConfigError("checkpoint_interval must be >= 0");
    if (data.path.empty() && data.eval_count >= data.count)
      throw ConfigError("data.eval_count must be smaller than data.count");
    if (data.path.empty() && data.scene.size % (backbone.patch_size * 8) != 0)
      throw ConfigError("scene size must be divisible by 8 * patch_size");
    if (!(apls.spacing > 0) || !(apls.snap_dist > 0)) throw ConfigError("apls spacing and snap_dist must be positive");
  }

  /// Desk-scale protocol: toy backbone, 2000 iterations, 150 warm-up.
  static RunConfig toy() {
    RunConfig rc;
    rc.backbone = BackboneConfig::toy();
    rc.optim.total_iters = 2000;
    rc.optim.warmup_iters = 150;
    return rc;
  }
};

namespace detail {

template <class V>
void read_if(const json& j, const char* key, V& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

inline void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

}  // namespace detail

inline json to_json_value(const BackboneConfig& c) {
  std::vector<std::string> layouts;
  for (const auto& l : c.stage_layouts) layouts.push_back(l.to_string());
  return {{"depths", c.depths},
          {"embed_dim", c.embed_dim},
          {"stage_layouts", layouts},
          {"patch_size", c.patch_size},
          {"drop_path_rate", c.drop_path_rate},
          {"ssm_state", c.ssm_state},
          {"ssm_expand", c.ssm_expand},
          {"heads", c.heads},
          {"mlp_ratio", c.mlp_ratio},
          {"ablate_ssm_stages", std::vector<int>(c.ablate_ssm_stages.begin(), c.ablate_ssm_stages.end())},
          {"scan", to_string(c.scan)},
          {"local_window", c.local_window},
          {"in_channels", c.in_channels},
          {"decoder_channels", c.decoder_channels},
          {"ppm_scales", c.ppm_scales},
          {"aux_head", c.aux_head}};
}

/// Keys override `base`; "preset": "toy" | "full" selects the base.
inline BackboneConfig backbone_from_json(const json& j, BackboneConfig c = {}) {
  detail::reject_unknown(j,
                         {"preset", "depths", "embed_dim", "stage_layouts", "patch_size", "drop_path_rate",
                          "ssm_state", "ssm_expand", "heads", "mlp_ratio", "ablate_ssm_stages", "scan",
                          "local_window", "in_channels", "decoder_channels", "ppm_scales", "aux_head"},
                         "backbone");
  if (j.contains("preset")) {
    const auto p = j.at("preset").get<std::string>();
    if (p == "toy")
      c = BackboneConfig::toy();
    else if (p == "full")
      c = BackboneConfig{};
    else
      throw ConfigError("unknown backbone preset '" + p + "'");
  }
  detail::read_if(j, "depths", c.depths);
  detail::read_if(j, "embed_dim", c.embed_dim);
  if (j.contains("stage_layouts")) {
    const auto v = j.at("stage_layouts").get<std::vector<std::string>>();
    if (v.size() != 4) throw ConfigError("stage_layouts needs 4 entries");
    for (std::size_t s = 0; s < 4; ++s) c.stage_layouts[s] = parse_stage_layout(v[s]);
  }
  detail::read_if(j, "patch_size", c.patch_size);
  detail::read_if(j, "drop_path_rate", c.drop_path_rate);
  detail::read_if(j, "ssm_state", c.ssm_state);
  detail::read_if(j, "ssm_expand", c.ssm_expand);
  detail::read_if(j, "heads", c.heads);
  detail::read_if(j, "mlp_ratio", c.mlp_ratio);
  if (j.contains("ablate_ssm_stages")) {
    const auto v = j.at("ablate_ssm_stages").get<std::vector<int>>();
    c.ablate_ssm_stages = std::set<int>(v.begin(), v.end());
  }
  if (j.contains("scan")) c.scan = parse_scan_strategy(j.at("scan").get<std::string>());
  detail::read_if(j, "local_window", c.local_window);
  detail::read_if(j, "in_channels", c.in_channels);
  detail::read_if(j, "decoder_channels", c.decoder_channels);
  detail::read_if(j, "ppm_scales", c.ppm_scales);
  detail::read_if(j, "aux_head", c.aux_head);
  return c;
}

inline json to_json_value(const LossConfig& c) {
  return {{"variant", to_string(c.variant)},       {"weight_pixel", c.weight_pixel},
          {"weight_region", c.weight_region},      {"focal_gamma", c.focal_gamma},
          {"focal_alpha", c.focal_alpha},          {"dice_smooth", c.dice_smooth}};
}

inline LossConfig loss_from_json(const json& j, LossConfig c = {}) {
  detail::reject_unknown(j, {"variant", "weight_pixel", "weight_region", "focal_gamma", "focal_alpha", "dice_smooth"},
                         "loss");
  if (j.contains("variant")) c.variant = parse_loss_variant(j.at("variant").get<std::string>());
  detail::read_if(j, "weight_pixel", c.weight_pixel);
  detail::read_if(j, "weight_region", c.weight_region);
  detail::read_if(j, "focal_gamma", c.focal_gamma);
  detail::read_if(j, "focal_alpha", c.focal_alpha);
  detail::read_if(j, "dice_smooth", c.dice_smooth);
  return c;
}

inline json to_json_value(const OptimConfig& c) {
  return {{"lr", c.lr},
          {"betas", {c.beta1, c.beta2}},
          {"eps", c.eps},
          {"weight_decay", c.weight_decay},
          {"warmup_iters", c.warmup_iters},
          {"warmup_start_lr", c.warmup_start_lr},
          {"total_iters", c.total_iters},
          {"poly_power", c.poly_power},
          {"min_lr", c.min_lr}};
}

inline OptimConfig optim_from_json(const json& j, OptimConfig c = {}) {
  detail::reject_unknown(j,
                         {"lr", "betas", "eps", "weight_decay", "warmup_iters", "warmup_start_lr", "total_iters",
                          "poly_power", "min_lr"},
                         "optim");
  detail::read_if(j, "lr", c.lr);
  if (j.contains("betas")) {
    const auto b = j.at("betas").get<std::vector<double>>();
    if (b.size() != 2) throw ConfigError("betas needs two values");
    c.beta1 = b[0];
    c.beta2 = b[1];
  }
  detail::read_if(j, "eps", c.eps);
  detail::read_if(j, "weight_decay", c.weight_decay);
  detail::read_if(j, "warmup_iters", c.warmup_iters);
  detail::read_if(j, "warmup_start_lr", c.warmup_start_lr);
  detail::read_if(j, "total_iters", c.total_iters);
  detail::read_if(j, "poly_power", c.poly_power);
  detail::read_if(j, "min_lr", c.min_lr);
  return c;
}

inline json to_json_value(const RunConfig& rc) {
  json data = {{"path", rc.data.path}, {"scene", rc.data.scene}, {"count", rc.data.count},
               {"eval_count", rc.data.eval_count}};
  return {{"backbone", to_json_value(rc.backbone)},
          {"loss", to_json_value(rc.loss)},
          {"optim", to_json_value(rc.optim)},
          {"data", data},
          {"batch_size", rc.batch_size},
          {"eval_interval", rc.eval_interval},
          {"checkpoint_interval", rc.checkpoint_interval},
          {"seed", rc.seed},
          {"output_dir", rc.output_dir},
          {"augment", rc.augment},
          {"aux_weight", rc.aux_weight},
          {"apls", {{"spacing", rc.apls.spacing}, {"snap_dist", rc.apls.snap_dist}, {"symmetric", rc.apls.symmetric}}}};
}

/// Parses a run configuration; missing keys keep their defaults, and
/// "preset": "toy" starts from RunConfig::toy(). Does not validate.
inline RunConfig run_config_from_json(const json& j) {
  try {
    detail::reject_unknown(j,
                           {"preset", "backbone", "loss", "optim", "data", "batch_size", "eval_interval",
                            "checkpoint_interval", "seed", "output_dir", "augment", "aux_weight", "apls"},
                           "run config");
    RunConfig rc;
    if (j.contains("preset")) {
      const auto p = j.at("preset").get<std::string>();
      if (p == "toy")
        rc = RunConfig::toy();
      else if (p != "full")
        throw ConfigError("unknown preset '" + p + "'");
    }
    if (j.contains("backbone")) rc.backbone = backbone_from_json(j.at("backbone"), rc.backbone);
    if (j.contains("loss")) rc.loss = loss_from_json(j.at("loss"), rc.loss);
    if (j.contains("optim")) rc.optim = optim_from_json(j.at("optim"), rc.optim);
    if (j.contains("data")) {
      const json& d = j.at("data");
      detail::reject_unknown(d, {"path", "scene", "count", "eval_count"}, "data");
      detail::read_if(d, "path", rc.data.path);
      if (d.contains("scene")) {
        detail::reject_unknown(d.at("scene"),
                               {"size", "n_roads", "road_width", "n_occluders", "occluder_size", "noise_amplitude",
                                "dashed_mode", "seed"},
                               "data.scene");
        rc.data.scene = d.at("scene").get<SceneConfig>();
      }
      detail::read_if(d, "count", rc.data.count);
      detail::read_if(d, "eval_count", rc.data.eval_count);
    }
    detail::read_if(j, "batch_size", rc.batch_size);
    detail::read_if(j, "eval_interval", rc.eval_interval);
    detail::read_if(j, "checkpoint_interval", rc.checkpoint_interval);
    detail::read_if(j, "seed", rc.seed);
    detail::read_if(j, "output_dir", rc.output_dir);
    detail::read_if(j, "augment", rc.augment);
    detail::read_if(j, "aux_weight", rc.aux_weight);
    if (j.contains("apls")) {
      const json& a = j.at("apls");
      detail::reject_unknown(a, {"spacing", "snap_dist", "symmetric"}, "apls");
      detail::read_if(a, "spacing", rc.apls.spacing);
      detail::read_if(a, "snap_dist", rc.apls.snap_dist);
      detail::read_if(a, "symmetric", rc.apls.symmetric);
    }
    return rc;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream os(path);
  os << j.dump(2) << '\n';
  if (!os) throw IoError("cannot write " + path.string());
}

// ---------------------------------------------------------------------------
// Data

struct DataSplit {
  std::vector<Sample> train;
  std::vector<Sample> eval;
};

/// Generated scenes (or a dataset directory); the last eval_count items are held out.
inline DataSplit load_data(const DataConfig& dc) {
  std::vector<Sample> all;
  if (dc.path.empty()) {
    for (std::size_t i = 0; i < dc.count; ++i) {
      Scene s = generate_scene(dc.scene, i);
      all.push_back({std::move(s.image), std::move(s.gt_mask)});
    }
  } else {
    all = load_dataset(dc.path);
  }
  if (dc.eval_count >= all.size())
    throw ConfigError("data.eval_count (" + std::to_string(dc.eval_count) + ") must be smaller than the " +
                      std::to_string(all.size()) + " available items");
  DataSplit split;
  const std::size_t n_train = all.size() - dc.eval_count;
  for (std::size_t i = 0; i < all.size(); ++i) (i < n_train ? split.train : split.eval).push_back(std::move(all[i]));
  return split;
}

/// (x - 0.5) / 0.25 per channel.
inline Tensor<float> normalize_image(const Tensor<float>& img) {
  Tensor<float> out = img.clone();
  for (auto& v : out.vec()) v = (v - 0.5f) * 4.0f;
  return out;
}

/// Mirror an [H, W, C] image and its mask.
inline void flip_sample(Tensor<float>& img, BinaryMask& mask, bool horizontal) {
  const std::size_t h = mask.height, w = mask.width, c = img.dim(2);
  Tensor<float> out = img.clone();
  BinaryMask m(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t sr = horizontal ? r : h - 1 - r, sx = horizontal ? w - 1 - x : x;
      for (std::size_t k = 0; k < c; ++k) out[(r * w + x) * c + k] = img[(sr * w + sx) * c + k];
      m.bits[r * w + x] = mask.bits[sr * w + sx];
    }
  img = std::move(out);
  mask = std::move(m);
}

// ---------------------------------------------------------------------------
// Evaluation

struct ImageMetrics {
  double iou = 0;
  double f1 = 0;
  double apls = 0;
};

struct EvalReport {
  std::vector<ImageMetrics> per_image;
  ImageMetrics mean;
};

inline json to_json_value(const ImageMetrics& m) { return {{"iou", m.iou}, {"f1", m.f1}, {"apls", m.apls}}; }

inline json to_json_value(const EvalReport& r, bool per_image = true) {
  json j = {{"mean", to_json_value(r.mean)}, {"count", r.per_image.size()}};
  if (per_image) {
    j["per_image"] = json::array();
    for (const auto& m : r.per_image) j["per_image"].push_back(to_json_value(m));
  }
  return j;
}

/// Thresholds logits at 0 (probability 0.5); APLS between skeleton graphs.
template <class T>
EvalReport evaluate(const Model<T>& model, const std::vector<Sample>& samples, const APLSOptions& opt) {
  NoGradScope<T> no_grad;
  EvalReport rep;
  SplitMix64 unused(0);
  for (const auto& s : samples) {
    const Tensor<T> x = normalize_image(s.image).template cast<T>();
    const Tensor<T> logits = model.forward(x, Mode::eval, unused);
    const BinaryMask pred = threshold_logits(logits, s.mask.height, s.mask.width);
    ImageMetrics m;
    m.iou = iou(pred, s.mask);
    m.f1 = f1(pred, s.mask);
    m.apls = apls(mask_to_graph(s.mask), mask_to_graph(pred), opt).score;
    rep.per_image.push_back(m);
  }
  for (const auto& m : rep.per_image) {
    rep.mean.iou += m.iou;
    rep.mean.f1 += m.f1;
    rep.mean.apls += m.apls;
  }
  if (!rep.per_image.empty()) {
    const double n = static_cast<double>(rep.per_image.size());
    rep.mean.iou /= n;
    rep.mean.f1 /= n;
    rep.mean.apls /= n;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr const char* kConfigEntry = "__config__";
inline constexpr const char* kIterEntry = "__iter__";

template <class T>
void save_training_checkpoint(const std::string& path, const RunConfig& rc, const NamedParams<T>& params,
                              const AdamWState<T>& st, std::int64_t next_iter) {
  std::vector<CheckpointEntry> entries;
  entries.push_back(CheckpointEntry::from_bytes(kConfigEntry, to_json_value(rc).dump()));
  entries.push_back(CheckpointEntry::from_tensor(
      kIterEntry, Tensor<double>({2}, {static_cast<double>(next_iter), static_cast<double>(st.step)})));
  for (const auto& [name, p] : params) entries.push_back(CheckpointEntry::from_tensor(name, p));
  for (std::size_t k = 0; k < st.m.size(); ++k) {
    const auto& [name, p] = params[k];
    entries.push_back(CheckpointEntry::from_tensor("optim.m." + name, Tensor<T>(p.shape(), st.m[k])));
    entries.push_back(CheckpointEntry::from_tensor("optim.v." + name, Tensor<T>(p.shape(), st.v[k])));
  }
  write_checkpoint(path, entries);
}

struct LoadedCheckpoint {
  RunConfig config;
  std::int64_t next_iter = 0;
  std::int64_t step = 0;
  std::map<std::string, CheckpointEntry> entries;
};

inline LoadedCheckpoint load_training_checkpoint(const std::string& path) {
  LoadedCheckpoint lc;
  for (auto& e : read_checkpoint(path)) lc.entries.emplace(e.name, std::move(e));
  const auto cfg = lc.entries.find(kConfigEntry);
  if (cfg == lc.entries.end()) throw ParseError(path + ": checkpoint has no embedded run config");
  try {
    lc.config = run_config_from_json(json::parse(cfg->second.to_string()));
  } catch (const json::exception& e) {
    throw ParseError(path + ": embedded config: " + e.what());
  }
  const auto it = lc.entries.find(kIterEntry);
  if (it != lc.entries.end()) {
    const auto t = it->second.to_tensor<double>();
    lc.next_iter = static_cast<std::int64_t>(t[0]);
    lc.step = static_cast<std::int64_t>(t[1]);
  }
  return lc;
}

/// Copies checkpoint values into the parameters (names and shapes must match).
template <class T>
void restore_parameters(NamedParams<T>& params, const LoadedCheckpoint& lc, AdamWState<T>* st = nullptr) {
  auto fetch = [&](const std::string& name, const Shape& shape) {
    const auto it = lc.entries.find(name);
    if (it == lc.entries.end()) throw ParseError("checkpoint is missing '" + name + "'");
    Tensor<T> t = it->second.to_tensor<T>();
    if (t.shape() != shape)
      throw DimensionError("checkpoint entry '" + name + "' has shape " + shape_str(t.shape()) + ", model expects " +
                           shape_str(shape));
    return t;
  };
  for (auto& [name, p] : params) p.vec() = fetch(name, p.shape()).vec();
  if (st != nullptr) {
    st->step = lc.step;
    st->m.clear();
    st->v.clear();
    if (lc.step > 0)
      for (auto& [name, p] : params) {
        st->m.push_back(fetch("optim.m." + name, p.shape()).vec());
        st->v.push_back(fetch("optim.v." + name, p.shape()).vec());
      }
  }
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainOptions {
  std::optional<std::string> resume;    // checkpoint to continue from
  std::optional<std::int64_t> stop_after;  // checkpoint and return after this iteration count
  bool quiet = true;
};

struct TrainReport {
  std::int64_t iterations = 0;
  std::size_t parameters = 0;
  double last_loss = 0;
  std::optional<ImageMetrics> last;
  std::optional<ImageMetrics> best;  // by APLS
  std::int64_t best_iter = -1;
};

inline json to_json_value(const TrainReport& r) {
  json j = {{"iterations", r.iterations}, {"parameters", r.parameters}, {"last_loss", r.last_loss}};
  if (r.last) j["last"] = to_json_value(*r.last);
  if (r.best) {
    j["best"] = to_json_value(*r.best);
    j["best_iter"] = r.best_iter;
  }
  return j;
}

namespace detail {

// Keeps metrics lines with iter < first_iter (for resumed runs).
inline void truncate_metrics_log(const std::filesystem::path& path, std::int64_t first_iter) {
  std::ifstream is(path);
  if (!is) return;
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line, nullptr, false);
    if (!j.is_discarded() && j.contains("iter") && j.at("iter").get<std::int64_t>() < first_iter) keep.push_back(line);
  }
  is.close();
  std::ofstream os(path, std::ios::trunc);
  for (const auto& l : keep) os << l << '\n';
}

}  // namespace detail

/// Seeded training run. Batch sampling, flips and drop-path draw from a
/// generator keyed by (seed, iteration), so a resumed run replays the same
/// stream as an uninterrupted one.
inline TrainReport train(const RunConfig& rc_in, const TrainOptions& opts = {}, const DataSplit* data = nullptr) {
  RunConfig rc = rc_in;
  rc.validate();
  namespace fs = std::filesystem;
  const fs::path out = rc.output_dir;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out.string() + ": " + ec.message());

  DataSplit owned;
  if (data == nullptr) {
    owned = load_data(rc.data);
    data = &owned;
  }
  if (data->train.empty()) throw ConfigError("no training samples");

  Model<float> model = Model<float>::init(rc.backbone, rc.seed);
  NamedParams<float> params = model.parameters();
  AdamWState<float> st;
  std::int64_t start = 0;
  if (opts.resume) {
    const LoadedCheckpoint lc = load_training_checkpoint(*opts.resume);
    restore_parameters(params, lc, &st);
    start = lc.next_iter;
  }
  const fs::path log_path = out / "metrics.jsonl";
  if (start > 0)
    detail::truncate_metrics_log(log_path, start);
  else
    std::ofstream(log_path, std::ios::trunc);
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw IoError("cannot write " + log_path.string());

  TrainReport rep;
  rep.parameters = count_params(params);
  const std::int64_t total = rc.optim.total_iters;
  const std::int64_t end = opts.stop_after ? std::min(total, *opts.stop_after) : total;
  const std::size_t n_train = data->train.size();
  for (std::int64_t it = start; it < end; ++it) {
    const double lr = lr_at(it, rc.optim);
    SplitMix64 rng = SplitMix64::keyed(rc.seed, static_cast<std::uint64_t>(it), 0x7A41);
    for (auto& [name, p] : params) p.zero_grad();
    double loss_sum = 0;
    for (std::size_t b = 0; b < rc.batch_size; ++b) {
      const auto& s = data->train[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(n_train) - 1))];
      Tensor<float> img = s.image;
      BinaryMask mask = s.mask;
      if (rc.augment) {
        if (rng.bernoulli(0.5)) flip_sample(img, mask, true);
        if (rng.bernoulli(0.5)) flip_sample(img, mask, false);
      }
      Tape<float> tape;
      TapeScope<float> scope(tape);
      const Tensor<float> x = normalize_image(img);
      const auto feats = model.backbone_forward(x, Mode::train, rng);
      Tensor<float> loss = combined_loss(model.decoder_forward(feats.features, x.dim(0), x.dim(1)), mask, rc.loss);
      if (rc.backbone.aux_head)
        loss = add(loss, scale(combined_loss(model.aux_forward(feats.features, x.dim(0), x.dim(1)), mask, rc.loss),
                               static_cast<float>(rc.aux_weight)));
      loss_sum += static_cast<double>(loss.item());
      tape.backward(scale(loss, 1.0f / static_cast<float>(rc.batch_size)));
    }
    adamw_step(params, st, rc.optim, lr);
    rep.last_loss = loss_sum / static_cast<double>(rc.batch_size);
    json line = {{"iter", it}, {"lr", lr}, {"loss", rep.last_loss}};
    const bool eval_now = (it + 1) % rc.eval_interval == 0 || it + 1 == total;
    if (eval_now && !data->eval.empty()) {
      const EvalReport er = evaluate(model, data->eval, rc.apls);
      line["eval"] = to_json_value(er.mean);
      rep.last = er.mean;
      if (!rep.best || er.mean.apls > rep.best->apls) {
        rep.best = er.mean;
        rep.best_iter = it;
      }
    }
    log << line.dump() << '\n';
    log.flush();
    if (!opts.quiet) std::fprintf(stderr, "%s\n", line.dump().c_str());
    if (rc.checkpoint_interval > 0 && (it + 1) % rc.checkpoint_interval == 0)
      save_training_checkpoint((out / ("checkpoint_" + std::to_string(it + 1) + ".pmck")).string(), rc, params, st,
                               it + 1);
    rep.iterations = it + 1;
  }
  save_training_checkpoint((out / "last.pmck").string(), rc, params, st, rep.iterations);
  write_json_file(out / "report.json", to_json_value(rep));
  return rep;
}

// ---------------------------------------------------------------------------
// Ablations

struct AblationVariant {
  std::string name;
  BackboneConfig backbone;
};

/// Variant lists for the layouts, ssm-removal, scans and stages suites,
/// derived from the base backbone.
inline std::vector<AblationVariant> ablation_suite(const std::string& suite, const BackboneConfig& base) {
  std::vector<AblationVariant> out;
  if (suite == "layouts") {
    for (const char* s : {"mmmm-aaaa", "ma-ma-ma-ma", "am-am-am-am", "aaaa-mmmm", "mmmmmmm-a"}) {
      BackboneConfig c = base;
      c.stage_layouts[2] = parse_stage_layout(s);
      c.depths[2] = c.stage_layouts[2].size();
      out.push_back({s, c});
    }
  } else if (suite == "ssm-removal") {
    const std::vector<std::pair<std::string, std::set<int>>> rows{
        {"baseline", {}}, {"stage 1, 2", {1, 2}}, {"all stages", {1, 2, 3, 4}}};
    for (const auto& [name, stages] : rows) {
      BackboneConfig c = base;
      c.ablate_ssm_stages = stages;
      out.push_back({name, c});
    }
  } else if (suite == "scans") {
    for (auto s : {ScanStrategy::cross, ScanStrategy::bi, ScanStrategy::uni, ScanStrategy::local}) {
      BackboneConfig c = base;
      c.scan = s;
      out.push_back({to_string(s), c});
    }
  } else if (suite == "stages") {
    for (const char* s : {"mmmm", "mmma", "mmam", "mmaa"}) {
      BackboneConfig c = base;
      for (std::size_t k = 0; k < 4; ++k)
        c.stage_layouts[k] = StageLayout::uniform(s[k] == 'm' ? BlockKind::mamba : BlockKind::attention, c.depths[k]);
      std::string name;
      for (std::size_t k = 0; k < 4; ++k) name += std::string(k ? "->" : "") + s[k];
      out.push_back({name, c});
    }
  } else {
    throw ConfigError("unknown ablation suite '" + suite + "' (expected layouts|ssm-removal|scans|stages)");
  }
  return out;
}

struct AblationRow {
  std::string variant;
  ImageMetrics metrics;
  std::size_t parameters = 0;
};

/// Trains every variant with the same seed and data; metrics are the final
/// evaluation of each run.
inline std::vector<AblationRow> ablate(const RunConfig& rc, const std::string& suite, bool quiet = true) {
  const auto variants = ablation_suite(suite, rc.backbone);
  for (const auto& v : variants) {
    RunConfig r = rc;
    r.backbone = v.backbone;
    r.validate();
  }
  const DataSplit data = load_data(rc.data);
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    RunConfig r = rc;
    r.backbone = variants[i].backbone;
    r.output_dir = (std::filesystem::path(rc.output_dir) / ("variant_" + std::to_string(i))).string();
    const TrainReport tr = train(r, TrainOptions{std::nullopt, std::nullopt, quiet}, &data);
    rows.push_back({variants[i].name, tr.last.value_or(ImageMetrics{}), tr.parameters});
  }
  return rows;
}

inline json ablation_table(const std::string& suite, const std::vector<AblationRow>& rows) {
  json j = {{"suite", suite}, {"columns", {"variant", "iou", "f1", "apls"}}, {"rows", json::array()}};
  for (const auto& r : rows)
    j["rows"].push_back({{"variant", r.variant},
                         {"iou", r.metrics.iou},
                         {"f1", r.metrics.f1},
                         {"apls", r.metrics.apls},
                         {"parameters", r.parameters}});
  return j;
}

}  // namespace pathmamba
