#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "pathmamba/error.hpp"
#include "pathmamba/layers.hpp"
#include "pathmamba/ops.hpp"
#include "pathmamba/rng.hpp"
#include "pathmamba/scan2d.hpp"
#include "pathmamba/ssm.hpp"
#include "pathmamba/tensor.hpp"

// Four-stage hierarchical encoder mixing VSS (state-space) blocks and
// Transformer blocks, followed by a UperNet-style decoder (pyramid pooling
// plus a top-down feature pyramid) producing single-channel road logits.

namespace pathmamba {

enum class BlockKind { mamba, attention };

/// Block-kind sequence of one stage, written as e.g. "mmmm-aaaa".
struct StageLayout {
  std::vector<BlockKind> kinds;

  std::size_t size() const { return kinds.size(); }
  bool operator==(const StageLayout&) const = default;

  std::string to_string() const {
    std::string s;
    for (auto k : kinds) s += k == BlockKind::mamba ? 'm' : 'a';
    return s;
  }

  static StageLayout uniform(BlockKind k, std::size_t n) { return {std::vector<BlockKind>(n, k)}; }
};

/// Dashes are cosmetic; any other character besides 'm' / 'a' is rejected.
inline StageLayout parse_stage_layout(const std::string& s) {
  StageLayout l;
  for (char c : s) {
    if (c == 'm' || c == 'M')
      l.kinds.push_back(BlockKind::mamba);
    else if (c == 'a' || c == 'A')
      l.kinds.push_back(BlockKind::attention);
    else if (c != '-')
      throw ParseError("illegal character '" + std::string(1, c) + "' in stage layout \"" + s + "\"");
  }
  if (l.kinds.empty()) throw ParseError("empty stage layout \"" + s + "\"");
  return l;
}

struct BackboneConfig {
  std::array<std::size_t, 4> depths{2, 2, 8, 2};
  std::size_t embed_dim = 96;
  std::array<StageLayout, 4> stage_layouts{
      parse_stage_layout("mm"), parse_stage_layout("mm"), parse_stage_layout("mmmm-aaaa"),
      parse_stage_layout("mm")};
  std::size_t patch_size = 4;
  double drop_path_rate = 0.2;
  std::size_t ssm_state = 16;
  std::size_t ssm_expand = 2;  // D = ssm_expand * stage dim
  std::size_t heads = 12;
  std::size_t mlp_ratio = 4;
  std::set<int> ablate_ssm_stages;  // 1-based stage indices
  ScanStrategy scan = ScanStrategy::cross;
  std::size_t local_window = 2;
  std::size_t in_channels = 3;
  std::size_t decoder_channels = 64;
  std::vector<std::size_t> ppm_scales{1, 2, 3, 6};
  bool aux_head = false;

  std::size_t stage_dim(std::size_t stage) const { return embed_dim << stage; }

  std::size_t total_blocks() const { return depths[0] + depths[1] + depths[2] + depths[3]; }

  /// Reduced configuration used for CPU-scale experiments.
  static BackboneConfig toy() {
    BackboneConfig c;
    c.depths = {1, 1, 2, 1};
    c.embed_dim = 16;
    c.stage_layouts = {parse_stage_layout("m"), parse_stage_layout("m"), parse_stage_layout("m-a"),
                       parse_stage_layout("m")};
    c.ssm_state = 8;
    c.ssm_expand = 1;
    c.heads = 2;
    return c;
  }

  void validate() const {
    for (std::size_t s = 0; s < 4; ++s) {
      if (depths[s] == 0) throw ConfigError("stage depth must be positive");
      if (stage_layouts[s].size() != depths[s])
        throw ConfigError("stage " + std::to_string(s + 1) + " layout \"" +
                          stage_layouts[s].to_string() + "\" has " +
                          std::to_string(stage_layouts[s].size()) + " blocks but depth is " +
                          std::to_string(depths[s]));
      for (auto k : stage_layouts[s].kinds)
        if (k == BlockKind::attention && stage_dim(s) % heads != 0)
          throw ConfigError("stage " + std::to_string(s + 1) + " dim " +
                            std::to_string(stage_dim(s)) + " not divisible by heads " +
                            std::to_string(heads));
    }
    if (embed_dim == 0 || patch_size == 0 || ssm_state == 0 || ssm_expand == 0 || heads == 0)
      throw ConfigError("dimensions must be positive");
    if (drop_path_rate < 0 || drop_path_rate >= 1) throw ConfigError("drop_path_rate must be in [0,1)");
    for (int s : ablate_ssm_stages)
      if (s < 1 || s > 4) throw ConfigError("ablate_ssm_stages entries must be in 1..4");
    if (ppm_scales.empty()) throw ConfigError("ppm_scales must be nonempty");
    if (local_window == 0) throw ConfigError("local_window must be positive");
  }

  /// Drop-path probability of the global block index i, linear from 0 to the rate.
  double drop_path_at(std::size_t i) const {
    const std::size_t n = total_blocks();
    return n <= 1 ? 0.0 : drop_path_rate * static_cast<double>(i) / static_cast<double>(n - 1);
  }
};

enum class Mode { train, eval };

/// Stochastic depth: in training the branch is zeroed with probability p and
/// otherwise scaled by 1/(1-p); identity in eval mode.
template <class T>
Tensor<T> drop_path(const Tensor<T>& x, double p, Mode mode, SplitMix64& rng) {
  if (mode == Mode::eval || p <= 0.0) return x;
  if (p >= 1.0) return scale(x, T(0));
  const bool keep = !rng.bernoulli(p);
  return scale(x, keep ? T(1.0 / (1.0 - p)) : T(0));
}

template <class T>
struct FeedForward {
  Linear<T> fc1, fc2;

  static FeedForward init(std::size_t d, std::size_t ratio, SplitMix64& rng) {
    return {Linear<T>::init(d, ratio * d, true, rng), Linear<T>::init(ratio * d, d, true, rng)};
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return fc2(gelu(fc1(x))); }
  void collect(const std::string& prefix, NamedParams<T>& out) const {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
  }
  static std::size_t param_count(std::size_t d, std::size_t ratio) {
    return 2 * ratio * d * d + ratio * d + d;
  }
};

template <class T>
struct VSSBlock {
  LayerNorm<T> norm1;
  SSMParams<T> ssm;
  LayerNorm<T> norm2;
  FeedForward<T> ffn;

  static VSSBlock init(std::size_t d, const BackboneConfig& cfg, SplitMix64& rng) {
    VSSBlock b;
    b.norm1 = LayerNorm<T>::init(d);
    b.ssm = SSMParams<T>::init(d, cfg.ssm_expand * d, cfg.ssm_state, rng);
    b.norm2 = LayerNorm<T>::init(d);
    b.ffn = FeedForward<T>::init(d, cfg.mlp_ratio, rng);
    return b;
  }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    norm1.collect(prefix + ".norm1", out);
    ssm.collect(prefix + ".ssm", out);
    norm2.collect(prefix + ".norm2", out);
    ffn.collect(prefix + ".ffn", out);
  }

  static std::size_t param_count(std::size_t d, const BackboneConfig& cfg) {
    return 4 * d + SSMParams<T>::param_count(d, cfg.ssm_expand * d, cfg.ssm_state) +
           FeedForward<T>::param_count(d, cfg.mlp_ratio);
  }
};

/// x + DropPath(SSM2D(LN(x))), then + DropPath(FFN(LN(.))).
template <class T>
Tensor<T> vss_block(const Tensor<T>& fm, const VSSBlock<T>& p, const std::vector<ScanOrder>& orders,
                    bool ablate_ssm, double drop_path_p, Mode mode, SplitMix64& rng) {
  const Tensor<T> mixed = multi_directional_ssm(p.norm1(fm), orders, p.ssm, ablate_ssm);
  const Tensor<T> x1 = add(fm, drop_path(mixed, drop_path_p, mode, rng));
  return add(x1, drop_path(p.ffn(p.norm2(x1)), drop_path_p, mode, rng));
}

template <class T>
struct TransformerBlock {
  std::size_t heads = 1;
  LayerNorm<T> norm1;
  Linear<T> qkv;
  Linear<T> proj;
  LayerNorm<T> norm2;
  FeedForward<T> ffn;

  static TransformerBlock init(std::size_t d, const BackboneConfig& cfg, SplitMix64& rng) {
    TransformerBlock b;
    b.heads = cfg.heads;
    b.norm1 = LayerNorm<T>::init(d);
    b.qkv = Linear<T>::init(d, 3 * d, true, rng);
    b.proj = Linear<T>::init(d, d, true, rng);
    b.norm2 = LayerNorm<T>::init(d);
    b.ffn = FeedForward<T>::init(d, cfg.mlp_ratio, rng);
    return b;
  }

  void collect(const std::string& prefix, NamedParams<T>& out) const {
    norm1.collect(prefix + ".norm1", out);
    qkv.collect(prefix + ".qkv", out);
    proj.collect(prefix + ".proj", out);
    norm2.collect(prefix + ".norm2", out);
    ffn.collect(prefix + ".ffn", out);
  }

  static std::size_t param_count(std::size_t d, const BackboneConfig& cfg) {
    return 4 * d + (3 * d * d + 3 * d) + (d * d + d) + FeedForward<T>::param_count(d, cfg.mlp_ratio);
  }
};

/// Global multi-head self-attention over all H*W tokens (no positional
/// encoding), pre-norm, with an FFN sub-block.
template <class T>
Tensor<T> transformer_block(const Tensor<T>& fm, const TransformerBlock<T>& p, double drop_path_p,
                            Mode mode, SplitMix64& rng) {
  const std::size_t h = fm.dim(0), w = fm.dim(1), d = fm.dim(2);
  if (d % p.heads != 0)
    throw ConfigError("transformer_block: dim " + std::to_string(d) + " not divisible by " +
                      std::to_string(p.heads) + " heads");
  const std::size_t dh = d / p.heads;
  const Tensor<T> tokens = reshape(fm, {h * w, d});
  const Tensor<T> qkv = p.qkv(p.norm1(tokens));
  const T inv_sqrt = T(1) / std::sqrt(T(dh));
  std::vector<Tensor<T>> heads;
  for (std::size_t i = 0; i < p.heads; ++i) {
    const Tensor<T> q = slice_last(qkv, i * dh, dh);
    const Tensor<T> k = slice_last(qkv, d + i * dh, dh);
    const Tensor<T> v = slice_last(qkv, 2 * d + i * dh, dh);
    const Tensor<T> attn = softmax(scale(matmul(q, transpose(k)), inv_sqrt));
    heads.push_back(matmul(attn, v));
  }
  const Tensor<T> mixed = heads.size() == 1 ? heads[0] : concat_last(heads);
  const Tensor<T> x1 = add(tokens, drop_path(p.proj(mixed), drop_path_p, mode, rng));
  const Tensor<T> x2 = add(x1, drop_path(p.ffn(p.norm2(x1)), drop_path_p, mode, rng));
  return reshape(x2, {h, w, d});
}

template <class T>
struct Block {
  BlockKind kind = BlockKind::mamba;
  double drop_path = 0.0;
  std::variant<VSSBlock<T>, TransformerBlock<T>> body;
};

template <class T>
struct PatchEmbed {
  std::size_t patch = 4;
  Linear<T> proj;
  LayerNorm<T> norm;

  static std::size_t param_count(std::size_t patch, std::size_t cin, std::size_t e) {
    return patch * patch * cin * e + e + 2 * e;
  }
};

/// Non-overlapping patch x patch patches, linear projection, layer norm.
template <class T>
Tensor<T> patch_embed(const Tensor<T>& img, const PatchEmbed<T>& p) {
  if (img.rank() != 3 || img.dim(0) % p.patch != 0 || img.dim(1) % p.patch != 0)
    throw DimensionError("patch_embed: image " + shape_str(img.shape()) +
                         " not divisible by patch size " + std::to_string(p.patch));
  return p.norm(p.proj(patchify(img, p.patch)));
}

template <class T>
struct PatchMerge {
  Linear<T> reduction;  // 4d -> 2d
  LayerNorm<T> norm;

  static std::size_t param_count(std::size_t d) { return 4 * d * 2 * d + 2 * d + 4 * d; }
};

/// 2x2 neighbourhood concatenation [H,W,d] -> [H/2,W/2,4d], linear to 2d, layer norm.
template <class T>
Tensor<T> patch_merge(const Tensor<T>& fm, const PatchMerge<T>& p) {
  if (fm.rank() != 3 || fm.dim(0) % 2 != 0 || fm.dim(1) % 2 != 0)
    throw DimensionError("patch_merge: map " + shape_str(fm.shape()) + " must have even H and W");
  return p.norm(p.reduction(patchify(fm, 2)));
}

template <class T>
struct Decoder {
  std::vector<Linear<T>> ppm;  // one per pooling scale
  Linear<T> ppm_bottleneck;
  std::array<Linear<T>, 3> lateral;
  std::array<Linear<T>, 3> fpn;
  Linear<T> fuse;
  Linear<T> classifier;
  Linear<T> aux;  // undefined weight unless aux_head

  static std::size_t param_count(const BackboneConfig& cfg) {
    const std::size_t c = cfg.decoder_channels, d4 = cfg.stage_dim(3);
    std::size_t n = cfg.ppm_scales.size() * (d4 * c + c);
    n += (d4 + cfg.ppm_scales.size() * c) * c + c;
    for (std::size_t s = 0; s < 3; ++s) n += cfg.stage_dim(s) * c + c;
    n += 3 * (c * c + c);
    n += 4 * c * c + c;
    n += c + 1;
    if (cfg.aux_head) n += cfg.stage_dim(2) + 1;
    return n;
  }
};

template <class T>
struct BackboneOutput {
  std::array<Tensor<T>, 4> features;
};

/// Full segmentation network (encoder + decoder).
template <class T>
class Model {
 public:
  static Model init(const BackboneConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    SplitMix64 rng = SplitMix64::keyed(seed, 0x5EED);
    Model m;
    m.cfg_ = cfg;
    const std::size_t e = cfg.embed_dim;
    m.embed_.patch = cfg.patch_size;
    m.embed_.proj = Linear<T>::init(cfg.patch_size * cfg.patch_size * cfg.in_channels, e, true, rng);
    m.embed_.norm = LayerNorm<T>::init(e);
    std::size_t global = 0;
    for (std::size_t s = 0; s < 4; ++s) {
      const std::size_t d = cfg.stage_dim(s);
      std::vector<Block<T>> blocks;
      for (auto kind : cfg.stage_layouts[s].kinds) {
        Block<T> b;
        b.kind = kind;
        b.drop_path = cfg.drop_path_at(global++);
        if (kind == BlockKind::mamba)
          b.body = VSSBlock<T>::init(d, cfg, rng);
        else
          b.body = TransformerBlock<T>::init(d, cfg, rng);
        blocks.push_back(std::move(b));
      }
      m.stages_[s] = std::move(blocks);
      if (s < 3) m.merges_[s] = {Linear<T>::init(4 * d, 2 * d, true, rng), LayerNorm<T>::init(2 * d)};
    }
    const std::size_t c = cfg.decoder_channels, d4 = cfg.stage_dim(3);
    for (std::size_t i = 0; i < cfg.ppm_scales.size(); ++i)
      m.decoder_.ppm.push_back(Linear<T>::init(d4, c, true, rng));
    m.decoder_.ppm_bottleneck = Linear<T>::init(d4 + cfg.ppm_scales.size() * c, c, true, rng);
    for (std::size_t s = 0; s < 3; ++s) {
      m.decoder_.lateral[s] = Linear<T>::init(cfg.stage_dim(s), c, true, rng);
      m.decoder_.fpn[s] = Linear<T>::init(c, c, true, rng);
    }
    m.decoder_.fuse = Linear<T>::init(4 * c, c, true, rng);
    m.decoder_.classifier = Linear<T>::init(c, 1, true, rng);
    if (cfg.aux_head) m.decoder_.aux = Linear<T>::init(cfg.stage_dim(2), 1, true, rng);
    for (auto& [name, t] : m.parameters()) t.set_requires_grad(true);
    return m;
  }

  const BackboneConfig& config() const { return cfg_; }
  const std::array<std::vector<Block<T>>, 4>& stages() const { return stages_; }

  /// Stage outputs at 1/4, 1/8, 1/16, 1/32 of the input resolution.
  BackboneOutput<T> backbone_forward(const Tensor<T>& img, Mode mode, SplitMix64& rng) const {
    const std::size_t stride = cfg_.patch_size * 8;
    if (img.rank() != 3 || img.dim(0) % stride != 0 || img.dim(1) % stride != 0 ||
        img.dim(2) != cfg_.in_channels)
      throw DimensionError("backbone_forward: image " + shape_str(img.shape()) +
                           " must be [H,W," + std::to_string(cfg_.in_channels) +
                           "] with H, W divisible by " + std::to_string(stride));
    BackboneOutput<T> out;
    Tensor<T> x = patch_embed(img, embed_);
    for (std::size_t s = 0; s < 4; ++s) {
      const bool ablate = cfg_.ablate_ssm_stages.count(static_cast<int>(s + 1)) > 0;
      std::vector<ScanOrder> orders;
      for (const auto& b : stages_[s]) {
        if (b.kind == BlockKind::mamba) {
          if (orders.empty()) orders = build_scan(cfg_.scan, x.dim(0), x.dim(1), cfg_.local_window);
          x = vss_block(x, std::get<VSSBlock<T>>(b.body), orders, ablate, b.drop_path, mode, rng);
        } else {
          x = transformer_block(x, std::get<TransformerBlock<T>>(b.body), b.drop_path, mode, rng);
        }
      }
      out.features[s] = x;
      if (s < 3) x = patch_merge(x, merges_[s]);
    }
    return out;
  }

  /// Logits [H/4, W/4, 1] at stage-1 resolution (before the final upsampling).
  Tensor<T> decode_stage1(const std::array<Tensor<T>, 4>& f) const {
    const auto& dec = decoder_;
    const std::size_t h4 = f[3].dim(0), w4 = f[3].dim(1);
    std::vector<Tensor<T>> pyramid{f[3]};
    for (std::size_t i = 0; i < cfg_.ppm_scales.size(); ++i) {
      const std::size_t s = cfg_.ppm_scales[i];
      pyramid.push_back(
          upsample_bilinear(gelu(dec.ppm[i](adaptive_avg_pool(f[3], s, s))), h4, w4));
    }
    std::array<Tensor<T>, 4> p;
    p[3] = gelu(dec.ppm_bottleneck(concat_last(pyramid)));
    for (std::size_t s = 3; s-- > 0;) {
      const Tensor<T> lat = gelu(dec.lateral[s](f[s]));
      p[s] = add(lat, upsample_nearest(p[s + 1], lat.dim(0), lat.dim(1)));
    }
    const std::size_t h1 = f[0].dim(0), w1 = f[0].dim(1);
    std::vector<Tensor<T>> fused;
    for (std::size_t s = 0; s < 4; ++s) {
      Tensor<T> o = s < 3 ? gelu(dec.fpn[s](p[s])) : p[3];
      if (s > 0) o = upsample_bilinear(o, h1, w1);
      fused.push_back(o);
    }
    return dec.classifier(gelu(dec.fuse(concat_last(fused))));
  }

  /// Road logits [H, W, 1].
  Tensor<T> decoder_forward(const std::array<Tensor<T>, 4>& f, std::size_t out_h,
                            std::size_t out_w) const {
    return upsample_bilinear(decode_stage1(f), out_h, out_w);
  }

  /// Auxiliary logits from the stage-3 map (requires aux_head).
  Tensor<T> aux_forward(const std::array<Tensor<T>, 4>& f, std::size_t out_h, std::size_t out_w) const {
    if (!cfg_.aux_head) throw ConfigError("aux head disabled");
    return upsample_bilinear(decoder_.aux(f[2]), out_h, out_w);
  }

  Tensor<T> forward(const Tensor<T>& img, Mode mode, SplitMix64& rng) const {
    return decoder_forward(backbone_forward(img, mode, rng).features, img.dim(0), img.dim(1));
  }

  NamedParams<T> parameters() const {
    NamedParams<T> out;
    embed_.proj.collect("embed.proj", out);
    embed_.norm.collect("embed.norm", out);
    for (std::size_t s = 0; s < 4; ++s) {
      for (std::size_t i = 0; i < stages_[s].size(); ++i) {
        const std::string prefix = "stage" + std::to_string(s + 1) + ".block" + std::to_string(i);
        std::visit([&](const auto& b) { b.collect(prefix, out); }, stages_[s][i].body);
      }
      if (s < 3) {
        const std::string prefix = "merge" + std::to_string(s + 1);
        merges_[s].reduction.collect(prefix + ".reduction", out);
        merges_[s].norm.collect(prefix + ".norm", out);
      }
    }
    for (std::size_t i = 0; i < decoder_.ppm.size(); ++i)
      decoder_.ppm[i].collect("decoder.ppm" + std::to_string(i), out);
    decoder_.ppm_bottleneck.collect("decoder.ppm_bottleneck", out);
    for (std::size_t s = 0; s < 3; ++s) {
      decoder_.lateral[s].collect("decoder.lateral" + std::to_string(s + 1), out);
      decoder_.fpn[s].collect("decoder.fpn" + std::to_string(s + 1), out);
    }
    decoder_.fuse.collect("decoder.fuse", out);
    decoder_.classifier.collect("decoder.classifier", out);
    if (cfg_.aux_head) decoder_.aux.collect("decoder.aux", out);
    return out;
  }

  std::size_t parameter_count() const { return count_params(parameters()); }

 private:
  BackboneConfig cfg_;
  PatchEmbed<T> embed_;
  std::array<std::vector<Block<T>>, 4> stages_;
  std::array<PatchMerge<T>, 3> merges_;
  Decoder<T> decoder_;
};

/// Closed-form parameter count of Model::init(cfg, .).
inline std::size_t predicted_parameter_count(const BackboneConfig& cfg) {
  std::size_t n = PatchEmbed<double>::param_count(cfg.patch_size, cfg.in_channels, cfg.embed_dim);
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t d = cfg.stage_dim(s);
    for (auto k : cfg.stage_layouts[s].kinds)
      n += k == BlockKind::mamba ? VSSBlock<double>::param_count(d, cfg)
                                 : TransformerBlock<double>::param_count(d, cfg);
    if (s < 3) n += PatchMerge<double>::param_count(d);
  }
  return n + Decoder<double>::param_count(cfg);
}

}  // namespace pathmamba
