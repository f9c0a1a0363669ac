#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pathmamba/backbone.hpp"
#include "pathmamba/gradcheck.hpp"
#include "pathmamba/mask.hpp"
#include "pathmamba/ops.hpp"
#include "pathmamba/rng.hpp"
#include "pathmamba/scan2d.hpp"
#include "pathmamba/ssm.hpp"
#include "pathmamba/supervision.hpp"

namespace pathmamba {

/// A named finite-difference check; `run` returns the worst relative error.
struct GradCase {
  std::string module;
  std::string name;
  double tolerance = 1e-6;
  std::function<double()> run;
};

struct GradResult {
  std::string module;
  std::string name;
  double error = 0;
  double tolerance = 0;
  bool pass() const { return error < tolerance; }
};

namespace detail {

inline Tensor<double> rand_t(Shape s, SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.vec()) v = rng.uniform(lo, hi);
  return t;
}

// Scalar probe sum(y * w) with a fixed random weight so every output element
// receives a distinct upstream gradient.
inline Tensor<double> probe(const Tensor<double>& y, std::uint64_t key) {
  SplitMix64 rng = SplitMix64::keyed(0x9C, key);
  return sum(mul(y, rand_t(y.shape(), rng)));
}

inline BinaryMask rand_mask(std::size_t h, std::size_t w, SplitMix64& rng) {
  BinaryMask m(h, w);
  for (auto& b : m.bits) b = rng.bernoulli(0.3) ? 1 : 0;
  return m;
}

template <class F>
GradCase unary_case(const std::string& module, const std::string& name, Shape s, F op, double lo = -2.0,
                    double hi = 2.0) {
  return {module, name, 1e-6, [=] {
            SplitMix64 rng = SplitMix64::keyed(0x6C, std::hash<std::string>{}(name));
            Tensor<double> x = rand_t(s, rng, lo, hi);
            return grad_check_params([&] { return probe(op(x), 1); }, {x});
          }};
}

}  // namespace detail

/// Every differentiable operation plus one end-to-end toy model.
inline std::vector<GradCase> gradcheck_cases() {
  using detail::probe;
  using detail::rand_t;
  using T = Tensor<double>;
  std::vector<GradCase> cs;
  auto seeded = [](const std::string& name) { return SplitMix64::keyed(0x6C, std::hash<std::string>{}(name)); };

  // ---- ops
  cs.push_back({"ops", "matmul", 1e-6, [=] {
                  auto rng = seeded("matmul");
                  T a = rand_t({3, 4}, rng), b = rand_t({4, 5}, rng);
                  return grad_check_params([&] { return probe(matmul(a, b), 2); }, {a, b});
                }});
  cs.push_back({"ops", "linear", 1e-6, [=] {
                  auto rng = seeded("linear");
                  T x = rand_t({2, 3, 4}, rng), w = rand_t({4, 5}, rng), b = rand_t({5}, rng);
                  return grad_check_params([&] { return probe(linear(x, w, b), 3); }, {x, w, b});
                }});
  for (auto [name, op] : std::vector<std::pair<std::string, BinaryOp>>{
           {"add", BinaryOp::add}, {"sub", BinaryOp::sub}, {"mul", BinaryOp::mul}}) {
    cs.push_back({"ops", name, 1e-6, [=] {
                    auto rng = seeded(name);
                    T a = rand_t({3, 4}, rng), b = rand_t({3, 4}, rng), s = rand_t({1}, rng);
                    return std::max(grad_check_params([&] { return probe(binary(op, a, b), 4); }, {a, b}),
                                    grad_check_params([&] { return probe(binary(op, a, s), 5); }, {a, s}));
                  }});
  }
  cs.push_back(detail::unary_case("ops", "silu", {3, 5}, [](const T& x) { return silu(x); }));
  cs.push_back(detail::unary_case("ops", "gelu", {3, 5}, [](const T& x) { return gelu(x); }));
  cs.push_back(detail::unary_case("ops", "softplus", {3, 5}, [](const T& x) { return softplus(x); }));
  cs.push_back(detail::unary_case("ops", "exp", {3, 5}, [](const T& x) { return exp(x); }));
  cs.push_back(detail::unary_case("ops", "sigmoid", {3, 5}, [](const T& x) { return sigmoid(x); }));
  cs.push_back(detail::unary_case("ops", "relu", {3, 5}, [](const T& x) { return relu(x); }));
  cs.push_back(detail::unary_case("ops", "neg", {3, 5}, [](const T& x) { return neg(x); }));
  cs.push_back(detail::unary_case("ops", "scale", {3, 5}, [](const T& x) { return scale(x, 1.7); }));
  cs.push_back({"ops", "layer_norm", 1e-6, [=] {
                  auto rng = seeded("layer_norm");
                  T x = rand_t({4, 6}, rng), g = rand_t({6}, rng, 0.5, 1.5), b = rand_t({6}, rng);
                  return grad_check_params([&] { return probe(layer_norm(x, g, b), 6); }, {x, g, b});
                }});
  cs.push_back(detail::unary_case("ops", "softmax", {3, 6}, [](const T& x) { return softmax(x); }));
  cs.push_back(detail::unary_case("ops", "transpose", {3, 4}, [](const T& x) { return transpose(x); }));
  cs.push_back(detail::unary_case("ops", "reshape", {3, 4}, [](const T& x) { return reshape(x, {2, 6}); }));
  cs.push_back(detail::unary_case("ops", "gather_rows", {4, 3},
                                  [](const T& x) { return gather_rows(x, {3, 0, 0, 2, 1}, {5, 3}); }));
  cs.push_back(detail::unary_case("ops", "slice_last", {3, 6}, [](const T& x) { return slice_last(x, 2, 3); }));
  cs.push_back({"ops", "concat_last", 1e-6, [=] {
                  auto rng = seeded("concat_last");
                  T a = rand_t({3, 2}, rng), b = rand_t({3, 4}, rng);
                  return grad_check_params([&] { return probe(concat_last<double>({a, b, a}), 7); }, {a, b});
                }});
  cs.push_back(detail::unary_case("ops", "sum", {3, 4}, [](const T& x) { return scale(sum(x), 0.7); }));
  cs.push_back(detail::unary_case("ops", "mean", {3, 4}, [](const T& x) { return scale(mean(x), 1.3); }));
  cs.push_back(detail::unary_case("ops", "patchify", {4, 6, 2}, [](const T& x) { return patchify(x, 2); }));
  cs.push_back(detail::unary_case("ops", "adaptive_avg_pool", {6, 5, 2},
                                  [](const T& x) { return adaptive_avg_pool(x, 4, 3); }));
  cs.push_back(detail::unary_case("ops", "upsample_nearest", {3, 2, 2},
                                  [](const T& x) { return upsample_nearest(x, 6, 5); }));
  cs.push_back(detail::unary_case("ops", "upsample_bilinear", {3, 2, 2},
                                  [](const T& x) { return upsample_bilinear(x, 7, 5); }));

  // ---- ssm
  for (auto mode : {ScanMode::sequential, ScanMode::parallel}) {
    const std::string name = mode == ScanMode::sequential ? "selective_scan/sequential" : "selective_scan/parallel";
    cs.push_back({"ssm", name, 1e-6, [=] {
                    auto rng = seeded(name);
                    const std::size_t L = 7, D = 3, N = 4;
                    T u = rand_t({L, D}, rng), delta = rand_t({L, D}, rng, 0.05, 1.0);
                    T A = rand_t({D, N}, rng, -2.0, -0.2), B = rand_t({L, N}, rng), C = rand_t({L, N}, rng);
                    return grad_check_params([&] { return probe(selective_scan(u, delta, A, B, C, mode), 8); },
                                             {u, delta, A, B, C});
                  }});
  }
  cs.push_back({"ssm", "selective_scan/small_a", 1e-6, [=] {
                  // |delta * a| around the series/closed-form switch points
                  auto rng = seeded("small_a");
                  const std::size_t L = 5, D = 2, N = 3;
                  T u = rand_t({L, D}, rng), delta = rand_t({L, D}, rng, 0.5, 1.0);
                  T A({D, N}, std::vector<double>{-1e-5, -5e-5, -2e-4, -3e-3, -8e-3, -2e-2});
                  T B = rand_t({L, N}, rng), C = rand_t({L, N}, rng);
                  return grad_check_params([&] { return probe(selective_scan(u, delta, A, B, C), 9); },
                                           {u, delta, A, B, C});
                }});
  cs.push_back({"ssm", "ssm_forward", 1e-6, [=] {
                  auto rng = seeded("ssm_forward");
                  auto p = SSMParams<double>::init(4, 6, 3, rng);
                  for (auto& v : p.delta_proj.bias.vec()) v += 1.0;  // larger steps exercise the dynamics
                  T x = rand_t({6, 4}, rng);
                  NamedParams<double> ps;
                  p.collect("ssm", ps);
                  std::vector<T> ts{x};
                  for (auto& [n, t] : ps) ts.push_back(t);
                  return grad_check_params([&] { return probe(ssm_forward(x, p), 10); }, ts);
                }});

  // ---- scan2d
  for (auto strat : {ScanStrategy::cross, ScanStrategy::local}) {
    const std::string name = "multi_directional_ssm/" + to_string(strat);
    cs.push_back({"scan2d", name, 1e-6, [=] {
                    auto rng = seeded(name);
                    auto p = SSMParams<double>::init(3, 3, 2, rng);
                    for (auto& v : p.delta_proj.bias.vec()) v += 1.0;
                    T fm = rand_t({3, 4, 3}, rng);
                    const auto orders = build_scan(strat, 3, 4, 2);
                    NamedParams<double> ps;
                    p.collect("ssm", ps);
                    std::vector<T> ts{fm};
                    for (auto& [n, t] : ps) ts.push_back(t);
                    return grad_check_params([&] { return probe(multi_directional_ssm(fm, orders, p), 11); }, ts);
                  }});
  }

  // ---- backbone blocks
  BackboneConfig small = BackboneConfig::toy();
  small.embed_dim = 4;
  small.ssm_state = 3;
  small.mlp_ratio = 2;
  small.heads = 2;
  cs.push_back({"backbone", "vss_block", 1e-6, [=] {
                  auto rng = seeded("vss_block");
                  auto b = VSSBlock<double>::init(4, small, rng);
                  for (auto& v : b.ssm.delta_proj.bias.vec()) v += 1.0;
                  T fm = rand_t({2, 3, 4}, rng);
                  const auto orders = build_cross_scan(2, 3);
                  NamedParams<double> ps;
                  b.collect("b", ps);
                  std::vector<T> ts{fm};
                  for (auto& [n, t] : ps) ts.push_back(t);
                  SplitMix64 dp(0);
                  return grad_check_params(
                      [&] { return probe(vss_block(fm, b, orders, false, 0.0, Mode::eval, dp), 12); }, ts);
                }});
  cs.push_back({"backbone", "transformer_block", 1e-6, [=] {
                  auto rng = seeded("transformer_block");
                  auto b = TransformerBlock<double>::init(4, small, rng);
                  T fm = rand_t({2, 3, 4}, rng);
                  NamedParams<double> ps;
                  b.collect("b", ps);
                  std::vector<T> ts{fm};
                  for (auto& [n, t] : ps) ts.push_back(t);
                  SplitMix64 dp(0);
                  return grad_check_params([&] { return probe(transformer_block(fm, b, 0.0, Mode::eval, dp), 13); },
                                           ts);
                }});
  cs.push_back({"backbone", "patch_embed", 1e-6, [=] {
                  auto rng = seeded("patch_embed");
                  PatchEmbed<double> pe;
                  pe.patch = 2;
                  pe.proj = Linear<double>::init(2 * 2 * 3, 4, true, rng);
                  pe.norm = LayerNorm<double>::init(4);
                  T img = rand_t({4, 6, 3}, rng);
                  return grad_check_params([&] { return probe(patch_embed(img, pe), 14); },
                                           {img, pe.proj.weight, pe.proj.bias, pe.norm.gamma, pe.norm.beta});
                }});
  cs.push_back({"backbone", "patch_merge", 1e-6, [=] {
                  auto rng = seeded("patch_merge");
                  PatchMerge<double> pm{Linear<double>::init(4 * 3, 6, true, rng), LayerNorm<double>::init(6)};
                  T fm = rand_t({4, 2, 3}, rng);
                  return grad_check_params([&] { return probe(patch_merge(fm, pm), 15); },
                                           {fm, pm.reduction.weight, pm.reduction.bias, pm.norm.gamma, pm.norm.beta});
                }});
  cs.push_back({"backbone", "end_to_end_model", 1e-4, [=] {
                  BackboneConfig c = BackboneConfig::toy();
                  c.embed_dim = 4;
                  c.ssm_state = 2;
                  c.mlp_ratio = 2;
                  c.heads = 2;
                  c.decoder_channels = 4;
                  c.ppm_scales = {1, 2};
                  c.aux_head = false;
                  auto m = Model<double>::init(c, 7);
                  auto rng = seeded("end_to_end_model");
                  T img = rand_t({32, 32, 3}, rng);
                  const BinaryMask target = detail::rand_mask(32, 32, rng);
                  LossConfig lc;
                  NamedParams<double> ps = m.parameters();
                  std::vector<T> ts;
                  for (auto& [n, t] : ps) ts.push_back(t);
                  // 20 coordinates spread over the network
                  std::vector<Coordinate> coords;
                  for (std::size_t k = 0; k < 20; ++k) {
                    const std::size_t t = k * ts.size() / 20;
                    coords.emplace_back(t, static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(ts[t].numel()) - 1)));
                  }
                  SplitMix64 dp(0);
                  return grad_check_params([&] { return combined_loss(m.forward(img, Mode::eval, dp), target, lc); },
                                           ts, 1e-6, coords);
                }});

  // ---- supervision
  auto loss_case = [&](const std::string& name, std::function<T(const T&, const BinaryMask&)> f) {
    cs.push_back({"supervision", name, 1e-6, [=] {
                    auto rng = seeded(name);
                    T z = rand_t({4, 5, 1}, rng, -3.0, 3.0);
                    const BinaryMask t = detail::rand_mask(4, 5, rng);
                    return grad_check_params([&] { return f(z, t); }, {z});
                  }});
  };
  loss_case("bce_loss", [](const T& z, const BinaryMask& t) { return bce_loss(z, t); });
  loss_case("focal_loss", [](const T& z, const BinaryMask& t) { return focal_loss(z, t, 2.0, 0.25); });
  loss_case("focal_loss/gamma0.5", [](const T& z, const BinaryMask& t) { return focal_loss(z, t, 0.5, 0.6); });
  loss_case("dice_loss", [](const T& z, const BinaryMask& t) { return dice_loss(z, t, 1.0); });
  loss_case("combined_loss/focal_dice", [](const T& z, const BinaryMask& t) { return combined_loss(z, t, LossConfig{}); });
  loss_case("combined_loss/bce_dice", [](const T& z, const BinaryMask& t) {
    LossConfig c;
    c.variant = LossVariant::bce_dice;
    c.weight_pixel = 0.7;
    return combined_loss(z, t, c);
  });
  return cs;
}

inline std::vector<std::string> gradcheck_modules() { return {"ops", "ssm", "scan2d", "backbone", "supervision"}; }

/// Runs the cases of one module ("all" runs everything).
inline std::vector<GradResult> run_gradcheck(const std::string& module = "all") {
  const auto mods = gradcheck_modules();
  if (module != "all" && std::find(mods.begin(), mods.end(), module) == mods.end())
    throw ConfigError("unknown gradcheck module '" + module + "' (expected all|ops|ssm|scan2d|backbone|supervision)");
  std::vector<GradResult> out;
  for (const auto& c : gradcheck_cases())
    if (module == "all" || c.module == module) out.push_back({c.module, c.name, c.run(), c.tolerance});
  return out;
}

}  // namespace pathmamba
