#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "pathmamba/error.hpp"
#include "pathmamba/mask.hpp"
#include "pathmamba/ops.hpp"
#include "pathmamba/tensor.hpp"

namespace pathmamba {

enum class LossVariant { bce_dice, focal_dice };

struct LossConfig {
  LossVariant variant = LossVariant::focal_dice;
  double weight_pixel = 1.0;
  double weight_region = 1.0;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double dice_smooth = 1.0;

  void validate() const {
    if (weight_pixel < 0 || weight_region < 0) throw ConfigError("loss weights must be >= 0");
    if (focal_gamma < 0) throw ConfigError("focal_gamma must be >= 0");
    if (focal_alpha < 0 || focal_alpha > 1) throw ConfigError("focal_alpha must be in [0,1]");
    if (!(dice_smooth > 0)) throw ConfigError("dice_smooth must be > 0");
  }
};

inline std::string to_string(LossVariant v) { return v == LossVariant::bce_dice ? "bce_dice" : "focal_dice"; }

inline LossVariant parse_loss_variant(const std::string& s) {
  if (s == "bce_dice") return LossVariant::bce_dice;
  if (s == "focal_dice") return LossVariant::focal_dice;
  throw ParseError("unknown loss variant '" + s + "'");
}

namespace detail {

template <class T>
void check_logits(const Tensor<T>& logits, const BinaryMask& target) {
  if (logits.numel() != target.height * target.width ||
      (logits.rank() >= 2 && (logits.dim(0) != target.height || logits.dim(1) != target.width)))
    throw DimensionError("loss: logits " + shape_str(logits.shape()) + " vs mask " +
                         std::to_string(target.height) + "x" + std::to_string(target.width));
}

}  // namespace detail

/// Mean binary cross-entropy on logits: softplus(z) - t*z per pixel.
template <class T>
Tensor<T> bce_loss(const Tensor<T>& logits, const BinaryMask& target) {
  detail::check_logits(logits, target);
  const std::size_t n = logits.numel();
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T z = logits[i];
    acc += detail::softplus(z) - (target.bits[i] ? z : T(0));
  }
  Tensor<T> out = Tensor<T>::scalar(acc / T(n));
  if (needs_record<T>(logits)) {
    record_op(out, [logits, target, n](std::span<const T> g) {
      if (T* gz = grad_sink(logits))
        for (std::size_t i = 0; i < n; ++i)
          gz[i] += g[0] * (detail::sigmoid(logits[i]) - T(target.bits[i] ? 1 : 0)) / T(n);
    });
  }
  return out;
}

/// Mean of -alpha_t (1 - p_t)^gamma log p_t.
template <class T>
Tensor<T> focal_loss(const Tensor<T>& logits, const BinaryMask& target, double gamma, double alpha) {
  detail::check_logits(logits, target);
  const std::size_t n = logits.numel();
  const T gm = T(gamma);
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool pos = target.bits[i] != 0;
    const T zs = pos ? logits[i] : -logits[i];  // p_t = sigmoid(zs)
    const T at = T(pos ? alpha : 1.0 - alpha);
    const T q = detail::sigmoid(-zs);           // 1 - p_t
    const T log_pt = -detail::softplus(-zs);
    acc += -at * std::pow(q, gm) * log_pt;
  }
  Tensor<T> out = Tensor<T>::scalar(acc / T(n));
  if (needs_record<T>(logits)) {
    record_op(out, [logits, target, n, gm, alpha](std::span<const T> g) {
      T* gz = grad_sink(logits);
      if (!gz) return;
      for (std::size_t i = 0; i < n; ++i) {
        const bool pos = target.bits[i] != 0;
        const T zs = pos ? logits[i] : -logits[i];
        const T at = T(pos ? alpha : 1.0 - alpha);
        const T pt = detail::sigmoid(zs);
        const T q = detail::sigmoid(-zs);
        const T log_pt = -detail::softplus(-zs);
        // d/dzs of -at q^g log pt = at q^g (g pt log pt - q)
        const T d = at * std::pow(q, gm) * (gm * pt * log_pt - q);
        gz[i] += g[0] * (pos ? d : -d) / T(n);
      }
    });
  }
  return out;
}

/// Soft Dice over the whole image: 1 - (2 sum(p t) + s) / (sum p + sum t + s).
template <class T>
Tensor<T> dice_loss(const Tensor<T>& logits, const BinaryMask& target, double smooth) {
  detail::check_logits(logits, target);
  const std::size_t n = logits.numel();
  const T s = T(smooth);
  T inter = 0, psum = 0, tsum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T p = detail::sigmoid(logits[i]);
    const T t = target.bits[i] ? T(1) : T(0);
    inter += p * t;
    psum += p;
    tsum += t;
  }
  const T num = T(2) * inter + s, den = psum + tsum + s;
  Tensor<T> out = Tensor<T>::scalar(T(1) - num / den);
  if (needs_record<T>(logits)) {
    record_op(out, [logits, target, n, num, den](std::span<const T> g) {
      T* gz = grad_sink(logits);
      if (!gz) return;
      for (std::size_t i = 0; i < n; ++i) {
        const T p = detail::sigmoid(logits[i]);
        const T t = target.bits[i] ? T(1) : T(0);
        const T dp = -(T(2) * t * den - num) / (den * den);
        gz[i] += g[0] * dp * p * (T(1) - p);
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> combined_loss(const Tensor<T>& logits, const BinaryMask& target, const LossConfig& cfg) {
  const Tensor<T> pixel = cfg.variant == LossVariant::bce_dice
                              ? bce_loss(logits, target)
                              : focal_loss(logits, target, cfg.focal_gamma, cfg.focal_alpha);
  const Tensor<T> region = dice_loss(logits, target, cfg.dice_smooth);
  return add(scale(pixel, T(cfg.weight_pixel)), scale(region, T(cfg.weight_region)));
}

/// sigmoid(z) > 0.5, i.e. z > 0.
template <class T>
BinaryMask threshold_logits(const Tensor<T>& logits, std::size_t h, std::size_t w) {
  if (logits.numel() != h * w) throw DimensionError("threshold_logits: size mismatch");
  BinaryMask m(h, w);
  for (std::size_t i = 0; i < h * w; ++i) m.bits[i] = logits[i] > T(0) ? 1 : 0;
  return m;
}

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0;
};

inline Confusion confusion(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw DimensionError("metric: mask shapes differ");
  Confusion c;
  for (std::size_t i = 0; i < pred.bits.size(); ++i) {
    const bool p = pred.bits[i] != 0, g = gt.bits[i] != 0;
    c.tp += p && g;
    c.fp += p && !g;
    c.fn += !p && g;
  }
  return c;
}

/// Road-class IoU = TP / (TP + FP + FN); 1 when both masks are empty.
inline double iou(const BinaryMask& pred, const BinaryMask& gt) {
  const Confusion c = confusion(pred, gt);
  const std::size_t den = c.tp + c.fp + c.fn;
  return den == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(den);
}

/// F1 = 2TP / (2TP + FP + FN); 1 when both masks are empty.
inline double f1(const BinaryMask& pred, const BinaryMask& gt) {
  const Confusion c = confusion(pred, gt);
  const std::size_t den = 2 * c.tp + c.fp + c.fn;
  return den == 0 ? 1.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(den);
}

}  // namespace pathmamba
