#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "pathmamba/error.hpp"
#include "pathmamba/ops.hpp"
#include "pathmamba/ssm.hpp"
#include "pathmamba/tensor.hpp"

namespace pathmamba {

enum class ScanLabel { row_lr, row_rl, col_tb, col_bt, local_k };

inline std::string to_string(ScanLabel l) {
  switch (l) {
    case ScanLabel::row_lr: return "row_lr";
    case ScanLabel::row_rl: return "row_rl";
    case ScanLabel::col_tb: return "col_tb";
    case ScanLabel::col_bt: return "col_bt";
    case ScanLabel::local_k: return "local_k";
  }
  return "?";
}

/// Bijection between sequence positions and flat pixel indices of an H x W
/// grid: forward[t] is the pixel visited at step t; inverse[pixel] is its step.
struct ScanOrder {
  std::vector<std::size_t> forward;
  std::vector<std::size_t> inverse;
  ScanLabel label = ScanLabel::row_lr;

  static ScanOrder from_forward(std::vector<std::size_t> fwd, ScanLabel label) {
    ScanOrder o;
    o.inverse.assign(fwd.size(), 0);
    for (std::size_t t = 0; t < fwd.size(); ++t) o.inverse.at(fwd[t]) = t;
    o.forward = std::move(fwd);
    o.label = label;
    return o;
  }

  std::size_t size() const { return forward.size(); }

  ScanOrder reversed(ScanLabel label) const {
    std::vector<std::size_t> r(forward.rbegin(), forward.rend());
    return from_forward(std::move(r), label);
  }

  bool is_bijection() const {
    if (inverse.size() != forward.size()) return false;
    std::vector<bool> seen(forward.size(), false);
    for (std::size_t t = 0; t < forward.size(); ++t) {
      const std::size_t p = forward[t];
      if (p >= forward.size() || seen[p] || inverse[p] != t) return false;
      seen[p] = true;
    }
    return true;
  }
};

enum class ScanStrategy { uni, bi, cross, local };

inline std::string to_string(ScanStrategy s) {
  switch (s) {
    case ScanStrategy::uni: return "uni";
    case ScanStrategy::bi: return "bi";
    case ScanStrategy::cross: return "cross";
    case ScanStrategy::local: return "local";
  }
  return "?";
}

inline ScanStrategy parse_scan_strategy(const std::string& s) {
  if (s == "uni") return ScanStrategy::uni;
  if (s == "bi") return ScanStrategy::bi;
  if (s == "cross") return ScanStrategy::cross;
  if (s == "local") return ScanStrategy::local;
  throw ParseError("unknown scan strategy '" + s + "' (expected uni|bi|cross|local)");
}

namespace detail {

inline void check_grid(std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw DomainError("scan order needs positive grid dimensions");
}

inline ScanOrder row_major(std::size_t h, std::size_t w) {
  std::vector<std::size_t> f(h * w);
  for (std::size_t i = 0; i < h * w; ++i) f[i] = i;
  return ScanOrder::from_forward(std::move(f), ScanLabel::row_lr);
}

inline ScanOrder column_major(std::size_t h, std::size_t w) {
  std::vector<std::size_t> f;
  f.reserve(h * w);
  for (std::size_t c = 0; c < w; ++c)
    for (std::size_t r = 0; r < h; ++r) f.push_back(r * w + c);
  return ScanOrder::from_forward(std::move(f), ScanLabel::col_tb);
}

}  // namespace detail

/// Row-major, its reversal, column-major, its reversal.
inline std::vector<ScanOrder> build_cross_scan(std::size_t h, std::size_t w) {
  detail::check_grid(h, w);
  const ScanOrder rows = detail::row_major(h, w);
  const ScanOrder cols = detail::column_major(h, w);
  return {rows, rows.reversed(ScanLabel::row_rl), cols, cols.reversed(ScanLabel::col_bt)};
}

inline std::vector<ScanOrder> build_uni_scan(std::size_t h, std::size_t w) {
  detail::check_grid(h, w);
  return {detail::row_major(h, w)};
}

inline std::vector<ScanOrder> build_bi_scan(std::size_t h, std::size_t w) {
  detail::check_grid(h, w);
  const ScanOrder rows = detail::row_major(h, w);
  return {rows, rows.reversed(ScanLabel::row_rl)};
}

/// k x k tiles visited in row-major tile order, row-major inside each tile
/// (edge tiles may be smaller), plus the variants with reversed tile order,
/// reversed intra-tile order, and both.
inline std::vector<ScanOrder> build_local_scan(std::size_t h, std::size_t w, std::size_t k) {
  detail::check_grid(h, w);
  if (k == 0) throw DomainError("local scan window must be positive");
  const std::size_t th = (h + k - 1) / k, tw = (w + k - 1) / k;
  std::vector<std::vector<std::size_t>> tiles;
  for (std::size_t ti = 0; ti < th; ++ti)
    for (std::size_t tj = 0; tj < tw; ++tj) {
      std::vector<std::size_t> tile;
      for (std::size_t r = ti * k; r < std::min(h, (ti + 1) * k); ++r)
        for (std::size_t c = tj * k; c < std::min(w, (tj + 1) * k); ++c) tile.push_back(r * w + c);
      tiles.push_back(std::move(tile));
    }
  std::vector<ScanOrder> out;
  for (int variant = 0; variant < 4; ++variant) {
    const bool rev_tiles = variant & 1, rev_inner = variant & 2;
    std::vector<std::size_t> f;
    f.reserve(h * w);
    for (std::size_t i = 0; i < tiles.size(); ++i) {
      const auto& tile = tiles[rev_tiles ? tiles.size() - 1 - i : i];
      if (rev_inner)
        f.insert(f.end(), tile.rbegin(), tile.rend());
      else
        f.insert(f.end(), tile.begin(), tile.end());
    }
    out.push_back(ScanOrder::from_forward(std::move(f), ScanLabel::local_k));
  }
  return out;
}

inline std::vector<ScanOrder> build_scan(ScanStrategy s, std::size_t h, std::size_t w,
                                         std::size_t local_window = 2) {
  switch (s) {
    case ScanStrategy::uni: return build_uni_scan(h, w);
    case ScanStrategy::bi: return build_bi_scan(h, w);
    case ScanStrategy::cross: return build_cross_scan(h, w);
    case ScanStrategy::local: return build_local_scan(h, w, local_window);
  }
  return {};
}

/// [H, W, d] -> [H*W, d]; row t is the pixel at o.forward[t].
template <class T>
Tensor<T> serialize(const Tensor<T>& fm, const ScanOrder& o) {
  if (fm.rank() != 3 || fm.dim(0) * fm.dim(1) != o.size())
    throw DimensionError("serialize: map " + shape_str(fm.shape()) + " vs order of length " +
                         std::to_string(o.size()));
  return gather_rows(fm, o.forward, {o.size(), fm.dim(2)});
}

/// Inverse of serialize: [H*W, d] -> [H, W, d].
template <class T>
Tensor<T> deserialize(const Tensor<T>& seq, const ScanOrder& o, std::size_t h, std::size_t w) {
  if (seq.rank() != 2 || seq.dim(0) != o.size() || h * w != o.size())
    throw DimensionError("deserialize: sequence " + shape_str(seq.shape()) +
                         " vs order of length " + std::to_string(o.size()));
  return gather_rows(seq, o.inverse, {h, w, seq.dim(1)});
}

/// Runs the shared SSM along every order and sums the directional outputs
/// (summation in list order).
template <class T>
Tensor<T> multi_directional_ssm(const Tensor<T>& fm, const std::vector<ScanOrder>& orders,
                                const SSMParams<T>& p, bool ablate_identity = false,
                                ScanMode mode = ScanMode::sequential) {
  if (orders.empty()) throw DomainError("multi_directional_ssm: no scan orders");
  const std::size_t h = fm.dim(0), w = fm.dim(1);
  Tensor<T> acc;
  for (const auto& o : orders) {
    Tensor<T> y = deserialize(ssm_forward(serialize(fm, o), p, ablate_identity, mode), o, h, w);
    acc = acc.defined() ? add(acc, y) : y;
  }
  return acc;
}

}  // namespace pathmamba
