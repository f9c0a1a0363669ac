#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pathmamba/error.hpp"
#include "pathmamba/mask.hpp"

namespace pathmamba {

struct Point {
  double row = 0;
  double col = 0;
  bool operator==(const Point&) const = default;
};

inline double distance(const Point& a, const Point& b) { return std::hypot(a.row - b.row, a.col - b.col); }

inline double polyline_length(const std::vector<Point>& pts) {
  double s = 0;
  for (std::size_t i = 1; i < pts.size(); ++i) s += distance(pts[i - 1], pts[i]);
  return s;
}

struct GraphNode {
  std::size_t id = 0;
  double row = 0;
  double col = 0;
  Point point() const { return {row, col}; }
};

/// Undirected edge; `polyline` (optional) is the traced pixel path from u to v.
struct GraphEdge {
  std::size_t u = 0;
  std::size_t v = 0;
  double length = 0;
  std::vector<Point> polyline;
};

/// Undirected road graph; node ids equal their index. Multi-edges and
/// self-loops are allowed.
struct RoadGraph {
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;

  std::size_t add_node(double row, double col) {
    nodes.push_back({nodes.size(), row, col});
    return nodes.size() - 1;
  }

  void add_edge(std::size_t u, std::size_t v, double length, std::vector<Point> polyline = {}) {
    if (u >= nodes.size() || v >= nodes.size()) throw DomainError("edge references a missing node");
    edges.push_back({u, v, length, std::move(polyline)});
  }

  bool empty() const { return nodes.empty(); }

  double total_length() const {
    double s = 0;
    for (const auto& e : edges) s += e.length;
    return s;
  }

  /// Throws if an id is duplicated, an edge dangles, or an edge is shorter
  /// than the straight line between its endpoints.
  void validate() const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i].id != i) throw DomainError("node ids must equal their index");
    for (const auto& e : edges) {
      if (e.u >= nodes.size() || e.v >= nodes.size()) throw DomainError("dangling edge");
      if (e.length < distance(nodes[e.u].point(), nodes[e.v].point()) - 1e-6)
        throw DomainError("edge shorter than the distance between its endpoints");
    }
  }
};

// ---------------------------------------------------------------------------
// Skeletonization

namespace detail {

// Neighbours P2..P9 clockwise from north.
inline constexpr int kRing[8][2] = {{-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}, {-1, -1}};

}  // namespace detail

/// Zhang-Suen thinning, iterated until neither sub-iteration removes a pixel.
inline BinaryMask skeletonize(const BinaryMask& mask) {
  BinaryMask img = mask;
  const long h = static_cast<long>(img.height), w = static_cast<long>(img.width);
  std::vector<std::size_t> doomed;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      doomed.clear();
      for (long r = 0; r < h; ++r)
        for (long c = 0; c < w; ++c) {
          if (!img.get(r, c)) continue;
          int p[8];
          int b = 0;
          for (int k = 0; k < 8; ++k) {
            p[k] = img.get(r + detail::kRing[k][0], c + detail::kRing[k][1]) ? 1 : 0;
            b += p[k];
          }
          if (b < 2 || b > 6) continue;
          int a = 0;
          for (int k = 0; k < 8; ++k) a += (p[k] == 0 && p[(k + 1) % 8] == 1);
          if (a != 1) continue;
          // p[0]=P2 (N), p[2]=P4 (E), p[4]=P6 (S), p[6]=P8 (W)
          const bool cond = pass == 0 ? (p[0] * p[2] * p[4] == 0 && p[2] * p[4] * p[6] == 0)
                                      : (p[0] * p[2] * p[6] == 0 && p[0] * p[4] * p[6] == 0);
          if (cond) doomed.push_back(static_cast<std::size_t>(r * w + c));
        }
      for (auto i : doomed) img.bits[i] = 0;
      changed = changed || !doomed.empty();
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Skeleton -> graph

/// Nodes at skeleton pixels whose 8-neighbour degree is not 2 (adjacent
/// junction pixels are merged into one node), plus one pixel per isolated
/// cycle; edges follow the degree-2 chains between them. Edge length is the
/// polyline length (1 per axial step, sqrt(2) per diagonal step).
inline RoadGraph skeleton_to_graph(const BinaryMask& skel) {
  RoadGraph g;
  const long w = static_cast<long>(skel.width);
  const std::size_t npx = skel.bits.size();
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  auto idx = [w](long r, long c) { return static_cast<std::size_t>(r * w + c); };
  auto pt = [w](std::size_t i) {
    return Point{static_cast<double>(static_cast<long>(i) / w), static_cast<double>(static_cast<long>(i) % w)};
  };
  auto neighbours = [&](std::size_t i) {
    std::vector<std::size_t> out;
    const long r = static_cast<long>(i) / w, c = static_cast<long>(i) % w;
    for (const auto& d : detail::kRing)
      if (skel.get(r + d[0], c + d[1])) out.push_back(idx(r + d[0], c + d[1]));
    return out;
  };

  std::vector<int> degree(npx, 0);
  for (std::size_t i = 0; i < npx; ++i)
    if (skel.bits[i]) degree[i] = static_cast<int>(neighbours(i).size());

  // node assignment: junction clusters, endpoints, isolated pixels
  std::vector<std::size_t> node_of(npx, kNone);
  std::vector<std::size_t> rep_pixel;
  for (std::size_t i = 0; i < npx; ++i) {
    if (!skel.bits[i] || degree[i] == 2 || node_of[i] != kNone) continue;
    std::vector<std::size_t> members{i};
    node_of[i] = rep_pixel.size();
    if (degree[i] >= 3) {
      for (std::size_t k = 0; k < members.size(); ++k)
        for (auto q : neighbours(members[k]))
          if (degree[q] >= 3 && node_of[q] == kNone) {
            node_of[q] = rep_pixel.size();
            members.push_back(q);
          }
    }
    double cr = 0, cc = 0;
    for (auto m : members) {
      cr += pt(m).row;
      cc += pt(m).col;
    }
    const Point centroid{cr / double(members.size()), cc / double(members.size())};
    std::size_t best = members[0];
    for (auto m : members)
      if (distance(pt(m), centroid) < distance(pt(best), centroid) ||
          (distance(pt(m), centroid) == distance(pt(best), centroid) && m < best))
        best = m;
    rep_pixel.push_back(best);
    g.add_node(pt(best).row, pt(best).col);
  }

  auto finish_edge = [&](std::size_t nu, std::size_t nv, const std::vector<std::size_t>& path) {
    std::vector<Point> poly{pt(rep_pixel[nu])};
    for (auto p : path)
      if (!(pt(p) == poly.back())) poly.push_back(pt(p));
    if (!(pt(rep_pixel[nv]) == poly.back())) poly.push_back(pt(rep_pixel[nv]));
    const double len = polyline_length(poly);
    g.add_edge(nu, nv, len, std::move(poly));
  };

  std::vector<bool> visited(npx, false);
  std::set<std::pair<std::size_t, std::size_t>> direct;
  for (std::size_t p = 0; p < npx; ++p) {
    if (node_of[p] == kNone) continue;
    for (auto q : neighbours(p)) {
      if (node_of[q] == node_of[p]) continue;
      if (node_of[q] != kNone) {
        if (direct.insert({std::min(p, q), std::max(p, q)}).second) finish_edge(node_of[p], node_of[q], {p, q});
        continue;
      }
      if (visited[q]) continue;
      std::vector<std::size_t> path{p, q};
      visited[q] = true;
      std::size_t prev = p, cur = q;
      std::size_t end_node = kNone;
      while (true) {
        std::size_t next = kNone;
        for (auto n : neighbours(cur))
          if (n != prev) {
            next = n;
            break;
          }
        if (next == kNone) break;
        path.push_back(next);
        if (node_of[next] != kNone) {
          end_node = node_of[next];
          break;
        }
        if (visited[next]) break;
        visited[next] = true;
        prev = cur;
        cur = next;
      }
      if (end_node == kNone) continue;
      // a two-pixel bridge back into the same junction cluster is not a road
      if (end_node == node_of[p] && path.size() <= 3) continue;
      finish_edge(node_of[p], end_node, path);
    }
  }

  // isolated cycles: every pixel has degree 2 and none was reached
  for (std::size_t s = 0; s < npx; ++s) {
    if (!skel.bits[s] || degree[s] != 2 || visited[s]) continue;
    const std::size_t node = rep_pixel.size();
    rep_pixel.push_back(s);
    node_of[s] = node;
    g.add_node(pt(s).row, pt(s).col);
    visited[s] = true;
    std::vector<std::size_t> path{s};
    std::size_t prev = s, cur = neighbours(s)[0];
    while (cur != s && !visited[cur]) {
      visited[cur] = true;
      path.push_back(cur);
      std::size_t next = kNone;
      for (auto n : neighbours(cur))
        if (n != prev) {
          next = n;
          break;
        }
      if (next == kNone) break;
      prev = cur;
      cur = next;
    }
    path.push_back(s);
    std::vector<Point> poly;
    for (auto p : path) poly.push_back(pt(p));
    const double len = polyline_length(poly);
    g.add_edge(node, node, len, std::move(poly));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Control nodes, snapping, shortest paths

namespace detail {

// Point at arc length s along a polyline (clamped to its ends).
inline Point point_at(const std::vector<Point>& poly, const std::vector<double>& cum, double s) {
  if (s <= 0) return poly.front();
  if (s >= cum.back()) return poly.back();
  const auto it = std::upper_bound(cum.begin(), cum.end(), s);
  const std::size_t i = static_cast<std::size_t>(it - cum.begin());
  const double seg = cum[i] - cum[i - 1];
  const double t = seg > 0 ? (s - cum[i - 1]) / seg : 0.0;
  return {poly[i - 1].row + t * (poly[i].row - poly[i - 1].row),
          poly[i - 1].col + t * (poly[i].col - poly[i - 1].col)};
}

}  // namespace detail

/// Splits every edge longer than `spacing` into ceil(length/spacing) equal
/// pieces, with new nodes placed at the matching arc-length positions along
/// the edge geometry (straight segment when no polyline is stored).
inline RoadGraph inject_control_nodes(const RoadGraph& g, double spacing) {
  if (!(spacing > 0)) throw DomainError("control node spacing must be positive");
  RoadGraph out;
  out.nodes = g.nodes;
  for (const auto& e : g.edges) {
    if (e.length <= spacing) {
      out.edges.push_back(e);
      continue;
    }
    const auto k = static_cast<std::size_t>(std::ceil(e.length / spacing));
    std::vector<Point> poly = e.polyline;
    if (poly.size() < 2) poly = {g.nodes[e.u].point(), g.nodes[e.v].point()};
    std::vector<double> cum{0.0};
    for (std::size_t i = 1; i < poly.size(); ++i) cum.push_back(cum.back() + distance(poly[i - 1], poly[i]));
    const double geo = cum.back();
    const double piece = e.length / static_cast<double>(k);
    std::size_t prev_node = e.u;
    std::size_t poly_i = 1;
    std::vector<Point> sub{poly.front()};
    for (std::size_t j = 1; j <= k; ++j) {
      const double s = geo * static_cast<double>(j) / static_cast<double>(k);
      while (poly_i < poly.size() && cum[poly_i] < s) sub.push_back(poly[poly_i++]);
      std::size_t node;
      Point at;
      if (j == k) {
        node = e.v;
        at = poly.back();
        while (poly_i < poly.size()) sub.push_back(poly[poly_i++]);
      } else {
        at = detail::point_at(poly, cum, s);
        node = out.add_node(at.row, at.col);
      }
      if (!(sub.back() == at)) sub.push_back(at);
      out.edges.push_back({prev_node, node, piece, sub});
      sub = {at};
      prev_node = node;
    }
  }
  return out;
}

/// For each node of `from`, the nearest node of `to` within `max_dist`
/// (ties to the lower id), or nullopt.
inline std::vector<std::optional<std::size_t>> snap_nodes(const RoadGraph& from, const RoadGraph& to,
                                                          double max_dist) {
  std::vector<std::optional<std::size_t>> out(from.nodes.size());
  for (std::size_t i = 0; i < from.nodes.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < to.nodes.size(); ++j) {
      const double d = distance(from.nodes[i].point(), to.nodes[j].point());
      if (d <= max_dist && d < best) {
        best = d;
        out[i] = j;
      }
    }
  }
  return out;
}

using Adjacency = std::vector<std::vector<std::pair<std::size_t, double>>>;

inline Adjacency adjacency(const RoadGraph& g) {
  Adjacency adj(g.nodes.size());
  for (const auto& e : g.edges) {
    adj[e.u].push_back({e.v, e.length});
    if (e.u != e.v) adj[e.v].push_back({e.u, e.length});
  }
  return adj;
}

/// Dijkstra from `src`; unreachable nodes get +infinity.
inline std::vector<double> distances_from(const Adjacency& adj, std::size_t src) {
  std::vector<double> dist(adj.size(), std::numeric_limits<double>::infinity());
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  dist[src] = 0;
  pq.push({0.0, src});
  while (!pq.empty()) {
    const auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[u]) continue;
    for (const auto& [v, len] : adj[u])
      if (d + len < dist[v]) {
        dist[v] = d + len;
        pq.push({dist[v], v});
      }
  }
  return dist;
}

inline std::optional<double> shortest_path_length(const RoadGraph& g, std::size_t u, std::size_t v) {
  if (u >= g.nodes.size() || v >= g.nodes.size()) throw DomainError("shortest_path_length: no such node");
  const double d = distances_from(adjacency(g), u)[v];
  if (std::isinf(d)) return std::nullopt;
  return d;
}

// ---------------------------------------------------------------------------
// APLS

struct APLSOptions {
  double spacing = 50.0;
  double snap_dist = 4.0;
  bool symmetric = false;
};

struct APLSReport {
  double score = 0.0;
  std::size_t path_count = 0;
  std::size_t missing_paths = 0;
  std::vector<double> terms;
  std::optional<double> reverse_score;  // pred -> gt direction when symmetric
};

namespace detail {

inline APLSReport apls_one_way(const RoadGraph& gt, const RoadGraph& pred, double spacing, double snap_dist) {
  APLSReport rep;
  if (gt.empty() && pred.empty()) {
    rep.score = 1.0;
    return rep;
  }
  if (gt.empty() || pred.empty()) {
    rep.score = 0.0;
    return rep;
  }
  const RoadGraph g = inject_control_nodes(gt, spacing);
  const RoadGraph p = inject_control_nodes(pred, spacing);
  const auto snap = snap_nodes(g, p, snap_dist);
  const Adjacency gadj = adjacency(g), padj = adjacency(p);
  std::map<std::size_t, std::vector<double>> pred_dist;
  for (std::size_t a = 0; a < g.nodes.size(); ++a) {
    const auto dist = distances_from(gadj, a);
    for (std::size_t b = a + 1; b < g.nodes.size(); ++b) {
      const double l = dist[b];
      if (std::isinf(l) || !(l > 0)) continue;
      double term = 1.0;
      if (snap[a] && snap[b]) {
        auto it = pred_dist.find(*snap[a]);
        if (it == pred_dist.end()) it = pred_dist.emplace(*snap[a], distances_from(padj, *snap[a])).first;
        const double lp = it->second[*snap[b]];
        if (!std::isinf(lp)) term = std::min(1.0, std::abs(l - lp) / l);
      }
      if (term == 1.0) ++rep.missing_paths;
      rep.terms.push_back(term);
    }
  }
  rep.path_count = rep.terms.size();
  if (rep.path_count == 0) {
    rep.score = 1.0;
    return rep;
  }
  double s = 0;
  for (double t : rep.terms) s += t;
  rep.score = 1.0 - s / static_cast<double>(rep.path_count);
  return rep;
}

}  // namespace detail

/// 1 - mean over ground-truth control-node pairs (a, b) of
/// min{1, |L(a,b) - L(a',b')| / L(a,b)}, where a', b' are the snapped
/// prediction nodes; unsnapped or disconnected pairs contribute 1.
/// `missing_paths` counts pairs whose term saturated at 1.
inline APLSReport apls(const RoadGraph& gt, const RoadGraph& pred, const APLSOptions& opt = {}) {
  if (!(opt.spacing > 0) || !(opt.snap_dist > 0)) throw DomainError("apls: spacing and snap_dist must be positive");
  APLSReport rep = detail::apls_one_way(gt, pred, opt.spacing, opt.snap_dist);
  if (opt.symmetric) {
    const APLSReport back = detail::apls_one_way(pred, gt, opt.spacing, opt.snap_dist);
    rep.reverse_score = back.score;
    rep.score = 0.5 * (rep.score + back.score);
  }
  return rep;
}

inline APLSReport apls(const RoadGraph& gt, const RoadGraph& pred, double spacing, double snap_dist,
                       bool symmetric) {
  return apls(gt, pred, APLSOptions{spacing, snap_dist, symmetric});
}

/// Skeleton graph of a mask.
inline RoadGraph mask_to_graph(const BinaryMask& m) { return skeleton_to_graph(skeletonize(m)); }

// ---------------------------------------------------------------------------
// Plain-text edge list: "NODES n EDGES m", n lines "id row col", m lines "u v length".

inline void write_graph(std::ostream& os, const RoadGraph& g) {
  os << "NODES " << g.nodes.size() << " EDGES " << g.edges.size() << '\n';
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& n : g.nodes) os << n.id << ' ' << n.row << ' ' << n.col << '\n';
  for (const auto& e : g.edges) os << e.u << ' ' << e.v << ' ' << e.length << '\n';
}

inline RoadGraph read_graph(std::istream& is) {
  std::string tag1, tag2;
  std::size_t n = 0, m = 0;
  if (!(is >> tag1 >> n >> tag2 >> m) || tag1 != "NODES" || tag2 != "EDGES")
    throw ParseError("graph file: expected header 'NODES n EDGES m'");
  RoadGraph g;
  for (std::size_t i = 0; i < n; ++i) {
    GraphNode node;
    if (!(is >> node.id >> node.row >> node.col)) throw ParseError("graph file: truncated node list");
    if (node.id != i) throw ParseError("graph file: node ids must be 0..n-1 in order");
    g.nodes.push_back(node);
  }
  for (std::size_t i = 0; i < m; ++i) {
    GraphEdge e;
    if (!(is >> e.u >> e.v >> e.length)) throw ParseError("graph file: truncated edge list");
    if (e.u >= n || e.v >= n) throw ParseError("graph file: edge references a missing node");
    g.edges.push_back(e);
  }
  return g;
}

}  // namespace pathmamba
