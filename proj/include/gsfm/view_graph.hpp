#pragma once

// View graph over accepted two-view measurements, triplet cycle-consistency
// filtering and connected-component extraction.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "gsfm/core_geom.hpp"
#include "gsfm/executor.hpp"
#include "gsfm/types.hpp"

namespace gsfm {

using EdgeKey = std::pair<int, int>;  // (min, max)

inline EdgeKey edge_key(int a, int b) { return {std::min(a, b), std::max(a, b)}; }

/// Edges are keyed by (min, max). The stored measurement keeps whatever
/// orientation it arrived with; rotation_from_to() corrects for it.
struct ViewGraph {
  std::set<int> vertices;
  std::map<EdgeKey, TwoViewMeasurement> edges;

  void add(const TwoViewMeasurement& m) {
    if (m.i == m.j) throw Error(ErrorCode::kInvalidArgument, "view graph edge needs distinct endpoints");
    vertices.insert(m.i);
    vertices.insert(m.j);
    edges[edge_key(m.i, m.j)] = m;
  }

  bool has_edge(int a, int b) const { return edges.count(edge_key(a, b)) > 0; }

  /// Rotation bRa taking frame-a coordinates into frame b.
  Rotation3 rotation_from_to(int a, int b) const {
    const TwoViewMeasurement& m = edges.at(edge_key(a, b));
    if (m.i == a && m.j == b) return m.rotation;
    return m.rotation.inverse();
  }

  std::map<int, std::vector<int>> adjacency() const {
    std::map<int, std::vector<int>> adj;
    for (int v : vertices) adj[v];
    for (const auto& [k, m] : edges) {
      adj[k.first].push_back(k.second);
      adj[k.second].push_back(k.first);
    }
    for (auto& [v, n] : adj) std::sort(n.begin(), n.end());
    return adj;
  }
};

/// Angle (degrees) of the loop composition iRk * kRj * jRi for the loop
/// i -> j -> k -> i.
inline double triplet_cycle_error(const Rotation3& j_r_i, const Rotation3& k_r_j, const Rotation3& i_r_k) {
  return rotation_angular_error(Rotation3::identity(), i_r_k * k_r_j * j_r_i);
}

struct Triplet {
  int a, b, c;  // a < b < c
};

/// All triangles, enumerated by sorted adjacency intersection.
inline std::vector<Triplet> enumerate_triplets(const ViewGraph& g) {
  const auto adj = g.adjacency();
  std::vector<Triplet> out;
  for (const auto& [k, m] : g.edges) {
    const auto& na = adj.at(k.first);
    const auto& nb = adj.at(k.second);
    std::vector<int> common;
    std::set_intersection(na.begin(), na.end(), nb.begin(), nb.end(), std::back_inserter(common));
    for (int c : common) {
      if (c > k.second) out.push_back({k.first, k.second, c});
    }
  }
  return out;
}

inline double triplet_error(const ViewGraph& g, const Triplet& t) {
  return triplet_cycle_error(g.rotation_from_to(t.a, t.b), g.rotation_from_to(t.b, t.c),
                             g.rotation_from_to(t.c, t.a));
}

struct CycleErrorRecord {
  int i = 0;  // i < j
  int j = 0;
  std::vector<double> errors_deg;  // stage-1 triplet errors
  std::vector<double> stage2_errors_deg;
  double min_error_deg = 0.0;     // NaN when the edge is in no triplet
  double median_error_deg = 0.0;  // over stage-2 triplets; NaN when none
  bool kept_stage1 = true;
  bool kept_stage2 = true;
};

struct CycleFilterResult {
  ViewGraph graph;
  std::vector<CycleErrorRecord> records;  // one per input edge, key order
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace view_graph_detail {

inline std::map<EdgeKey, std::vector<double>> per_edge_errors(const ViewGraph& g, Executor* ex) {
  const auto tris = enumerate_triplets(g);
  auto task = [&](std::size_t t) { return triplet_error(g, tris[t]); };
  std::vector<double> errs;
  if (ex) {
    errs = ex->map("view_graph.triplets", tris.size(), task);
  } else {
    for (std::size_t t = 0; t < tris.size(); ++t) errs.push_back(task(t));
  }
  std::map<EdgeKey, std::vector<double>> out;
  for (std::size_t t = 0; t < tris.size(); ++t) {
    out[{tris[t].a, tris[t].b}].push_back(errs[t]);
    out[{tris[t].b, tris[t].c}].push_back(errs[t]);
    out[{tris[t].a, tris[t].c}].push_back(errs[t]);
  }
  return out;
}

}  // namespace view_graph_detail

/// Stage 1 keeps edges whose minimum triplet error is below epsilon; stage 2
/// recomputes triplets on the survivors and keeps edges whose median error is
/// below epsilon. Edges in no triplet pass the stage they cannot be tested in.
inline CycleFilterResult two_stage_cycle_filter(const ViewGraph& g, double epsilon_deg, Executor* ex = nullptr) {
  CycleFilterResult out;
  const auto e1 = view_graph_detail::per_edge_errors(g, ex);
  ViewGraph g1;
  std::map<EdgeKey, CycleErrorRecord> rec;
  for (const auto& [k, m] : g.edges) {
    CycleErrorRecord r;
    r.i = k.first;
    r.j = k.second;
    auto it = e1.find(k);
    if (it != e1.end()) {
      r.errors_deg = it->second;
      r.min_error_deg = *std::min_element(it->second.begin(), it->second.end());
      r.kept_stage1 = r.min_error_deg < epsilon_deg;
    } else {
      r.min_error_deg = std::numeric_limits<double>::quiet_NaN();
    }
    if (r.kept_stage1) g1.add(m);
    rec[k] = r;
  }
  const auto e2 = view_graph_detail::per_edge_errors(g1, ex);
  for (auto& [k, r] : rec) {
    if (!r.kept_stage1) {
      r.kept_stage2 = false;
      r.median_error_deg = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    auto it = e2.find(k);
    if (it != e2.end()) {
      r.stage2_errors_deg = it->second;
      r.median_error_deg = median_of(it->second);
      r.kept_stage2 = r.median_error_deg < epsilon_deg;
    } else {
      r.median_error_deg = std::numeric_limits<double>::quiet_NaN();
    }
    if (r.kept_stage2) out.graph.add(g.edges.at(k));
  }
  // Vertices whose edges all failed are dropped; isolated input vertices too.
  for (auto& [k, r] : rec) out.records.push_back(r);
  return out;
}

/// Subgraph induced by the largest connected component; ties go to the
/// component with the smallest minimum vertex id.
inline ViewGraph largest_connected_component(const ViewGraph& g) {
  std::map<int, int> comp;
  const auto adj = g.adjacency();
  int n_comp = 0;
  std::vector<std::pair<int, int>> sizes;  // (size, min vertex)
  for (int v : g.vertices) {
    if (comp.count(v)) continue;
    std::vector<int> stack{v};
    comp[v] = n_comp;
    int size = 0;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      ++size;
      for (int w : adj.at(u)) {
        if (!comp.count(w)) {
          comp[w] = n_comp;
          stack.push_back(w);
        }
      }
    }
    sizes.push_back({size, v});  // vertices are visited in ascending order
    ++n_comp;
  }
  ViewGraph out;
  if (sizes.empty()) return out;
  int best = 0;
  for (int c = 1; c < n_comp; ++c) {
    if (sizes[c].first > sizes[best].first) best = c;
  }
  for (int v : g.vertices) {
    if (comp[v] == best) out.vertices.insert(v);
  }
  for (const auto& [k, m] : g.edges) {
    if (comp[k.first] == best) out.edges[k] = m;
  }
  return out;
}

inline void write_cycle_csv(const std::string& path, const std::vector<CycleErrorRecord>& records) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::kIo, "cannot write " + path);
  f << "i,j,min_cycle_error_deg,median_cycle_error_deg,kept_stage1,kept_stage2\n";
  f << std::setprecision(17);
  for (const auto& r : records) {
    f << r.i << ',' << r.j << ',' << r.min_error_deg << ',' << r.median_error_deg << ','
      << (r.kept_stage1 ? 1 : 0) << ',' << (r.kept_stage2 ? 1 : 0) << '\n';
  }
  if (!f) throw Error(ErrorCode::kIo, "failed writing " + path);
}

}  // namespace gsfm
