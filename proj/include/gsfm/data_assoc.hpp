#pragma once

// Track building with a disjoint-set forest over (image, keypoint) nodes, and
// per-track RANSAC triangulation with two-view DLT hypotheses.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "gsfm/core_geom.hpp"
#include "gsfm/error.hpp"
#include "gsfm/executor.hpp"
#include "gsfm/triangulation.hpp"
#include "gsfm/types.hpp"

namespace gsfm {

class DisjointSet {
 public:
  explicit DisjointSet(std::size_t n) : parent_(n), rank_(n, 0) { std::iota(parent_.begin(), parent_.end(), 0); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent_[b] = a;
    if (rank_[a] == rank_[b]) ++rank_[a];
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<int> rank_;
};

/// Transitive closure of inlier correspondences. Tracks holding two distinct
/// keypoints of one image are dropped. Output is sorted by each track's
/// first (image, keypoint) node, so it does not depend on input order.
inline std::vector<Track2D> build_tracks(std::span<const TwoViewMeasurement> measurements,
                                         const std::vector<KeypointList>& keypoints) {
  std::map<std::pair<int, int>, std::size_t> node_id;
  for (const auto& m : measurements) {
    for (const auto& c : m.inliers.matches) {
      node_id.try_emplace({m.i, c.idx_i}, 0);
      node_id.try_emplace({m.j, c.idx_j}, 0);
    }
  }
  std::vector<std::pair<int, int>> nodes;
  nodes.reserve(node_id.size());
  for (auto& [key, id] : node_id) {
    id = nodes.size();
    nodes.push_back(key);
  }
  DisjointSet ds(nodes.size());
  for (const auto& m : measurements) {
    for (const auto& c : m.inliers.matches) ds.unite(node_id.at({m.i, c.idx_i}), node_id.at({m.j, c.idx_j}));
  }
  // Nodes are visited in (image, keypoint) order, so members come out sorted.
  std::map<std::size_t, std::vector<std::size_t>> groups;
  std::vector<std::size_t> first_of_root;
  for (std::size_t n = 0; n < nodes.size(); ++n) groups[ds.find(n)].push_back(n);
  std::vector<std::vector<std::size_t>> ordered;
  for (auto& [root, members] : groups) ordered.push_back(std::move(members));
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });

  std::vector<Track2D> out;
  for (const auto& members : ordered) {
    Track2D t;
    bool conflict = false;
    for (std::size_t k = 0; k < members.size(); ++k) {
      const auto [img, kp] = nodes[members[k]];
      if (k > 0 && nodes[members[k - 1]].first == img) {
        conflict = true;
        break;
      }
      if (img < 0 || img >= static_cast<int>(keypoints.size()) || kp < 0 ||
          kp >= static_cast<int>(keypoints[img].size())) {
        throw Error(ErrorCode::kInvalidArgument, "match references a missing keypoint");
      }
      t.observations.push_back({img, kp, keypoints[img][kp].position});
    }
    if (!conflict && t.size() >= 2) out.push_back(std::move(t));
  }
  return out;
}

struct TriangulationConfig {
  std::size_t min_track_length = 3;
  double reproj_threshold_px = 10.0;
  int max_hypotheses = 100;
  double min_triangulation_angle_rad = 1e-3;
  int max_refine_iters = 3;
};

using PoseMap = std::map<int, Pose3>;
using IntrinsicsMap = std::map<int, CameraIntrinsics>;

namespace data_assoc_detail {

struct View {
  std::size_t obs_index;
  Pose3 pose;
  CameraIntrinsics k;
  Vec2 px;
  Vec2 xy;  // undistorted normalized
};

inline double reproj_error(const View& v, const Vec3& x) {
  const auto uv = project(x, v.pose, v.k);
  return uv ? (*uv - v.px).norm() : std::numeric_limits<double>::infinity();
}

inline Vec3 dlt(const std::vector<View>& views, const std::vector<std::size_t>& which) {
  std::vector<RayObservation> rays;
  rays.reserve(which.size());
  for (std::size_t w : which) rays.push_back({views[w].pose, views[w].xy});
  return triangulate_dlt(rays);
}

}  // namespace data_assoc_detail

/// RANSAC over two-view DLT hypotheses (every view pair when there are at most
/// cfg.max_hypotheses, otherwise that many pairs drawn without replacement),
/// scored by inlier count at cfg.reproj_threshold_px. The point is then
/// re-estimated by DLT over the inliers and the mask recomputed, up to
/// cfg.max_refine_iters times. Observations whose camera has no pose are
/// masked out.
inline Landmark triangulate_ransac_dlt(const Track2D& track, const PoseMap& poses, const IntrinsicsMap& intrinsics,
                                       const TriangulationConfig& cfg, std::uint64_t seed) {
  using namespace data_assoc_detail;
  if (track.size() < cfg.min_track_length) throw Error(ErrorCode::kTrackTooShort, "track is shorter than minimum");
  std::vector<View> views;
  for (std::size_t o = 0; o < track.observations.size(); ++o) {
    const auto& ob = track.observations[o];
    auto p = poses.find(ob.image_id);
    auto k = intrinsics.find(ob.image_id);
    if (p == poses.end() || k == intrinsics.end()) continue;
    views.push_back({o, p->second, k->second, ob.px, pixel_to_normalized(ob.px, k->second)});
  }
  if (views.size() < std::max<std::size_t>(2, cfg.min_track_length)) {
    throw Error(ErrorCode::kTrackTooShort, "too few observations with a registered camera");
  }

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < views.size(); ++a) {
    for (std::size_t b = a + 1; b < views.size(); ++b) pairs.push_back({a, b});
  }
  if (static_cast<int>(pairs.size()) > cfg.max_hypotheses) {
    std::mt19937_64 rng(seed);
    std::shuffle(pairs.begin(), pairs.end(), rng);
    pairs.resize(cfg.max_hypotheses);
  }

  auto inliers_of = [&](const Vec3& x, double* sq) {
    std::vector<std::size_t> in;
    double s = 0.0;
    for (std::size_t v = 0; v < views.size(); ++v) {
      const double e = reproj_error(views[v], x);
      if (e <= cfg.reproj_threshold_px) {
        in.push_back(v);
        s += e * e;
      }
    }
    if (sq) *sq = s;
    return in;
  };

  std::vector<std::size_t> best_in;
  double best_sq = 0.0;
  bool have = false;
  for (const auto& [a, b] : pairs) {
    Vec3 x;
    try {
      x = dlt(views, {a, b});
    } catch (const Error&) {
      continue;
    }
    double sq = 0.0;
    auto in = inliers_of(x, &sq);
    if (!have || in.size() > best_in.size() || (in.size() == best_in.size() && sq < best_sq)) {
      best_in = std::move(in);
      best_sq = sq;
      have = true;
    }
  }
  if (!have || best_in.size() < 2) throw Error(ErrorCode::kDegenerate, "no triangulation hypothesis has support");

  Vec3 x = dlt(views, best_in);
  for (int it = 0; it < cfg.max_refine_iters; ++it) {
    auto in = inliers_of(x, nullptr);
    if (in == best_in || in.size() < 2) break;
    best_in = std::move(in);
    x = dlt(views, best_in);
  }
  if (best_in.size() < cfg.min_track_length) throw Error(ErrorCode::kTrackTooShort, "too few inlier observations");

  double max_angle = 0.0;
  for (std::size_t a = 0; a < best_in.size(); ++a) {
    for (std::size_t b = a + 1; b < best_in.size(); ++b) {
      max_angle = std::max(max_angle, ray_angle(views[best_in[a]].pose.translation,
                                                views[best_in[b]].pose.translation, x));
    }
  }
  if (max_angle < cfg.min_triangulation_angle_rad) throw Error(ErrorCode::kDegenerate, "rays are nearly parallel");

  Landmark lm;
  lm.track = track;
  lm.point = x;
  lm.inlier_mask.assign(track.size(), false);
  double sum = 0.0;
  for (std::size_t v : best_in) {
    const double e = reproj_error(views[v], x);
    if (!std::isfinite(e)) throw Error(ErrorCode::kBehindCamera, "triangulated point is behind an inlier camera");
    lm.inlier_mask[views[v].obs_index] = true;
    sum += e;
  }
  lm.mean_reprojection_error_px = sum / static_cast<double>(best_in.size());
  return lm;
}

/// Plain DLT over every observation with a registered camera.
inline Vec3 triangulate_track_dlt(const Track2D& track, const PoseMap& poses, const IntrinsicsMap& intrinsics) {
  std::vector<RayObservation> rays;
  for (const auto& ob : track.observations) {
    auto p = poses.find(ob.image_id);
    auto k = intrinsics.find(ob.image_id);
    if (p == poses.end() || k == intrinsics.end()) continue;
    rays.push_back({p->second, pixel_to_normalized(ob.px, k->second)});
  }
  return triangulate_dlt(rays);
}

struct TriangulationOutcome {
  std::optional<Landmark> landmark;
  std::optional<ErrorCode> failure;
};

/// Triangulates every track as an independent task seeded by its index.
inline std::vector<TriangulationOutcome> triangulate_tracks(std::span<const Track2D> tracks, const PoseMap& poses,
                                                            const IntrinsicsMap& intrinsics,
                                                            const TriangulationConfig& cfg, std::uint64_t seed,
                                                            Executor* ex = nullptr) {
  auto task = [&](std::size_t t) {
    TriangulationOutcome o;
    try {
      o.landmark = triangulate_ransac_dlt(tracks[t], poses, intrinsics, cfg, task_seed(seed, 0x74726b ^ t));
    } catch (const Error& e) {
      o.failure = e.code();
    }
    return o;
  };
  if (ex) return ex->map("data_assoc.triangulate", tracks.size(), task);
  std::vector<TriangulationOutcome> out;
  for (std::size_t t = 0; t < tracks.size(); ++t) out.push_back(task(t));
  return out;
}

}  // namespace gsfm
