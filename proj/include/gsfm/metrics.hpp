#pragma once

// Accuracy metrics against ground truth: relative pose errors, Sim(3)-aligned
// global errors, pose AUC with unregistered cameras counted as failures, and
// track statistics.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "gsfm/core_geom.hpp"
#include "gsfm/error.hpp"
#include "gsfm/types.hpp"

namespace gsfm {

using PoseById = std::map<int, Pose3>;

struct DistributionStats {
  std::size_t count = 0;
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double median = 0.0;
  std::vector<double> samples;
};

/// Non-finite samples are kept in `samples` but excluded from the summary.
inline DistributionStats summarize(std::vector<double> samples) {
  DistributionStats d;
  d.samples = samples;
  std::vector<double> v;
  for (double x : samples) {
    if (std::isfinite(x)) v.push_back(x);
  }
  d.count = v.size();
  if (v.empty()) return d;
  std::sort(v.begin(), v.end());
  d.min = v.front();
  d.max = v.back();
  double s = 0.0;
  for (double x : v) s += x;
  d.mean = s / static_cast<double>(v.size());
  const std::size_t n = v.size();
  d.median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  return d;
}

struct RelativePoseError {
  int i = 0;
  int j = 0;
  double rotation_deg = 0.0;
  double translation_deg = 0.0;  // NaN when a baseline is zero
  double pose_deg = 0.0;
  bool translation_defined = true;
};

inline constexpr double kMinBaseline = 1e-12;

/// Per pair: rotation error between estimated and true jRi, angle between the
/// relative directions, and their maximum. Pairs with a zero baseline report
/// translation_defined = false and use the rotation error as pose error.
inline std::vector<RelativePoseError> relative_pose_errors(const PoseById& est, const PoseById& gt,
                                                           std::span<const std::pair<int, int>> pairs) {
  std::vector<RelativePoseError> out;
  out.reserve(pairs.size());
  for (const auto& [i, j] : pairs) {
    if (!est.count(i) || !est.count(j) || !gt.count(i) || !gt.count(j)) {
      throw Error(ErrorCode::kMissingPose, "pose missing for pair (" + std::to_string(i) + ", " + std::to_string(j) + ")");
    }
    const auto [re, te] = relative_from_poses(est.at(i), est.at(j));
    const auto [rg, tg] = relative_from_poses(gt.at(i), gt.at(j));
    RelativePoseError e;
    e.i = i;
    e.j = j;
    e.rotation_deg = rotation_angular_error(re, rg);
    if (te.norm() < kMinBaseline || tg.norm() < kMinBaseline) {
      e.translation_defined = false;
      e.translation_deg = std::numeric_limits<double>::quiet_NaN();
      e.pose_deg = e.rotation_deg;
    } else {
      e.translation_deg = direction_angular_error(te, tg);
      e.pose_deg = std::max(e.rotation_deg, e.translation_deg);
    }
    out.push_back(e);
  }
  return out;
}

struct GlobalPoseErrors {
  std::vector<int> image_ids;  // registered cameras with ground truth, ascending
  std::vector<double> rotation_deg;
  std::vector<double> translation_deg;
  std::vector<double> pose_deg;
  std::size_t n_registered = 0;
  std::size_t n_unregistered = 0;  // ground-truth cameras missing from the estimate
  Sim3 alignment;
};

/// Angle between position vectors; zero vectors compare equal only to
/// themselves (0 deg), otherwise 180 deg.
inline double position_angular_error(const Vec3& a, const Vec3& b) {
  const bool za = a.norm() < kMinBaseline;
  const bool zb = b.norm() < kMinBaseline;
  if (za || zb) return (za && zb) ? 0.0 : 180.0;
  return direction_angular_error(a, b);
}

/// Aligns the estimate onto the ground truth with sim3_align over common
/// cameras, then reports per-camera rotation error and the angle between the
/// aligned and true position vectors.
inline GlobalPoseErrors global_pose_errors(const PoseById& est, const PoseById& gt) {
  GlobalPoseErrors out;
  std::vector<Pose3> e, g;
  for (const auto& [id, pose] : gt) {
    auto it = est.find(id);
    if (it == est.end()) {
      ++out.n_unregistered;
      continue;
    }
    out.image_ids.push_back(id);
    e.push_back(it->second);
    g.push_back(pose);
  }
  out.n_registered = e.size();
  if (e.size() < 2) throw Error(ErrorCode::kDegenerate, "global errors need >= 2 common cameras");
  out.alignment = sim3_align(e, g);
  for (std::size_t k = 0; k < e.size(); ++k) {
    const Pose3 a = out.alignment.apply(e[k]);
    const double r = rotation_angular_error(a.rotation, g[k].rotation);
    const double t = position_angular_error(a.translation, g[k].translation);
    out.rotation_deg.push_back(r);
    out.translation_deg.push_back(t);
    out.pose_deg.push_back(std::max(r, t));
  }
  return out;
}

inline const std::vector<double>& default_auc_thresholds_deg() {
  static const std::vector<double> t{1.0, 2.5, 5.0, 10.0, 20.0};
  return t;
}

/// AUC(t) = 100 / t * integral_0^t recall(e) de, where recall counts all
/// cameras and unregistered ones never count. Recall is a step function of the
/// sorted errors, so the integral is sum_k max(0, t - e_k) / N.
inline std::map<double, double> pose_auc(std::span<const double> errors_deg, std::size_t n_unregistered,
                                         std::span<const double> thresholds_deg = default_auc_thresholds_deg()) {
  for (std::size_t k = 0; k < thresholds_deg.size(); ++k) {
    if (!(thresholds_deg[k] > 0.0) || (k > 0 && !(thresholds_deg[k] > thresholds_deg[k - 1]))) {
      throw Error(ErrorCode::kInvalidArgument, "AUC thresholds must be positive and ascending");
    }
  }
  std::vector<double> sorted(errors_deg.begin(), errors_deg.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size() + n_unregistered);
  std::map<double, double> out;
  for (double t : thresholds_deg) {
    if (n == 0) {
      out[t] = 0.0;
      continue;
    }
    double area = 0.0;
    for (double e : sorted) {
      if (!(e < t)) break;  // NaN and infinity sort last or fail here
      area += t - std::max(e, 0.0);
    }
    out[t] = std::clamp(100.0 * area / (t * n), 0.0, 100.0);
  }
  return out;
}

struct TrackStatistics {
  std::size_t n_tracks = 0;
  DistributionStats length;
  std::optional<double> mean_reprojection_error_px;  // unset without tracks
};

/// Track length counts inlier observations.
inline TrackStatistics track_statistics(std::span<const Landmark> landmarks) {
  TrackStatistics s;
  s.n_tracks = landmarks.size();
  std::vector<double> lengths;
  double sum = 0.0;
  for (const auto& lm : landmarks) {
    lengths.push_back(static_cast<double>(lm.inlier_mask.empty() ? lm.track.size() : lm.n_inliers()));
    sum += lm.mean_reprojection_error_px;
  }
  s.length = summarize(std::move(lengths));
  if (!landmarks.empty()) s.mean_reprojection_error_px = sum / static_cast<double>(landmarks.size());
  return s;
}

struct MetricsReport {
  DistributionStats relative_rotation_error_deg;
  DistributionStats relative_translation_error_deg;
  DistributionStats relative_pose_error_deg;
  std::size_t n_cameras_total = 0;
  std::size_t n_registered_cameras = 0;
  std::size_t n_tracks_filtered = 0;
  DistributionStats track_length;
  std::optional<double> track_mean_reprojection_error_px;
  DistributionStats global_rotation_error_deg;
  DistributionStats global_translation_error_deg;
  std::map<double, double> pose_auc;  // threshold deg -> percent
};

/// Relative errors are taken over every registered pair.
inline MetricsReport compute_metrics(const PoseById& est, const PoseById& gt, std::span<const Landmark> landmarks) {
  MetricsReport r;
  r.n_cameras_total = gt.size();
  std::vector<int> reg;
  for (const auto& [id, p] : gt) {
    if (est.count(id)) reg.push_back(id);
  }
  r.n_registered_cameras = reg.size();
  std::vector<std::pair<int, int>> pairs;
  for (std::size_t a = 0; a < reg.size(); ++a) {
    for (std::size_t b = a + 1; b < reg.size(); ++b) pairs.push_back({reg[a], reg[b]});
  }
  std::vector<double> rr, rt, rp;
  for (const auto& e : relative_pose_errors(est, gt, pairs)) {
    rr.push_back(e.rotation_deg);
    rt.push_back(e.translation_deg);
    rp.push_back(e.pose_deg);
  }
  r.relative_rotation_error_deg = summarize(rr);
  r.relative_translation_error_deg = summarize(rt);
  r.relative_pose_error_deg = summarize(rp);
  const auto ts = track_statistics(landmarks);
  r.n_tracks_filtered = ts.n_tracks;
  r.track_length = ts.length;
  r.track_mean_reprojection_error_px = ts.mean_reprojection_error_px;
  if (reg.size() >= 2) {
    const auto g = global_pose_errors(est, gt);
    r.global_rotation_error_deg = summarize(g.rotation_deg);
    r.global_translation_error_deg = summarize(g.translation_deg);
    r.pose_auc = pose_auc(g.pose_deg, g.n_unregistered);
  } else {
    r.pose_auc = pose_auc(std::vector<double>(reg.size(), std::numeric_limits<double>::infinity()),
                          gt.size() - reg.size());
  }
  return r;
}

}  // namespace gsfm
