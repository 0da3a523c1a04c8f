#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "gsfm/core_geom.hpp"

namespace gsfm {

struct Keypoint {
  int image_id = 0;
  Vec2 position = Vec2::Zero();
  std::optional<int> detection_id;
};

using KeypointList = std::vector<Keypoint>;

struct Correspondence {
  int idx_i = 0;  // keypoint index in image i
  int idx_j = 0;  // keypoint index in image j

  auto operator<=>(const Correspondence&) const = default;
};

struct MatchSet {
  int i = 0;
  int j = 0;
  std::vector<Correspondence> matches;

  MatchSet swapped() const {
    MatchSet out{j, i, {}};
    out.matches.reserve(matches.size());
    for (const auto& c : matches) out.matches.push_back({c.idx_j, c.idx_i});
    return out;
  }
};

/// Relative pose of camera i seen from camera j: x_j = rotation * x_i + t,
/// with `direction` = t / |t| (the center of i expressed in frame j).
struct TwoViewMeasurement {
  int i = 0;
  int j = 0;
  Rotation3 rotation;     // jRi
  UnitVector3 direction;  // jti, unit norm
  MatchSet inliers;
  double inlier_ratio = 0.0;
  int n_inliers = 0;

  /// Same measurement stored as iRj / itj.
  TwoViewMeasurement reversed() const {
    TwoViewMeasurement out;
    out.i = j;
    out.j = i;
    out.rotation = rotation.inverse();
    out.direction = UnitVector3::normalized(-(rotation.inverse() * direction.vector()));
    out.inliers = inliers.swapped();
    out.inlier_ratio = inlier_ratio;
    out.n_inliers = n_inliers;
    return out;
  }
};

/// Relative measurement implied by two world_from_camera poses.
inline std::pair<Rotation3, Vec3> relative_from_poses(const Pose3& w_t_i, const Pose3& w_t_j) {
  const Pose3 j_t_i = w_t_j.inverse() * w_t_i;
  return {j_t_i.rotation, j_t_i.translation};
}

struct TrackObservation {
  int image_id = 0;
  int keypoint_index = 0;
  Vec2 px = Vec2::Zero();

  bool operator==(const TrackObservation& o) const {
    return image_id == o.image_id && keypoint_index == o.keypoint_index && px == o.px;
  }
};

/// At most one observation per image, sorted by image id.
struct Track2D {
  std::vector<TrackObservation> observations;

  std::size_t size() const { return observations.size(); }
  bool operator==(const Track2D&) const = default;
};

struct Landmark {
  Track2D track;
  Vec3 point = Vec3::Zero();
  std::vector<bool> inlier_mask;  // parallel to track.observations
  double mean_reprojection_error_px = 0.0;

  std::size_t n_inliers() const {
    std::size_t c = 0;
    for (bool b : inlier_mask) c += b ? 1 : 0;
    return c;
  }
};

}  // namespace gsfm
