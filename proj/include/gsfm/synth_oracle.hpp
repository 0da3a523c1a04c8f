#pragma once

// Synthetic scenes: cameras on horizontal rings looking at a cube of random
// points, exact or noisy keypoints, pairwise matches from shared visibility
// and view-direction descriptors. Outlier pairs can be injected either as a
// consistent but wrong geometry (a rotated phantom copy of the scene) or as
// random correspondences.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <vector>

#include "gsfm/core_geom.hpp"
#include "gsfm/error.hpp"
#include "gsfm/retrieval.hpp"
#include "gsfm/types.hpp"

namespace gsfm {

struct OrbitSceneConfig {
  int n_cameras = 20;
  int n_points = 500;
  double radius = 5.0;
  double point_volume_side = 2.0;
  double noise_px = 0.0;
  std::uint64_t seed = 0;
  int n_rings = 1;
  double ring_spacing = 0.6;  // vertical distance between rings
  double height_jitter = 0.25;
  double look_at_jitter = 0.2;
  double dropout = 0.0;  // probability of discarding a visible observation
  double outlier_match_fraction = 0.0;  // per pair, correspondences re-pointed at a random keypoint of j
  int image_width = 760;
  int image_height = 570;
  double focal_px = 600.0;
  double k1 = 0.0;
  double k2 = 0.0;
  int descriptor_dim = 32;
  double descriptor_noise = 0.15;
};

struct SyntheticScene {
  std::vector<Pose3> gt_poses;  // world_from_camera, indexed by image id
  std::vector<Vec3> gt_points;
  CameraIntrinsics intrinsics;
  std::vector<std::vector<bool>> visibility;  // [camera][point]
  std::uint64_t seed = 0;
};

struct SyntheticData {
  SyntheticScene scene;
  std::vector<KeypointList> keypoints;          // per image
  std::vector<std::vector<int>> point_of_kp;    // keypoint -> point index, -1 for phantom keypoints
  std::vector<MatchSet> matches;                // every pair with shared visibility, i < j
  std::vector<GlobalDescriptor> descriptors;
};

/// world_from_camera pose at `center` looking at `target`, camera y axis
/// pointing down (world z is up).
inline Pose3 look_at(const Vec3& center, const Vec3& target) {
  const Vec3 z = (target - center).normalized();
  Vec3 up(0, 0, 1);
  if (std::abs(z.dot(up)) > 0.999) up = Vec3(0, 1, 0);
  const Vec3 x = z.cross(up).normalized();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return {Rotation3::from_matrix(r, 1e-6), center};
}

inline SyntheticData generate_orbit_scene(const OrbitSceneConfig& cfg) {
  if (cfg.n_cameras < 3 || cfg.n_points < 10) {
    throw Error(ErrorCode::kInvalidArgument, "orbit scene needs >= 3 cameras and >= 10 points");
  }
  if (cfg.n_rings < 1 || !(cfg.radius > 0) || !(cfg.point_volume_side > 0) || cfg.noise_px < 0 ||
      cfg.dropout < 0 || cfg.dropout >= 1 || cfg.descriptor_dim < 4 || cfg.outlier_match_fraction < 0 ||
      cfg.outlier_match_fraction >= 1) {
    throw Error(ErrorCode::kInvalidArgument, "invalid orbit scene configuration");
  }
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  SyntheticData d;
  SyntheticScene& s = d.scene;
  s.seed = cfg.seed;
  s.intrinsics = {cfg.focal_px, cfg.k1, cfg.k2, 0.5 * cfg.image_width, 0.5 * cfg.image_height};
  s.intrinsics.validate();

  const int per_ring = (cfg.n_cameras + cfg.n_rings - 1) / cfg.n_rings;
  for (int c = 0; c < cfg.n_cameras; ++c) {
    const int ring = c / per_ring;
    const int slot = c % per_ring;
    const double theta = 2.0 * std::numbers::pi * slot / per_ring + 0.3 * ring;
    const double h = (ring - 0.5 * (cfg.n_rings - 1)) * cfg.ring_spacing + cfg.height_jitter * unit(rng);
    const Vec3 center(cfg.radius * std::cos(theta), cfg.radius * std::sin(theta), h);
    const Vec3 target = cfg.look_at_jitter * Vec3(unit(rng), unit(rng), unit(rng));
    s.gt_poses.push_back(look_at(center, target));
  }
  for (int p = 0; p < cfg.n_points; ++p) {
    s.gt_points.push_back(0.5 * cfg.point_volume_side * Vec3(unit(rng), unit(rng), unit(rng)));
  }

  // Visibility and keypoints. Noise is drawn only for visible observations,
  // in camera-major order.
  s.visibility.assign(cfg.n_cameras, std::vector<bool>(cfg.n_points, false));
  d.keypoints.resize(cfg.n_cameras);
  d.point_of_kp.resize(cfg.n_cameras);
  std::vector<std::vector<int>> kp_of_point(cfg.n_cameras, std::vector<int>(cfg.n_points, -1));
  for (int c = 0; c < cfg.n_cameras; ++c) {
    for (int p = 0; p < cfg.n_points; ++p) {
      const auto uv = project(s.gt_points[p], s.gt_poses[c], s.intrinsics);
      const double drop = u01(rng);
      if (!uv || uv->x() < 0 || uv->y() < 0 || uv->x() >= cfg.image_width || uv->y() >= cfg.image_height) continue;
      if (drop < cfg.dropout) continue;
      Vec2 px = *uv;
      if (cfg.noise_px > 0) px += cfg.noise_px * Vec2(gauss(rng), gauss(rng));
      s.visibility[c][p] = true;
      kp_of_point[c][p] = static_cast<int>(d.keypoints[c].size());
      d.keypoints[c].push_back({c, px, std::nullopt});
      d.point_of_kp[c].push_back(p);
    }
    if (d.keypoints[c].size() < 8) {
      throw Error(ErrorCode::kDegenerateScene, "camera " + std::to_string(c) + " sees fewer than 8 points");
    }
  }
  for (int i = 0; i < cfg.n_cameras; ++i) {
    for (int j = i + 1; j < cfg.n_cameras; ++j) {
      MatchSet m{i, j, {}};
      for (int p = 0; p < cfg.n_points; ++p) {
        if (s.visibility[i][p] && s.visibility[j][p]) m.matches.push_back({kp_of_point[i][p], kp_of_point[j][p]});
      }
      if (m.matches.empty()) continue;
      if (cfg.outlier_match_fraction > 0) {
        std::uniform_int_distribution<int> pick(0, static_cast<int>(d.keypoints[j].size()) - 1);
        for (auto& c : m.matches) {
          if (u01(rng) < cfg.outlier_match_fraction) c.idx_j = pick(rng);
        }
      }
      d.matches.push_back(std::move(m));
    }
  }

  // Descriptor = [viewing direction, scaled noise], normalized: the dot
  // product of two descriptors falls with the angle between optical axes.
  for (int c = 0; c < cfg.n_cameras; ++c) {
    const Vec3 axis = s.gt_poses[c].rotation * Vec3(0, 0, 1);
    std::vector<float> v(cfg.descriptor_dim, 0.0f);
    for (int k = 0; k < 3; ++k) v[k] = static_cast<float>(axis[k]);
    for (int k = 3; k < cfg.descriptor_dim; ++k) v[k] = static_cast<float>(cfg.descriptor_noise * gauss(rng));
    d.descriptors.push_back(GlobalDescriptor::make(c, std::move(v)));
  }
  return d;
}

enum class OutlierMode { kDoppelganger, kRandom };

struct OutlierInjection {
  std::vector<KeypointList> keypoints;  // phantom keypoints appended in doppelganger mode
  std::vector<MatchSet> matches;
  std::vector<bool> corrupted;                   // parallel to matches
  std::vector<Rotation3> phantom_rotation;       // parallel to matches; identity when clean
};

/// Corrupts round(fraction * n_pairs) match sets chosen by a seeded shuffle.
/// Doppelganger: image j sees the scene rotated by Q (angle 40..90 deg about a
/// random axis through the origin), so the pair is epipolar-consistent with a
/// relative rotation at angle(Q) from the truth. Random: every correspondence
/// is replaced by a uniformly random keypoint pair.
inline OutlierInjection inject_outlier_edges(const SyntheticData& data, double fraction, OutlierMode mode,
                                             std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw Error(ErrorCode::kInvalidArgument, "fraction must be in [0, 1)");
  OutlierInjection out;
  out.keypoints = data.keypoints;
  out.matches = data.matches;
  out.corrupted.assign(data.matches.size(), false);
  out.phantom_rotation.assign(data.matches.size(), Rotation3::identity());
  const auto n_bad = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.matches.size())));
  if (n_bad == 0) return out;
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(data.matches.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::shuffle(order.begin(), order.end(), rng);
  std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_bad));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> angle_deg(40.0, 90.0);
  const SyntheticScene& s = data.scene;

  for (std::size_t r = 0; r < n_bad; ++r) {
    const std::size_t m = order[r];
    const int i = out.matches[m].i;
    const int j = out.matches[m].j;
    out.corrupted[m] = true;
    MatchSet bad{i, j, {}};
    if (mode == OutlierMode::kDoppelganger) {
      Vec3 axis(gauss(rng), gauss(rng), gauss(rng));
      axis.normalize();
      const Rotation3 q = so3_exp(angle_deg(rng) * kDegToRad * axis);
      out.phantom_rotation[m] = q;
      for (const auto& c : data.matches[m].matches) {
        const int p = data.point_of_kp[i][c.idx_i];
        const auto uv = project(q * s.gt_points[p], s.gt_poses[j], s.intrinsics);
        if (!uv || uv->x() < 0 || uv->y() < 0 || uv->x() >= 2 * s.intrinsics.u0 || uv->y() >= 2 * s.intrinsics.v0) {
          continue;
        }
        Vec2 px = *uv;
        // Same noise level as the real keypoints of image j.
        const auto& real = data.keypoints[i][c.idx_i].position;
        const auto ideal = project(s.gt_points[p], s.gt_poses[i], s.intrinsics);
        if (ideal) px += real - *ideal;
        const int id = static_cast<int>(out.keypoints[j].size());
        out.keypoints[j].push_back({j, px, std::nullopt});
        bad.matches.push_back({c.idx_i, id});
      }
    } else {
      std::uniform_int_distribution<int> pi(0, static_cast<int>(data.keypoints[i].size()) - 1);
      std::uniform_int_distribution<int> pj(0, static_cast<int>(data.keypoints[j].size()) - 1);
      std::set<std::pair<int, int>> seen;
      for (std::size_t k = 0; k < data.matches[m].matches.size(); ++k) {
        const int a = pi(rng);
        const int b = pj(rng);
        if (seen.insert({a, b}).second) bad.matches.push_back({a, b});
      }
    }
    out.matches[m] = std::move(bad);
  }
  return out;
}

/// Ground-truth relative measurement for a pair, in TwoViewMeasurement form.
inline TwoViewMeasurement ground_truth_measurement(const SyntheticScene& s, int i, int j) {
  const auto [r, t] = relative_from_poses(s.gt_poses[i], s.gt_poses[j]);
  TwoViewMeasurement m;
  m.i = i;
  m.j = j;
  m.rotation = r;
  m.direction = UnitVector3::normalized(t);
  m.inlier_ratio = 1.0;
  return m;
}

}  // namespace gsfm
