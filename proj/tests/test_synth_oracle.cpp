#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "gsfm/io.hpp"
#include "gsfm/synth_oracle.hpp"
#include "gsfm/two_view.hpp"

using namespace gsfm;

namespace {

OrbitSceneConfig small(std::uint64_t seed, double noise = 0.0) {
  OrbitSceneConfig c;
  c.n_cameras = 12;
  c.n_points = 200;
  c.noise_px = noise;
  c.seed = seed;
  return c;
}

std::string serialize(const SyntheticData& d) {
  SceneInputs s;
  s.intrinsics.assign(d.keypoints.size(), d.scene.intrinsics);
  s.keypoints = d.keypoints;
  s.matches = d.matches;
  std::string bytes = scene_to_json(s).dump();
  for (const auto& g : d.descriptors) {
    for (float f : g.vector) bytes += format_double(f) + ",";
  }
  for (const auto& p : d.scene.gt_poses) bytes += poses_to_text({{0, p}});
  return bytes;
}

}  // namespace

TEST(OrbitScene, NoiseFreeMatchesAreEpipolar) {
  const auto d = generate_orbit_scene(small(1));
  std::size_t checked = 0;
  for (const auto& m : d.matches) {
    const auto [r, t] = relative_from_poses(d.scene.gt_poses[m.i], d.scene.gt_poses[m.j]);
    const Mat3 e = hat(t.normalized()) * r.matrix();
    for (const auto& c : m.matches) {
      const Vec3 xi = pixel_to_bearing(d.keypoints[m.i][c.idx_i].position, d.scene.intrinsics).normalized();
      const Vec3 xj = pixel_to_bearing(d.keypoints[m.j][c.idx_j].position, d.scene.intrinsics).normalized();
      EXPECT_LT(std::abs(xj.dot(e * xi)), 1e-9);
      ++checked;
    }
  }
  EXPECT_GT(checked, 1000u);
}

TEST(OrbitScene, ObservationsAreInsideTheImageAndInFront) {
  const auto cfg = small(2);
  const auto d = generate_orbit_scene(cfg);
  for (int c = 0; c < cfg.n_cameras; ++c) {
    EXPECT_GE(d.keypoints[c].size(), 8u);
    for (std::size_t k = 0; k < d.keypoints[c].size(); ++k) {
      const int p = d.point_of_kp[c][k];
      const Vec3 pc = d.scene.gt_poses[c].transform_to(d.scene.gt_points[p]);
      EXPECT_GT(pc.z(), 0.0);
      const Vec2 px = d.keypoints[c][k].position;
      EXPECT_TRUE(px.x() >= 0 && px.y() >= 0 && px.x() < cfg.image_width && px.y() < cfg.image_height);
      EXPECT_TRUE(d.scene.visibility[c][p]);
    }
  }
}

TEST(OrbitScene, MatchesExistExactlyForSharedVisibility) {
  const auto cfg = small(3);
  const auto d = generate_orbit_scene(cfg);
  std::set<std::pair<int, int>> listed;
  for (const auto& m : d.matches) {
    listed.insert({m.i, m.j});
    std::size_t shared = 0;
    for (int p = 0; p < cfg.n_points; ++p) shared += d.scene.visibility[m.i][p] && d.scene.visibility[m.j][p];
    EXPECT_EQ(m.matches.size(), shared);
    for (const auto& c : m.matches) EXPECT_EQ(d.point_of_kp[m.i][c.idx_i], d.point_of_kp[m.j][c.idx_j]);
  }
  for (int i = 0; i < cfg.n_cameras; ++i) {
    for (int j = i + 1; j < cfg.n_cameras; ++j) {
      bool any = false;
      for (int p = 0; p < cfg.n_points; ++p) any = any || (d.scene.visibility[i][p] && d.scene.visibility[j][p]);
      EXPECT_EQ(any, listed.count({i, j}) == 1u);
    }
  }
}

TEST(OrbitScene, NoiseLevelMatchesConfiguration) {
  const auto cfg = small(4, 1.5);
  const auto d = generate_orbit_scene(cfg);
  double sq = 0.0;
  std::size_t n = 0;
  for (int c = 0; c < cfg.n_cameras; ++c) {
    for (std::size_t k = 0; k < d.keypoints[c].size(); ++k) {
      const auto uv = project(d.scene.gt_points[d.point_of_kp[c][k]], d.scene.gt_poses[c], d.scene.intrinsics);
      sq += (d.keypoints[c][k].position - *uv).squaredNorm();
      n += 2;
    }
  }
  EXPECT_NEAR(std::sqrt(sq / n), 1.5, 0.1);
}

TEST(OrbitScene, FixedSeedIsByteIdentical) {
  auto cfg = small(5, 0.7);
  cfg.dropout = 0.1;
  cfg.n_rings = 2;
  EXPECT_EQ(serialize(generate_orbit_scene(cfg)), serialize(generate_orbit_scene(cfg)));
  auto other = cfg;
  other.seed = 6;
  EXPECT_NE(serialize(generate_orbit_scene(cfg)), serialize(generate_orbit_scene(other)));
}

TEST(OrbitScene, DescriptorSimilarityFallsWithViewAngle) {
  const auto d = generate_orbit_scene(small(7));
  // Cameras are evenly spaced on one ring: 1 is a neighbour of 0, 6 is opposite.
  const double near = descriptor_dot(d.descriptors[0].vector, d.descriptors[1].vector);
  const double far = descriptor_dot(d.descriptors[0].vector, d.descriptors[6].vector);
  EXPECT_GT(near, far + 0.3);
}

TEST(OrbitScene, RejectsDegenerateConfigurations) {
  auto cfg = small(8);
  cfg.n_cameras = 2;
  EXPECT_THROW(generate_orbit_scene(cfg), Error);
  // A very narrow field of view leaves cameras with almost nothing to see.
  cfg = small(8);
  cfg.focal_px = 20000.0;
  try {
    generate_orbit_scene(cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateScene);
  }
  cfg = small(8);
  cfg.dropout = 1.0;
  EXPECT_THROW(generate_orbit_scene(cfg), Error);
}

TEST(InjectOutliers, ZeroFractionIsIdentity) {
  const auto d = generate_orbit_scene(small(9));
  for (auto mode : {OutlierMode::kDoppelganger, OutlierMode::kRandom}) {
    const auto out = inject_outlier_edges(d, 0.0, mode, 1);
    ASSERT_EQ(out.matches.size(), d.matches.size());
    for (std::size_t k = 0; k < d.matches.size(); ++k) {
      EXPECT_EQ(out.matches[k].matches, d.matches[k].matches);
      EXPECT_FALSE(out.corrupted[k]);
    }
    for (std::size_t c = 0; c < d.keypoints.size(); ++c) EXPECT_EQ(out.keypoints[c].size(), d.keypoints[c].size());
  }
  EXPECT_THROW(inject_outlier_edges(d, 1.0, OutlierMode::kRandom, 1), Error);
  EXPECT_THROW(inject_outlier_edges(d, -0.1, OutlierMode::kRandom, 1), Error);
}

TEST(InjectOutliers, LabelsPartitionPairs) {
  const auto d = generate_orbit_scene(small(10));
  for (double f : {0.1, 0.25, 0.5}) {
    const auto out = inject_outlier_edges(d, f, OutlierMode::kRandom, 2);
    std::size_t bad = 0;
    for (std::size_t k = 0; k < out.matches.size(); ++k) {
      EXPECT_EQ(out.matches[k].i, d.matches[k].i);
      EXPECT_EQ(out.matches[k].j, d.matches[k].j);
      if (out.corrupted[k]) {
        ++bad;
      } else {
        EXPECT_EQ(out.matches[k].matches, d.matches[k].matches);
      }
    }
    EXPECT_EQ(bad, static_cast<std::size_t>(std::llround(f * d.matches.size())));
  }
}

TEST(InjectOutliers, DoppelgangerPairsAreConsistentButRotated) {
  const auto d = generate_orbit_scene(small(11));
  const auto out = inject_outlier_edges(d, 0.1, OutlierMode::kDoppelganger, 3);
  VerificationConfig cfg;
  std::size_t measured = 0;
  std::size_t n_bad = 0;
  for (std::size_t k = 0; k < out.matches.size(); ++k) {
    if (!out.corrupted[k]) continue;
    ++n_bad;
    const auto& ms = out.matches[k];
    EXPECT_GE(rotation_angular_error(out.phantom_rotation[k], Rotation3::identity()), 40.0 - 1e-9);
    if (ms.matches.size() < 8) continue;
    const auto m = verify_pair(ms, out.keypoints[ms.i], out.keypoints[ms.j], d.scene.intrinsics, d.scene.intrinsics,
                               cfg, 4);
    const auto gt = ground_truth_measurement(d.scene, ms.i, ms.j);
    // Every correspondence fits the phantom geometry.
    EXPECT_EQ(m.n_inliers, static_cast<int>(ms.matches.size()));
    EXPECT_GE(rotation_angular_error(m.rotation, gt.rotation), 30.0);
    ++measured;
  }
  EXPECT_GT(n_bad, 0u);
  EXPECT_GE(measured, n_bad / 2);
}
