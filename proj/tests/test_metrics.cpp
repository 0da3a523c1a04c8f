#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "gsfm/metrics.hpp"
#include "support.hpp"

using namespace gsfm;

namespace {

PoseById random_poses(std::mt19937_64& rng, int n) {
  PoseById out;
  for (int c = 0; c < n; ++c) out[c] = test::random_pose(rng, 4.0);
  return out;
}

// Stratified sampling of (100 / t) * integral_0^t recall(e) de: one jittered
// sample per stratum, recall found by counting.
double auc_sampled(const std::vector<double>& errors, std::size_t n_unregistered, double t, int n_samples,
                   std::mt19937_64& rng) {
  std::vector<double> sorted = errors;
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(errors.size() + n_unregistered);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double sum = 0.0;
  for (int s = 0; s < n_samples; ++s) {
    const double e = t * (s + u(rng)) / n_samples;
    sum += static_cast<double>(std::upper_bound(sorted.begin(), sorted.end(), e) - sorted.begin()) / n;
  }
  return 100.0 * sum / n_samples;
}

}  // namespace

TEST(PoseAuc, WorkedExamples) {
  const std::vector<double> zeros(7, 0.0);
  for (const auto& [t, v] : pose_auc(zeros, 0)) EXPECT_DOUBLE_EQ(v, 100.0) << t;
  const std::vector<double> big{25.0, 40.0, 180.0};
  for (const auto& [t, v] : pose_auc(big, 0)) EXPECT_DOUBLE_EQ(v, 0.0) << t;
  const std::vector<double> half{0.5};
  const std::vector<double> one{1.0};
  EXPECT_NEAR(pose_auc(half, 0, one).at(1.0), 50.0, 1e-12);
  // The same camera plus one unregistered camera halves it.
  EXPECT_NEAR(pose_auc(half, 1, one).at(1.0), 25.0, 1e-12);
}

TEST(PoseAuc, NoCamerasAndBadThresholds) {
  for (const auto& [t, v] : pose_auc({}, 0)) EXPECT_EQ(v, 0.0);
  for (const auto& [t, v] : pose_auc({}, 4)) EXPECT_EQ(v, 0.0);
  const std::vector<double> e{0.1};
  const std::vector<double> desc{5.0, 1.0};
  const std::vector<double> neg{-1.0};
  EXPECT_THROW(pose_auc(e, 0, desc), Error);
  EXPECT_THROW(pose_auc(e, 0, neg), Error);
}

TEST(PoseAuc, MatchesSampledIntegral) {
  std::mt19937_64 rng(1);
  for (int set = 0; set < 20; ++set) {
    std::uniform_int_distribution<int> count(1, 40);
    std::exponential_distribution<double> err(0.2);
    std::vector<double> errors(count(rng));
    for (auto& e : errors) e = err(rng);
    const std::size_t unreg = std::uniform_int_distribution<std::size_t>(0, 5)(rng);
    const auto auc = pose_auc(errors, unreg);
    for (const auto& [t, v] : auc) {
      // Stratified error is at most 100 / n_samples.
      EXPECT_NEAR(v, auc_sampled(errors, unreg, t, 100000, rng), 2e-3) << set << " @" << t;
    }
  }
}

TEST(PoseAuc, MonotoneInThreshold) {
  std::mt19937_64 rng(2);
  std::vector<double> thresholds;
  for (double t = 0.25; t < 40; t *= 1.3) thresholds.push_back(t);
  for (int set = 0; set < 20; ++set) {
    std::vector<double> errors(30);
    std::exponential_distribution<double> err(0.1);
    for (auto& e : errors) e = err(rng);
    errors[0] = std::numeric_limits<double>::infinity();
    const auto auc = pose_auc(errors, 2, thresholds);
    double prev = -1.0;
    for (const auto& [t, v] : auc) {
      EXPECT_GE(v, prev);
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 100.0);
      prev = v;
    }
  }
}

TEST(RelativePoseErrors, IdenticalPosesAreZero) {
  std::mt19937_64 rng(3);
  const auto gt = random_poses(rng, 5);
  const std::vector<std::pair<int, int>> pairs{{0, 1}, {1, 4}, {2, 3}};
  for (const auto& e : relative_pose_errors(gt, gt, pairs)) {
    EXPECT_NEAR(e.rotation_deg, 0.0, 1e-6);
    EXPECT_NEAR(e.translation_deg, 0.0, 1e-6);
    EXPECT_NEAR(e.pose_deg, 0.0, 1e-6);
  }
}

TEST(RelativePoseErrors, FiveDegreeRotation) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const auto gt = random_poses(rng, 2);
    auto est = gt;
    const Vec3 axis = test::random_unit(rng);
    est[1].rotation = est[1].rotation * so3_exp(5.0 * kDegToRad * axis);
    const std::vector<std::pair<int, int>> pairs{{0, 1}};
    const auto e = relative_pose_errors(est, gt, pairs)[0];
    EXPECT_NEAR(e.rotation_deg, 5.0, 1e-9);
    EXPECT_GE(e.pose_deg, 5.0 - 1e-9);
    EXPECT_LE(e.translation_deg, 5.0 + 1e-9);
  }
}

TEST(RelativePoseErrors, ZeroBaselineIsFlagged) {
  std::mt19937_64 rng(5);
  PoseById gt{{0, test::random_pose(rng)}, {1, test::random_pose(rng)}};
  gt[1].translation = gt[0].translation;
  auto est = gt;
  est[1].rotation = est[1].rotation * so3_exp(Vec3(0.01, 0, 0));
  const std::vector<std::pair<int, int>> pairs{{0, 1}};
  const auto e = relative_pose_errors(est, gt, pairs)[0];
  EXPECT_FALSE(e.translation_defined);
  EXPECT_TRUE(std::isnan(e.translation_deg));
  EXPECT_DOUBLE_EQ(e.pose_deg, e.rotation_deg);
}

TEST(RelativePoseErrors, MissingPoseThrows) {
  std::mt19937_64 rng(6);
  const auto gt = random_poses(rng, 3);
  auto est = gt;
  est.erase(2);
  const std::vector<std::pair<int, int>> pairs{{0, 2}};
  try {
    relative_pose_errors(est, gt, pairs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingPose);
  }
}

TEST(GlobalPoseErrors, SimilarityOfGroundTruthIsExact) {
  std::mt19937_64 rng(7);
  const auto gt = random_poses(rng, 8);
  const Sim3 s{test::random_rotation(rng), Vec3(3, -1, 2), 0.4};
  PoseById est;
  for (const auto& [id, p] : gt) est[id] = s.apply(p);
  const auto g = global_pose_errors(est, gt);
  EXPECT_EQ(g.n_registered, 8u);
  for (double e : g.rotation_deg) EXPECT_LT(e, 1e-6);
  for (double e : g.translation_deg) EXPECT_LT(e, 1e-6);
}

TEST(GlobalPoseErrors, InvariantToSimilarityOfEstimate) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const auto gt = random_poses(rng, 10);
    PoseById est;
    for (const auto& [id, p] : gt) {
      est[id] = {p.rotation * test::random_rotation(rng, 0.05), p.translation + 0.2 * test::random_unit(rng)};
    }
    std::uniform_real_distribution<double> sc(0.2, 5.0);
    const Sim3 s{test::random_rotation(rng), 4.0 * test::random_unit(rng), sc(rng)};
    PoseById moved;
    for (const auto& [id, p] : est) moved[id] = s.apply(p);
    const auto a = global_pose_errors(est, gt);
    const auto b = global_pose_errors(moved, gt);
    for (std::size_t k = 0; k < a.rotation_deg.size(); ++k) {
      EXPECT_NEAR(a.rotation_deg[k], b.rotation_deg[k], 1e-6);
      EXPECT_NEAR(a.translation_deg[k], b.translation_deg[k], 1e-6);
    }
  }
}

TEST(GlobalPoseErrors, SingleRotatedCamera) {
  // Camera 3 turns by +2 deg about a world axis and the other nine by
  // -2/9 deg about the same axis: the offsets average to identity, so the
  // alignment is exact and camera 3 reports 2 deg.
  std::mt19937_64 rng(9);
  const auto gt = random_poses(rng, 10);
  const Vec3 axis = test::random_unit(rng);
  PoseById est = gt;
  for (auto& [id, p] : est) {
    const double deg = id == 3 ? 2.0 : -2.0 / 9.0;
    p.rotation = so3_exp(deg * kDegToRad * axis) * p.rotation;
  }
  const auto g = global_pose_errors(est, gt);
  for (std::size_t k = 0; k < g.image_ids.size(); ++k) {
    EXPECT_NEAR(g.rotation_deg[k], g.image_ids[k] == 3 ? 2.0 : 2.0 / 9.0, 1e-7);
    EXPECT_LT(g.translation_deg[k], 1e-7);
  }
}

TEST(GlobalPoseErrors, UnregisteredCamerasAreCounted) {
  std::mt19937_64 rng(10);
  const auto gt = random_poses(rng, 6);
  auto est = gt;
  est.erase(1);
  est.erase(4);
  const auto g = global_pose_errors(est, gt);
  EXPECT_EQ(g.n_registered, 4u);
  EXPECT_EQ(g.n_unregistered, 2u);
  EXPECT_EQ(g.image_ids, (std::vector<int>{0, 2, 3, 5}));
  est.erase(0);
  est.erase(2);
  est.erase(3);
  EXPECT_THROW(global_pose_errors(est, gt), Error);
}

TEST(ComputeMetrics, UnregisteredCamerasLowerAuc) {
  std::mt19937_64 rng(11);
  const auto gt = random_poses(rng, 10);
  auto est = gt;
  est.erase(7);
  est.erase(8);
  const auto r = compute_metrics(est, gt, {});
  EXPECT_EQ(r.n_cameras_total, 10u);
  EXPECT_EQ(r.n_registered_cameras, 8u);
  for (const auto& [t, v] : r.pose_auc) EXPECT_NEAR(v, 80.0, 1e-6) << t;
  EXPECT_EQ(r.relative_rotation_error_deg.count, 28u);
}

TEST(TrackStatistics, CountsAndMeans) {
  EXPECT_EQ(track_statistics({}).n_tracks, 0u);
  EXPECT_FALSE(track_statistics({}).mean_reprojection_error_px.has_value());
  std::vector<Landmark> lms(3);
  const int lengths[3] = {3, 3, 4};
  for (int k = 0; k < 3; ++k) {
    for (int o = 0; o < lengths[k]; ++o) lms[k].track.observations.push_back({o, 0, Vec2::Zero()});
    lms[k].inlier_mask.assign(lengths[k], true);
    lms[k].mean_reprojection_error_px = 0.5 * k;
  }
  const auto s = track_statistics(lms);
  EXPECT_EQ(s.n_tracks, 3u);
  EXPECT_NEAR(s.length.mean, 10.0 / 3.0, 1e-12);
  EXPECT_EQ(s.length.median, 3.0);
  EXPECT_NEAR(*s.mean_reprojection_error_px, 0.5, 1e-12);
  // Outlier observations do not count toward length.
  lms[2].inlier_mask[0] = false;
  EXPECT_NEAR(track_statistics(lms).length.mean, 3.0, 1e-12);
}

TEST(Summarize, SkipsNonFinite) {
  const auto d = summarize({3.0, std::numeric_limits<double>::quiet_NaN(), 1.0, 2.0});
  EXPECT_EQ(d.count, 3u);
  EXPECT_EQ(d.samples.size(), 4u);
  EXPECT_EQ(d.min, 1.0);
  EXPECT_EQ(d.max, 3.0);
  EXPECT_EQ(d.median, 2.0);
  EXPECT_NEAR(d.mean, 2.0, 1e-15);
}
