#pragma once

// Small helpers shared by the unit tests.

#include <random>

#include "gsfm/core_geom.hpp"
#include "gsfm/pipeline.hpp"
#include "gsfm/synth_oracle.hpp"

namespace gsfm::test {

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vec3 v(g(rng), g(rng), g(rng));
  return v.normalized();
}

/// Uniform-ish random rotation: random axis, angle uniform in [0, max_angle).
inline Rotation3 random_rotation(std::mt19937_64& rng, double max_angle = 3.0) {
  std::uniform_real_distribution<double> a(0.0, max_angle);
  return so3_exp(a(rng) * random_unit(rng));
}

inline Pose3 random_pose(std::mt19937_64& rng, double spread = 3.0) {
  std::uniform_real_distribution<double> u(-spread, spread);
  return {random_rotation(rng), Vec3(u(rng), u(rng), u(rng))};
}

inline double max_abs_diff(const Mat3& a, const Mat3& b) { return (a - b).cwiseAbs().maxCoeff(); }

/// Pipeline inputs for a synthetic scene, ground truth attached.
inline PipelineInputs inputs_from(const SyntheticData& d) {
  PipelineInputs in;
  in.scene.intrinsics.assign(d.keypoints.size(), d.scene.intrinsics);
  in.scene.keypoints = d.keypoints;
  in.scene.matches = d.matches;
  in.descriptors = d.descriptors;
  PoseById gt;
  for (std::size_t c = 0; c < d.scene.gt_poses.size(); ++c) gt[static_cast<int>(c)] = d.scene.gt_poses[c];
  in.ground_truth = gt;
  return in;
}

}  // namespace gsfm::test
