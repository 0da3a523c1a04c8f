#pragma once

#include <Eigen/Core>
#include <Eigen/SVD>

#include <cmath>
#include <span>

#include "gsfm/core_geom.hpp"
#include "gsfm/error.hpp"

namespace gsfm {

/// One view of a point: world_from_camera pose and undistorted normalized
/// image coordinates.
struct RayObservation {
  Pose3 pose;
  Vec2 xy = Vec2::Zero();
};

/// Linear (DLT) triangulation from >= 2 views. Rows are scaled to unit norm
/// before the SVD. Throws Degenerate when the homogeneous solution is at infinity.
inline Vec3 triangulate_dlt(std::span<const RayObservation> views) {
  if (views.size() < 2) throw Error(ErrorCode::kInvalidArgument, "DLT needs at least 2 views");
  Eigen::MatrixXd a(2 * views.size(), 4);
  for (std::size_t k = 0; k < views.size(); ++k) {
    const Mat3 rt = views[k].pose.rotation.matrix().transpose();
    Eigen::Matrix<double, 3, 4> p;
    p.leftCols<3>() = rt;
    p.col(3) = -rt * views[k].pose.translation;
    Eigen::RowVector4d r0 = views[k].xy.x() * p.row(2) - p.row(0);
    Eigen::RowVector4d r1 = views[k].xy.y() * p.row(2) - p.row(1);
    a.row(2 * k) = r0 / std::max(r0.norm(), 1e-300);
    a.row(2 * k + 1) = r1 / std::max(r1.norm(), 1e-300);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::Vector4d h = svd.matrixV().col(3);
  if (!(std::abs(h(3)) > 1e-14 * h.head<3>().norm())) {
    throw Error(ErrorCode::kDegenerate, "triangulated point is at infinity");
  }
  return h.head<3>() / h(3);
}

/// Angle (radians) between the rays from two camera centers to a point.
inline double ray_angle(const Vec3& center_a, const Vec3& center_b, const Vec3& point) {
  const Vec3 a = point - center_a;
  const Vec3 b = point - center_b;
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

}  // namespace gsfm
