#pragma once

// Rotation, rigid and similarity transforms, and the Bundler camera model.
//
// Conventions used throughout gsfm:
//   * A camera pose is stored as world_from_camera (wTi): p_world = R p_cam + t,
//     so the camera center is t.
//   * Angles are radians internally; reported metrics are in degrees.
//   * Camera frame: +z forward, +x right, +y down.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "gsfm/error.hpp"

namespace gsfm {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kRadToDeg = 180.0 / std::numbers::pi;
inline constexpr double kDegToRad = std::numbers::pi / 180.0;

inline Mat3 hat(const Vec3& w) {
  Mat3 m;
  // clang-format off
  m <<    0.0, -w.z(),  w.y(),
        w.z(),    0.0, -w.x(),
       -w.y(),  w.x(),    0.0;
  // clang-format on
  return m;
}

inline Vec3 vee(const Mat3& m) { return Vec3(m(2, 1), m(0, 2), m(1, 0)); }

class Rotation3 {
 public:
  Rotation3() : m_(Mat3::Identity()) {}

  static Rotation3 identity() { return Rotation3(); }

  /// Validates orthonormality and det = +1 within `tol`.
  static Rotation3 from_matrix(const Mat3& m, double tol = 1e-9) {
    if (!m.allFinite() || (m * m.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > tol ||
        std::abs(m.determinant() - 1.0) > tol) {
      throw Error(ErrorCode::kInvalidArgument, "matrix is not a rotation");
    }
    return Rotation3(m);
  }

  /// Closest rotation in Frobenius norm (SVD projection with det correction).
  static Rotation3 nearest(const Mat3& m) {
    Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
    return Rotation3(svd.matrixU() * d * svd.matrixV().transpose());
  }

  const Mat3& matrix() const { return m_; }
  Rotation3 inverse() const { return Rotation3(m_.transpose()); }
  Rotation3 operator*(const Rotation3& o) const { return Rotation3(m_ * o.m_); }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }

  friend Rotation3 so3_exp(const Vec3& omega);

 private:
  explicit Rotation3(const Mat3& m) : m_(m) {}
  Mat3 m_;
};

/// Rodrigues formula.
inline Rotation3 so3_exp(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  double a;
  double b;
  if (theta < 1e-4) {
    a = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0;
    b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  const Mat3 w = hat(omega);
  return Rotation3(Mat3::Identity() + a * w + b * w * w);
}

/// Logarithm map; returns the rotation vector with norm in [0, pi].
inline Vec3 so3_log(const Rotation3& r) {
  Eigen::Quaterniond q(r.matrix());
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Vec3 v = q.vec();
  const double s = v.norm();
  const double w = q.w();
  if (s < 1e-10) {
    return (2.0 / w) * (1.0 - s * s / (3.0 * w * w)) * v;
  }
  return (2.0 * std::atan2(s, w) / s) * v;
}

class UnitVector3 {
 public:
  UnitVector3() : v_(0.0, 0.0, 1.0) {}

  /// Throws ZeroVector if the input norm is below 1e-12.
  static UnitVector3 normalized(const Vec3& v) {
    const double n = v.norm();
    if (!(n >= 1e-12) || !v.allFinite()) {
      throw Error(ErrorCode::kZeroVector, "cannot normalize a zero vector");
    }
    return UnitVector3(v / n);
  }

  const Vec3& vector() const { return v_; }
  UnitVector3 operator-() const { return UnitVector3(-v_); }

 private:
  explicit UnitVector3(const Vec3& v) : v_(v) {}
  Vec3 v_;
};

struct Pose3 {
  Rotation3 rotation;
  Vec3 translation = Vec3::Zero();

  static Pose3 identity() { return {}; }

  Pose3 operator*(const Pose3& o) const {
    return {rotation * o.rotation, rotation * o.translation + translation};
  }
  Pose3 inverse() const {
    const Rotation3 rt = rotation.inverse();
    return {rt, -(rt * translation)};
  }
  /// Maps a point from the local frame to the parent frame.
  Vec3 transform_from(const Vec3& p) const { return rotation * p + translation; }
  /// Maps a point from the parent frame into the local frame.
  Vec3 transform_to(const Vec3& p) const { return rotation.matrix().transpose() * (p - translation); }
};

/// Acts on points as s * R * p + t.
struct Sim3 {
  Rotation3 rotation;
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }

  /// Re-expresses a world_from_camera pose in the transformed world frame.
  Pose3 apply(const Pose3& pose) const {
    return {rotation * pose.rotation, apply(pose.translation)};
  }

  Sim3 inverse() const {
    const Rotation3 rt = rotation.inverse();
    return {rt, -(rt * translation) / scale, 1.0 / scale};
  }
};

/// Bundler camera: single focal length, two radial coefficients, principal point.
///
/// A camera-frame point (X, Y, Z) maps to pixels as
///   x = X/Z, y = Y/Z, r2 = x^2 + y^2, d = 1 + k1*r2 + k2*r2^2,
///   u = f*d*x + u0, v = f*d*y + v0.
struct CameraIntrinsics {
  double f = 1.0;
  double k1 = 0.0;
  double k2 = 0.0;
  double u0 = 0.0;
  double v0 = 0.0;

  void validate() const {
    if (!(f > 0.0) || !std::isfinite(f) || !std::isfinite(k1) || !std::isfinite(k2) ||
        !std::isfinite(u0) || !std::isfinite(v0)) {
      throw Error(ErrorCode::kInvalidArgument, "camera intrinsics require finite values and f > 0");
    }
  }
  bool operator==(const CameraIntrinsics&) const = default;
};

inline constexpr double kMinProjectionDepth = 1e-9;

inline double radial_factor(const Vec2& xy, double k1, double k2) {
  const double r2 = xy.squaredNorm();
  return 1.0 + k1 * r2 + k2 * r2 * r2;
}

inline Vec2 distort_normalized(const Vec2& xy, double k1, double k2) {
  return radial_factor(xy, k1, k2) * xy;
}

/// Inverts the radial polynomial by Newton iteration on the radius.
inline Vec2 undistort_normalized(const Vec2& xy_d, double k1, double k2) {
  const double rd = xy_d.norm();
  if (rd == 0.0 || (k1 == 0.0 && k2 == 0.0)) return xy_d;
  double r = rd;
  for (int it = 0; it < 50; ++it) {
    const double r2 = r * r;
    const double g = r * (1.0 + k1 * r2 + k2 * r2 * r2) - rd;
    const double dg = 1.0 + 3.0 * k1 * r2 + 5.0 * k2 * r2 * r2;
    if (dg == 0.0) break;
    const double step = g / dg;
    r -= step;
    if (std::abs(step) < 1e-16 * std::max(1.0, r)) break;
  }
  return xy_d * (r / rd);
}

/// Pixel to undistorted normalized image coordinates.
inline Vec2 pixel_to_normalized(const Vec2& px, const CameraIntrinsics& k) {
  const Vec2 xd((px.x() - k.u0) / k.f, (px.y() - k.v0) / k.f);
  return undistort_normalized(xd, k.k1, k.k2);
}

/// Unit bearing in the camera frame for a pixel.
inline Vec3 pixel_to_bearing(const Vec2& px, const CameraIntrinsics& k) {
  const Vec2 xy = pixel_to_normalized(px, k);
  return Vec3(xy.x(), xy.y(), 1.0).normalized();
}

/// Projects a camera-frame point; empty when the depth is <= 1e-9.
inline std::optional<Vec2> project_camera_frame(const Vec3& p_cam, const CameraIntrinsics& k) {
  if (!(p_cam.z() > kMinProjectionDepth)) return std::nullopt;
  const Vec2 xy(p_cam.x() / p_cam.z(), p_cam.y() / p_cam.z());
  const Vec2 xyd = distort_normalized(xy, k.k1, k.k2);
  return Vec2(k.f * xyd.x() + k.u0, k.f * xyd.y() + k.v0);
}

/// Projects a world point through a world_from_camera pose.
inline std::optional<Vec2> project(const Vec3& point_world, const Pose3& pose,
                                   const CameraIntrinsics& k) {
  return project_camera_frame(pose.transform_to(point_world), k);
}

/// Geodesic angle between two rotations, degrees in [0, 180].
inline double rotation_angular_error(const Rotation3& a, const Rotation3& b) {
  return so3_log(a.inverse() * b).norm() * kRadToDeg;
}

/// Angle between two directions, degrees in [0, 180]. Throws ZeroVector.
inline double direction_angular_error(const Vec3& a, const Vec3& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na >= 1e-12) || !(nb >= 1e-12)) {
    throw Error(ErrorCode::kZeroVector, "direction_angular_error needs nonzero vectors");
  }
  // atan2 form stays accurate near 0 and 180 degrees.
  return std::atan2(a.cross(b).norm(), a.dot(b)) * kRadToDeg;
}

/// Intrinsic (Karcher) mean on SO(3): gradient descent with unit step until the
/// update norm drops below 1e-10 or 100 iterations.
inline Rotation3 karcher_mean(std::span<const Rotation3> rotations) {
  if (rotations.empty()) throw Error(ErrorCode::kDegenerate, "karcher_mean of an empty set");
  Rotation3 mean = rotations.front();
  for (int it = 0; it < 100; ++it) {
    Vec3 update = Vec3::Zero();
    for (const Rotation3& r : rotations) update += so3_log(mean.inverse() * r);
    update /= static_cast<double>(rotations.size());
    mean = Rotation3::nearest((mean * so3_exp(update)).matrix());
    if (update.norm() < 1e-10) break;
  }
  return mean;
}

/// Similarity transform mapping `estimated` camera poses onto `reference`.
///
/// Rotation is the Karcher mean of per-camera rotation offsets; scale and
/// translation are the closed-form least-squares fit on camera centers with
/// that rotation held fixed.
inline Sim3 sim3_align(std::span<const Pose3> estimated, std::span<const Pose3> reference) {
  if (estimated.size() != reference.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "sim3_align needs paired pose lists");
  }
  const std::size_t n = estimated.size();
  if (n < 2) throw Error(ErrorCode::kDegenerate, "sim3_align needs at least 2 pose pairs");

  std::vector<Rotation3> offsets;
  offsets.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    offsets.push_back(reference[i].rotation * estimated[i].rotation.inverse());
  }
  const Rotation3 r = karcher_mean(offsets);

  Vec3 mu_est = Vec3::Zero();
  Vec3 mu_ref = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mu_est += estimated[i].translation;
    mu_ref += reference[i].translation;
  }
  mu_est /= static_cast<double>(n);
  mu_ref /= static_cast<double>(n);

  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 a = r * (estimated[i].translation - mu_est);
    num += a.dot(reference[i].translation - mu_ref);
    den += a.squaredNorm();
  }
  if (!(den > 1e-18)) throw Error(ErrorCode::kDegenerate, "estimated camera centers coincide");
  const double s = num / den;
  if (!(s > 0.0)) throw Error(ErrorCode::kDegenerate, "alignment produced a non-positive scale");
  return {r, mu_ref - s * (r * mu_est), s};
}

/// Sum of squared center residuals after applying `t` to `estimated`.
inline double sim3_alignment_residual(const Sim3& t, std::span<const Pose3> estimated,
                                      std::span<const Pose3> reference) {
  double sum = 0.0;
  for (std::size_t i = 0; i < estimated.size(); ++i) {
    sum += (t.apply(estimated[i].translation) - reference[i].translation).squaredNorm();
  }
  return sum;
}

}  // namespace gsfm
