#pragma once

// Robust Levenberg-Marquardt bundle adjustment over camera poses, Bundler
// intrinsics and landmarks, with Schur elimination of the points.
//
// Parameterization (local coordinates of one LM step):
//   pose (world_from_camera):  R <- R * exp(dtheta),  t <- t + R * dt
//   intrinsics:                (f, k1, k2, u0, v0) additive
//   point:                     P <- P + dP
// Gauge: cameras[0] is held fixed and cameras[1] moves on the sphere of its
// current distance to cameras[0] (7 DOF removed).

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/SparseCore>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include "gsfm/core_geom.hpp"
#include "gsfm/executor.hpp"
#include "gsfm/types.hpp"

namespace gsfm {

enum class IntrinsicsMode { kFixed, kPerCamera, kShared };

struct BaCamera {
  int image_id = 0;
  Pose3 pose;  // world_from_camera
  CameraIntrinsics intrinsics;
  int intrinsics_group = 0;  // cameras sharing a group share one block under kShared
};

struct BaProblem {
  std::vector<BaCamera> cameras;
  std::vector<Landmark> landmarks;  // only inlier observations enter the cost

  int camera_slot(int image_id) const {
    for (std::size_t c = 0; c < cameras.size(); ++c) {
      if (cameras[c].image_id == image_id) return static_cast<int>(c);
    }
    return -1;
  }
};

struct BaConfig {
  double huber_gamma_px = 1.345;  // <= 0 selects plain least squares
  double initial_lambda = 1e-4;
  int max_iterations = 100;
  double relative_cost_tol = 1e-9;
  double gradient_tol = 1e-10;
  double absolute_cost_tol = 1e-20;
  IntrinsicsMode intrinsics = IntrinsicsMode::kFixed;
  bool fix_gauge = true;
  std::vector<double> round_thresholds_px{10.0, 5.0, 3.0};
  std::size_t min_track_length = 3;
};

struct BaRoundReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  std::size_t n_tracks_kept = 0;
  double filter_threshold_px = 0.0;
  bool converged = true;
};

/// Residual assigned to an observation whose point is behind its camera. Its
/// Jacobian is zero, so it never enters the normal equations.
inline constexpr double kBehindCameraResidualPx = 1000.0;

inline double robust_cost(double residual_norm, double gamma) {
  if (gamma <= 0.0 || residual_norm <= gamma) return 0.5 * residual_norm * residual_norm;
  return gamma * (residual_norm - 0.5 * gamma);
}

inline double robust_weight(double residual_norm, double gamma) {
  if (gamma <= 0.0 || residual_norm <= gamma) return 1.0;
  return gamma / residual_norm;
}

namespace ba_detail {

struct ProjectionJacobian {
  Vec2 residual = Vec2::Zero();
  bool in_front = false;
  Eigen::Matrix<double, 2, 6> d_pose = Eigen::Matrix<double, 2, 6>::Zero();
  Eigen::Matrix<double, 2, 5> d_intrinsics = Eigen::Matrix<double, 2, 5>::Zero();
  Eigen::Matrix<double, 2, 3> d_point = Eigen::Matrix<double, 2, 3>::Zero();
};

inline ProjectionJacobian linearize_projection(const Pose3& pose, const CameraIntrinsics& k,
                                               const Vec3& point, const Vec2& measured) {
  ProjectionJacobian out;
  const Mat3 rt = pose.rotation.matrix().transpose();
  const Vec3 pc = rt * (point - pose.translation);
  if (!(pc.z() > kMinProjectionDepth)) {
    out.residual = Vec2(kBehindCameraResidualPx, 0.0);
    return out;
  }
  out.in_front = true;
  const double iz = 1.0 / pc.z();
  const double x = pc.x() * iz;
  const double y = pc.y() * iz;
  const double r2 = x * x + y * y;
  const double d = 1.0 + k.k1 * r2 + k.k2 * r2 * r2;
  const double dd = k.k1 + 2.0 * k.k2 * r2;
  out.residual = Vec2(k.f * d * x + k.u0 - measured.x(), k.f * d * y + k.v0 - measured.y());

  Eigen::Matrix2d d_uv_d_xy;
  d_uv_d_xy << k.f * (d + 2.0 * x * x * dd), k.f * 2.0 * x * y * dd,
      k.f * 2.0 * x * y * dd, k.f * (d + 2.0 * y * y * dd);
  Eigen::Matrix<double, 2, 3> d_xy_d_pc;
  d_xy_d_pc << iz, 0.0, -x * iz, 0.0, iz, -y * iz;
  const Eigen::Matrix<double, 2, 3> d_uv_d_pc = d_uv_d_xy * d_xy_d_pc;

  out.d_pose.leftCols<3>() = d_uv_d_pc * hat(pc);
  out.d_pose.rightCols<3>() = -d_uv_d_pc;
  out.d_point = d_uv_d_pc * rt;
  out.d_intrinsics << d * x, k.f * x * r2, k.f * x * r2 * r2, 1.0, 0.0,
      d * y, k.f * y * r2, k.f * y * r2 * r2, 0.0, 1.0;
  return out;
}

/// Which local coordinates are free, and where they live in the frame vector.
struct FrameLayout {
  std::vector<int> pose_offset;  // -1 when the pose is fixed
  std::vector<int> pose_dim;     // 0, 5 (sphere-constrained translation) or 6
  std::vector<int> intr_offset;  // -1 when intrinsics are fixed
  std::vector<Eigen::Matrix<double, 3, 2>> sphere_basis;  // world-frame basis for pose_dim 5
  int n_frame = 0;
  int n_intrinsic_blocks = 0;
};

inline FrameLayout make_frame_layout(const BaProblem& p, IntrinsicsMode mode, bool fix_gauge) {
  FrameLayout l;
  const std::size_t n = p.cameras.size();
  l.pose_offset.assign(n, -1);
  l.pose_dim.assign(n, 0);
  l.intr_offset.assign(n, -1);
  l.sphere_basis.assign(n, Eigen::Matrix<double, 3, 2>::Zero());
  int off = 0;
  for (std::size_t c = 0; c < n; ++c) {
    int dim = 6;
    if (fix_gauge && c == 0) dim = 0;
    if (fix_gauge && c == 1) {
      const Vec3 axis = p.cameras[1].pose.translation - p.cameras[0].pose.translation;
      if (axis.norm() > 1e-12) {
        const Vec3 a = axis.normalized();
        const Vec3 helper = std::abs(a.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
        const Vec3 b1 = a.cross(helper).normalized();
        const Vec3 b2 = a.cross(b1);
        l.sphere_basis[1].col(0) = b1;
        l.sphere_basis[1].col(1) = b2;
        dim = 5;
      }
    }
    l.pose_dim[c] = dim;
    if (dim > 0) {
      l.pose_offset[c] = off;
      off += dim;
    }
  }
  if (mode == IntrinsicsMode::kPerCamera) {
    for (std::size_t c = 0; c < n; ++c) {
      l.intr_offset[c] = off;
      off += 5;
    }
    l.n_intrinsic_blocks = static_cast<int>(n);
  } else if (mode == IntrinsicsMode::kShared) {
    std::map<int, int> group_offset;
    for (std::size_t c = 0; c < n; ++c) {
      auto [it, inserted] = group_offset.try_emplace(p.cameras[c].intrinsics_group, off);
      if (inserted) off += 5;
      l.intr_offset[c] = it->second;
    }
    l.n_intrinsic_blocks = static_cast<int>(group_offset.size());
  }
  l.n_frame = off;
  return l;
}

inline constexpr int kMaxFrameCols = 11;

struct ObsLinearization {
  std::array<int, kMaxFrameCols> idx{};
  int k = 0;
  Eigen::Matrix<double, 2, kMaxFrameCols> jf = Eigen::Matrix<double, 2, kMaxFrameCols>::Zero();
  Eigen::Matrix<double, 2, 3> jp = Eigen::Matrix<double, 2, 3>::Zero();
  Vec2 r = Vec2::Zero();
  double w = 1.0;
  bool active = false;
};

struct LandmarkLinearization {
  std::vector<ObsLinearization> obs;
  Mat3 hpp = Mat3::Zero();
  Vec3 gp = Vec3::Zero();
  double cost = 0.0;
};

inline LandmarkLinearization linearize_landmark(const BaProblem& p, const FrameLayout& l,
                                                const std::vector<int>& slot_of_obs,
                                                const Landmark& lm, double gamma) {
  LandmarkLinearization out;
  for (std::size_t o = 0; o < lm.track.observations.size(); ++o) {
    if (!lm.inlier_mask[o]) continue;
    const int c = slot_of_obs[o];
    const BaCamera& cam = p.cameras[c];
    const ProjectionJacobian pj =
        linearize_projection(cam.pose, cam.intrinsics, lm.point, lm.track.observations[o].px);
    const double rn = pj.residual.norm();
    out.cost += robust_cost(rn, gamma);
    if (!pj.in_front) continue;
    ObsLinearization ol;
    ol.active = true;
    ol.r = pj.residual;
    ol.w = robust_weight(rn, gamma);
    ol.jp = pj.d_point;
    if (l.pose_dim[c] == 6) {
      for (int q = 0; q < 6; ++q) ol.idx[ol.k + q] = l.pose_offset[c] + q;
      ol.jf.block<2, 6>(0, ol.k) = pj.d_pose;
      ol.k += 6;
    } else if (l.pose_dim[c] == 5) {
      for (int q = 0; q < 5; ++q) ol.idx[ol.k + q] = l.pose_offset[c] + q;
      ol.jf.block<2, 3>(0, ol.k) = pj.d_pose.leftCols<3>();
      // Body-frame dt = R^T * B * eta keeps the world displacement on the sphere tangent.
      ol.jf.block<2, 2>(0, ol.k + 3) =
          pj.d_pose.rightCols<3>() * cam.pose.rotation.matrix().transpose() * l.sphere_basis[c];
      ol.k += 5;
    }
    if (l.intr_offset[c] >= 0) {
      for (int q = 0; q < 5; ++q) ol.idx[ol.k + q] = l.intr_offset[c] + q;
      ol.jf.block<2, 5>(0, ol.k) = pj.d_intrinsics;
      ol.k += 5;
    }
    out.hpp += ol.w * ol.jp.transpose() * ol.jp;
    out.gp += ol.w * ol.jp.transpose() * ol.r;
    out.obs.push_back(ol);
  }
  return out;
}

inline std::vector<std::vector<int>> observation_slots(const BaProblem& p) {
  std::map<int, int> slot;
  for (std::size_t c = 0; c < p.cameras.size(); ++c) slot[p.cameras[c].image_id] = static_cast<int>(c);
  std::vector<std::vector<int>> out(p.landmarks.size());
  for (std::size_t j = 0; j < p.landmarks.size(); ++j) {
    const auto& lm = p.landmarks[j];
    if (lm.inlier_mask.size() != lm.track.observations.size()) {
      throw Error(ErrorCode::kInvalidArgument, "landmark inlier mask does not match its track");
    }
    for (std::size_t o = 0; o < lm.track.observations.size(); ++o) {
      auto it = slot.find(lm.track.observations[o].image_id);
      if (it == slot.end()) {
        if (lm.inlier_mask[o]) {
          throw Error(ErrorCode::kInvalidArgument, "observation references a missing camera");
        }
        out[j].push_back(-1);
      } else {
        out[j].push_back(it->second);
      }
    }
  }
  return out;
}

inline std::vector<LandmarkLinearization> linearize_all(const BaProblem& p, const FrameLayout& l,
                                                        const std::vector<std::vector<int>>& slots,
                                                        double gamma, Executor* ex) {
  auto task = [&](std::size_t j) { return linearize_landmark(p, l, slots[j], p.landmarks[j], gamma); };
  if (ex) return ex->map("ba.linearize", p.landmarks.size(), task);
  std::vector<LandmarkLinearization> out;
  out.reserve(p.landmarks.size());
  for (std::size_t j = 0; j < p.landmarks.size(); ++j) out.push_back(task(j));
  return out;
}

inline double total_cost(const BaProblem& p, const std::vector<std::vector<int>>& slots, double gamma) {
  double cost = 0.0;
  for (std::size_t j = 0; j < p.landmarks.size(); ++j) {
    const auto& lm = p.landmarks[j];
    for (std::size_t o = 0; o < lm.track.observations.size(); ++o) {
      if (!lm.inlier_mask[o]) continue;
      const BaCamera& cam = p.cameras[slots[j][o]];
      const auto uv = project(lm.point, cam.pose, cam.intrinsics);
      const double rn = uv ? (*uv - lm.track.observations[o].px).norm()
                           : Vec2(kBehindCameraResidualPx, 0.0).norm();
      cost += robust_cost(rn, gamma);
    }
  }
  return cost;
}

struct NormalEquations {
  Eigen::MatrixXd hff;
  Eigen::VectorXd gf;
};

/// Frame-only Hessian/gradient (no Schur terms).
inline NormalEquations frame_normal_equations(const FrameLayout& l,
                                              const std::vector<LandmarkLinearization>& lin) {
  NormalEquations ne{Eigen::MatrixXd::Zero(l.n_frame, l.n_frame), Eigen::VectorXd::Zero(l.n_frame)};
  for (const auto& ll : lin) {
    for (const auto& o : ll.obs) {
      for (int a = 0; a < o.k; ++a) {
        ne.gf(o.idx[a]) += o.w * o.jf.col(a).dot(o.r);
        for (int b = 0; b < o.k; ++b) ne.hff(o.idx[a], o.idx[b]) += o.w * o.jf.col(a).dot(o.jf.col(b));
      }
    }
  }
  return ne;
}

inline double clamp_diag(double d) { return std::clamp(d, 1e-6, 1e32); }

/// Schur complement with Marquardt damping `lambda` on both blocks. Returns
/// false when a point block or the reduced system is not positive definite.
inline bool schur_reduce(const FrameLayout& l, const std::vector<LandmarkLinearization>& lin,
                         const NormalEquations& ne, double lambda, Eigen::MatrixXd& s,
                         Eigen::VectorXd& rhs, std::vector<Mat3>& hpp_inv) {
  s = ne.hff;
  rhs = -ne.gf;
  if (lambda > 0.0) {
    for (int a = 0; a < l.n_frame; ++a) s(a, a) += lambda * clamp_diag(ne.hff(a, a));
  }
  hpp_inv.assign(lin.size(), Mat3::Zero());
  for (std::size_t j = 0; j < lin.size(); ++j) {
    const auto& ll = lin[j];
    if (ll.obs.empty()) continue;
    Mat3 h = ll.hpp;
    if (lambda > 0.0) {
      for (int a = 0; a < 3; ++a) h(a, a) += lambda * clamp_diag(ll.hpp(a, a));
    }
    Eigen::LDLT<Mat3> ldlt(h);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= 1e-14 * std::max(1.0, ldlt.vectorD().maxCoeff())) {
      return false;
    }
    hpp_inv[j] = ldlt.solve(Mat3::Identity());
    // W_o = w * Jf^T Jp (k x 3)
    std::vector<Eigen::Matrix<double, kMaxFrameCols, 3>> wblk(ll.obs.size());
    for (std::size_t o = 0; o < ll.obs.size(); ++o) {
      const auto& ob = ll.obs[o];
      wblk[o].setZero();
      wblk[o].topRows(ob.k) = ob.w * ob.jf.leftCols(ob.k).transpose() * ob.jp;
    }
    const Vec3 hinv_g = hpp_inv[j] * ll.gp;
    for (std::size_t a = 0; a < ll.obs.size(); ++a) {
      const auto& oa = ll.obs[a];
      if (oa.k == 0) continue;
      const Eigen::Matrix<double, kMaxFrameCols, 3> wa_hinv = wblk[a] * hpp_inv[j];
      for (int p = 0; p < oa.k; ++p) rhs(oa.idx[p]) += wa_hinv.row(p).dot(ll.gp);
      for (std::size_t b = 0; b < ll.obs.size(); ++b) {
        const auto& ob = ll.obs[b];
        if (ob.k == 0) continue;
        const Eigen::Matrix<double, kMaxFrameCols, kMaxFrameCols> blk = wa_hinv * wblk[b].transpose();
        for (int p = 0; p < oa.k; ++p) {
          for (int q = 0; q < ob.k; ++q) s(oa.idx[p], ob.idx[q]) -= blk(p, q);
        }
      }
    }
    (void)hinv_g;
  }
  return true;
}

inline BaProblem apply_step(const BaProblem& p, const FrameLayout& l,
                            const std::vector<LandmarkLinearization>& lin, const Eigen::VectorXd& df,
                            const std::vector<Mat3>& hpp_inv, bool& valid) {
  valid = true;
  BaProblem out = p;
  for (std::size_t c = 0; c < p.cameras.size(); ++c) {
    auto& cam = out.cameras[c];
    if (l.pose_dim[c] == 6) {
      const int o = l.pose_offset[c];
      const Vec3 dtheta = df.segment<3>(o);
      const Vec3 dt = df.segment<3>(o + 3);
      const Rotation3 r0 = cam.pose.rotation;
      cam.pose.rotation = Rotation3::nearest((r0 * so3_exp(dtheta)).matrix());
      cam.pose.translation += r0 * dt;
    } else if (l.pose_dim[c] == 5) {
      const int o = l.pose_offset[c];
      const Vec3 dtheta = df.segment<3>(o);
      const Vec3 anchor = p.cameras[0].pose.translation;
      const double radius = (cam.pose.translation - anchor).norm();
      const Vec3 moved = cam.pose.translation + l.sphere_basis[c] * df.segment<2>(o + 3);
      cam.pose.rotation = Rotation3::nearest((cam.pose.rotation * so3_exp(dtheta)).matrix());
      cam.pose.translation = anchor + radius * (moved - anchor).normalized();
    }
  }
  for (std::size_t c = 0; c < p.cameras.size(); ++c) {
    const int o = l.intr_offset[c];
    if (o < 0) continue;
    // Shared blocks: every camera in the group reads the same offset.
    const CameraIntrinsics& k0 = p.cameras[c].intrinsics;
    auto& k = out.cameras[c].intrinsics;
    k.f = k0.f + df(o);
    k.k1 = k0.k1 + df(o + 1);
    k.k2 = k0.k2 + df(o + 2);
    k.u0 = k0.u0 + df(o + 3);
    k.v0 = k0.v0 + df(o + 4);
    if (!(k.f > 0.0)) valid = false;
  }
  for (std::size_t j = 0; j < lin.size(); ++j) {
    const auto& ll = lin[j];
    if (ll.obs.empty()) continue;
    Vec3 b = -ll.gp;
    for (const auto& o : ll.obs) {
      for (int a = 0; a < o.k; ++a) b -= o.w * o.jp.transpose() * o.jf.col(a) * df(o.idx[a]);
    }
    out.landmarks[j].point += hpp_inv[j] * b;
  }
  return out;
}

}  // namespace ba_detail

/// Sum over inlier observations of the robust (Huber) reprojection cost.
inline double ba_cost(const BaProblem& problem, double huber_gamma_px) {
  return ba_detail::total_cost(problem, ba_detail::observation_slots(problem), huber_gamma_px);
}

/// Column layout of the full (ungauged) parameter vector used by
/// ba_residuals_and_jacobian and ba_retract.
struct BaParameterLayout {
  int n_cameras = 0;
  int n_intrinsic_blocks = 0;
  int n_points = 0;
  std::vector<int> intrinsic_block_of_camera;  // -1 when fixed

  int pose_col(int c) const { return 6 * c; }
  int intrinsics_col(int block) const { return 6 * n_cameras + 5 * block; }
  int point_col(int j) const { return 6 * n_cameras + 5 * n_intrinsic_blocks + 3 * j; }
  int n_cols() const { return 6 * n_cameras + 5 * n_intrinsic_blocks + 3 * n_points; }
};

inline BaParameterLayout ba_parameter_layout(const BaProblem& p, IntrinsicsMode mode) {
  BaParameterLayout l;
  l.n_cameras = static_cast<int>(p.cameras.size());
  l.n_points = static_cast<int>(p.landmarks.size());
  l.intrinsic_block_of_camera.assign(p.cameras.size(), -1);
  if (mode == IntrinsicsMode::kPerCamera) {
    for (int c = 0; c < l.n_cameras; ++c) l.intrinsic_block_of_camera[c] = c;
    l.n_intrinsic_blocks = l.n_cameras;
  } else if (mode == IntrinsicsMode::kShared) {
    std::map<int, int> groups;
    for (int c = 0; c < l.n_cameras; ++c) {
      auto [it, inserted] = groups.try_emplace(p.cameras[c].intrinsics_group, static_cast<int>(groups.size()));
      l.intrinsic_block_of_camera[c] = it->second;
    }
    l.n_intrinsic_blocks = static_cast<int>(groups.size());
  }
  return l;
}

struct BaLinearSystem {
  Eigen::VectorXd residuals;  // 2 rows per inlier observation, landmark-major
  Eigen::SparseMatrix<double> jacobian;
  BaParameterLayout layout;
};

/// Residuals (px) and analytic Jacobian with respect to every pose, intrinsics
/// block (per `mode`) and point, in the local coordinates documented above.
inline BaLinearSystem ba_residuals_and_jacobian(const BaProblem& p, IntrinsicsMode mode) {
  BaLinearSystem out;
  out.layout = ba_parameter_layout(p, mode);
  const auto slots = ba_detail::observation_slots(p);
  std::vector<Eigen::Triplet<double>> trip;
  std::vector<double> res;
  int row = 0;
  for (std::size_t j = 0; j < p.landmarks.size(); ++j) {
    const auto& lm = p.landmarks[j];
    for (std::size_t o = 0; o < lm.track.observations.size(); ++o) {
      if (!lm.inlier_mask[o]) continue;
      const int c = slots[j][o];
      const BaCamera& cam = p.cameras[c];
      const auto pj = ba_detail::linearize_projection(cam.pose, cam.intrinsics, lm.point,
                                                      lm.track.observations[o].px);
      res.push_back(pj.residual.x());
      res.push_back(pj.residual.y());
      if (pj.in_front) {
        for (int r = 0; r < 2; ++r) {
          for (int q = 0; q < 6; ++q) trip.emplace_back(row + r, out.layout.pose_col(c) + q, pj.d_pose(r, q));
          const int blk = out.layout.intrinsic_block_of_camera[c];
          if (blk >= 0) {
            for (int q = 0; q < 5; ++q) {
              trip.emplace_back(row + r, out.layout.intrinsics_col(blk) + q, pj.d_intrinsics(r, q));
            }
          }
          for (int q = 0; q < 3; ++q) {
            trip.emplace_back(row + r, out.layout.point_col(static_cast<int>(j)) + q, pj.d_point(r, q));
          }
        }
      }
      row += 2;
    }
  }
  out.residuals = Eigen::Map<Eigen::VectorXd>(res.data(), static_cast<Eigen::Index>(res.size()));
  out.jacobian.resize(row, out.layout.n_cols());
  out.jacobian.setFromTriplets(trip.begin(), trip.end());
  return out;
}

/// Applies a full-layout local update (the inverse of the Jacobian's chart).
inline BaProblem ba_retract(const BaProblem& p, const BaParameterLayout& l, const Eigen::VectorXd& delta) {
  BaProblem out = p;
  for (int c = 0; c < l.n_cameras; ++c) {
    auto& pose = out.cameras[c].pose;
    const Vec3 dtheta = delta.segment<3>(l.pose_col(c));
    const Vec3 dt = delta.segment<3>(l.pose_col(c) + 3);
    pose.translation = p.cameras[c].pose.translation + p.cameras[c].pose.rotation * dt;
    pose.rotation = p.cameras[c].pose.rotation * so3_exp(dtheta);
    const int blk = l.intrinsic_block_of_camera[c];
    if (blk >= 0) {
      const auto d = delta.segment<5>(l.intrinsics_col(blk));
      auto& k = out.cameras[c].intrinsics;
      k.f += d(0);
      k.k1 += d(1);
      k.k2 += d(2);
      k.u0 += d(3);
      k.v0 += d(4);
    }
  }
  for (int j = 0; j < l.n_points; ++j) out.landmarks[j].point += delta.segment<3>(l.point_col(j));
  return out;
}

/// Undamped reduced camera system of the gauge-fixed problem (points
/// eliminated). Empty when some point block is singular.
inline std::optional<Eigen::MatrixXd> reduced_camera_system(const BaProblem& p, const BaConfig& cfg) {
  const auto layout = ba_detail::make_frame_layout(p, cfg.intrinsics, cfg.fix_gauge);
  const auto slots = ba_detail::observation_slots(p);
  const auto lin = ba_detail::linearize_all(p, layout, slots, cfg.huber_gamma_px, nullptr);
  const auto ne = ba_detail::frame_normal_equations(layout, lin);
  Eigen::MatrixXd s;
  Eigen::VectorXd rhs;
  std::vector<Mat3> hinv;
  if (!ba_detail::schur_reduce(layout, lin, ne, 0.0, s, rhs, hinv)) return std::nullopt;
  return s;
}

/// Refreshes each landmark's mean reprojection error over its inlier observations.
inline void update_reprojection_errors(BaProblem& p) {
  const auto slots = ba_detail::observation_slots(p);
  for (std::size_t j = 0; j < p.landmarks.size(); ++j) {
    auto& lm = p.landmarks[j];
    double sum = 0.0;
    int n = 0;
    for (std::size_t o = 0; o < lm.track.observations.size(); ++o) {
      if (!lm.inlier_mask[o]) continue;
      const BaCamera& cam = p.cameras[slots[j][o]];
      const auto uv = project(lm.point, cam.pose, cam.intrinsics);
      sum += uv ? (*uv - lm.track.observations[o].px).norm() : std::numeric_limits<double>::infinity();
      ++n;
    }
    lm.mean_reprojection_error_px = n > 0 ? sum / n : 0.0;
  }
}

struct BaRunResult {
  BaProblem problem;
  BaRoundReport report;
};

/// Levenberg-Marquardt with Schur elimination of points. Stops on relative
/// cost decrease below tolerance, gradient max-norm below tolerance, or the
/// iteration cap (report.converged = false).
inline BaRunResult run_bundle_adjustment(const BaProblem& problem, const BaConfig& cfg,
                                         Executor* executor = nullptr) {
  for (const auto& c : problem.cameras) c.intrinsics.validate();
  BaProblem cur = problem;
  const auto slots = ba_detail::observation_slots(cur);
  const double gamma = cfg.huber_gamma_px;
  BaRoundReport rep;
  rep.initial_cost = ba_detail::total_cost(cur, slots, gamma);
  double cost = rep.initial_cost;
  double lambda = cfg.initial_lambda;
  bool converged = false;
  int iterations = 0;

  while (!converged && iterations < cfg.max_iterations) {
    if (cost <= cfg.absolute_cost_tol) {
      converged = true;
      break;
    }
    const auto layout = ba_detail::make_frame_layout(cur, cfg.intrinsics, cfg.fix_gauge);
    const auto lin = ba_detail::linearize_all(cur, layout, slots, gamma, executor);
    const auto ne = ba_detail::frame_normal_equations(layout, lin);
    double gmax = ne.gf.size() ? ne.gf.cwiseAbs().maxCoeff() : 0.0;
    for (const auto& ll : lin) gmax = std::max(gmax, ll.gp.cwiseAbs().maxCoeff());
    if (gmax < cfg.gradient_tol) {
      converged = true;
      break;
    }
    bool accepted = false;
    while (!accepted && iterations < cfg.max_iterations) {
      ++iterations;
      Eigen::MatrixXd s;
      Eigen::VectorXd rhs;
      std::vector<Mat3> hinv;
      bool ok = ba_detail::schur_reduce(layout, lin, ne, lambda, s, rhs, hinv);
      Eigen::VectorXd df = Eigen::VectorXd::Zero(layout.n_frame);
      if (ok && layout.n_frame > 0) {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(s);
        ok = ldlt.info() == Eigen::Success && ldlt.isPositive();
        if (ok) df = ldlt.solve(rhs);
        ok = ok && df.allFinite();
      }
      if (ok) {
        bool valid = true;
        BaProblem cand = ba_detail::apply_step(cur, layout, lin, df, hinv, valid);
        const double new_cost = valid ? ba_detail::total_cost(cand, slots, gamma)
                                      : std::numeric_limits<double>::infinity();
        if (new_cost < cost) {
          const double rel = (cost - new_cost) / std::max(cost, 1e-300);
          cur = std::move(cand);
          cost = new_cost;
          lambda = std::max(lambda * 0.1, 1e-15);
          accepted = true;
          if (rel < cfg.relative_cost_tol) converged = true;
          continue;
        }
      }
      lambda *= 10.0;
      if (lambda > 1e16) {
        // No productive step remains at any damping: a stationary point.
        converged = true;
        break;
      }
    }
    if (!accepted) break;
  }
  update_reprojection_errors(cur);
  rep.final_cost = cost;
  rep.iterations = iterations;
  rep.converged = converged;
  rep.n_tracks_kept = cur.landmarks.size();
  return {std::move(cur), rep};
}

/// Largest reprojection error over a landmark's inlier observations
/// (infinite when any inlier is behind its camera).
inline double max_reprojection_error(const BaProblem& p, std::size_t j) {
  const auto& lm = p.landmarks[j];
  double worst = 0.0;
  for (std::size_t o = 0; o < lm.track.observations.size(); ++o) {
    if (!lm.inlier_mask[o]) continue;
    const int c = p.camera_slot(lm.track.observations[o].image_id);
    if (c < 0) return std::numeric_limits<double>::infinity();
    const auto uv = project(lm.point, p.cameras[c].pose, p.cameras[c].intrinsics);
    if (!uv) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, (*uv - lm.track.observations[o].px).norm());
  }
  return worst;
}

/// Drops landmarks whose worst inlier reprojection error exceeds the threshold
/// or whose inlier count is below min_track_length. Throws AllTracksFiltered.
inline BaProblem filter_tracks(const BaProblem& p, double threshold_px, std::size_t min_track_length) {
  if (!(threshold_px > 0.0)) throw Error(ErrorCode::kInvalidArgument, "filter threshold must be > 0");
  BaProblem out;
  out.cameras = p.cameras;
  for (std::size_t j = 0; j < p.landmarks.size(); ++j) {
    if (p.landmarks[j].n_inliers() < min_track_length) continue;
    if (max_reprojection_error(p, j) > threshold_px) continue;
    out.landmarks.push_back(p.landmarks[j]);
  }
  if (out.landmarks.empty()) throw Error(ErrorCode::kAllTracksFiltered, "no landmark survived filtering");
  return out;
}

struct ThreeRoundResult {
  BaProblem problem;
  std::vector<BaRoundReport> reports;
};

/// Alternates bundle adjustment and track filtering at the configured
/// thresholds (10, 5, 3 px by default).
inline ThreeRoundResult three_round_ba(const BaProblem& problem, const BaConfig& cfg,
                                       Executor* executor = nullptr) {
  ThreeRoundResult out{problem, {}};
  for (double threshold : cfg.round_thresholds_px) {
    auto run = run_bundle_adjustment(out.problem, cfg, executor);
    out.problem = filter_tracks(run.problem, threshold, cfg.min_track_length);
    update_reprojection_errors(out.problem);
    run.report.filter_threshold_px = threshold;
    run.report.n_tracks_kept = out.problem.landmarks.size();
    out.reports.push_back(run.report);
  }
  return out;
}

}  // namespace gsfm
