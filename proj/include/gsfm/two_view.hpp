#pragma once

// Two-view geometric verification: keypoint NMS merging, essential-matrix
// LO-RANSAC, decomposition with cheirality voting, two-view bundle
// adjustment and pair acceptance.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <span>
#include <unordered_map>
#include <vector>

#include "gsfm/bundle_adjust.hpp"
#include "gsfm/core_geom.hpp"
#include "gsfm/error.hpp"
#include "gsfm/five_point.hpp"
#include "gsfm/triangulation.hpp"
#include "gsfm/types.hpp"

namespace gsfm {

struct VerificationConfig {
  double ransac_threshold_px = 4.0;
  int max_ransac_iters = 10000;
  double ransac_confidence = 0.9999;
  double min_inlier_ratio = 0.10;
  int min_inliers = 15;
  double two_view_ba_reproj_prune_px = 0.5;
  int two_view_ba_max_iters = 100;
  double nms_radius_px = 3.0;
  bool nms_merge = false;
  bool use_two_view_ba = true;
  double max_condition_number = 1e12;

  void validate() const {
    if (!(ransac_threshold_px > 0) || max_ransac_iters < 1 || !(ransac_confidence > 0 && ransac_confidence < 1) ||
        !(min_inlier_ratio > 0) || min_inliers < 1 || !(two_view_ba_reproj_prune_px > 0) ||
        two_view_ba_max_iters < 1 || !(nms_radius_px > 0)) {
      throw Error(ErrorCode::kInvalidArgument, "verification thresholds must be > 0");
    }
  }
};

// ---------------------------------------------------------------------------
// NMS keypoint merging

struct MergedKeypoints {
  std::vector<KeypointList> keypoints;  // indexed by image id
  std::vector<MatchSet> matches;
  std::vector<std::vector<int>> remap;  // old keypoint index -> merged index, per image
};

/// Greedy leader clustering per image: in index order, each unassigned
/// keypoint starts a cluster and absorbs every unassigned keypoint closer than
/// `radius_px`. The representative sits at the cluster centroid. Matches are
/// remapped and duplicate correspondences dropped (first occurrence kept).
inline MergedKeypoints merge_keypoints_nms(const std::vector<KeypointList>& keypoints,
                                           const std::vector<MatchSet>& matches, double radius_px) {
  if (!(radius_px > 0.0)) throw Error(ErrorCode::kInvalidArgument, "NMS radius must be > 0");
  MergedKeypoints out;
  out.keypoints.resize(keypoints.size());
  out.remap.resize(keypoints.size());
  for (std::size_t img = 0; img < keypoints.size(); ++img) {
    const KeypointList& kps = keypoints[img];
    auto cell_of = [&](const Vec2& p) {
      return std::pair<long, long>(static_cast<long>(std::floor(p.x() / radius_px)),
                                   static_cast<long>(std::floor(p.y() / radius_px)));
    };
    std::map<std::pair<long, long>, std::vector<int>> grid;
    for (int k = 0; k < static_cast<int>(kps.size()); ++k) grid[cell_of(kps[k].position)].push_back(k);
    std::vector<int>& remap = out.remap[img];
    remap.assign(kps.size(), -1);
    for (int k = 0; k < static_cast<int>(kps.size()); ++k) {
      if (remap[k] >= 0) continue;
      const int id = static_cast<int>(out.keypoints[img].size());
      const auto [cx, cy] = cell_of(kps[k].position);
      Vec2 sum = Vec2::Zero();
      int count = 0;
      std::vector<int> members;
      for (long dx = -1; dx <= 1; ++dx) {
        for (long dy = -1; dy <= 1; ++dy) {
          auto it = grid.find({cx + dx, cy + dy});
          if (it == grid.end()) continue;
          for (int m : it->second) {
            if (remap[m] < 0 && (kps[m].position - kps[k].position).norm() < radius_px) members.push_back(m);
          }
        }
      }
      std::sort(members.begin(), members.end());
      for (int m : members) {
        remap[m] = id;
        sum += kps[m].position;
        ++count;
      }
      Keypoint rep = kps[k];
      rep.position = sum / count;
      out.keypoints[img].push_back(rep);
    }
  }
  for (const MatchSet& ms : matches) {
    MatchSet m{ms.i, ms.j, {}};
    std::set<std::pair<int, int>> seen;
    for (const auto& c : ms.matches) {
      const Correspondence r{out.remap.at(ms.i).at(c.idx_i), out.remap.at(ms.j).at(c.idx_j)};
      if (seen.insert({r.idx_i, r.idx_j}).second) m.matches.push_back(r);
    }
    out.matches.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Essential matrix RANSAC

struct EssentialEstimate {
  Mat3 e = Mat3::Zero();
  std::vector<bool> inlier_mask;  // parallel to the match list
  int n_inliers = 0;
  int iterations = 0;
};

namespace two_view_detail {

struct NormalizedMatches {
  std::vector<Vec3> xi;
  std::vector<Vec3> xj;
};

inline NormalizedMatches normalize_matches(const MatchSet& matches, const KeypointList& kp_i,
                                           const KeypointList& kp_j, const CameraIntrinsics& ki,
                                           const CameraIntrinsics& kj) {
  NormalizedMatches out;
  out.xi.reserve(matches.matches.size());
  out.xj.reserve(matches.matches.size());
  for (const auto& c : matches.matches) {
    if (c.idx_i < 0 || c.idx_j < 0 || c.idx_i >= static_cast<int>(kp_i.size()) ||
        c.idx_j >= static_cast<int>(kp_j.size())) {
      throw Error(ErrorCode::kInvalidArgument, "correspondence references a missing keypoint");
    }
    out.xi.push_back(pixel_to_normalized(kp_i[c.idx_i].position, ki).homogeneous());
    out.xj.push_back(pixel_to_normalized(kp_j[c.idx_j].position, kj).homogeneous());
  }
  return out;
}

// MSAC score: inliers cost their squared distance, outliers a constant thr^2.
struct Score {
  int inliers = 0;
  double sq_sum = 0.0;  // over inliers, px^2
  double cost = std::numeric_limits<double>::infinity();

  bool better_than(const Score& o) const { return cost < o.cost; }
};

inline Score score_model(const Mat3& e, const NormalizedMatches& nm, double scale_px, double thr_px,
                         std::vector<bool>* mask) {
  Score s;
  const double thr_sq = thr_px * thr_px;
  if (mask) mask->assign(nm.xi.size(), false);
  for (std::size_t k = 0; k < nm.xi.size(); ++k) {
    const double d2 = sampson_sq(e, nm.xi[k], nm.xj[k]) * scale_px * scale_px;
    if (d2 <= thr_sq) {
      ++s.inliers;
      s.sq_sum += d2;
      if (mask) (*mask)[k] = true;
    }
  }
  s.cost = s.sq_sum + static_cast<double>(nm.xi.size() - s.inliers) * thr_sq;
  return s;
}

}  // namespace two_view_detail

/// LO-RANSAC over five-point hypotheses with MSAC scoring. Inliers have
/// Sampson distance (in pixels: normalized distance times the mean focal
/// length) within cfg.ransac_threshold_px. Each new best model is refined by
/// reweighted linear fits on its inliers while the score improves.
inline EssentialEstimate estimate_essential_ransac(const MatchSet& matches, const KeypointList& kp_i,
                                                   const KeypointList& kp_j, const CameraIntrinsics& ki,
                                                   const CameraIntrinsics& kj, const VerificationConfig& cfg,
                                                   std::uint64_t seed) {
  using namespace two_view_detail;
  cfg.validate();
  const std::size_t n = matches.matches.size();
  if (n < 5) throw Error(ErrorCode::kTooFewMatches, "essential estimation needs >= 5 correspondences");
  const NormalizedMatches nm = normalize_matches(matches, kp_i, kp_j, ki, kj);
  const double scale = 0.5 * (ki.f + kj.f);
  std::mt19937_64 rng(seed);

  Mat3 best_e = Mat3::Zero();
  Score best;
  bool have = false;
  int iters = 0;
  long budget = cfg.max_ransac_iters;
  std::vector<std::size_t> idx(n);
  for (std::size_t k = 0; k < n; ++k) idx[k] = k;
  std::vector<Vec3> si(5), sj(5);

  // Local optimization: iteratively reweighted linear refits on the current
  // inliers. Weights fall to zero at the threshold, so borderline outliers
  // barely pull the model.
  auto local_optimize = [&](Mat3 e, Score s) {
    const double thr_sq = cfg.ransac_threshold_px * cfg.ransac_threshold_px;
    for (int round = 0; round < 10; ++round) {
      std::vector<Vec3> ii, jj;
      std::vector<double> ww;
      for (std::size_t k = 0; k < n; ++k) {
        const double d2 = sampson_sq(e, nm.xi[k], nm.xj[k]) * scale * scale;
        if (!(d2 <= thr_sq)) continue;
        const double u = 1.0 - d2 / thr_sq;
        ii.push_back(nm.xi[k]);
        jj.push_back(nm.xj[k]);
        ww.push_back(std::max(u * u, 1e-3));
      }
      if (ii.size() < 8) break;
      const Mat3 refit = eight_point_essential(ii, jj, ww);
      const Score rs = score_model(refit, nm, scale, cfg.ransac_threshold_px, nullptr);
      if (!rs.better_than(s)) break;
      e = refit;
      s = rs;
    }
    return std::pair(e, s);
  };

  while (iters < budget) {
    ++iters;
    // Partial Fisher-Yates draw of 5 distinct indices.
    for (int k = 0; k < 5; ++k) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(k), n - 1);
      std::swap(idx[k], idx[pick(rng)]);
      si[k] = nm.xi[idx[k]];
      sj[k] = nm.xj[idx[k]];
    }
    for (const Mat3& e : five_point_essential(si, sj)) {
      const Score s = score_model(e, nm, scale, cfg.ransac_threshold_px, nullptr);
      if (have && !s.better_than(best)) continue;
      auto [le, ls] = local_optimize(e, s);
      best_e = le;
      best = ls;
      have = true;
      const double w = static_cast<double>(best.inliers) / static_cast<double>(n);
      const double p_fail = 1.0 - std::pow(w, 5);
      if (p_fail <= 0.0) {
        budget = iters;
      } else {
        const double need = std::log(1.0 - cfg.ransac_confidence) / std::log(p_fail);
        budget = std::min<long>(cfg.max_ransac_iters, static_cast<long>(std::ceil(std::max(need, 1.0))));
      }
    }
  }
  if (!have || best.inliers < 5) throw Error(ErrorCode::kNoModelFound, "no essential matrix reached minimal support");
  EssentialEstimate out;
  out.e = project_to_essential(best_e);
  out.e /= out.e.norm();
  score_model(out.e, nm, scale, cfg.ransac_threshold_px, &out.inlier_mask);
  out.n_inliers = static_cast<int>(std::count(out.inlier_mask.begin(), out.inlier_mask.end(), true));
  out.iterations = iters;
  return out;
}

// ---------------------------------------------------------------------------
// Decomposition

/// Depths (lambda_i, lambda_j) with lambda_j x_j = R lambda_i x_i + t.
inline std::pair<double, double> two_view_depths(const Mat3& r, const Vec3& t, const Vec3& xi, const Vec3& xj) {
  Eigen::Matrix<double, 3, 2> a;
  a.col(0) = r * xi;
  a.col(1) = -xj;
  const Eigen::Vector2d lam = (a.transpose() * a).ldlt().solve(-a.transpose() * t);
  return {lam(0), lam(1)};
}

struct RelativePose {
  Rotation3 rotation;     // jRi
  UnitVector3 direction;  // jti
};

/// Picks the (R, t) candidate of E with the most correspondences in front of
/// both cameras. Throws CheiralityAmbiguous unless the winner holds a strict
/// majority of the correspondences.
inline RelativePose decompose_essential(const Mat3& e, std::span<const Vec3> xi, std::span<const Vec3> xj) {
  if (xi.empty() || xi.size() != xj.size()) {
    throw Error(ErrorCode::kInvalidArgument, "decompose_essential needs >= 1 correspondence");
  }
  Eigen::JacobiSVD<Mat3> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  Mat3 v = svd.matrixV();
  if (u.determinant() < 0) u = -u;
  if (v.determinant() < 0) v = -v;
  Mat3 w;
  w << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const Mat3 rs[2] = {u * w * v.transpose(), u * w.transpose() * v.transpose()};
  const Vec3 t0 = u.col(2);
  int best_votes = -1;
  int best_k = -1;
  for (int k = 0; k < 4; ++k) {
    const Mat3& r = rs[k / 2];
    const Vec3 t = (k % 2 == 0) ? t0 : Vec3(-t0);
    int votes = 0;
    for (std::size_t q = 0; q < xi.size(); ++q) {
      const auto [li, lj] = two_view_depths(r, t, xi[q], xj[q]);
      if (li > 0 && lj > 0) ++votes;
    }
    if (votes > best_votes) {
      best_votes = votes;
      best_k = k;
    }
  }
  if (2 * best_votes <= static_cast<int>(xi.size())) {
    throw Error(ErrorCode::kCheiralityAmbiguous, "no decomposition has a strict cheirality majority");
  }
  const Vec3 t = (best_k % 2 == 0) ? t0 : Vec3(-t0);
  return {Rotation3::nearest(rs[best_k / 2]), UnitVector3::normalized(t)};
}

/// Convenience overload on pixel keypoints; uses only the masked-in matches
/// when `mask` is non-empty.
inline RelativePose decompose_essential(const Mat3& e, const MatchSet& matches, const KeypointList& kp_i,
                                        const KeypointList& kp_j, const CameraIntrinsics& ki,
                                        const CameraIntrinsics& kj, const std::vector<bool>& mask = {}) {
  const auto nm = two_view_detail::normalize_matches(matches, kp_i, kp_j, ki, kj);
  std::vector<Vec3> xi, xj;
  for (std::size_t k = 0; k < nm.xi.size(); ++k) {
    if (!mask.empty() && !mask[k]) continue;
    xi.push_back(nm.xi[k]);
    xj.push_back(nm.xj[k]);
  }
  return decompose_essential(e, xi, xj);
}

// ---------------------------------------------------------------------------
// Two-view bundle adjustment

struct TwoViewBaReport {
  int n_triangulated = 0;
  int n_after_prune = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  double condition_number = 0.0;
};

/// Builds the two-camera problem: camera i at the origin, camera j at
/// wTj = (jTi)^-1 with unit baseline; every inlier correspondence with
/// positive depths becomes a two-observation landmark.
inline BaProblem two_view_problem(const TwoViewMeasurement& m, const KeypointList& kp_i,
                                  const KeypointList& kp_j, const CameraIntrinsics& ki,
                                  const CameraIntrinsics& kj) {
  BaProblem p;
  const Pose3 j_t_i{m.rotation, m.direction.vector()};
  p.cameras.push_back({m.i, Pose3::identity(), ki, 0});
  p.cameras.push_back({m.j, j_t_i.inverse(), kj, 1});
  for (const auto& c : m.inliers.matches) {
    const Vec2 pi = kp_i.at(c.idx_i).position;
    const Vec2 pj = kp_j.at(c.idx_j).position;
    const RayObservation views[2] = {{p.cameras[0].pose, pixel_to_normalized(pi, ki)},
                                     {p.cameras[1].pose, pixel_to_normalized(pj, kj)}};
    Vec3 x;
    try {
      x = triangulate_dlt(views);
    } catch (const Error&) {
      continue;
    }
    if (!project(x, p.cameras[0].pose, ki) || !project(x, p.cameras[1].pose, kj)) continue;
    Landmark lm;
    lm.track.observations = {{m.i, c.idx_i, pi}, {m.j, c.idx_j, pj}};
    lm.point = x;
    lm.inlier_mask = {true, true};
    p.landmarks.push_back(std::move(lm));
  }
  return p;
}

/// Refines the relative pose jointly with two-view points: BA over all
/// triangulated inliers, pruning of points whose reprojection error exceeds
/// the prune threshold in either view, then BA over the survivors. The first
/// camera is fixed at the origin and the baseline length at 1. Throws
/// IndeterminateSystem when the reduced camera system is singular or its
/// condition number exceeds cfg.max_condition_number.
inline TwoViewMeasurement two_view_ba(const TwoViewMeasurement& m, const KeypointList& kp_i,
                                      const KeypointList& kp_j, const CameraIntrinsics& ki,
                                      const CameraIntrinsics& kj, const VerificationConfig& cfg,
                                      TwoViewBaReport* report = nullptr) {
  if (m.inliers.matches.size() < 5) throw Error(ErrorCode::kTooFewMatches, "two-view BA needs >= 5 inliers");
  BaProblem p = two_view_problem(m, kp_i, kp_j, ki, kj);
  TwoViewBaReport rep;
  rep.n_triangulated = static_cast<int>(p.landmarks.size());
  if (p.landmarks.size() < 5) throw Error(ErrorCode::kTooFewMatches, "too few points triangulated in front");

  BaConfig bc;
  bc.max_iterations = cfg.two_view_ba_max_iters;
  bc.min_track_length = 2;
  auto first = run_bundle_adjustment(p, bc);
  rep.initial_cost = first.report.initial_cost;
  int budget_left = std::max(0, cfg.two_view_ba_max_iters - first.report.iterations);

  BaProblem kept;
  kept.cameras = first.problem.cameras;
  for (std::size_t j = 0; j < first.problem.landmarks.size(); ++j) {
    if (max_reprojection_error(first.problem, j) <= cfg.two_view_ba_reproj_prune_px) {
      kept.landmarks.push_back(first.problem.landmarks[j]);
    }
  }
  rep.n_after_prune = static_cast<int>(kept.landmarks.size());
  if (kept.landmarks.size() < 5) throw Error(ErrorCode::kTooFewMatches, "too few points survive pruning");
  BaProblem final_problem = kept;
  double final_cost = ba_cost(kept, bc.huber_gamma_px);
  if (budget_left > 0 && kept.landmarks.size() != first.problem.landmarks.size()) {
    bc.max_iterations = budget_left;
    auto second = run_bundle_adjustment(kept, bc);
    final_problem = std::move(second.problem);
    final_cost = second.report.final_cost;
  }
  rep.final_cost = final_cost;

  const auto s = reduced_camera_system(final_problem, bc);
  if (!s) throw Error(ErrorCode::kIndeterminateSystem, "a two-view point is unconstrained");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(*s);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  rep.condition_number = lo > 0 ? hi / lo : std::numeric_limits<double>::infinity();
  if (report) *report = rep;
  if (!(lo > 0) || rep.condition_number > cfg.max_condition_number) {
    throw Error(ErrorCode::kIndeterminateSystem, "two-view normal equations are rank deficient");
  }

  TwoViewMeasurement out = m;
  const Pose3 j_t_i = final_problem.cameras[1].pose.inverse();
  out.rotation = j_t_i.rotation;
  out.direction = UnitVector3::normalized(j_t_i.translation);
  out.inliers.matches.clear();
  for (const auto& lm : final_problem.landmarks) {
    out.inliers.matches.push_back({lm.track.observations[0].keypoint_index, lm.track.observations[1].keypoint_index});
  }
  std::sort(out.inliers.matches.begin(), out.inliers.matches.end());
  const int n_old = m.n_inliers > 0 ? m.n_inliers : static_cast<int>(m.inliers.matches.size());
  out.n_inliers = static_cast<int>(out.inliers.matches.size());
  out.inlier_ratio = m.inlier_ratio * static_cast<double>(out.n_inliers) / static_cast<double>(n_old);
  return out;
}

/// Inlier-ratio and inlier-count gate.
inline bool accept_pair(const TwoViewMeasurement& m, const VerificationConfig& cfg) {
  return m.inlier_ratio >= cfg.min_inlier_ratio && m.n_inliers >= cfg.min_inliers;
}

/// RANSAC, decomposition and (optionally) two-view BA for one pair. Errors
/// propagate; the caller decides acceptance.
inline TwoViewMeasurement verify_pair(const MatchSet& matches, const KeypointList& kp_i, const KeypointList& kp_j,
                                      const CameraIntrinsics& ki, const CameraIntrinsics& kj,
                                      const VerificationConfig& cfg, std::uint64_t seed) {
  const EssentialEstimate est = estimate_essential_ransac(matches, kp_i, kp_j, ki, kj, cfg, seed);
  const RelativePose rel = decompose_essential(est.e, matches, kp_i, kp_j, ki, kj, est.inlier_mask);
  TwoViewMeasurement m;
  m.i = matches.i;
  m.j = matches.j;
  m.rotation = rel.rotation;
  m.direction = rel.direction;
  m.inliers = {matches.i, matches.j, {}};
  for (std::size_t k = 0; k < matches.matches.size(); ++k) {
    if (est.inlier_mask[k]) m.inliers.matches.push_back(matches.matches[k]);
  }
  m.n_inliers = static_cast<int>(m.inliers.matches.size());
  m.inlier_ratio = static_cast<double>(m.n_inliers) / static_cast<double>(matches.matches.size());
  if (cfg.use_two_view_ba) m = two_view_ba(m, kp_i, kp_j, ki, kj, cfg);
  return m;
}

}  // namespace gsfm
