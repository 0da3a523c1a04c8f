#pragma once

// Rotation averaging by chordal-cost minimization over a lifted product of
// Stiefel manifolds (p x 3 blocks), with a Riemannian staircase p = 3..p_max
// and a second-order optimality certificate.
//
// With world rotations R_i and measurements M_ij = jRi (so R_i ~ R_j M_ij),
// the cost is  sum kappa * |Y_j M_ij - Y_i|_F^2 = tr(Y Q Y^T)  where Y is
// p x 3n and the 3x3 blocks of Q are
//   Q_ii += kappa I,  Q_jj += kappa I,  Q_ji += -kappa M,  Q_ij += -kappa M^T.
// At p = 3 this equals 2 * sum kappa (3 - tr(R_i^T R_j M_ij)).

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <vector>

#include "gsfm/core_geom.hpp"
#include "gsfm/error.hpp"

namespace gsfm {

struct RotationEdge {
  int i = 0;
  int j = 0;
  Rotation3 rotation;  // jRi
  double kappa = 1.0;
};

/// Cameras are indexed 0..n_cameras-1.
struct RotationAveragingProblem {
  int n_cameras = 0;
  std::vector<RotationEdge> edges;
};

struct RotationAveragingConfig {
  double sigma = 1.0;  // kappa = 1 / sigma^2 where an edge does not carry its own weight
  int p_min = 3;
  int p_max = 30;
  double gradient_tol = 1e-9;
  double certificate_tol = 1e-7;
  int max_iterations = 500;  // trust-region iterations per level
};

struct RotationSolution {
  std::vector<Rotation3> rotations;  // world_from_camera rotations, camera 0 = identity
  double cost = 0.0;                 // 2 * sum kappa (3 - tr(...)) at the rounded solution
  bool certified = false;
  int p_final = 3;
  double min_certificate_eigenvalue = 0.0;
  std::vector<double> level_costs;  // lifted cost at the end of each staircase level
};

inline double kappa_from_sigma(double sigma) {
  if (!(sigma > 0.0)) throw Error(ErrorCode::kInvalidArgument, "sigma must be > 0");
  return 1.0 / (sigma * sigma);
}

/// Chordal cost 2 * sum kappa (3 - tr(R_i^T R_j M_ij)) of a set of rotations.
inline double chordal_cost(const RotationAveragingProblem& p, const std::vector<Rotation3>& r) {
  double c = 0.0;
  for (const auto& e : p.edges) {
    c += e.kappa * (r[e.j].matrix() * e.rotation.matrix() - r[e.i].matrix()).squaredNorm();
  }
  return c;
}

/// Trace objective sum kappa tr(R_i^T R_j M_ij).
inline double trace_objective(const RotationAveragingProblem& p, const std::vector<Rotation3>& r) {
  double s = 0.0;
  for (const auto& e : p.edges) {
    s += e.kappa * (r[e.i].matrix().transpose() * r[e.j].matrix() * e.rotation.matrix()).trace();
  }
  return s;
}

/// Rotations composed along a BFS tree rooted at camera 0. Throws Disconnected.
inline std::vector<Rotation3> spanning_tree_init(const RotationAveragingProblem& p) {
  if (p.n_cameras < 1) throw Error(ErrorCode::kInvalidArgument, "rotation problem has no cameras");
  std::vector<std::vector<std::pair<int, std::size_t>>> adj(p.n_cameras);
  for (std::size_t k = 0; k < p.edges.size(); ++k) {
    const auto& e = p.edges[k];
    if (e.i < 0 || e.j < 0 || e.i >= p.n_cameras || e.j >= p.n_cameras || e.i == e.j) {
      throw Error(ErrorCode::kInvalidArgument, "rotation edge has invalid endpoints");
    }
    adj[e.i].push_back({e.j, k});
    adj[e.j].push_back({e.i, k});
  }
  for (auto& a : adj) std::sort(a.begin(), a.end());
  std::vector<Rotation3> r(p.n_cameras);
  std::vector<bool> seen(p.n_cameras, false);
  std::deque<int> queue{0};
  seen[0] = true;
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    for (const auto& [v, k] : adj[u]) {
      if (seen[v]) continue;
      const auto& e = p.edges[k];
      // R_i = R_j M  <=>  R_j = R_i M^T
      r[v] = (e.i == u) ? r[u] * e.rotation.inverse() : r[u] * e.rotation;
      seen[v] = true;
      queue.push_back(v);
    }
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw Error(ErrorCode::kDisconnected, "rotation averaging graph is disconnected");
  }
  return r;
}

namespace rot_avg_detail {

using Mat = Eigen::MatrixXd;

inline Eigen::SparseMatrix<double> build_q(const RotationAveragingProblem& p) {
  std::vector<Eigen::Triplet<double>> t;
  for (const auto& e : p.edges) {
    const Mat3& m = e.rotation.matrix();
    for (int a = 0; a < 3; ++a) {
      t.emplace_back(3 * e.i + a, 3 * e.i + a, e.kappa);
      t.emplace_back(3 * e.j + a, 3 * e.j + a, e.kappa);
      for (int b = 0; b < 3; ++b) {
        t.emplace_back(3 * e.j + a, 3 * e.i + b, -e.kappa * m(a, b));
        t.emplace_back(3 * e.i + a, 3 * e.j + b, -e.kappa * m(b, a));
      }
    }
  }
  Eigen::SparseMatrix<double> q(3 * p.n_cameras, 3 * p.n_cameras);
  q.setFromTriplets(t.begin(), t.end());
  return q;
}

struct Lifted {
  const Eigen::SparseMatrix<double>& q;
  int n;

  double cost(const Mat& y) const { return (y * q).cwiseProduct(y).sum(); }

  static Mat3 sym(const Mat3& a) { return 0.5 * (a + a.transpose()); }

  /// Lambda_i = sym(Y_i^T (YQ)_i), one 3x3 block per camera.
  std::vector<Mat3> lambda(const Mat& y, const Mat& yq) const {
    std::vector<Mat3> l(n);
    for (int i = 0; i < n; ++i) l[i] = sym(y.middleCols<3>(3 * i).transpose() * yq.middleCols<3>(3 * i));
    return l;
  }

  Mat project(const Mat& y, const Mat& v) const {
    Mat out = v;
    for (int i = 0; i < n; ++i) {
      const auto yi = y.middleCols<3>(3 * i);
      out.middleCols<3>(3 * i) -= yi * sym(yi.transpose() * v.middleCols<3>(3 * i));
    }
    return out;
  }

  Mat rgrad(const Mat& y, const Mat& yq, const std::vector<Mat3>& l) const {
    Mat g = 2.0 * yq;
    for (int i = 0; i < n; ++i) g.middleCols<3>(3 * i) -= 2.0 * y.middleCols<3>(3 * i) * l[i];
    return g;
  }

  Mat hess(const Mat& y, const std::vector<Mat3>& l, const Mat& v) const {
    Mat h = 2.0 * (v * q);
    for (int i = 0; i < n; ++i) h.middleCols<3>(3 * i) -= 2.0 * v.middleCols<3>(3 * i) * l[i];
    return project(y, h);
  }

  Mat retract(const Mat& y, const Mat& v) const {
    Mat out(y.rows(), y.cols());
    for (int i = 0; i < n; ++i) {
      const Mat b = y.middleCols<3>(3 * i) + v.middleCols<3>(3 * i);
      Eigen::JacobiSVD<Mat> svd(b, Eigen::ComputeThinU | Eigen::ComputeThinV);
      out.middleCols<3>(3 * i) = svd.matrixU() * svd.matrixV().transpose();
    }
    return out;
  }
};

inline double inner(const Mat& a, const Mat& b) { return a.cwiseProduct(b).sum(); }

/// Riemannian trust region with truncated CG (Steihaug-Toint).
inline Mat optimize_level(const Lifted& lf, Mat y, const RotationAveragingConfig& cfg) {
  const double delta_max = 10.0 * std::sqrt(3.0 * lf.n);
  double delta = delta_max / 8.0;
  double f = lf.cost(y);
  for (int it = 0; it < cfg.max_iterations; ++it) {
    const Mat yq = y * lf.q;
    const auto l = lf.lambda(y, yq);
    const Mat g = lf.rgrad(y, yq, l);
    const double gnorm = std::sqrt(inner(g, g));
    if (gnorm < cfg.gradient_tol) break;

    Mat eta = Mat::Zero(y.rows(), y.cols());
    Mat r = g;
    Mat d = -r;
    double rr = inner(r, r);
    const double r0 = std::sqrt(rr);
    bool boundary = false;
    Mat h_eta = Mat::Zero(y.rows(), y.cols());
    const int max_inner = std::max(10, 3 * lf.n * static_cast<int>(y.rows()));
    for (int k = 0; k < max_inner; ++k) {
      const Mat hd = lf.hess(y, l, d);
      const double dhd = inner(d, hd);
      const double alpha = rr / dhd;
      const Mat eta_new = eta + alpha * d;
      if (!(dhd > 0.0) || std::sqrt(inner(eta_new, eta_new)) >= delta) {
        // Step to the trust-region boundary along d.
        const double ed = inner(eta, d);
        const double dd = inner(d, d);
        const double ee = inner(eta, eta);
        const double tau = (-ed + std::sqrt(std::max(0.0, ed * ed + dd * (delta * delta - ee)))) / dd;
        eta += tau * d;
        h_eta += tau * hd;
        boundary = true;
        break;
      }
      eta = eta_new;
      h_eta += alpha * hd;
      r += alpha * hd;
      const double rr_new = inner(r, r);
      if (std::sqrt(rr_new) <= r0 * std::min(r0, 0.1)) break;
      d = -r + (rr_new / rr) * d;
      rr = rr_new;
    }
    const Mat y_new = lf.retract(y, eta);
    const double f_new = lf.cost(y_new);
    const double model = -(inner(g, eta) + 0.5 * inner(eta, h_eta));
    double rho = model > 0.0 ? (f - f_new) / model : (f_new < f ? 1.0 : 0.0);
    if (!std::isfinite(rho)) rho = 0.0;
    if (rho < 0.25) {
      delta *= 0.25;
    } else if (rho > 0.75 && boundary) {
      delta = std::min(2.0 * delta, delta_max);
    }
    if (rho > 0.1 && f_new <= f) {
      y = y_new;
      f = f_new;
    }
    if (delta < 1e-14) break;
  }
  return y;
}

/// Minimum eigenpair of S = Q - blockdiag(Lambda).
inline std::pair<double, Eigen::VectorXd> certificate(const Lifted& lf, const Mat& y) {
  const Mat yq = y * lf.q;
  const auto l = lf.lambda(y, yq);
  Mat s = Mat(lf.q);
  for (int i = 0; i < lf.n; ++i) s.block<3, 3>(3 * i, 3 * i) -= l[i];
  Eigen::SelfAdjointEigenSolver<Mat> eig(s);
  return {eig.eigenvalues()(0), eig.eigenvectors().col(0)};
}

/// Top-3 left singular subspace of Y, majority determinant sign, per-block
/// projection onto SO(3), gauge camera 0 = identity.
inline std::vector<Rotation3> round_solution(const Mat& y, int n) {
  Eigen::JacobiSVD<Mat> svd(y, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Mat r = svd.singularValues().head(3).asDiagonal() * svd.matrixV().leftCols(3).transpose();
  int positive = 0;
  for (int i = 0; i < n; ++i) positive += Mat3(r.middleCols<3>(3 * i)).determinant() > 0 ? 1 : 0;
  if (2 * positive < n) r.row(2) *= -1.0;
  std::vector<Rotation3> out(n);
  for (int i = 0; i < n; ++i) out[i] = Rotation3::nearest(r.middleCols<3>(3 * i));
  const Rotation3 g = out[0].inverse();
  for (auto& x : out) x = Rotation3::nearest((g * x).matrix());
  return out;
}

}  // namespace rot_avg_detail

/// Staircase: optimize at level p from the previous solution, check the
/// certificate, and if it fails escape the saddle along the negative
/// eigenvector at level p + 1. Stops when certified or at p_max
/// (certified = false, solution still returned).
inline RotationSolution solve_rotations(const RotationAveragingProblem& p, const RotationAveragingConfig& cfg,
                                        const std::vector<Rotation3>* init = nullptr) {
  using namespace rot_avg_detail;
  if (cfg.p_min < 3 || cfg.p_max < cfg.p_min) throw Error(ErrorCode::kInvalidArgument, "invalid staircase range");
  for (const auto& e : p.edges) {
    if (!(e.kappa > 0.0)) throw Error(ErrorCode::kInvalidArgument, "edge weight must be > 0");
  }
  const std::vector<Rotation3> r0 = init ? *init : spanning_tree_init(p);
  if (init) spanning_tree_init(p);  // connectivity check
  const int n = p.n_cameras;
  RotationSolution sol;
  if (n == 1) {
    sol.rotations = {Rotation3::identity()};
    sol.certified = true;
    sol.level_costs = {0.0};
    return sol;
  }
  const auto q = build_q(p);
  const Lifted lf{q, n};

  Mat y = Mat::Zero(cfg.p_min, 3 * n);
  for (int i = 0; i < n; ++i) y.block<3, 3>(0, 3 * i) = r0[i].matrix();
  int level = cfg.p_min;
  for (;;) {
    y = optimize_level(lf, y, cfg);
    sol.level_costs.push_back(lf.cost(y));
    const auto [lam, v] = certificate(lf, y);
    sol.min_certificate_eigenvalue = lam;
    sol.p_final = level;
    if (lam >= -cfg.certificate_tol) {
      sol.certified = true;
      break;
    }
    if (level >= cfg.p_max) break;
    // Lift with a zero row and descend along [0; v^T], which is tangent at the lift.
    Mat lifted = Mat::Zero(level + 1, 3 * n);
    lifted.topRows(level) = y;
    Mat dir = Mat::Zero(level + 1, 3 * n);
    dir.row(level) = v.transpose();
    const double f0 = lf.cost(lifted);
    double alpha = 1.0;
    Mat best = lifted;
    for (int k = 0; k < 60; ++k, alpha *= 0.5) {
      const Mat trial = lf.retract(lifted, alpha * dir);
      if (lf.cost(trial) < f0) {
        best = trial;
        break;
      }
    }
    y = best;
    ++level;
  }
  sol.rotations = round_solution(y, n);
  sol.cost = chordal_cost(p, sol.rotations);
  return sol;
}

}  // namespace gsfm
