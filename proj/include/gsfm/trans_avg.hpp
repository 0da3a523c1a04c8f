#pragma once

// Translation averaging from world-frame unit directions: 1-D ordering
// (MFAS) outlier rejection over random projections, then Huber-robust
// Levenberg-Marquardt on the normalized-difference chordal residual
//   r = d - (x_b - x_a) / |x_b - x_a|.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <limits>
#include <vector>

#include "gsfm/core_geom.hpp"
#include "gsfm/error.hpp"
#include "gsfm/executor.hpp"

namespace gsfm {

enum class DirectionKind { kCameraCamera, kCameraLandmark };

/// Direction from node a (always a camera) to node b, in the world frame.
struct DirectionMeasurement {
  DirectionKind kind = DirectionKind::kCameraCamera;
  int a = 0;  // camera index
  int b = 0;  // camera index, or landmark index for kCameraLandmark
  UnitVector3 direction;
};

struct TranslationAveragingConfig {
  int n_projections = 48;
  double mfas_threshold = 0.1;
  double huber_delta = 0.1;
  bool use_huber = true;
  int n_init_trials = 50;
  int max_iterations = 200;
  std::uint64_t seed = 0;
};

struct MfasResult {
  std::vector<bool> inliers;      // parallel to the input measurements
  std::vector<double> violation;  // mean broken |projection| per projection
};

struct TranslationSolution {
  std::vector<Vec3> camera_positions;  // camera 0 at the origin
  std::vector<Vec3> landmark_positions;
  double cost = 0.0;
  int iterations = 0;
};

namespace trans_avg_detail {

inline int node_of(const DirectionMeasurement& m, bool head, int n_cameras) {
  if (!head) return m.a;
  return m.kind == DirectionKind::kCameraCamera ? m.b : n_cameras + m.b;
}

inline int count_landmarks(std::span<const DirectionMeasurement> ms) {
  int n = 0;
  for (const auto& m : ms) {
    if (m.kind == DirectionKind::kCameraLandmark) n = std::max(n, m.b + 1);
  }
  return n;
}

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  for (;;) {
    const Vec3 v(g(rng), g(rng), g(rng));
    if (v.norm() > 1e-6) return v.normalized();
  }
}

/// Greedy feedback-arc-set order (Eades-Lin-Smyth). Edges: (tail, head,
/// weight > 0) meaning head should come after tail. Sinks are peeled to the
/// back, sources to the front, otherwise the node with the largest
/// out-weight minus in-weight goes to the front (ties to the lower index).
/// The order is then polished by single-node insertion moves. Returns the
/// position of each node.
inline std::vector<int> greedy_order(int n_nodes, const std::vector<std::array<double, 3>>& edges) {
  std::vector<double> in_w(n_nodes, 0.0), out_w(n_nodes, 0.0);
  std::vector<int> in_n(n_nodes, 0), out_n(n_nodes, 0);
  std::vector<std::vector<std::pair<int, double>>> outs(n_nodes), ins(n_nodes);
  for (const auto& e : edges) {
    const int t = static_cast<int>(e[0]);
    const int h = static_cast<int>(e[1]);
    out_w[t] += e[2];
    in_w[h] += e[2];
    ++out_n[t];
    ++in_n[h];
    outs[t].push_back({h, e[2]});
    ins[h].push_back({t, e[2]});
  }
  std::vector<bool> done(n_nodes, false);
  std::vector<int> front, back;
  auto remove = [&](int v) {
    done[v] = true;
    for (const auto& [h, w] : outs[v]) {
      if (!done[h]) {
        in_w[h] -= w;
        --in_n[h];
      }
    }
    for (const auto& [t, w] : ins[v]) {
      if (!done[t]) {
        out_w[t] -= w;
        --out_n[t];
      }
    }
  };
  int remaining = n_nodes;
  while (remaining > 0) {
    bool progressed = true;
    while (progressed) {
      progressed = false;
      for (int v = 0; v < n_nodes; ++v) {
        if (!done[v] && out_n[v] == 0) {
          back.push_back(v);
          remove(v);
          --remaining;
          progressed = true;
        }
      }
      for (int v = 0; v < n_nodes; ++v) {
        if (!done[v] && in_n[v] == 0) {
          front.push_back(v);
          remove(v);
          --remaining;
          progressed = true;
        }
      }
    }
    if (remaining == 0) break;
    int pick = -1;
    for (int v = 0; v < n_nodes; ++v) {
      if (done[v]) continue;
      if (pick < 0 || out_w[v] - in_w[v] > out_w[pick] - in_w[pick]) pick = v;
    }
    front.push_back(pick);
    remove(pick);
    --remaining;
  }
  std::vector<int> order = front;
  order.insert(order.end(), back.rbegin(), back.rend());

  // Insertion local search: move single nodes to the slot with the least
  // broken weight until no move helps.
  for (int pass = 0; pass < 50; ++pass) {
    bool improved = false;
    for (int v = 0; v < n_nodes; ++v) {
      std::vector<int> rest;
      rest.reserve(n_nodes);
      int cur = 0;
      for (int k = 0; k < n_nodes; ++k) {
        if (order[k] == v) {
          cur = k;
        } else {
          rest.push_back(order[k]);
        }
      }
      std::vector<int> p(n_nodes, -1);
      for (int k = 0; k < static_cast<int>(rest.size()); ++k) p[rest[k]] = k;
      // Slot 0 breaks every in-edge; sliding past a node flips its edge state.
      std::vector<double> step(rest.size(), 0.0);
      double c = 0.0;
      for (const auto& [t, w] : ins[v]) {
        c += w;
        step[p[t]] -= w;
      }
      for (const auto& [h, w] : outs[v]) step[p[h]] += w;
      double cur_cost = c;
      for (int k = 0; k < cur; ++k) cur_cost += step[k];
      int best_k = cur;
      double best_c = cur_cost;
      for (int k = 0; k <= static_cast<int>(rest.size()); ++k) {
        if (c < best_c - 1e-12) {
          best_c = c;
          best_k = k;
        }
        if (k < static_cast<int>(rest.size())) c += step[k];
      }
      if (best_k != cur) {
        rest.insert(rest.begin() + best_k, v);
        order = std::move(rest);
        improved = true;
      }
    }
    if (!improved) break;
  }
  std::vector<int> pos(n_nodes, -1);
  for (int k = 0; k < n_nodes; ++k) pos[order[k]] = k;
  return pos;
}

}  // namespace trans_avg_detail

/// Projects every measurement onto n_projections random axes, orders the
/// nodes greedily per axis, and scores each measurement by the fraction of
/// its broken (backwards) projected weight averaged over the projections.
/// Measurements with mean violation above cfg.mfas_threshold are rejected.
inline MfasResult mfas_filter(std::span<const DirectionMeasurement> ms, int n_cameras,
                              const TranslationAveragingConfig& cfg, Executor* ex = nullptr) {
  using namespace trans_avg_detail;
  if (cfg.n_projections < 1) throw Error(ErrorCode::kInvalidArgument, "n_projections must be >= 1");
  const int n_nodes = n_cameras + count_landmarks(ms);
  auto task = [&](std::size_t k) {
    std::mt19937_64 rng(task_seed(cfg.seed, 0x6d666173ULL, k));
    const Vec3 axis = random_unit(rng);
    std::vector<std::array<double, 3>> edges;
    std::vector<double> w(ms.size());
    for (std::size_t q = 0; q < ms.size(); ++q) {
      const int a = node_of(ms[q], false, n_cameras);
      const int b = node_of(ms[q], true, n_cameras);
      w[q] = ms[q].direction.vector().dot(axis);
      if (w[q] > 0) {
        edges.push_back({double(a), double(b), w[q]});
      } else if (w[q] < 0) {
        edges.push_back({double(b), double(a), -w[q]});
      }
    }
    const auto pos = greedy_order(n_nodes, edges);
    std::vector<double> broken(ms.size(), 0.0);
    for (std::size_t q = 0; q < ms.size(); ++q) {
      const int a = node_of(ms[q], false, n_cameras);
      const int b = node_of(ms[q], true, n_cameras);
      const bool violated = (w[q] > 0 && pos[b] < pos[a]) || (w[q] < 0 && pos[a] < pos[b]);
      if (violated) broken[q] = std::abs(w[q]);
    }
    return std::pair(broken, w);
  };
  std::vector<std::pair<std::vector<double>, std::vector<double>>> per;
  if (ex) {
    per = ex->map("trans_avg.mfas", static_cast<std::size_t>(cfg.n_projections), task);
  } else {
    for (int k = 0; k < cfg.n_projections; ++k) per.push_back(task(static_cast<std::size_t>(k)));
  }
  MfasResult out;
  out.inliers.assign(ms.size(), true);
  out.violation.assign(ms.size(), 0.0);
  for (std::size_t q = 0; q < ms.size(); ++q) {
    double broken = 0.0;
    for (const auto& [b, w] : per) broken += b[q];
    out.violation[q] = broken / static_cast<double>(per.size());
    out.inliers[q] = out.violation[q] <= cfg.mfas_threshold;
  }
  return out;
}

/// World-frame camera-to-camera directions from two-view measurements:
/// camera j sees the center of i along jt_i, so the direction from j to i is
/// R_j * jt_i.
inline DirectionMeasurement direction_from_relative(int i, int j, const Vec3& j_t_i, const Rotation3& w_r_j) {
  return {DirectionKind::kCameraCamera, j, i, UnitVector3::normalized(w_r_j * j_t_i)};
}

namespace trans_avg_detail {

struct Layout {
  int n_cameras = 0;
  int n_nodes = 0;
  int col(int node) const { return node == 0 ? -1 : 3 * (node - 1); }
  int n_cols() const { return 3 * (n_nodes - 1); }
};

inline double robust(double rn, const TranslationAveragingConfig& cfg) {
  if (!cfg.use_huber || rn <= cfg.huber_delta) return 0.5 * rn * rn;
  return cfg.huber_delta * (rn - 0.5 * cfg.huber_delta);
}

inline Vec3 residual(const DirectionMeasurement& m, const std::vector<Vec3>& x, int n_cameras, bool* ok) {
  const Vec3 v = x[node_of(m, true, n_cameras)] - x[node_of(m, false, n_cameras)];
  const double n = v.norm();
  if (!(n > 1e-300)) {
    if (ok) *ok = false;
    return m.direction.vector();
  }
  if (ok) *ok = true;
  return m.direction.vector() - v / n;
}

inline double cost(std::span<const DirectionMeasurement> ms, const std::vector<Vec3>& x, int n_cameras,
                   const TranslationAveragingConfig& cfg) {
  double c = 0.0;
  for (const auto& m : ms) c += robust(residual(m, x, n_cameras, nullptr).norm(), cfg);
  return c;
}

/// Smallest eigenvector of A^T A (A: weighted cross-product constraints) with
/// node 0 pinned, via shifted inverse iteration.
inline std::vector<Vec3> linear_init(std::span<const DirectionMeasurement> ms, const Layout& l,
                                     const std::vector<double>& weights) {
  const int nc = l.n_cols();
  std::vector<Eigen::Triplet<double>> t;
  for (std::size_t q = 0; q < ms.size(); ++q) {
    const Mat3 c = hat(ms[q].direction.vector());
    const Mat3 ctc = weights[q] * c.transpose() * c;
    const int a = l.col(node_of(ms[q], false, l.n_cameras));
    const int b = l.col(node_of(ms[q], true, l.n_cameras));
    for (int r = 0; r < 3; ++r) {
      for (int s = 0; s < 3; ++s) {
        if (b >= 0) t.emplace_back(b + r, b + s, ctc(r, s));
        if (a >= 0) t.emplace_back(a + r, a + s, ctc(r, s));
        if (a >= 0 && b >= 0) {
          t.emplace_back(a + r, b + s, -ctc(r, s));
          t.emplace_back(b + r, a + s, -ctc(r, s));
        }
      }
    }
  }
  Eigen::SparseMatrix<double> h(nc, nc);
  h.setFromTriplets(t.begin(), t.end());
  double diag_max = 0.0;
  for (int k = 0; k < nc; ++k) diag_max = std::max(diag_max, h.coeff(k, k));
  Eigen::SparseMatrix<double> eye(nc, nc);
  eye.setIdentity();
  const Eigen::SparseMatrix<double> shifted = h + (1e-9 * std::max(diag_max, 1e-12)) * eye;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(shifted);
  Eigen::VectorXd v = Eigen::VectorXd::Ones(nc).normalized();
  if (ldlt.info() == Eigen::Success) {
    for (int it = 0; it < 30; ++it) {
      Eigen::VectorXd nv = ldlt.solve(v);
      const double n = nv.norm();
      if (!(n > 0) || !nv.allFinite()) break;
      v = nv / n;
    }
  }
  std::vector<Vec3> x(l.n_nodes, Vec3::Zero());
  for (int node = 1; node < l.n_nodes; ++node) x[node] = v.segment<3>(l.col(node));
  double agree = 0.0;
  for (const auto& m : ms) {
    agree += m.direction.vector().dot(x[node_of(m, true, l.n_cameras)] - x[node_of(m, false, l.n_cameras)]) > 0
                 ? 1.0
                 : -1.0;
  }
  if (agree < 0) {
    for (auto& p : x) p = -p;
  }
  return x;
}

struct Normal {
  Eigen::SparseMatrix<double> h;
  Eigen::VectorXd g;
};

inline Normal normal_equations(std::span<const DirectionMeasurement> ms, const std::vector<Vec3>& x,
                               const Layout& l, const TranslationAveragingConfig& cfg, bool robust_weights) {
  std::vector<Eigen::Triplet<double>> t;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(l.n_cols());
  for (const auto& m : ms) {
    const int na = node_of(m, false, l.n_cameras);
    const int nb = node_of(m, true, l.n_cameras);
    const Vec3 v = x[nb] - x[na];
    const double n = v.norm();
    if (!(n > 1e-300)) continue;
    const Vec3 u = v / n;
    const Vec3 r = m.direction.vector() - u;
    const double rn = r.norm();
    double w = 1.0;
    if (robust_weights && cfg.use_huber && rn > cfg.huber_delta) w = cfg.huber_delta / rn;
    const Mat3 jb = -(Mat3::Identity() - u * u.transpose()) / n;  // dr/dx_b
    const int a = l.col(na);
    const int b = l.col(nb);
    const Mat3 jtj = w * jb.transpose() * jb;
    const Vec3 jtr = w * jb.transpose() * r;
    for (int p = 0; p < 3; ++p) {
      for (int q = 0; q < 3; ++q) {
        if (b >= 0) t.emplace_back(b + p, b + q, jtj(p, q));
        if (a >= 0) t.emplace_back(a + p, a + q, jtj(p, q));
        if (a >= 0 && b >= 0) {
          t.emplace_back(a + p, b + q, -jtj(p, q));
          t.emplace_back(b + p, a + q, -jtj(p, q));
        }
      }
    }
    if (b >= 0) g.segment<3>(b) += jtr;
    if (a >= 0) g.segment<3>(a) -= jtr;
  }
  Normal out{Eigen::SparseMatrix<double>(l.n_cols(), l.n_cols()), g};
  out.h.setFromTriplets(t.begin(), t.end());
  return out;
}

inline void check_connected(std::span<const DirectionMeasurement> ms, const Layout& l) {
  std::vector<int> parent(l.n_nodes);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  for (const auto& m : ms) parent[find(node_of(m, false, l.n_cameras))] = find(node_of(m, true, l.n_cameras));
  for (int v = 0; v < l.n_nodes; ++v) {
    if (find(v) != find(0)) throw Error(ErrorCode::kDisconnected, "translation graph is disconnected");
  }
}

}  // namespace trans_avg_detail

/// Camera (and landmark) positions from world-frame directions. Camera 0 is
/// pinned at the origin and the result is scaled to unit mean camera-camera
/// baseline over the measurements (over all camera pairs when there are none).
/// Throws Underconstrained when the Jacobian has a null space beyond global
/// scale, Disconnected when some node is unreachable.
inline TranslationSolution solve_translations(std::span<const DirectionMeasurement> ms, int n_cameras,
                                              const TranslationAveragingConfig& cfg) {
  using namespace trans_avg_detail;
  if (n_cameras < 2) throw Error(ErrorCode::kInvalidArgument, "translation averaging needs >= 2 cameras");
  if (ms.empty()) throw Error(ErrorCode::kDisconnected, "no direction measurements");
  Layout l{n_cameras, n_cameras + count_landmarks(ms)};
  for (const auto& m : ms) {
    if (m.a < 0 || m.a >= n_cameras || m.b < 0 ||
        (m.kind == DirectionKind::kCameraCamera && (m.b >= n_cameras || m.b == m.a))) {
      throw Error(ErrorCode::kInvalidArgument, "direction measurement has invalid endpoints");
    }
  }
  check_connected(ms, l);

  // Random re-weighted linear solves; keep the best robust cost.
  std::mt19937_64 rng(task_seed(cfg.seed, 0x696e6974ULL));
  std::uniform_real_distribution<double> uw(0.5, 1.5);
  std::vector<Vec3> x;
  double best = std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < std::max(1, cfg.n_init_trials); ++trial) {
    std::vector<double> w(ms.size(), 1.0);
    if (trial > 0) {
      for (auto& v : w) v = uw(rng);
    }
    auto cand = linear_init(ms, l, w);
    const double c = cost(ms, cand, n_cameras, cfg);
    if (c < best) {
      best = c;
      x = std::move(cand);
    }
  }

  // Levenberg-Marquardt with IRLS Huber weights.
  double f = best;
  double lambda = 1e-4;
  int it = 0;
  for (; it < cfg.max_iterations; ++it) {
    const Normal ne = normal_equations(ms, x, l, cfg, true);
    if (ne.g.cwiseAbs().maxCoeff() < 1e-14) break;
    bool accepted = false;
    while (!accepted && lambda < 1e16) {
      Eigen::SparseMatrix<double> h = ne.h;
      for (int k = 0; k < l.n_cols(); ++k) h.coeffRef(k, k) += lambda * std::max(ne.h.coeff(k, k), 1e-12);
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(h);
      if (ldlt.info() != Eigen::Success) {
        lambda *= 10;
        continue;
      }
      const Eigen::VectorXd dx = ldlt.solve(-ne.g);
      std::vector<Vec3> cand = x;
      for (int node = 1; node < l.n_nodes; ++node) cand[node] += dx.segment<3>(l.col(node));
      const double fc = cost(ms, cand, n_cameras, cfg);
      if (fc < f) {
        const double rel = (f - fc) / std::max(f, 1e-300);
        x = std::move(cand);
        f = fc;
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
        if (rel < 1e-12) it = cfg.max_iterations;
      } else {
        lambda *= 10;
      }
    }
    if (!accepted) break;
  }

  // Parallel-rigidity check on the measurement graph alone: directions taken
  // from random generic positions must fix everything except global scale.
  {
    std::mt19937_64 grng(0x72696769ULL);
    std::normal_distribution<double> gn(0.0, 1.0);
    std::vector<Vec3> y(l.n_nodes);
    for (auto& p : y) p = Vec3(gn(grng), gn(grng), gn(grng));
    std::vector<DirectionMeasurement> generic(ms.begin(), ms.end());
    for (auto& m : generic) {
      m.direction = UnitVector3::normalized(y[node_of(m, true, l.n_cameras)] - y[node_of(m, false, l.n_cameras)]);
    }
    const Normal ne = normal_equations(generic, y, l, cfg, false);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig{Eigen::MatrixXd(ne.h)};
    const auto& ev = eig.eigenvalues();
    const double top = std::max(ev.maxCoeff(), 1e-300);
    int null_dim = 0;
    for (int k = 0; k < ev.size(); ++k) null_dim += ev(k) < 1e-9 * top ? 1 : 0;
    if (null_dim > 1) throw Error(ErrorCode::kUnderconstrained, "camera positions are not parallel rigid");
  }

  double baseline = 0.0;
  int n_base = 0;
  for (const auto& m : ms) {
    if (m.kind != DirectionKind::kCameraCamera) continue;
    baseline += (x[m.b] - x[m.a]).norm();
    ++n_base;
  }
  if (n_base == 0) {
    for (int a = 0; a < n_cameras; ++a) {
      for (int b = a + 1; b < n_cameras; ++b) {
        baseline += (x[b] - x[a]).norm();
        ++n_base;
      }
    }
  }
  const double s = n_base > 0 && baseline > 0 ? n_base / baseline : 1.0;
  TranslationSolution out;
  for (int c = 0; c < n_cameras; ++c) out.camera_positions.push_back(s * x[c]);
  for (int k = n_cameras; k < l.n_nodes; ++k) out.landmark_positions.push_back(s * x[k]);
  out.cost = f;
  out.iterations = it;
  return out;
}

}  // namespace gsfm
