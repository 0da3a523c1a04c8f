#pragma once

// Minimal and linear essential-matrix solvers on normalized image coordinates.
// Convention: x_j^T E x_i = 0 with E = [t]x R and x_j = R x_i + t.
//
// The five-point solver follows the Groebner-basis / action-matrix route:
// E is written as x X + y Y + z Z + W over the 4-D null space of the
// epipolar constraints, the ten cubic constraints (det E = 0 and the trace
// constraint) are reduced by Gauss-Jordan elimination, and the solutions are
// read from the eigenvectors of the 10x10 action matrix for x.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <span>
#include <vector>

#include "gsfm/core_geom.hpp"
#include "gsfm/error.hpp"

namespace gsfm {

namespace five_point_detail {

// Monomials up to degree 3 in (x, y, z), in elimination order: the ten cubic
// monomials first, then the ten that form the quotient-ring basis.
inline constexpr std::array<std::array<int, 3>, 20> kMonomials{{
    {3, 0, 0}, {2, 1, 0}, {1, 2, 0}, {0, 3, 0}, {2, 0, 1}, {1, 1, 1}, {0, 2, 1}, {1, 0, 2}, {0, 1, 2}, {0, 0, 3},
    {2, 0, 0}, {1, 1, 0}, {0, 2, 0}, {1, 0, 1}, {0, 1, 1}, {0, 0, 2},
    {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0, 0, 0},
}};

inline int monomial_index(int a, int b, int c) {
  for (int k = 0; k < 20; ++k) {
    if (kMonomials[k][0] == a && kMonomials[k][1] == b && kMonomials[k][2] == c) return k;
  }
  return -1;
}

struct Poly {
  std::array<double, 20> c{};

  Poly operator+(const Poly& o) const {
    Poly r;
    for (int k = 0; k < 20; ++k) r.c[k] = c[k] + o.c[k];
    return r;
  }
  Poly operator-(const Poly& o) const {
    Poly r;
    for (int k = 0; k < 20; ++k) r.c[k] = c[k] - o.c[k];
    return r;
  }
  Poly operator*(double s) const {
    Poly r;
    for (int k = 0; k < 20; ++k) r.c[k] = c[k] * s;
    return r;
  }
  Poly operator*(const Poly& o) const {
    Poly r;
    for (int a = 0; a < 20; ++a) {
      if (c[a] == 0.0) continue;
      for (int b = 0; b < 20; ++b) {
        if (o.c[b] == 0.0) continue;
        const int k = monomial_index(kMonomials[a][0] + kMonomials[b][0], kMonomials[a][1] + kMonomials[b][1],
                                     kMonomials[a][2] + kMonomials[b][2]);
        if (k < 0) throw Error(ErrorCode::kInvalidArgument, "polynomial degree exceeds 3");
        r.c[k] += c[a] * o.c[b];
      }
    }
    return r;
  }
};

using PolyMat = std::array<std::array<Poly, 3>, 3>;

inline PolyMat mul(const PolyMat& a, const PolyMat& b) {
  PolyMat r{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      for (int k = 0; k < 3; ++k) r[i][j] = r[i][j] + a[i][k] * b[k][j];
    }
  }
  return r;
}

inline PolyMat transpose(const PolyMat& a) {
  PolyMat r{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) r[i][j] = a[j][i];
  }
  return r;
}

/// Row of the epipolar constraint x_j^T E x_i = 0 for row-major vec(E).
inline Eigen::Matrix<double, 1, 9> epipolar_row(const Vec3& xi, const Vec3& xj) {
  Eigen::Matrix<double, 1, 9> row;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) row(3 * a + b) = xj(a) * xi(b);
  }
  return row;
}

inline Mat3 unvec(const Eigen::Matrix<double, 9, 1>& e) {
  Mat3 m;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) m(a, b) = e(3 * a + b);
  }
  return m;
}

}  // namespace five_point_detail

/// Projects onto the essential manifold: singular values (1, 1, 0).
inline Mat3 project_to_essential(const Mat3& e) {
  Eigen::JacobiSVD<Mat3> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * Eigen::Vector3d(1.0, 1.0, 0.0).asDiagonal() * svd.matrixV().transpose();
}

/// All real essential matrices consistent with five correspondences given as
/// homogeneous normalized coordinates (up to 10 solutions, Frobenius-normalized).
inline std::vector<Mat3> five_point_essential(std::span<const Vec3> xi, std::span<const Vec3> xj) {
  using namespace five_point_detail;
  if (xi.size() != 5 || xj.size() != 5) {
    throw Error(ErrorCode::kInvalidArgument, "five_point_essential takes exactly 5 correspondences");
  }
  Eigen::Matrix<double, 9, 9> a = Eigen::Matrix<double, 9, 9>::Zero();
  for (int k = 0; k < 5; ++k) a.row(k) = epipolar_row(xi[k], xj[k]);
  Eigen::JacobiSVD<Eigen::Matrix<double, 9, 9>> svd(a, Eigen::ComputeFullV);
  const Eigen::Matrix<double, 9, 9>& v = svd.matrixV();
  const Mat3 basis[4] = {unvec(v.col(5)), unvec(v.col(6)), unvec(v.col(7)), unvec(v.col(8))};

  PolyMat e{};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      e[r][c].c[16] = basis[0](r, c);  // x
      e[r][c].c[17] = basis[1](r, c);  // y
      e[r][c].c[18] = basis[2](r, c);  // z
      e[r][c].c[19] = basis[3](r, c);  // 1
    }
  }

  Eigen::Matrix<double, 10, 20> m;
  const Poly det = e[0][0] * (e[1][1] * e[2][2] - e[1][2] * e[2][1]) -
                   e[0][1] * (e[1][0] * e[2][2] - e[1][2] * e[2][0]) +
                   e[0][2] * (e[1][0] * e[2][1] - e[1][1] * e[2][0]);
  for (int k = 0; k < 20; ++k) m(0, k) = det.c[k];
  const PolyMat eet = mul(e, transpose(e));
  const Poly trace = eet[0][0] + eet[1][1] + eet[2][2];
  const PolyMat eete = mul(eet, e);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      const Poly q = eete[r][c] * 2.0 - trace * e[r][c];
      for (int k = 0; k < 20; ++k) m(1 + 3 * r + c, k) = q.c[k];
    }
  }

  const Eigen::Matrix<double, 10, 10> lhs = m.leftCols<10>();
  Eigen::FullPivLU<Eigen::Matrix<double, 10, 10>> lu(lhs);
  if (!lu.isInvertible()) return {};
  const Eigen::Matrix<double, 10, 10> g = lu.solve(Eigen::Matrix<double, 10, 10>(m.rightCols<10>()));

  // Basis b = [x^2, xy, y^2, xz, yz, z^2, x, y, z, 1]; action matrix of x.
  Eigen::Matrix<double, 10, 10> action = Eigen::Matrix<double, 10, 10>::Zero();
  const int cubic_rows[6] = {0, 1, 2, 4, 5, 7};  // x^3, x^2y, xy^2, x^2z, xyz, xz^2
  for (int r = 0; r < 6; ++r) action.row(r) = -g.row(cubic_rows[r]);
  action(6, 0) = 1.0;  // x * x  = x^2
  action(7, 1) = 1.0;  // x * y  = xy
  action(8, 3) = 1.0;  // x * z  = xz
  action(9, 6) = 1.0;  // x * 1  = x

  Eigen::EigenSolver<Eigen::Matrix<double, 10, 10>> eig(action);
  if (eig.info() != Eigen::Success) return {};
  std::vector<Mat3> out;
  for (int k = 0; k < 10; ++k) {
    const std::complex<double> lam = eig.eigenvalues()(k);
    if (std::abs(lam.imag()) > 1e-8 * std::max(1.0, std::abs(lam))) continue;
    const auto vec = eig.eigenvectors().col(k);
    if (std::abs(vec(9)) < 1e-14) continue;
    const double x = (vec(6) / vec(9)).real();
    const double y = (vec(7) / vec(9)).real();
    const double z = (vec(8) / vec(9)).real();
    Mat3 ess = x * basis[0] + y * basis[1] + z * basis[2] + basis[3];
    const double n = ess.norm();
    if (!(n > 0.0) || !std::isfinite(n)) continue;
    out.push_back(ess / n);
  }
  return out;
}

/// Linear eight-point estimate on >= 8 correspondences, projected onto the
/// essential manifold. Coordinates are isotropically normalized first.
/// Optional per-row weights (same length as xi) scale the epipolar rows.
inline Mat3 eight_point_essential(std::span<const Vec3> xi, std::span<const Vec3> xj,
                                  std::span<const double> weights = {}) {
  using five_point_detail::epipolar_row;
  const std::size_t n = xi.size();
  if (n < 8 || xj.size() != n) throw Error(ErrorCode::kTooFewMatches, "eight-point needs >= 8 correspondences");
  if (!weights.empty() && weights.size() != n) throw Error(ErrorCode::kDimensionMismatch, "one weight per row");
  auto conditioner = [](std::span<const Vec3> x) {
    Vec2 mean = Vec2::Zero();
    for (const auto& p : x) mean += p.hnormalized();
    mean /= static_cast<double>(x.size());
    double spread = 0.0;
    for (const auto& p : x) spread += (p.hnormalized() - mean).norm();
    spread /= static_cast<double>(x.size());
    const double s = spread > 1e-15 ? std::sqrt(2.0) / spread : 1.0;
    Mat3 t;
    t << s, 0, -s * mean.x(), 0, s, -s * mean.y(), 0, 0, 1;
    return t;
  };
  const Mat3 ti = conditioner(xi);
  const Mat3 tj = conditioner(xj);
  Eigen::MatrixXd a(std::max<std::size_t>(n, 9), 9);
  a.setZero();
  for (std::size_t k = 0; k < n; ++k) {
    a.row(static_cast<Eigen::Index>(k)) = epipolar_row(ti * (xi[k] / xi[k].z()), tj * (xj[k] / xj[k].z()));
    if (!weights.empty()) a.row(static_cast<Eigen::Index>(k)) *= weights[k];
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Mat3 en = five_point_detail::unvec(svd.matrixV().col(8));
  // Undo conditioning, then enforce equal singular values.
  const Mat3 e = tj.transpose() * en * ti;
  Eigen::JacobiSVD<Mat3> s2(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return s2.matrixU() * Eigen::Vector3d(1.0, 1.0, 0.0).asDiagonal() * s2.matrixV().transpose();
}

/// Squared Sampson distance in normalized units.
inline double sampson_sq(const Mat3& e, const Vec3& xi, const Vec3& xj) {
  const Vec3 exi = e * xi;
  const Vec3 etxj = e.transpose() * xj;
  const double num = xj.dot(exi);
  const double den = exi.x() * exi.x() + exi.y() * exi.y() + etxj.x() * etxj.x() + etxj.y() * etxj.y();
  if (!(den > 0.0)) return std::numeric_limits<double>::infinity();
  return num * num / den;
}

}  // namespace gsfm
