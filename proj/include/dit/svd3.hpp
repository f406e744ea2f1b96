#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include <Eigen/SVD>

#include "dit/geometry.hpp"

namespace dit {

struct Svd3 {
  Mat3 u;
  Vec3 sigma;  // descending, non-negative
  Mat3 v;
};

/// Primary route: Eigen's two-sided Jacobi SVD.
inline Svd3 svd3_eigen(const Mat3& a) {
  Eigen::JacobiSVD<Mat3> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return {svd.matrixU(), svd.singularValues(), svd.matrixV()};
}

/// Fallback route: one-sided (Hestenes) Jacobi sweeps on the columns of A.
inline Svd3 svd3_jacobi(const Mat3& a, int max_sweeps = 60) {
  Mat3 w = a;
  Mat3 v = Mat3::Identity();
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (int p = 0; p < 2; ++p)
      for (int q = p + 1; q < 3; ++q) {
        const double alpha = w.col(p).squaredNorm();
        const double beta = w.col(q).squaredNorm();
        const double gamma = w.col(p).dot(w.col(q));
        if (std::abs(gamma) <= 1e-15 * std::sqrt(alpha * beta) || gamma == 0.0) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t), s = c * t;
        for (Mat3* m : {&w, &v}) {
          const Vec3 cp = m->col(p), cq = m->col(q);
          m->col(p) = c * cp - s * cq;
          m->col(q) = s * cp + c * cq;
        }
      }
    if (!rotated) break;
  }
  std::array<int, 3> order{0, 1, 2};
  Vec3 norms(w.col(0).norm(), w.col(1).norm(), w.col(2).norm());
  std::sort(order.begin(), order.end(), [&](int i, int j) { return norms[i] > norms[j]; });
  Svd3 out;
  for (int k = 0; k < 3; ++k) {
    out.sigma[k] = norms[order[k]];
    out.v.col(k) = v.col(order[k]);
  }
  // Left vectors; complete an orthonormal basis where singular values vanish.
  const double tiny = 1e-300 + 1e-14 * out.sigma[0];
  out.u.col(0) = out.sigma[0] > tiny ? Vec3(w.col(order[0]) / out.sigma[0]) : Vec3::UnitX();
  if (out.sigma[1] > tiny) {
    out.u.col(1) = w.col(order[1]) / out.sigma[1];
  } else {
    Vec3 pick = std::abs(out.u(0, 0)) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    out.u.col(1) = (pick - pick.dot(out.u.col(0)) * out.u.col(0)).normalized();
  }
  if (out.sigma[2] > tiny) {
    out.u.col(2) = w.col(order[2]) / out.sigma[2];
  } else {
    out.u.col(2) = out.u.col(0).cross(out.u.col(1));
  }
  return out;
}

}  // namespace dit
