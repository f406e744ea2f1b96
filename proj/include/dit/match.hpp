#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dit/geometry.hpp"
#include "dit/knn.hpp"
#include "dit/svd3.hpp"
#include "dit/tensor.hpp"

namespace dit {

/// Putative correspondences: source i pairs with target target_index[i],
/// weighted by weight[i].
struct CorrespondenceSet {
  std::vector<std::size_t> target_index;
  std::vector<double> weight;

  std::size_t size() const { return target_index.size(); }
};

class DegenerateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Phi_X Phi_Y^T / temperature.
inline ad::Tensor similarity_logits(const ad::Tensor& phi_x, const ad::Tensor& phi_y, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("similarity: temperature must be > 0");
  return ad::scale(ad::matmul_nt(phi_x, phi_y), 1.0 / temperature);
}

/// Row-stochastic S = softmax(Phi_X Phi_Y^T / temperature) over target columns.
inline ad::Tensor similarity(const ad::Tensor& phi_x, const ad::Tensor& phi_y, double temperature) {
  return ad::softmax(similarity_logits(phi_x, phi_y, temperature), 1);
}

/// Row-wise argmax (ties to the lowest column) with the maximal value as weight.
inline CorrespondenceSet correspondences(const ad::Tensor& s) {
  if (s.rank() != 2 || s.dim(1) == 0) throw ad::ShapeError("correspondences: expected a non-empty N x M matrix");
  const std::size_t n = s.dim(0), m = s.dim(1);
  CorrespondenceSet c{std::vector<std::size_t>(n), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < m; ++j)
      if (s.at(i, j) > s.at(i, best)) best = j;
    c.target_index[i] = best;
    c.weight[i] = s.at(i, best);
  }
  return c;
}

enum class SvdRoute { kEigen, kJacobi };

namespace detail {

inline void check_correspondences(const PointCloud& x, const PointCloud& y, const CorrespondenceSet& corr) {
  if (corr.target_index.size() != x.size() || corr.weight.size() != x.size())
    throw std::invalid_argument("weighted_procrustes: correspondence set must cover every source point");
  std::size_t positive = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (corr.target_index[i] >= y.size()) throw std::out_of_range("weighted_procrustes: target index out of range");
    const double w = corr.weight[i];
    if (!std::isfinite(w) || w < 0.0) throw std::invalid_argument("weighted_procrustes: weights must be finite and >= 0");
    if (w > 0.0) ++positive;
  }
  if (positive < 3) throw DegenerateError("weighted_procrustes: fewer than 3 positively weighted correspondences");
}

}  // namespace detail

/// Rotation closest to H^T in the sense of the Procrustes problem:
/// H = U S V^T, R = V diag(1, 1, det(V U^T)) U^T.
inline Mat3 procrustes_rotation(const Mat3& h, SvdRoute route = SvdRoute::kEigen) {
  const Svd3 svd = route == SvdRoute::kEigen ? svd3_eigen(h) : svd3_jacobi(h);
  const double d = (svd.v * svd.u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return svd.v * Vec3(1.0, 1.0, d).asDiagonal() * svd.u.transpose();
}

/// Minimises sum_i w_i |R x_i + t - y_M(i)|^2 in closed form. Throws
/// DegenerateError when the weighted cross-covariance has rank < 2.
inline RigidTransform weighted_procrustes(const PointCloud& x, const PointCloud& y, const CorrespondenceSet& corr,
                                          SvdRoute route = SvdRoute::kEigen) {
  detail::check_correspondences(x, y, corr);
  double wsum = 0.0;
  Vec3 xbar = Vec3::Zero(), ybar = Vec3::Zero();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = corr.weight[i];
    wsum += w;
    xbar += w * x.point(i);
    ybar += w * y.point(corr.target_index[i]);
  }
  xbar /= wsum;
  ybar /= wsum;
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = corr.weight[i];
    if (w == 0.0) continue;
    h += (w / wsum) * (x.point(i) - xbar) * (y.point(corr.target_index[i]) - ybar).transpose();
  }
  const Vec3 sv = svd3_eigen(h).sigma;
  if (!(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0]) throw DegenerateError("weighted_procrustes: degenerate (collinear or coincident) configuration");
  Mat3 r = procrustes_rotation(h, route);
  if (route == SvdRoute::kEigen && !is_valid_rotation(r, 1e-9)) r = procrustes_rotation(h, SvdRoute::kJacobi);
  return {r, ybar - r * xbar};
}

/// Uniform weights over the identity pairing x_i <-> y_i.
inline RigidTransform procrustes_identity_pairs(const PointCloud& x, const PointCloud& y) {
  if (x.size() != y.size()) throw std::invalid_argument("procrustes_identity_pairs: clouds differ in size");
  CorrespondenceSet c{std::vector<std::size_t>(x.size()), std::vector<double>(x.size(), 1.0)};
  for (std::size_t i = 0; i < x.size(); ++i) c.target_index[i] = i;
  return weighted_procrustes(x, y, c);
}

struct IcpResult {
  RigidTransform transform;
  std::size_t iterations = 0;
  double mean_residual = 0.0;
  bool converged = false;
};

/// Point-to-point ICP from the identity: nearest-neighbour pairing, then an
/// unweighted Procrustes solve, until the mean residual changes by less than
/// `tol` or `max_iters` is reached.
inline IcpResult icp(const PointCloud& src, const PointCloud& tgt, std::size_t max_iters = 50, double tol = 1e-10) {
  if (src.size() < 3 || tgt.size() < 3) throw std::invalid_argument("icp: clouds need at least 3 points");
  IcpResult res;
  double prev = std::numeric_limits<double>::infinity();
  CorrespondenceSet corr{std::vector<std::size_t>(src.size()), std::vector<double>(src.size(), 1.0)};
  for (std::size_t it = 1; it <= max_iters; ++it) {
    const PointCloud moved = apply_transform(src, res.transform);
    corr.target_index = nearest_in(moved, tgt);
    res.transform = weighted_procrustes(src, tgt, corr);
    double err = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i)
      err += (res.transform.apply(src.point(i)) - tgt.point(corr.target_index[i])).norm();
    err /= static_cast<double>(src.size());
    res.iterations = it;
    res.mean_residual = err;
    if (std::abs(prev - err) < tol) {
      res.converged = true;
      break;
    }
    prev = err;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Differentiable estimate for training: the weights are graph tensors, the
// coordinates are constants.

struct DiffTransform {
  ad::Tensor rotation;     // 3 x 3
  ad::Tensor translation;  // 3 x 1

  RigidTransform value() const {
    RigidTransform t;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) t.rotation(r, c) = rotation.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
      t.translation[r] = translation.values()[static_cast<std::size_t>(r)];
    }
    return t;
  }
};

inline DiffTransform weighted_procrustes_diff(const PointCloud& x, const PointCloud& y,
                                              std::span<const std::size_t> target_index, const ad::Tensor& weights) {
  const std::size_t n = x.size();
  if (target_index.size() != n || weights.shape() != ad::Shape{n, 1})
    throw ad::ShapeError("weighted_procrustes_diff: need N indices and an N x 1 weight column");
  std::vector<double> xs(n * 3), ys(n * 3);
  for (std::size_t i = 0; i < n; ++i) {
    if (target_index[i] >= y.size()) throw std::out_of_range("weighted_procrustes_diff: target index out of range");
    for (int k = 0; k < 3; ++k) {
      xs[i * 3 + static_cast<std::size_t>(k)] = x.points(static_cast<Eigen::Index>(i), k);
      ys[i * 3 + static_cast<std::size_t>(k)] = y.points(static_cast<Eigen::Index>(target_index[i]), k);
    }
  }
  const ad::Tensor xt = ad::Tensor::constant({n, 3}, std::move(xs));
  const ad::Tensor yt = ad::Tensor::constant({n, 3}, std::move(ys));
  const ad::Tensor wn = ad::div_scalar(weights, ad::sum(weights));
  const ad::Tensor wn_row = ad::transpose(wn);
  const ad::Tensor xbar = ad::matmul(wn_row, xt);  // 1 x 3
  const ad::Tensor ybar = ad::matmul(wn_row, yt);
  const ad::Tensor xc = ad::sub(xt, ad::tile_rows(xbar, n));
  const ad::Tensor yc = ad::sub(yt, ad::tile_rows(ybar, n));
  const ad::Tensor h = ad::matmul(ad::transpose(ad::mul(xc, ad::tile_cols(wn, 3))), yc);
  const ad::Tensor r = ad::polar_rotation(ad::transpose(h));
  const ad::Tensor t = ad::sub(ad::transpose(ybar), ad::matmul(r, ad::transpose(xbar)));
  return {r, t};
}

}  // namespace dit
