#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "dit/geometry.hpp"

namespace dit {

/// Per-pair registration error: absolute per-axis Euler differences in
/// degrees and the signed translation residual t_pred - t_gt.
struct PairError {
  Vec3 rotation_deg = Vec3::Zero();
  Vec3 translation = Vec3::Zero();

  double max_rotation_deg() const { return rotation_deg.maxCoeff(); }
  double translation_norm() const { return translation.norm(); }
};

struct MetricsReport {
  double r_rmse = 0.0;
  double r_mae = 0.0;
  double t_rmse = 0.0;
  double t_mae = 0.0;
  double success_ratio = 0.0;
};

/// Wraps an angle difference in degrees to (-180, 180].
inline double wrap_degrees(double d) {
  double w = std::fmod(d, 360.0);
  if (w <= -180.0) w += 360.0;
  if (w > 180.0) w -= 360.0;
  return w;
}

/// Anisotropic rotation error: |euler(pred) - euler(gt)| per axis, intrinsic XYZ.
inline Vec3 rotation_error_deg(const RigidTransform& pred, const RigidTransform& gt) {
  const Vec3 a = euler_xyz_from_rotation(pred.rotation) * kRadToDeg;
  const Vec3 b = euler_xyz_from_rotation(gt.rotation) * kRadToDeg;
  Vec3 e;
  for (int k = 0; k < 3; ++k) e[k] = std::abs(wrap_degrees(a[k] - b[k]));
  return e;
}

inline PairError pair_error(const RigidTransform& pred, const RigidTransform& gt) {
  return {rotation_error_deg(pred, gt), pred.translation - gt.translation};
}

inline bool is_success(const PairError& e, double r_thres, double t_thres) {
  return e.max_rotation_deg() < r_thres && e.translation_norm() < t_thres;
}

/// RMSE/MAE over every per-axis component of every pair; success ratio at
/// (r_thres degrees, t_thres).
inline MetricsReport aggregate_metrics(std::span<const PairError> errors, double r_thres, double t_thres) {
  if (errors.empty()) throw std::invalid_argument("aggregate_metrics: empty error list");
  double r_sq = 0.0, r_abs = 0.0, t_sq = 0.0, t_abs = 0.0;
  std::size_t hits = 0;
  for (const auto& e : errors) {
    r_sq += e.rotation_deg.squaredNorm();
    r_abs += e.rotation_deg.cwiseAbs().sum();
    t_sq += e.translation.squaredNorm();
    t_abs += e.translation.cwiseAbs().sum();
    if (is_success(e, r_thres, t_thres)) ++hits;
  }
  const double n = 3.0 * static_cast<double>(errors.size());
  MetricsReport m;
  m.r_rmse = std::sqrt(r_sq / n);
  m.r_mae = r_abs / n;
  m.t_rmse = std::sqrt(t_sq / n);
  m.t_mae = t_abs / n;
  m.success_ratio = static_cast<double>(hits) / static_cast<double>(errors.size());
  return m;
}

struct CurvePoint {
  double r_thres = 0.0;
  double t_thres = 0.0;
  double ratio = 0.0;
};

/// Log-spaced joint threshold sweep; rotation and translation thresholds
/// advance together from (r_lo, t_lo) to (r_hi, t_hi).
inline std::vector<CurvePoint> success_curve(std::span<const PairError> errors, std::size_t steps = 64,
                                             double r_lo = 1e-3, double r_hi = 45.0, double t_lo = 1e-5,
                                             double t_hi = 0.5) {
  if (errors.empty()) throw std::invalid_argument("success_curve: empty error list");
  if (steps < 2) throw std::invalid_argument("success_curve: need at least two steps");
  std::vector<CurvePoint> curve;
  curve.reserve(steps);
  const double lr0 = std::log10(r_lo), lr1 = std::log10(r_hi);
  const double lt0 = std::log10(t_lo), lt1 = std::log10(t_hi);
  for (std::size_t s = 0; s < steps; ++s) {
    const double f = static_cast<double>(s) / static_cast<double>(steps - 1);
    CurvePoint p;
    p.r_thres = std::pow(10.0, lr0 + f * (lr1 - lr0));
    p.t_thres = std::pow(10.0, lt0 + f * (lt1 - lt0));
    std::size_t hits = 0;
    for (const auto& e : errors)
      if (is_success(e, p.r_thres, p.t_thres)) ++hits;
    p.ratio = static_cast<double>(hits) / static_cast<double>(errors.size());
    curve.push_back(p);
  }
  return curve;
}

}  // namespace dit
