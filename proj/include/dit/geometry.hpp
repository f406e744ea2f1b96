#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace dit {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
/// N x 3 row-major coordinate block; rows are points.
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Rng = std::mt19937_64;

inline constexpr double kDegToRad = std::numbers::pi / 180.0;
inline constexpr double kRadToDeg = 180.0 / std::numbers::pi;

/// Ordered list of 3D points at unit-sphere scale.
struct PointCloud {
  Points points;

  PointCloud() = default;
  explicit PointCloud(Points p) : points(std::move(p)) {}

  std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
  bool empty() const { return points.rows() == 0; }
  Vec3 point(std::size_t i) const { return points.row(static_cast<Eigen::Index>(i)).transpose(); }

  bool all_finite() const { return points.allFinite(); }

  Vec3 centroid() const {
    if (empty()) return Vec3::Zero();
    return points.colwise().mean().transpose();
  }
};

/// Rotation in SO(3) plus translation; maps x to R x + t.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  static RigidTransform from_matrix(const Mat4& m) {
    return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
  }
};

/// True when R^T R = I and det R = +1 within `tol`.
inline bool is_valid_rotation(const Mat3& r, double tol = 1e-9) {
  if (!r.allFinite()) return false;
  if ((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(r.determinant() - 1.0) <= tol;
}

inline PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& t) {
  Points out(cloud.points.rows(), 3);
  for (Eigen::Index i = 0; i < cloud.points.rows(); ++i) {
    out.row(i) = (t.rotation * cloud.points.row(i).transpose() + t.translation).transpose();
  }
  return PointCloud(std::move(out));
}

/// a after b: x -> a(b(x)).
inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

inline RigidTransform invert(const RigidTransform& t) {
  Mat3 rt = t.rotation.transpose();
  return {rt, -(rt * t.translation)};
}

inline Mat3 rotation_x(double rad) { return Eigen::AngleAxisd(rad, Vec3::UnitX()).toRotationMatrix(); }
inline Mat3 rotation_y(double rad) { return Eigen::AngleAxisd(rad, Vec3::UnitY()).toRotationMatrix(); }
inline Mat3 rotation_z(double rad) { return Eigen::AngleAxisd(rad, Vec3::UnitZ()).toRotationMatrix(); }

/// Intrinsic XYZ Euler angles (radians): R = Rx(a) Ry(b) Rz(c).
inline Mat3 rotation_from_euler_xyz(const Vec3& rad) {
  return rotation_x(rad.x()) * rotation_y(rad.y()) * rotation_z(rad.z());
}

/// Inverse of rotation_from_euler_xyz, pitch in [-pi/2, pi/2].
/// Within 1e-6 rad of gimbal lock the yaw is pinned to zero and the whole
/// residual is assigned to roll.
inline Vec3 euler_xyz_from_rotation(const Mat3& r) {
  constexpr double kGimbalEps = 1e-6;
  const double s = std::clamp(r(0, 2), -1.0, 1.0);
  const double pitch = std::asin(s);
  if (std::numbers::pi / 2 - std::abs(pitch) < kGimbalEps) {
    return {std::atan2(r(2, 1), r(1, 1)), pitch, 0.0};
  }
  return {std::atan2(-r(1, 2), r(2, 2)), pitch, std::atan2(-r(0, 1), r(0, 0))};
}

/// Euler angles uniform in [0, rot_max_deg] per axis, translation uniform in
/// [-trans_max, trans_max] per axis.
inline RigidTransform random_transform(double rot_max_deg, double trans_max, Rng& rng) {
  if (!(rot_max_deg >= 0.0)) throw std::invalid_argument("random_transform: rot_max_deg must be >= 0");
  if (!(trans_max >= 0.0)) throw std::invalid_argument("random_transform: trans_max must be >= 0");
  std::uniform_real_distribution<double> angle(0.0, rot_max_deg * kDegToRad);
  std::uniform_real_distribution<double> shift(-trans_max, trans_max);
  Vec3 euler;
  for (int k = 0; k < 3; ++k) euler[k] = angle(rng);
  Vec3 t;
  for (int k = 0; k < 3; ++k) t[k] = shift(rng);
  if (rot_max_deg == 0.0) euler.setZero();
  if (trans_max == 0.0) t.setZero();
  return {rotation_from_euler_xyz(euler), t};
}

/// Largest pairwise distance, O(N^2).
inline double diameter(const PointCloud& cloud) {
  double best = 0.0;
  for (Eigen::Index i = 0; i < cloud.points.rows(); ++i)
    for (Eigen::Index j = i + 1; j < cloud.points.rows(); ++j)
      best = std::max(best, (cloud.points.row(i) - cloud.points.row(j)).norm());
  return best;
}

}  // namespace dit
