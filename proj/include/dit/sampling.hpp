#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dit/geometry.hpp"

namespace dit {

enum class Shape { kSphere, kCube, kCylinder, kTorus, kPlaneCross };

inline constexpr std::string_view kShapeNames[] = {"sphere", "cube", "cylinder", "torus", "plane-cross"};

inline Shape parse_shape(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kShapeNames); ++i)
    if (kShapeNames[i] == name) return static_cast<Shape>(i);
  throw std::invalid_argument("unknown shape: " + std::string(name));
}

inline std::string_view shape_name(Shape s) { return kShapeNames[static_cast<std::size_t>(s)]; }

enum class PairMode { kClean, kPartialLow, kPartialHigh };

inline PairMode parse_mode(std::string_view name) {
  if (name == "clean") return PairMode::kClean;
  if (name == "partial_low") return PairMode::kPartialLow;
  if (name == "partial_high") return PairMode::kPartialHigh;
  throw std::invalid_argument("unknown pair mode: " + std::string(name));
}

inline std::string_view mode_name(PairMode m) {
  switch (m) {
    case PairMode::kClean: return "clean";
    case PairMode::kPartialLow: return "partial_low";
    case PairMode::kPartialHigh: return "partial_high";
  }
  return "?";
}

struct PairSample {
  PointCloud src;
  PointCloud tgt;
  RigidTransform ground_truth;
  /// Index into tgt for each src point; empty where the partner was removed.
  std::vector<std::optional<std::size_t>> gt_correspondence;
  /// Noise-free copies; equal to src/tgt in clean mode.
  PointCloud src_clean;
  PointCloud tgt_clean;
};

namespace detail {

inline Vec3 random_unit(Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (;;) {
    Vec3 v(g(rng), g(rng), g(rng));
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

inline void rescale_unit(Points& p) {
  double m = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) m = std::max(m, p.row(i).norm());
  if (m > 0.0) p /= m;
}

}  // namespace detail

/// n points on the surface of a procedural shape centred at the origin,
/// rescaled so the largest norm is exactly 1.
inline PointCloud sample_shape(Shape shape, std::size_t n, Rng& rng) {
  if (n < 3) throw std::invalid_argument("sample_shape: need n >= 3");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  Points p(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Vec3 q;
    switch (shape) {
      case Shape::kSphere:
        q = detail::random_unit(rng);
        break;
      case Shape::kCube: {
        const int face = std::min(5, static_cast<int>(u(rng) * 6.0));
        const int axis = face / 2;
        const double a = 2.0 * u(rng) - 1.0, b = 2.0 * u(rng) - 1.0;
        q[axis] = (face % 2 == 0) ? 1.0 : -1.0;
        q[(axis + 1) % 3] = a;
        q[(axis + 2) % 3] = b;
        break;
      }
      case Shape::kCylinder: {
        // radius 0.5, height 2: lateral area 2*pi, each cap pi/4
        constexpr double r = 0.5, h = 1.0;
        const double lateral = kTwoPi * r * 2.0 * h, cap = std::numbers::pi * r * r;
        const double pick = u(rng) * (lateral + 2.0 * cap);
        const double th = kTwoPi * u(rng);
        if (pick < lateral) {
          q = {r * std::cos(th), r * std::sin(th), h * (2.0 * u(rng) - 1.0)};
        } else {
          const double rad = r * std::sqrt(u(rng));
          q = {rad * std::cos(th), rad * std::sin(th), pick < lateral + cap ? h : -h};
        }
        break;
      }
      case Shape::kTorus: {
        constexpr double big = 1.0, small = 0.4;
        for (;;) {
          const double th = kTwoPi * u(rng), ph = kTwoPi * u(rng);
          // area element is proportional to (big + small cos th)
          if (u(rng) * (big + small) <= big + small * std::cos(th)) {
            const double ring = big + small * std::cos(th);
            q = {ring * std::cos(ph), ring * std::sin(ph), small * std::sin(th)};
            break;
          }
        }
        break;
      }
      case Shape::kPlaneCross: {
        // three mutually orthogonal unit squares through the origin
        const int axis = std::min(2, static_cast<int>(u(rng) * 3.0));
        q[axis] = 0.0;
        q[(axis + 1) % 3] = 2.0 * u(rng) - 1.0;
        q[(axis + 2) % 3] = 2.0 * u(rng) - 1.0;
        break;
      }
    }
    p.row(i) = q.transpose();
  }
  detail::rescale_unit(p);
  return PointCloud(std::move(p));
}

inline PointCloud sample_shape(std::string_view name, std::size_t n, Rng& rng) {
  return sample_shape(parse_shape(name), n, rng);
}

/// Scales each axis by an independent factor in [min_scale, 1], then
/// rescales to the unit sphere. Breaks the continuous symmetries of the
/// procedural shapes.
inline PointCloud random_anisotropic_scale(const PointCloud& cloud, double min_scale, Rng& rng) {
  if (!(min_scale > 0.0 && min_scale <= 1.0))
    throw std::invalid_argument("random_anisotropic_scale: min_scale must be in (0, 1]");
  std::uniform_real_distribution<double> u(min_scale, 1.0);
  Vec3 s(u(rng), u(rng), u(rng));
  if (min_scale == 1.0) s.setOnes();
  Points p = cloud.points * s.asDiagonal();
  detail::rescale_unit(p);
  return PointCloud(std::move(p));
}

/// Points removed from each side in the partial modes: 200 of every 1024, rounded up.
inline std::size_t partial_remove_count(std::size_t n) { return (n * 200 + 1023) / 1024; }

namespace detail {

/// Indices kept after dropping the `drop` points with the largest
/// projection onto `dir`; original order preserved.
inline std::vector<std::size_t> keep_after_cut(const Points& p, const Vec3& dir, std::size_t drop) {
  std::vector<std::size_t> order(static_cast<std::size_t>(p.rows()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> proj(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) proj[i] = p.row(static_cast<Eigen::Index>(i)).dot(dir.transpose());
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return proj[a] > proj[b]; });
  std::vector<std::size_t> keep(order.begin() + static_cast<std::ptrdiff_t>(drop), order.end());
  std::sort(keep.begin(), keep.end());
  return keep;
}

inline Points select_rows(const Points& p, const std::vector<std::size_t>& rows) {
  Points out(static_cast<Eigen::Index>(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = p.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

inline void add_clipped_noise(Points& p, double variance, double clip, Rng& rng) {
  std::normal_distribution<double> g(0.0, std::sqrt(variance));
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (int k = 0; k < 3; ++k) p(i, k) += std::clamp(g(rng), -clip, clip);
}

}  // namespace detail

struct PairOptions {
  double rot_max_deg = 45.0;
  double trans_max = 0.5;
};

/// Builds a source/target pair from `cloud` under a random ground-truth motion.
inline PairSample make_pair(const PointCloud& cloud, PairMode mode, Rng& rng, const PairOptions& opt = {}) {
  const std::size_t n = cloud.size();
  if (n < 3) throw std::invalid_argument("make_pair: cloud too small");
  PairSample s;
  s.ground_truth = random_transform(opt.rot_max_deg, opt.trans_max, rng);
  const PointCloud moved = apply_transform(cloud, s.ground_truth);
  if (mode == PairMode::kClean) {
    s.src = cloud;
    s.tgt = moved;
    s.gt_correspondence.resize(n);
    for (std::size_t i = 0; i < n; ++i) s.gt_correspondence[i] = i;
    s.src_clean = s.src;
    s.tgt_clean = s.tgt;
    return s;
  }
  const std::size_t drop = partial_remove_count(n);
  if (n < 3 * drop || n - drop < 3) throw std::invalid_argument("make_pair: cloud too small for partial mode");
  const Vec3 dir_src = detail::random_unit(rng);
  const Vec3 dir_tgt = detail::random_unit(rng);
  const auto keep_src = detail::keep_after_cut(cloud.points, dir_src, drop);
  const auto keep_tgt = detail::keep_after_cut(moved.points, dir_tgt, drop);

  std::vector<std::optional<std::size_t>> where_in_tgt(n);
  for (std::size_t j = 0; j < keep_tgt.size(); ++j) where_in_tgt[keep_tgt[j]] = j;
  s.gt_correspondence.resize(keep_src.size());
  for (std::size_t i = 0; i < keep_src.size(); ++i) s.gt_correspondence[i] = where_in_tgt[keep_src[i]];

  s.src_clean = PointCloud(detail::select_rows(cloud.points, keep_src));
  s.tgt_clean = PointCloud(detail::select_rows(moved.points, keep_tgt));
  const double variance = mode == PairMode::kPartialLow ? 0.001 : 0.01;
  const double clip = mode == PairMode::kPartialLow ? 0.001 : 0.05;
  Points src = s.src_clean.points, tgt = s.tgt_clean.points;
  detail::add_clipped_noise(src, variance, clip, rng);
  detail::add_clipped_noise(tgt, variance, clip, rng);
  s.src = PointCloud(std::move(src));
  s.tgt = PointCloud(std::move(tgt));
  return s;
}

}  // namespace dit
