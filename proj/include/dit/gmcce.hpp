#pragma once

// Geometric-matching correspondence confidence. Every source point forms
// triangles with pairs of its k_s nearest neighbours; the correspondence map
// carries each triangle into the target cloud, and the relative side-length
// discrepancy of the k_m best-agreeing triangles scores the point.

#include <algorithm>
#include <array>
#include <span>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dit/geometry.hpp"
#include "dit/knn.hpp"
#include "dit/match.hpp"
#include "dit/tensor.hpp"

namespace dit {

struct GmcceOptions {
  std::size_t k_s = 10;  // neighbours per point
  std::size_t k_m = 10;  // smallest group errors summed into E_r
  double lambda = 30.0;  // sharpness
  double tau = 0.5;      // confidences below tau are filtered
};

/// Triangles (center, a, b) for every source point and their images under
/// the correspondence map. `per_point` = k_s (k_s - 1) / 2.
struct TriangleGroups {
  std::size_t points = 0;
  std::size_t per_point = 0;
  std::vector<std::array<std::size_t, 3>> src;  // indices into X
  std::vector<std::array<std::size_t, 3>> tgt;  // indices into Y
};

struct ConfidenceVector {
  std::vector<double> confidence;  // in [0, 1]
  std::vector<double> error;       // E_r
  std::vector<bool> filtered;      // confidence < tau

  std::size_t size() const { return confidence.size(); }
};

inline TriangleGroups build_triangle_groups(const NeighborIndex& nbrs, std::span<const std::size_t> target_index) {
  if (target_index.size() != nbrs.rows) throw std::invalid_argument("triangle groups: one correspondence per point required");
  TriangleGroups g;
  g.points = nbrs.rows;
  g.per_point = nbrs.k * (nbrs.k - 1) / 2;
  g.src.reserve(g.points * g.per_point);
  g.tgt.reserve(g.points * g.per_point);
  for (std::size_t i = 0; i < nbrs.rows; ++i)
    for (std::size_t a = 0; a < nbrs.k; ++a)
      for (std::size_t b = a + 1; b < nbrs.k; ++b) {
        const std::array<std::size_t, 3> tri{i, nbrs(i, a), nbrs(i, b)};
        g.src.push_back(tri);
        g.tgt.push_back({target_index[tri[0]], target_index[tri[1]], target_index[tri[2]]});
      }
  return g;
}

/// Side lengths in the order (center-a, center-b, a-b).
inline Vec3 triangle_side_lengths(const Vec3& center, const Vec3& a, const Vec3& b) {
  return {(center - a).norm(), (center - b).norm(), (a - b).norm()};
}

inline Vec3 triangle_side_lengths(const PointCloud& cloud, const std::array<std::size_t, 3>& tri) {
  return triangle_side_lengths(cloud.point(tri[0]), cloud.point(tri[1]), cloud.point(tri[2]));
}

/// sqrt(sum (ls - lt)^2 / sum (ls + lt)^2); 0 when both triangles collapse to a point.
inline double group_error(const Vec3& ls, const Vec3& lt) {
  const double den = (ls + lt).squaredNorm();
  if (den == 0.0) return 0.0;
  return std::sqrt((ls - lt).squaredNorm() / den);
}

/// 2 sigmoid(-lambda E_r), in (0, 1], equal to 1 exactly when E_r = 0.
inline double confidence_from_error(double e_r, double lambda) { return 2.0 * ad::sigmoid_value(-lambda * e_r); }

enum class MinkRoute { kPartialSelect, kFullSort };

/// Sum of the k smallest values, accumulated in ascending order so both
/// routes produce identical bits.
inline double mink_sum(std::vector<double> values, std::size_t k, MinkRoute route = MinkRoute::kPartialSelect) {
  if (k > values.size()) throw std::invalid_argument("mink_sum: k exceeds the number of values");
  if (route == MinkRoute::kPartialSelect) {
    if (k < values.size()) std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
    std::sort(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k));
  } else {
    std::sort(values.begin(), values.end());
  }
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) s += values[i];
  return s;
}

inline ConfidenceVector evaluate_confidence(const PointCloud& x, const PointCloud& y,
                                            std::span<const std::size_t> target_index, const GmcceOptions& opt = {},
                                            MinkRoute route = MinkRoute::kPartialSelect) {
  if (opt.k_s < 2) throw std::invalid_argument("gmcce: k_s must be >= 2");
  if (opt.k_s >= x.size())
    throw std::invalid_argument("gmcce: k_s = " + std::to_string(opt.k_s) + " must be < N = " + std::to_string(x.size()));
  const std::size_t per_point = opt.k_s * (opt.k_s - 1) / 2;
  if (opt.k_m < 1 || opt.k_m > per_point)
    throw std::invalid_argument("gmcce: k_m must be in [1, " + std::to_string(per_point) + "]");
  for (std::size_t j : target_index)
    if (j >= y.size()) throw std::out_of_range("gmcce: correspondence index out of range");

  const TriangleGroups groups = build_triangle_groups(knn_indices(x, opt.k_s), target_index);
  ConfidenceVector out;
  out.confidence.resize(x.size());
  out.error.resize(x.size());
  out.filtered.resize(x.size());
  std::vector<double> errs(per_point);
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t g = 0; g < per_point; ++g) {
      const std::size_t idx = i * per_point + g;
      errs[g] = group_error(triangle_side_lengths(x, groups.src[idx]), triangle_side_lengths(y, groups.tgt[idx]));
    }
    out.error[i] = mink_sum(errs, opt.k_m, route);
    out.confidence[i] = confidence_from_error(out.error[i], opt.lambda);
    out.filtered[i] = out.confidence[i] < opt.tau;
  }
  return out;
}

/// Confidence-weighted copy of `corr`: weight C, zero where filtered.
inline CorrespondenceSet apply_confidence(const CorrespondenceSet& corr, const ConfidenceVector& conf) {
  if (conf.size() != corr.size()) throw std::invalid_argument("apply_confidence: size mismatch");
  CorrespondenceSet out = corr;
  for (std::size_t i = 0; i < corr.size(); ++i) out.weight[i] = conf.filtered[i] ? 0.0 : conf.confidence[i];
  return out;
}

}  // namespace dit
