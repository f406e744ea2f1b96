#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dit/geometry.hpp"

namespace dit {

/// k nearest neighbours of every point, self excluded, each row sorted by
/// ascending distance (ties by lower index).
struct NeighborIndex {
  std::size_t rows = 0;
  std::size_t k = 0;
  std::vector<std::size_t> indices;  // rows * k, row-major

  std::span<const std::size_t> row(std::size_t i) const { return {indices.data() + i * k, k}; }
  std::size_t operator()(std::size_t i, std::size_t r) const { return indices[i * k + r]; }
};

/// Exact brute-force search, O(N^2 log k).
inline NeighborIndex knn_indices(const PointCloud& cloud, std::size_t k) {
  const std::size_t n = cloud.size();
  if (k >= n) throw std::invalid_argument("knn_indices: k = " + std::to_string(k) + " must be < N = " + std::to_string(n));
  NeighborIndex out{n, k, std::vector<std::size_t>(n * k)};
  if (k == 0) return out;
  std::vector<double> d2(n);
  std::vector<std::size_t> cand(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto pi = cloud.points.row(static_cast<Eigen::Index>(i));
    for (std::size_t j = 0; j < n; ++j) d2[j] = (cloud.points.row(static_cast<Eigen::Index>(j)) - pi).squaredNorm();
    std::size_t c = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) cand[c++] = j;
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(),
                      [&](std::size_t a, std::size_t b) { return d2[a] < d2[b] || (d2[a] == d2[b] && a < b); });
    std::copy_n(cand.begin(), k, out.indices.begin() + static_cast<std::ptrdiff_t>(i * k));
  }
  return out;
}

/// Nearest point of `target` for every point of `query`; ties by lower index.
inline std::vector<std::size_t> nearest_in(const PointCloud& query, const PointCloud& target) {
  if (target.empty()) throw std::invalid_argument("nearest_in: empty target");
  std::vector<std::size_t> out(query.size());
  for (std::size_t i = 0; i < query.size(); ++i) {
    const auto q = query.points.row(static_cast<Eigen::Index>(i));
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < target.size(); ++j) {
      const double d = (target.points.row(static_cast<Eigen::Index>(j)) - q).squaredNorm();
      if (d < best) {
        best = d;
        out[i] = j;
      }
    }
  }
  return out;
}

}  // namespace dit
