#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "dit/grad_check.hpp"
#include "dit/io.hpp"
#include "dit/match.hpp"
#include "dit/metrics.hpp"
#include "dit/sampling.hpp"

using namespace dit;
using ad::Tensor;

namespace {

Tensor random_matrix(std::size_t n, std::size_t m, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n * m);
  for (double& x : v) x = u(rng);
  return Tensor::constant({n, m}, std::move(v));
}

CorrespondenceSet identity_pairs(std::size_t n) {
  CorrespondenceSet c{std::vector<std::size_t>(n), std::vector<double>(n, 1.0)};
  std::iota(c.target_index.begin(), c.target_index.end(), 0);
  return c;
}

double transform_diff(const RigidTransform& a, const RigidTransform& b) {
  return std::max((a.rotation - b.rotation).cwiseAbs().maxCoeff(), (a.translation - b.translation).cwiseAbs().maxCoeff());
}

}  // namespace

TEST(Similarity, OrthogonalRowIsUniform) {
  const Tensor px = Tensor::constant({1, 3}, {0.0, 0.0, 1.0});
  const Tensor py = Tensor::constant({3, 3}, {1, 0, 0, 0, 1, 0, -1, 0, 0});
  const Tensor s = similarity(px, py, 0.1);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(s.at(0, j), 1.0 / 3.0, 1e-15);
}

TEST(Similarity, DominantLogitIsNearlyOneHot) {
  const Tensor px = Tensor::constant({1, 2}, {1.0, 0.0});
  const Tensor py = Tensor::constant({3, 2}, {1.0, 0.0, 0.0, 1.0, 0.0, -1.0});
  const Tensor s = similarity(px, py, 0.01);
  EXPECT_GT(s.at(0, 0), 1.0 - 1e-12);
  EXPECT_LT(s.at(0, 1), 1e-40);
}

TEST(Similarity, MatchesSoftmaxOracleAndIsRowStochastic) {
  Rng rng(1);
  const Tensor px = random_matrix(4, 5, rng), py = random_matrix(3, 5, rng);
  const Tensor s = similarity(px, py, 0.3);
  for (std::size_t i = 0; i < 4; ++i) {
    double z = 0.0, row = 0.0;
    std::vector<double> e(3);
    for (std::size_t j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < 5; ++c) dot += px.at(i, c) * py.at(j, c);
      z += e[j] = std::exp(dot / 0.3);
    }
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_NEAR(s.at(i, j), e[j] / z, 1e-14);
      EXPECT_GT(s.at(i, j), 0.0);
      row += s.at(i, j);
    }
    EXPECT_NEAR(row, 1.0, 1e-9);
  }
  EXPECT_THROW(similarity(px, py, 0.0), std::invalid_argument);
  EXPECT_THROW(similarity(px, py, -1.0), std::invalid_argument);
}

TEST(Correspondences, DiagonalDominantGivesIdentity) {
  const Tensor s = Tensor::constant({3, 3}, {0.8, 0.1, 0.1, 0.2, 0.6, 0.2, 0.05, 0.05, 0.9});
  const auto c = correspondences(s);
  EXPECT_EQ(c.target_index, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(c.weight, (std::vector<double>{0.8, 0.6, 0.9}));
}

TEST(Correspondences, UniformRowTiesToZero) {
  const Tensor s = Tensor::constant({1, 4}, {0.25, 0.25, 0.25, 0.25});
  EXPECT_EQ(correspondences(s).target_index[0], 0u);
}

TEST(Correspondences, MatchesBruteForceScan) {
  Rng rng(2);
  const Tensor s = similarity(random_matrix(20, 4, rng), random_matrix(15, 4, rng), 0.2);
  const auto c = correspondences(s);
  for (std::size_t i = 0; i < 20; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 0; j < 15; ++j)
      if (s.at(i, j) > s.at(i, best)) best = j;
    EXPECT_EQ(c.target_index[i], best);
    EXPECT_EQ(c.weight[i], s.at(i, best));
  }
}

TEST(WeightedProcrustes, IdentityOnEqualClouds) {
  Rng rng(3);
  const PointCloud x = sample_shape("torus", 64, rng);
  const auto t = weighted_procrustes(x, x, identity_pairs(64));
  EXPECT_LT(transform_diff(t, RigidTransform::identity()), 1e-9);
}

TEST(WeightedProcrustes, RecoversExactTransform) {
  Rng rng(4);
  std::uniform_real_distribution<double> w(0.1, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    const PointCloud x = sample_shape(kShapeNames[trial % 5], 64, rng);
    const RigidTransform gt = random_transform(180.0, 1.0, rng);
    auto corr = identity_pairs(64);
    for (double& v : corr.weight) v = w(rng);
    const auto t = weighted_procrustes(x, apply_transform(x, gt), corr);
    EXPECT_LT(transform_diff(t, gt), 1e-9);
    EXPECT_TRUE(is_valid_rotation(t.rotation, 1e-9));
  }
}

TEST(WeightedProcrustes, ZeroWeightedCorruptionIsIgnored) {
  Rng rng(5);
  const PointCloud x = sample_shape("cube", 100, rng);
  const RigidTransform gt = random_transform(45.0, 0.5, rng);
  const PointCloud y = apply_transform(x, gt);
  auto corr = identity_pairs(100);
  std::uniform_int_distribution<std::size_t> pick(0, 99);
  for (std::size_t i = 0; i < 30; ++i) {
    corr.target_index[i] = pick(rng);
    corr.weight[i] = 0.0;
  }
  EXPECT_LT(transform_diff(weighted_procrustes(x, y, corr), gt), 1e-9);
}

TEST(WeightedProcrustes, WeightScalingIsHomogeneous) {
  Rng rng(6);
  const PointCloud x = sample_shape("cylinder", 50, rng);
  const PointCloud y = sample_shape("cylinder", 50, rng);  // inexact pairing
  auto corr = identity_pairs(50);
  std::uniform_real_distribution<double> w(0.1, 1.0);
  for (double& v : corr.weight) v = w(rng);
  const auto a = weighted_procrustes(x, y, corr);
  for (double c : {1e-3, 7.0, 1e4}) {
    auto scaled = corr;
    for (double& v : scaled.weight) v *= c;
    EXPECT_LT(transform_diff(weighted_procrustes(x, y, scaled), a), 1e-9);
  }
}

TEST(WeightedProcrustes, ReflectionCaseYieldsProperRotation) {
  Rng rng(7);
  const PointCloud x = sample_shape("sphere", 40, rng);
  Points mirrored = x.points;
  mirrored.col(2) *= -1.0;
  const auto t = weighted_procrustes(x, PointCloud(mirrored), identity_pairs(40));
  EXPECT_NEAR(t.rotation.determinant(), 1.0, 1e-9);
  EXPECT_TRUE(is_valid_rotation(t.rotation, 1e-9));
}

TEST(WeightedProcrustes, ResidualScalesWithDiameter) {
  Rng rng(8);
  const PointCloud x = sample_shape("plane-cross", 80, rng);
  const RigidTransform gt = random_transform(90.0, 0.5, rng);
  const PointCloud y = apply_transform(x, gt);
  const auto t = weighted_procrustes(x, y, identity_pairs(80));
  double worst = 0.0;
  for (std::size_t i = 0; i < 80; ++i) worst = std::max(worst, (t.apply(x.point(i)) - y.point(i)).norm());
  EXPECT_LE(worst, 1e-9 * diameter(x));
}

TEST(WeightedProcrustes, EquivariantUnderPreRotation) {
  Rng rng(9);
  const PointCloud x = sample_shape("torus", 60, rng);
  const RigidTransform gt = random_transform(45.0, 0.5, rng);
  const PointCloud y = apply_transform(x, gt);
  const RigidTransform q = random_transform(180.0, 0.0, rng);
  const auto t = weighted_procrustes(apply_transform(x, q), y, identity_pairs(60));
  EXPECT_LT(transform_diff(compose(t, q), gt), 1e-9);
}

TEST(WeightedProcrustes, JacobiRouteAgrees) {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const PointCloud x = sample_shape("cube", 40, rng);
    const PointCloud y = apply_transform(sample_shape("cube", 40, rng), random_transform(180, 1, rng));
    const auto a = weighted_procrustes(x, y, identity_pairs(40), SvdRoute::kEigen);
    const auto b = weighted_procrustes(x, y, identity_pairs(40), SvdRoute::kJacobi);
    EXPECT_LT(transform_diff(a, b), 1e-9);
  }
}

TEST(WeightedProcrustes, DegenerateInputsThrow) {
  Points line(5, 3);
  for (int i = 0; i < 5; ++i) line.row(i) << 0.1 * i, 0.2 * i, -0.1 * i;
  const PointCloud l(line);
  EXPECT_THROW(weighted_procrustes(l, l, identity_pairs(5)), DegenerateError);
  Points same(4, 3);
  same.rowwise() = Eigen::RowVector3d(0.3, 0.1, 0.2);
  EXPECT_THROW(weighted_procrustes(PointCloud(same), PointCloud(same), identity_pairs(4)), DegenerateError);
  Rng rng(11);
  const PointCloud x = sample_shape("sphere", 10, rng);
  auto two = identity_pairs(10);
  for (std::size_t i = 2; i < 10; ++i) two.weight[i] = 0.0;
  EXPECT_THROW(weighted_procrustes(x, x, two), DegenerateError);
  auto bad = identity_pairs(10);
  bad.weight[0] = -1.0;
  EXPECT_THROW(weighted_procrustes(x, x, bad), std::invalid_argument);
  bad = identity_pairs(10);
  bad.target_index[0] = 10;
  EXPECT_THROW(weighted_procrustes(x, x, bad), std::out_of_range);
}

TEST(Icp, IdentityOnEqualClouds) {
  Rng rng(12);
  const PointCloud x = sample_shape("torus", 128, rng);
  const auto r = icp(x, x);
  EXPECT_LT(transform_diff(r.transform, RigidTransform::identity()), 1e-12);
  EXPECT_TRUE(r.converged);
  EXPECT_LE(r.iterations, 2u);
}

TEST(Icp, ConvergesFromSmallRotation) {
  Rng rng(13);
  const PointCloud x = sample_shape("cube", 256, rng);
  const RigidTransform gt{rotation_from_euler_xyz(Vec3(5.0, 0.0, 0.0) * kDegToRad), Vec3::Zero()};
  const auto r = icp(x, apply_transform(x, gt), 50);
  EXPECT_LT(rotation_error_deg(r.transform, gt).maxCoeff(), 0.1);
  EXPECT_LE(r.iterations, 50u);
}

TEST(Icp, LargeRotationStaysAProperRotation) {
  // Known failure mode: from 45 degrees ICP may settle in a local minimum.
  Rng rng(14);
  const PointCloud x = sample_shape("sphere", 128, rng);
  const RigidTransform gt{rotation_from_euler_xyz(Vec3(45.0, 0.0, 0.0) * kDegToRad), Vec3::Zero()};
  const auto r = icp(x, apply_transform(x, gt), 50);
  EXPECT_TRUE(is_valid_rotation(r.transform.rotation, 1e-9));
  EXPECT_GE(r.iterations, 1u);
}

TEST(WeightedProcrustesDiff, MatchesClosedFormAndGradChecks) {
  Rng rng(15);
  const PointCloud x = sample_shape("cube", 12, rng);
  const PointCloud y = apply_transform(sample_shape("cube", 12, rng), random_transform(60, 0.5, rng));
  std::vector<std::size_t> idx(12);
  std::iota(idx.begin(), idx.end(), 0);
  std::uniform_real_distribution<double> u(0.2, 1.0);
  std::vector<double> wv(12);
  for (double& w : wv) w = u(rng);
  const Tensor w = Tensor::parameter({12, 1}, wv);
  const auto d = weighted_procrustes_diff(x, y, idx, w);
  CorrespondenceSet corr{idx, wv};
  EXPECT_LT(transform_diff(d.value(), weighted_procrustes(x, y, corr)), 1e-9);
  const Tensor pr = random_matrix(3, 3, rng), pt = random_matrix(3, 1, rng);
  const auto res = ad::grad_check(
      [&] {
        const auto t = weighted_procrustes_diff(x, y, idx, w);
        return ad::add(ad::sum(ad::mul(pr, t.rotation)), ad::sum(ad::mul(pt, t.translation)));
      },
      {w});
  EXPECT_LT(res.max_rel_error, 1e-4);
  EXPECT_THROW(weighted_procrustes_diff(x, y, std::vector<std::size_t>(11), w), ad::ShapeError);
}

TEST(TransformText, SeventeenSignificantDigitsRoundTrip) {
  Rng rng(16);
  const RigidTransform t = random_transform(180, 1, rng);
  const std::string text = io::format_transform(t);
  int lines = 0;
  for (char c : text) lines += c == '\n';
  EXPECT_EQ(lines, 4);
  std::istringstream in(text);
  EXPECT_EQ(transform_diff(io::parse_transform(in), t), 0.0);
}
