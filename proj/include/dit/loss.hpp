#pragma once

// Training objective: transformation, cycle-consistency and discrimination
// terms combined as L = L_t + alpha L_c + beta L_d.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dit/geometry.hpp"
#include "dit/match.hpp"
#include "dit/params.hpp"
#include "dit/tensor.hpp"

namespace dit {

struct LossWeights {
  double alpha = 0.1;
  double beta = 1.0;

  void validate() const {
    if (!(std::isfinite(alpha) && alpha >= 0.0) || !(std::isfinite(beta) && beta >= 0.0))
      throw std::invalid_argument("loss weights must be finite and >= 0");
  }
};

/// label[i] = 1 iff |R* x_i + t* - y_M(i)| < r_inlier.
struct InlierLabels {
  std::vector<std::uint8_t> label;
  double r_inlier = 0.05;

  std::size_t size() const { return label.size(); }
  std::size_t inliers() const {
    std::size_t n = 0;
    for (auto l : label) n += l;
    return n;
  }
};

inline InlierLabels make_inlier_labels(const PointCloud& x, const PointCloud& y, const RigidTransform& gt,
                                       std::span<const std::size_t> target_index, double r_inlier = 0.05) {
  if (target_index.size() != x.size()) throw std::invalid_argument("inlier labels: one correspondence per point required");
  InlierLabels out;
  out.r_inlier = r_inlier;
  out.label.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (target_index[i] >= y.size()) throw std::out_of_range("inlier labels: index out of range");
    out.label[i] = (gt.apply(x.point(i)) - y.point(target_index[i])).norm() < r_inlier ? 1 : 0;
  }
  return out;
}

namespace detail {

inline ad::Tensor mat3_constant(const Mat3& m) {
  std::vector<double> v(9);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) v[static_cast<std::size_t>(r * 3 + c)] = m(r, c);
  return ad::Tensor::constant({3, 3}, std::move(v));
}

inline ad::Tensor vec3_constant(const Vec3& t) { return ad::Tensor::constant({3, 1}, {t[0], t[1], t[2]}); }

inline ad::Tensor squared_norm(const ad::Tensor& a) { return ad::sum(ad::square(a)); }

}  // namespace detail

/// |R^T R* - I|_F^2 + |t - t*|^2. The literal variant replaces the
/// translation term with (t^T t* - 1)^2.
inline ad::Tensor transformation_loss(const DiffTransform& pred, const RigidTransform& gt, bool literal = false) {
  const ad::Tensor eye = detail::mat3_constant(Mat3::Identity());
  const ad::Tensor rot = detail::squared_norm(
      ad::sub(ad::matmul(ad::transpose(pred.rotation), detail::mat3_constant(gt.rotation)), eye));
  const ad::Tensor t_gt = detail::vec3_constant(gt.translation);
  if (literal) {
    const ad::Tensor dot = ad::matmul(ad::transpose(pred.translation), t_gt);
    return ad::add(rot, ad::sum(ad::square(ad::add_scalar(dot, -1.0))));
  }
  return ad::add(rot, detail::squared_norm(ad::sub(pred.translation, t_gt)));
}

/// |R_XY R_YX - I|_F^2 + |R_YX t_XY + t_YX|^2, zero exactly when bwd inverts
/// fwd. Literal variant: |R_XY^T R_YX - I|_F^2 + |t_XY - t_YX|^2.
inline ad::Tensor cycle_loss(const DiffTransform& fwd, const DiffTransform& bwd, bool literal = false) {
  const ad::Tensor eye = detail::mat3_constant(Mat3::Identity());
  if (literal) {
    const ad::Tensor rot = detail::squared_norm(ad::sub(ad::matmul(ad::transpose(fwd.rotation), bwd.rotation), eye));
    return ad::add(rot, detail::squared_norm(ad::sub(fwd.translation, bwd.translation)));
  }
  const ad::Tensor rot = detail::squared_norm(ad::sub(ad::matmul(fwd.rotation, bwd.rotation), eye));
  const ad::Tensor trans = detail::squared_norm(ad::add(ad::matmul(bwd.rotation, fwd.translation), bwd.translation));
  return ad::add(rot, trans);
}

inline constexpr double kBceEps = 1e-7;

/// Mean binary cross-entropy of S(i, M(i)) against the inlier labels.
inline ad::Tensor discrimination_loss(const ad::Tensor& s, std::span<const std::size_t> target_index,
                                      const InlierLabels& labels) {
  const std::size_t n = target_index.size();
  if (n == 0) throw std::invalid_argument("discrimination_loss: empty correspondence set");
  if (labels.size() != n) throw std::invalid_argument("discrimination_loss: label count mismatch");
  const ad::Tensor p = ad::clamp(ad::pick_per_row(s, target_index), kBceEps, 1.0 - kBceEps);
  std::vector<double> c(n), not_c(n);
  for (std::size_t i = 0; i < n; ++i) {
    c[i] = labels.label[i] ? 1.0 : 0.0;
    not_c[i] = 1.0 - c[i];
  }
  const ad::Tensor pos = ad::mul(ad::Tensor::constant({n, 1}, std::move(c)), ad::log(p));
  const ad::Tensor neg =
      ad::mul(ad::Tensor::constant({n, 1}, std::move(not_c)), ad::log(ad::add_scalar(ad::scale(p, -1.0), 1.0)));
  return ad::scale(ad::sum(ad::add(pos, neg)), -1.0 / static_cast<double>(n));
}

/// discrimination_loss evaluated from the similarity logits (S = softmax of
/// each row). Clamping log p and log(1 - p) to [log eps, log(1 - eps)] is
/// the same as clamping p to [eps, 1 - eps].
inline ad::Tensor discrimination_loss_logits(const ad::Tensor& logits, std::span<const std::size_t> target_index,
                                             const InlierLabels& labels) {
  const std::size_t n = target_index.size();
  if (n == 0) throw std::invalid_argument("discrimination_loss: empty correspondence set");
  if (labels.size() != n) throw std::invalid_argument("discrimination_loss: label count mismatch");
  const double lo = std::log(kBceEps), hi = std::log1p(-kBceEps);
  const ad::Tensor log_p = ad::clamp(ad::log_softmax_pick(logits, target_index), lo, hi);
  const ad::Tensor log_q = ad::clamp(ad::log_softmax_pick(logits, target_index, true), lo, hi);
  std::vector<double> c(n), not_c(n);
  for (std::size_t i = 0; i < n; ++i) {
    c[i] = labels.label[i] ? 1.0 : 0.0;
    not_c[i] = 1.0 - c[i];
  }
  const ad::Tensor pos = ad::mul(ad::Tensor::constant({n, 1}, std::move(c)), log_p);
  const ad::Tensor neg = ad::mul(ad::Tensor::constant({n, 1}, std::move(not_c)), log_q);
  return ad::scale(ad::sum(ad::add(pos, neg)), -1.0 / static_cast<double>(n));
}

struct LossParts {
  ad::Tensor transformation;
  ad::Tensor cycle;
  ad::Tensor discrimination;
};

/// L_t + alpha L_c + beta L_d. Throws NonFiniteError naming the offending
/// part.
inline ad::Tensor total_loss(const LossParts& parts, const LossWeights& w) {
  w.validate();
  const std::pair<const char*, const ad::Tensor*> named[] = {
      {"transformation", &parts.transformation}, {"cycle", &parts.cycle}, {"discrimination", &parts.discrimination}};
  for (const auto& [name, t] : named)
    if (!std::isfinite(t->item())) throw NonFiniteError(std::string("non-finite ") + name + " loss");
  return ad::add(parts.transformation,
                 ad::add(ad::scale(parts.cycle, w.alpha), ad::scale(parts.discrimination, w.beta)));
}

}  // namespace dit
