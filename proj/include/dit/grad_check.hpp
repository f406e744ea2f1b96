#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "dit/geometry.hpp"
#include "dit/tensor.hpp"

namespace dit::ad {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates whose |analytic| + |numeric| fell below GradCheckOptions::abs_floor.
  std::size_t floored = 0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Coordinates probed per tensor; 0 probes all of them.
  std::size_t max_per_tensor = 0;
  std::uint64_t seed = 1;
  /// Lower bound on the relative-error denominator. Derivatives below it are
  /// compared in absolute terms, since central differences cannot resolve
  /// them beyond roundoff (about eps |f| / step).
  double abs_floor = 0.0;
};

/// Compares backward() grads against central differences of `f` at the
/// current parameter values. Relative error per coordinate is
/// |analytic - numeric| / max(|analytic| + |numeric| + 1e-12, abs_floor).
inline GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                  const GradCheckOptions& opt = {}) {
  for (auto& p : params) p.zero_grad();
  Tensor out = f();
  if (!std::isfinite(out.item())) throw std::domain_error("grad_check: f is not finite at the base point");
  backward(out);
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    std::vector<double> g(p.size(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), g.begin());
    analytic.push_back(std::move(g));
  }
  out = Tensor();

  GradCheckResult res;
  Rng rng(opt.seed);
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto vals = params[t].mutable_values();
    std::vector<std::size_t> coords(vals.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (opt.max_per_tensor && coords.size() > opt.max_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.max_per_tensor);
    }
    for (std::size_t i : coords) {
      const double orig = vals[i];
      vals[i] = orig + opt.step;
      const double fp = f().item();
      vals[i] = orig - opt.step;
      const double fm = f().item();
      vals[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) throw std::domain_error("grad_check: f is not finite at a probe point");
      const double num = (fp - fm) / (2.0 * opt.step);
      const double ana = analytic[t][i];
      const double mag = std::abs(ana) + std::abs(num);
      const double rel = std::abs(ana - num) / std::max(mag + 1e-12, opt.abs_floor);
      ++res.checked;
      res.floored += mag < opt.abs_floor;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_tensor = t;
        res.worst_index = i;
        res.worst_analytic = ana;
        res.worst_numeric = num;
      }
    }
  }
  for (auto& p : params) p.zero_grad();
  return res;
}

}  // namespace dit::ad
