#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "offtrack/nn/tensor.hpp"

namespace offtrack::nn {

/// One array to probe: `value` is perturbed in place, `analytic` holds the
/// gradient already computed for the unperturbed value.
struct GradTarget {
  std::string name;
  Matrix* value;
  const Matrix* analytic;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<name>[index]"
  std::size_t checked = 0;
  bool finite = true;
  std::string nonfinite;  // name of the first array with a non-finite gradient
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

/// Central finite differences against analytic gradients. With
/// per_target_limit > 0, each array is probed on a seeded random subset of
/// at most that many elements; otherwise every element is probed.
inline GradCheckResult grad_check(const std::function<double()>& loss,
                                  const std::vector<GradTarget>& targets, double eps = 1e-5,
                                  std::size_t per_target_limit = 0, std::uint64_t seed = 0) {
  GradCheckResult res;
  for (const auto& t : targets) {
    if (!t.analytic->allFinite()) {
      res.finite = false;
      res.nonfinite = t.name;
      res.max_rel_error = std::numeric_limits<double>::infinity();
      return res;
    }
  }
  std::mt19937_64 rng(seed);
  for (const auto& t : targets) {
    const auto size = static_cast<std::size_t>(t.value->size());
    std::vector<std::size_t> idx(size);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (per_target_limit > 0 && size > per_target_limit) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(per_target_limit);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t i : idx) {
      double& x = t.value->data()[i];
      const double orig = x;
      x = orig + eps;
      const double lp = loss();
      x = orig - eps;
      const double lm = loss();
      x = orig;
      const double numeric = (lp - lm) / (2 * eps);
      if (!std::isfinite(numeric)) {
        res.finite = false;
        res.nonfinite = t.name;
        res.max_rel_error = std::numeric_limits<double>::infinity();
        return res;
      }
      const double err = relative_error(t.analytic->data()[i], numeric);
      ++res.checked;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst = t.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

/// Targets for every trainable tensor of a model; `grads` must outlive the
/// check and hold copies of the analytic gradients.
inline std::vector<GradTarget> param_targets(const TensorRefs& params,
                                             std::vector<Matrix>& grads) {
  grads.clear();
  for (const Tensor* p : params) grads.push_back(p->grad);
  std::vector<GradTarget> out;
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i]->trainable) out.push_back({params[i]->name, &params[i]->value, &grads[i]});
  return out;
}

}  // namespace offtrack::nn
