#pragma once

// Finite-difference verification of reverse-mode gradients. Used by the test
// suite and the acceptance gate; kept in the library so custom ops can be
// validated the same way.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ffpdet/common.hpp"
#include "ffpdet/rng.hpp"
#include "ffpdet/tensor.hpp"

namespace ffpdet {

struct GradCheckOptions {
  double step = 1e-5;        ///< central-difference half-step
  double rel_tol = 1e-4;     ///< allowed relative error
  double abs_floor = 1e-7;   ///< absolute slack for near-zero gradients
  int64_t max_per_leaf = 0;  ///< 0 = every element, else sample this many
  uint64_t seed = 7;         ///< element-sampling seed
};

struct GradCheckReport {
  bool ok = true;
  int64_t checked = 0;
  double max_rel = 0;    ///< worst |analytic-numeric| / max(|a|,|n|,floor)
  std::string worst;     ///< where the worst element lives
};

/// Compares autodiff gradients of a scalar loss against central finite
/// differences, in double precision.
///
/// `leaves` are the tensors to probe; each must be a leaf with
/// requires_grad set. `loss_fn` rebuilds the graph from the *current* leaf
/// values and returns the scalar loss, so the same closure serves both the
/// analytic sweep and the perturbed re-evaluations.
inline GradCheckReport grad_check(
    const std::vector<Tensor<double>>& leaves,
    const std::function<Tensor<double>()>& loss_fn,
    const GradCheckOptions& opt = {}) {
  for (const auto& leaf : leaves) {
    require<ConfigError>(leaf.is_leaf() && leaf.requires_grad(),
                         "grad_check probes leaf tensors with requires_grad");
  }

  // Analytic gradients.
  for (auto leaf : leaves) leaf.zero_grad();
  Tensor<double> loss = loss_fn();
  require<ShapeError>(loss.numel() == 1, "grad_check needs a scalar loss");
  loss.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (const auto& leaf : leaves) {
    require<Error>(leaf.has_grad(), "loss does not reach a probed leaf");
    analytic.push_back(leaf.grad());
  }

  GradCheckReport report;
  Rng rng(opt.seed);
  for (size_t li = 0; li < leaves.size(); ++li) {
    Tensor<double> leaf = leaves[li];
    // Pick the elements to probe.
    std::vector<int64_t> idx;
    if (opt.max_per_leaf <= 0 || leaf.numel() <= opt.max_per_leaf) {
      idx.resize(leaf.numel());
      for (int64_t i = 0; i < leaf.numel(); ++i) idx[i] = i;
    } else {
      for (int64_t i = 0; i < opt.max_per_leaf; ++i)
        idx.push_back((int64_t)rng.uniform_int(0, leaf.numel() - 1));
    }

    double* p = leaf.ptr();
    for (int64_t i : idx) {
      const double saved = p[i];
      double plus, minus;
      {
        NoGradGuard guard;
        p[i] = saved + opt.step;
        plus = loss_fn().item();
        p[i] = saved - opt.step;
        minus = loss_fn().item();
        p[i] = saved;
      }
      const double numeric = (plus - minus) / (2.0 * opt.step);
      const double a = analytic[li][i];
      const double scale =
          std::max({std::fabs(a), std::fabs(numeric), opt.abs_floor});
      const double rel = std::fabs(a - numeric) / scale;
      ++report.checked;
      if (rel > report.max_rel) {
        report.max_rel = rel;
        report.worst = strfmt("leaf %zu elem %lld: analytic=%g numeric=%g",
                              li, (long long)i, a, numeric);
      }
      if (rel > opt.rel_tol) report.ok = false;
    }
  }
  return report;
}

}  // namespace ffpdet
