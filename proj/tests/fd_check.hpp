#pragma once

// Central finite-difference gradient oracle. Lives in test code only and is
// independent of the tape: numeric gradients come from re-running the forward
// closure with perturbed leaf values, never from backward().

#include "prokcat/tensor.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace fdtest {

struct FdOptions {
  double step = 1e-3;
  double rel_tol = 1e-4;
  double abs_tol = 1e-6;
  // 0 checks every coordinate; otherwise at most this many per leaf,
  // deterministically strided across the tensor.
  int max_coords_per_leaf = 0;
};

struct FdReport {
  bool ok = true;
  double worst_rel = 0.0;
  std::string detail;
};

inline bool grad_close(double analytic, double numeric, const FdOptions& opt) {
  const double diff = std::abs(analytic - numeric);
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  if (scale < 1e-4) return diff < opt.abs_tol;
  return diff / scale < opt.rel_tol;
}

// forward() must rebuild the computation from the leaf tensors each call and
// return a scalar tensor.
inline FdReport check_gradients(std::vector<prokcat::Tensor> leaves,
                                const std::function<prokcat::Tensor()>& forward,
                                FdOptions opt = {}) {
  FdReport report;

  std::vector<prokcat::ArrayX> analytic;
  {
    for (auto& leaf : leaves) leaf.zero_grad();
    prokcat::Tape tape;
    prokcat::Tensor loss = forward();
    prokcat::backward(loss);
    for (auto& leaf : leaves) analytic.push_back(leaf.grad());
  }

  auto numeric_at = [&](prokcat::Tensor& leaf, Eigen::Index i, double step) {
    const double saved = leaf.raw_values()(i);
    leaf.raw_values()(i) = saved + step;
    const double fp = forward().item();
    leaf.raw_values()(i) = saved - step;
    const double fm = forward().item();
    leaf.raw_values()(i) = saved;
    return (fp - fm) / (2.0 * step);
  };

  for (std::size_t li = 0; li < leaves.size(); ++li) {
    prokcat::Tensor& leaf = leaves[li];
    Eigen::Index stride = 1;
    if (opt.max_coords_per_leaf > 0 && leaf.size() > opt.max_coords_per_leaf)
      stride = (leaf.size() + opt.max_coords_per_leaf - 1) / opt.max_coords_per_leaf;
    for (Eigen::Index i = 0; i < leaf.size(); i += stride) {
      double numeric = numeric_at(leaf, i, opt.step);
      const double a = analytic[li](i);
      bool ok = grad_close(a, numeric, opt);
      // A mismatch can be a relu/leaky-relu kink inside the central-difference
      // window rather than a wrong gradient. Kink artifacts shrink linearly
      // with the step; genuine gradient bugs persist, so retry smaller.
      for (double step = opt.step / 10.0; !ok && step >= opt.step / 1000.0; step /= 10.0) {
        numeric = numeric_at(leaf, i, step);
        ok = grad_close(a, numeric, opt);
      }
      const double scale = std::max(std::abs(a), std::abs(numeric));
      if (scale >= 1e-12) report.worst_rel = std::max(report.worst_rel, std::abs(a - numeric) / scale);
      if (!ok) {
        report.ok = false;
        report.detail = "leaf " + std::to_string(li) + " elem " + std::to_string(i) +
                        ": analytic " + std::to_string(a) + " vs numeric " + std::to_string(numeric);
        return report;
      }
    }
  }
  return report;
}

}  // namespace fdtest
