#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pcqa/autodiff.hpp"
#include "pcqa/random.hpp"

namespace pcqa::ad {

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-4;
  /// 0 checks every coordinate; otherwise a seeded random subset per leaf.
  std::size_t max_coords_per_leaf = 0;
  std::uint64_t seed = 0;
  /// Retries with randomly perturbed leaves when the first attempt fails,
  /// which moves evaluation points off max/leaky-relu kinks.
  int max_retries = 3;
  double retry_perturbation = 1e-4;
  /// Multiplies the analytic gradient before comparison. Anything other than 1
  /// is a negative control and should make the check fail.
  double analytic_scale = 1.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t coords_checked = 0;
  int retries_used = 0;
  bool passed = false;
  std::size_t worst_leaf = 0;
  std::size_t worst_coord = 0;
};

/// Builds a scalar loss on the given tape from tensors captured by the caller.
using ScalarFn = std::function<Tensor(Tape&)>;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

namespace detail {

inline GradCheckReport grad_check_once(const ScalarFn& f, std::vector<Tensor>& leaves, const GradCheckOptions& opt) {
  for (auto& l : leaves) l.zero_grad();
  {
    Tape tape;
    Tensor loss = f(tape);
    tape.backward(loss);
  }
  GradCheckReport rep;
  Rng rng(opt.seed);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor& leaf = leaves[li];
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    std::vector<std::size_t> coords;
    if (opt.max_coords_per_leaf == 0 || opt.max_coords_per_leaf >= leaf.numel()) {
      coords.resize(leaf.numel());
      for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    } else {
      for (std::size_t i = 0; i < opt.max_coords_per_leaf; ++i) coords.push_back(rng.below(leaf.numel()));
    }
    auto values = leaf.values();
    for (std::size_t c : coords) {
      const double saved = values[c];
      values[c] = saved + opt.h;
      Tape plus = Tape::inference();
      const double fp = f(plus).item();
      values[c] = saved - opt.h;
      Tape minus = Tape::inference();
      const double fm = f(minus).item();
      values[c] = saved;
      const double numeric = (fp - fm) / (2.0 * opt.h);
      const double a = analytic[c] * opt.analytic_scale;
      const double rel = relative_error(a, numeric);
      rep.max_abs_error = std::max(rep.max_abs_error, std::abs(a - numeric));
      if (rel > rep.max_rel_error || rep.coords_checked == 0) {
        rep.max_rel_error = std::max(rep.max_rel_error, rel);
        rep.worst_leaf = li;
        rep.worst_coord = c;
      }
      ++rep.coords_checked;
    }
  }
  for (auto& l : leaves) l.zero_grad();
  rep.passed = rep.max_rel_error < opt.tol;
  return rep;
}

}  // namespace detail

/// Compares reverse-mode gradients of `f` with respect to `leaves` against
/// central differences (f(x+h) - f(x-h)) / 2h. Failures are reported, not thrown.
/// Leaf values are restored on return.
inline GradCheckReport grad_check(const ScalarFn& f, std::vector<Tensor> leaves, const GradCheckOptions& opt = {}) {
  std::vector<std::vector<double>> originals;
  for (const auto& l : leaves) originals.emplace_back(l.values().begin(), l.values().end());

  GradCheckReport rep = detail::grad_check_once(f, leaves, opt);
  Rng jitter(opt.seed ^ 0x5DEECE66Dull);
  while (!rep.passed && rep.retries_used < opt.max_retries) {
    const int used = rep.retries_used + 1;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
      auto v = leaves[li].values();
      for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = originals[li][i] + opt.retry_perturbation * (1.0 + std::abs(originals[li][i])) * jitter.uniform(-1.0, 1.0);
    }
    GradCheckOptions next = opt;
    next.seed = opt.seed + static_cast<std::uint64_t>(used);
    rep = detail::grad_check_once(f, leaves, next);
    rep.retries_used = used;
  }
  for (std::size_t li = 0; li < leaves.size(); ++li)
    std::copy(originals[li].begin(), originals[li].end(), leaves[li].values().begin());
  return rep;
}

/// Single-input form: f maps x to a scalar.
inline GradCheckReport grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& x, double h,
                                  double tol) {
  GradCheckOptions opt;
  opt.h = h;
  opt.tol = tol;
  return grad_check([&](Tape& t) { return f(t, x); }, {x}, opt);
}

}  // namespace pcqa::ad
