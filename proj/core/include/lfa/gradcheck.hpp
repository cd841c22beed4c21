#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lfa/tensor.hpp"

namespace lfa {

struct GradReport {
  std::string op_name;
  double max_abs_error = 0.0;   // worst single-coordinate |numeric - exact|
  double max_rel_error = 0.0;   // worst single-coordinate relative error
  double rel_error = 0.0;       // ||numeric - exact||_2 / max(||numeric||, ||exact||)
  long long checked_count = 0;
  bool passed = false;
};

// Scalar function of one tensor; when grad_out is non-null it must be filled
// with the analytic gradient at x. Implementations must be deterministic
// (seed their own RNGs) so that repeated evaluations agree.
using ScalarFn = std::function<double(const Tensor& x, Tensor* grad_out)>;

// Central-difference verification: (f(x+eps e) - f(x-eps e)) / 2eps against
// the analytic gradient, coordinate by coordinate. Tensors above 4096
// elements are checked on a sampled subset of at least 64 coordinates.
// Differences are accumulated in 64-bit precision.
//
// The pass criterion is the L2-norm ratio over the checked coordinates:
// single-precision forward passes leave per-coordinate finite-difference
// noise of order sqrt(N) * ulp / eps, which swamps individually tiny
// gradient entries, while any systematic backward bug shifts the whole
// vector and dominates the norm. Per-coordinate maxima are still reported.
GradReport grad_check(const std::string& name, const ScalarFn& f, const Tensor& x,
                      double epsilon = 1e-3, double tolerance = 1e-3,
                      uint64_t sample_seed = 0);

struct GradCheckOptions {
  double tolerance = 1e-3;
  double epsilon = 1e-3;
  double model_tolerance = 1e-2;  // full-model parameter-sampled check
  uint64_t seed = 42;
  std::string filter;  // substring match on op name; empty = all
};

// Runs the repository-wide gradient suite: every layer op, both attention
// blocks, and a parameter-sampled full-model check.
std::vector<GradReport> run_gradcheck_suite(const GradCheckOptions& opts);

}  // namespace lfa
