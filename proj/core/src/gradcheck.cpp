#include "lfa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace lfa {

GradReport grad_check(const std::string& name, const ScalarFn& f, const Tensor& x,
                      double epsilon, double tolerance, uint64_t sample_seed) {
  if (epsilon <= 0.0) throw ConfigError("grad_check epsilon must be positive");

  Tensor analytic(x.shape(), 0.0f);
  const double f0 = f(x, &analytic);
  if (!std::isfinite(f0)) throw EvalError("grad_check: f(x) is not finite for " + name);

  const long long total = x.size();
  std::vector<long long> coords;
  if (total <= 4096) {
    coords.resize(static_cast<size_t>(total));
    std::iota(coords.begin(), coords.end(), 0LL);
  } else {
    // Sampled subset keeps runtime bounded on large tensors.
    std::mt19937_64 rng(sample_seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_int_distribution<long long> pick(0, total - 1);
    const long long want = std::max<long long>(64, total / 512);
    std::vector<bool> seen(static_cast<size_t>(total), false);
    while (static_cast<long long>(coords.size()) < std::min(want, total)) {
      long long i = pick(rng);
      if (!seen[static_cast<size_t>(i)]) {
        seen[static_cast<size_t>(i)] = true;
        coords.push_back(i);
      }
    }
  }

  GradReport report;
  report.op_name = name;
  report.checked_count = static_cast<long long>(coords.size());
  double diff_sq = 0.0, numeric_sq = 0.0, exact_sq = 0.0;
  Tensor probe = x;
  for (long long i : coords) {
    const float orig = probe.data()[i];
    probe.data()[i] = static_cast<float>(orig + epsilon);
    const double fp = f(probe, nullptr);
    probe.data()[i] = static_cast<float>(orig - epsilon);
    const double fm = f(probe, nullptr);
    probe.data()[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw EvalError("grad_check: perturbed evaluation not finite for " + name);
    }
    const double numeric = (fp - fm) / (2.0 * epsilon);
    const double exact = analytic.data()[i];
    const double abs_err = std::abs(numeric - exact);
    const double rel_err = abs_err / std::max({std::abs(numeric), std::abs(exact), 1e-3});
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    report.max_rel_error = std::max(report.max_rel_error, rel_err);
    diff_sq += abs_err * abs_err;
    numeric_sq += numeric * numeric;
    exact_sq += exact * exact;
  }
  report.rel_error =
      std::sqrt(diff_sq) / std::max({std::sqrt(numeric_sq), std::sqrt(exact_sq), 1e-3});
  report.passed = report.rel_error <= tolerance;
  return report;
}

}  // namespace lfa
