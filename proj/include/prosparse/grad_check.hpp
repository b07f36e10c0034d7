#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "prosparse/autodiff.hpp"

namespace prosparse {

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t samples_per_param = 50;
  std::uint64_t seed = 17;
  // Denominator floor for the relative error; keeps coordinates whose true
  // derivative is ~0 from dividing round-off by round-off.
  double denominator_floor = 1e-6;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::vector<GradCheckEntry> per_param;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Compares reverse-mode gradients of the scalar `f` against central finite
// differences. Coordinates whose perturbation flips a recorded branch
// (relu mask, pooling argmax, decoded structure) are skipped and replaced.
template <typename Real>
GradCheckResult grad_check(const std::function<Var(Graph<Real>&)>& f, const std::vector<Parameter<Real>*>& params,
                           const GradCheckOptions& opts = {}) {
  for (auto* p : params) p->zero_grad();
  std::uint64_t base_signature = 0;
  {
    Graph<Real> g(false);
    Var loss = f(g);
    base_signature = g.branch_signature();
    g.backward(loss);
  }
  auto evaluate = [&](std::uint64_t& sig) {
    Graph<Real> g(false);
    Var loss = f(g);
    sig = g.branch_signature();
    return static_cast<double>(g.value(loss)[0]);
  };

  std::mt19937_64 rng(opts.seed);
  GradCheckResult result;
  for (auto* p : params) {
    GradCheckEntry entry;
    entry.name = p->name;
    std::vector<std::size_t> order(p->value.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t idx : order) {
      if (entry.checked >= opts.samples_per_param) break;
      const Real original = p->value[idx];
      std::uint64_t sig_plus = 0, sig_minus = 0;
      p->value[idx] = static_cast<Real>(original + opts.step);
      double plus = evaluate(sig_plus);
      p->value[idx] = static_cast<Real>(original - opts.step);
      double minus = evaluate(sig_minus);
      p->value[idx] = original;
      if (sig_plus != base_signature || sig_minus != base_signature) {
        ++entry.skipped;
        continue;
      }
      double numeric = (plus - minus) / (2 * opts.step);
      double err = relative_error(static_cast<double>(p->grad[idx]), numeric, opts.denominator_floor);
      entry.max_rel_error = std::max(entry.max_rel_error, err);
      ++entry.checked;
    }
    result.max_rel_error = std::max(result.max_rel_error, entry.max_rel_error);
    result.checked += entry.checked;
    result.skipped += entry.skipped;
    result.per_param.push_back(std::move(entry));
  }
  return result;
}

}  // namespace prosparse
