#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace baq {

/// f(x, grad) returns the objective and writes its gradient.
using DifferentiableObjective = std::function<double(std::span<const double>, std::span<double>)>;

struct BfgsOptions {
  std::size_t max_iters = 100;
  /// Stop once max|grad| <= grad_tol * max(1, |f|).
  double grad_tol = 1e-8;
};

struct BfgsResult {
  std::vector<double> x;
  double value = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Quasi-Newton minimization (dense inverse-Hessian BFGS with Armijo
/// backtracking). The returned value never exceeds f(x0).
BfgsResult minimize_bfgs(const DifferentiableObjective& f, std::vector<double> x0,
                         const BfgsOptions& options = {});

}  // namespace baq
