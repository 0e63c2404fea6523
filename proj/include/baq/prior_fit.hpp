#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "baq/answer_matrix.hpp"
#include "baq/persona_model.hpp"

namespace baq {

struct EmConfig {
  std::size_t max_iters = 100;
  double tol = 1e-4;
  /// When > 0, the M-step output is mixed as (1 - floor) p + floor / n.
  double weight_floor = 0.0;
  std::size_t threads = 1;
};

struct EmTrace {
  /// Total log marginal likelihood evaluated at the prior entering each iteration.
  std::vector<double> log_likelihood;
  std::size_t iterations = 0;
  bool converged = false;
};

struct PriorFit {
  PersonaPrior prior;
  EmTrace trace;
};

/// Empirical-Bayes fit of p(theta) maximizing sum_j log p(Y_j), starting from
/// uniform. Stops when the total log-likelihood changes by less than tol.
PriorFit fit_prior_em(const AnswerMatrix& responses, const LikelihoodTensor& tensor,
                      const EmConfig& config = {});

}  // namespace baq
