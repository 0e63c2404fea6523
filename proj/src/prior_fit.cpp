#include "baq/prior_fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "baq/error.hpp"
#include "baq/kernels.hpp"
#include "baq/parallel.hpp"

namespace baq {

namespace {

// Users are reduced in fixed-size chunks; the chunking (not the thread
// count) determines summation order.
constexpr std::size_t kChunk = 128;

}  // namespace

PriorFit fit_prior_em(const AnswerMatrix& responses, const LikelihoodTensor& tensor,
                      const EmConfig& config) {
  require(config.max_iters >= 1, "max_iters must be at least 1");
  require(config.tol > 0.0, "tol must be positive");
  require(config.weight_floor >= 0.0 && config.weight_floor < 1.0, "weight_floor must be in [0,1)");
  require(responses.n_questions == tensor.n_questions(), "response width must equal m");

  // Only users with at least one answer carry information.
  std::vector<std::size_t> users;
  for (std::size_t u = 0; u < responses.n_users; ++u) {
    for (Answer y : responses.user(u))
      if (y != kMissing) {
        users.push_back(u);
        break;
      }
  }
  require(!users.empty(), "prior fit needs at least one user with an observed answer");

  const std::size_t n = tensor.n_personas();
  // Per-user log p(Y_j | theta) does not change across iterations.
  std::vector<double> loglik(users.size() * n);
  const std::vector<double> zeros(n, 0.0);
  parallel_for(users.size(), config.threads, [&](std::size_t j) {
    log_joint(responses.user(users[j]), zeros, tensor,
              std::span<double>(loglik.data() + j * n, n));
  });

  std::vector<double> prior(n, 1.0 / static_cast<double>(n));
  PriorFit out;
  const std::size_t n_chunks = (users.size() + kChunk - 1) / kChunk;
  std::vector<std::vector<double>> chunk_resp(n_chunks, std::vector<double>(n));
  std::vector<double> chunk_ll(n_chunks);

  double previous = -std::numeric_limits<double>::infinity();
  for (std::size_t iter = 0; iter < config.max_iters; ++iter) {
    std::vector<double> log_prior(n);
    for (std::size_t t = 0; t < n; ++t) log_prior[t] = std::log(prior[t]);

    parallel_for(n_chunks, config.threads, [&](std::size_t c) {
      std::vector<double> lw(n), w(n);
      std::vector<double>& acc = chunk_resp[c];
      std::fill(acc.begin(), acc.end(), 0.0);
      double ll = 0.0;
      const std::size_t end = std::min(users.size(), (c + 1) * kChunk);
      for (std::size_t j = c * kChunk; j < end; ++j) {
        const double* row = loglik.data() + j * n;
        for (std::size_t t = 0; t < n; ++t) lw[t] = log_prior[t] + row[t];
        const double lse = kernels::normalize_log_weights(lw, w);
        if (!std::isfinite(lse))
          fail(ErrorCode::PosteriorCollapse,
               "user " + std::to_string(users[j]) + " has zero marginal likelihood");
        ll += lse;
        kernels::add(acc, w);
      }
      chunk_ll[c] = ll;
    });

    double total = 0.0;
    std::vector<double> resp(n, 0.0);
    for (std::size_t c = 0; c < n_chunks; ++c) {
      total += chunk_ll[c];
      kernels::add(resp, chunk_resp[c]);
    }
    out.trace.log_likelihood.push_back(total);
    out.trace.iterations = iter + 1;

    const double inv_n_users = 1.0 / static_cast<double>(users.size());
    for (std::size_t t = 0; t < n; ++t) prior[t] = resp[t] * inv_n_users;
    if (config.weight_floor > 0.0)
      for (double& p : prior)
        p = (1.0 - config.weight_floor) * p + config.weight_floor / static_cast<double>(n);
    double s = 0.0;
    for (double p : prior) s += p;
    for (double& p : prior) p /= s;

    if (std::abs(total - previous) < config.tol) {
      out.trace.converged = true;
      break;
    }
    previous = total;
  }
  out.prior = PersonaPrior(std::move(prior));
  return out;
}

}  // namespace baq
