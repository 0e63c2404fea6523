#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "baq/dataset_io.hpp"
#include "baq/prior_fit.hpp"
#include "oracles.hpp"

using namespace baq;

namespace {

AnswerMatrix sample_users(const PersonaPrior& prior, const LikelihoodTensor& t, std::size_t n_users,
                          std::uint64_t seed) {
  return generate_synthetic_users(prior, t, n_users, seed).data.answers;
}

void check_monotone(const EmTrace& trace) {
  for (std::size_t i = 1; i < trace.log_likelihood.size(); ++i)
    CHECK(trace.log_likelihood[i] >= trace.log_likelihood[i - 1] - 1e-9);
}

}  // namespace

TEST_CASE("single persona converges immediately") {
  const auto t = LikelihoodTensor::from_probs(1, 2, 2, {0.3, 0.7, 0.6, 0.4});
  const auto data = sample_users(PersonaPrior::uniform(1), t, 20, 1);
  const auto fit = fit_prior_em(data, t);
  CHECK(fit.prior.weights()[0] == 1.0);
}

TEST_CASE("sharp data concentrates on the generating persona") {
  std::vector<double> probs;
  for (int p = 0; p < 2; ++p)
    for (int x = 0; x < 10; ++x) {
      probs.push_back(p == 0 ? 0.95 : 0.05);
      probs.push_back(p == 0 ? 0.05 : 0.95);
    }
  const auto t = LikelihoodTensor::from_probs(2, 10, 2, probs);
  const auto data = sample_users(PersonaPrior({1.0, 0.0}), t, 200, 2);
  const auto fit = fit_prior_em(data, t);
  CHECK(fit.prior.weights()[0] > 0.95);
  check_monotone(fit.trace);
}

TEST_CASE("recovers a two-persona prior") {
  std::vector<double> probs;
  for (int p = 0; p < 2; ++p)
    for (int x = 0; x < 8; ++x) {
      probs.push_back(p == 0 ? 0.8 : 0.2);
      probs.push_back(p == 0 ? 0.2 : 0.8);
    }
  const auto t = LikelihoodTensor::from_probs(2, 8, 2, probs);
  const auto data = sample_users(PersonaPrior({0.3, 0.7}), t, 5000, 3);
  const auto fit = fit_prior_em(data, t, {.max_iters = 500, .tol = 1e-8});
  CHECK(std::abs(fit.prior.weights()[0] - 0.3) <= 0.03);
  CHECK(std::abs(fit.prior.weights()[1] - 0.7) <= 0.03);
  check_monotone(fit.trace);
}

TEST_CASE("trace is monotone on random corpora with missing entries") {
  std::mt19937_64 g(61);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 2 + g() % 8, m = 3 + g() % 6, K = 2 + g() % 3;
    const auto t = LikelihoodTensor::from_probs(n, m, K, oracle::flatten(oracle::random_mu(g, n, m, K)));
    auto data = sample_users(PersonaPrior(oracle::random_simplex(g, n)), t, 300, g());
    for (auto& v : data.values)
      if (g() % 5 == 0) v = kMissing;
    const auto fit = fit_prior_em(data, t, {.max_iters = 200, .tol = 1e-10});
    check_monotone(fit.trace);
    CHECK(fit.trace.iterations == fit.trace.log_likelihood.size());
    double total = 0.0;
    for (double w : fit.prior.weights()) total += w;
    CHECK(std::abs(total - 1.0) <= 1e-9);
  }
}

TEST_CASE("thread count does not change the fit") {
  std::mt19937_64 g(67);
  const auto t = LikelihoodTensor::from_probs(6, 5, 3, oracle::flatten(oracle::random_mu(g, 6, 5, 3)));
  const auto data = sample_users(PersonaPrior::uniform(6), t, 2000, 4);
  const auto a = fit_prior_em(data, t, {.threads = 1});
  const auto b = fit_prior_em(data, t, {.threads = 4});
  CHECK(std::vector<double>(a.prior.weights().begin(), a.prior.weights().end()) ==
        std::vector<double>(b.prior.weights().begin(), b.prior.weights().end()));
  CHECK(a.trace.log_likelihood == b.trace.log_likelihood);
}

TEST_CASE("weight floor keeps every persona alive") {
  const auto t = LikelihoodTensor::from_probs(2, 1, 2, {0.99, 0.01, 0.01, 0.99});
  AnswerMatrix data{50, 1, std::vector<Answer>(50, 0)};
  const auto fit = fit_prior_em(data, t, {.weight_floor = 0.1});
  CHECK(fit.prior.weights()[1] >= 0.05 - 1e-12);
}
