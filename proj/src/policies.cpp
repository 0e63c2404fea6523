#include "baq/policies.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "baq/error.hpp"
#include "baq/kernels.hpp"
#include "baq/parallel.hpp"

namespace baq {

PolicyKind parse_policy_kind(std::string_view name) {
  if (name == "greedy") return PolicyKind::Greedy;
  if (name == "nonadaptive") return PolicyKind::NonAdaptive;
  if (name == "random") return PolicyKind::Random;
  if (name == "random_fixed") return PolicyKind::RandomFixed;
  if (name == "full") return PolicyKind::Full;
  fail(ErrorCode::InvalidArgument, "unknown policy '" + std::string(name) + "'");
}

std::string_view to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::Greedy: return "greedy";
    case PolicyKind::NonAdaptive: return "nonadaptive";
    case PolicyKind::Random: return "random";
    case PolicyKind::RandomFixed: return "random_fixed";
    case PolicyKind::Full: return "full";
  }
  return "unknown";
}

namespace {

bool contains(std::span<const std::size_t> set, std::size_t x) {
  return std::find(set.begin(), set.end(), x) != set.end();
}

// Expected target uncertainty after observing `candidate`, starting from
// normalized persona weights `w`. `scratch` holds n doubles.
double lookahead_from_weights(std::span<const double> w, std::size_t candidate,
                              const TargetSpec& target, const LikelihoodTensor& tensor,
                              std::span<double> scratch) {
  double expected = 0.0;
  for (std::size_t k = 0; k < tensor.n_categories(); ++k) {
    kernels::mul(scratch, w, tensor.column(candidate, k));
    const double pk = kernels::sum(scratch);
    if (!(pk > 0.0)) continue;
    expected +=
        pk * target_uncertainty_weighted(scratch, pk, target.targets, tensor, target.kind);
  }
  return expected;
}

std::vector<std::size_t> remaining_sorted(const SessionState& state,
                                          std::span<const std::size_t> feasible) {
  std::vector<std::size_t> out;
  out.reserve(feasible.size());
  for (std::size_t x : feasible)
    if (!state.was_queried(x)) out.push_back(x);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

LookaheadScore greedy_lookahead(const SessionState& state, std::size_t candidate,
                                const TargetSpec& target, const LikelihoodTensor& tensor) {
  require(candidate < tensor.n_questions(), "candidate out of range");
  require(!state.was_queried(candidate), "candidate already queried");
  require(!contains(target.targets, candidate), "candidate is a target question");
  require(!target.targets.empty(), "target set must be non-empty");
  std::vector<double> scratch(tensor.n_personas());
  return {candidate,
          lookahead_from_weights(state.posterior().weights(), candidate, target, tensor, scratch)};
}

std::size_t select_next(const SessionState& state, std::span<const std::size_t> feasible,
                        const Policy& policy, const TargetSpec& target,
                        const LikelihoodTensor& tensor, Rng& rng, std::size_t threads) {
  const std::vector<std::size_t> remaining = remaining_sorted(state, feasible);
  if (remaining.empty())
    fail(ErrorCode::BudgetExceedsFeasible, "no feasible question left to query");

  switch (policy.kind) {
    case PolicyKind::Full:
      return remaining.front();
    case PolicyKind::Random:
      return remaining[rng.below(remaining.size())];
    case PolicyKind::NonAdaptive:
    case PolicyKind::RandomFixed:
      for (std::size_t x : policy.order)
        if (!state.was_queried(x) && std::binary_search(remaining.begin(), remaining.end(), x))
          return x;
      fail(ErrorCode::BudgetExceedsFeasible, "precomputed question order exhausted");
    case PolicyKind::Greedy:
      break;
  }

  for (std::size_t x : remaining)
    require(!contains(target.targets, x), "feasible set overlaps the target set");
  std::vector<double> scores(remaining.size());
  const auto w = state.posterior().weights();
  const std::size_t workers = std::min(resolve_threads(threads), remaining.size());
  std::vector<std::vector<double>> scratch(workers, std::vector<double>(tensor.n_personas()));
  // Each worker owns a contiguous block, matching parallel_for's partition.
  parallel_for(workers, workers, [&](std::size_t t) {
    const std::size_t begin = remaining.size() * t / workers;
    const std::size_t end = remaining.size() * (t + 1) / workers;
    for (std::size_t i = begin; i < end; ++i)
      scores[i] = lookahead_from_weights(w, remaining[i], target, tensor, scratch[t]);
  });
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] < scores[best]) best = i;
  return remaining[best];
}

namespace {

// One pre-drawn trajectory pool: persona per sample and one answer per
// feasible question (derived from a shared uniform variate).
struct TrajectoryPool {
  std::size_t samples = 0;
  std::vector<std::size_t> persona;
  std::vector<std::size_t> answers;  // samples x questions, indexed by question id
  std::size_t stride = 0;

  std::size_t answer(std::size_t s, std::size_t q) const { return answers[s * stride + q]; }
};

TrajectoryPool draw_pool(std::span<const std::size_t> questions, const PersonaPrior& prior,
                         const LikelihoodTensor& tensor, std::size_t samples, Rng& rng) {
  TrajectoryPool pool;
  pool.samples = samples;
  pool.stride = tensor.n_questions();
  pool.persona.resize(samples);
  pool.answers.assign(samples * pool.stride, 0);
  for (std::size_t s = 0; s < samples; ++s) {
    const std::size_t theta = rng.categorical(prior.weights());
    pool.persona[s] = theta;
    for (std::size_t q : questions) {
      const double u = rng.uniform();
      pool.answers[s * pool.stride + q] = categorical_from_uniform(tensor.row(theta, q), u);
    }
  }
  return pool;
}

std::vector<double> log_prior_of(const PersonaPrior& prior) {
  std::vector<double> out(prior.size());
  for (std::size_t i = 0; i < prior.size(); ++i) out[i] = std::log(prior[i]);
  return out;
}

// U(targets | posterior from base log-weights + one more observation).
double score_trajectory(std::span<const double> base, std::size_t question, std::size_t answer,
                        const TargetSpec& target, const LikelihoodTensor& tensor,
                        std::span<double> log_w, std::span<double> w) {
  std::copy(base.begin(), base.end(), log_w.begin());
  if (question != static_cast<std::size_t>(-1))
    kernels::add(log_w, tensor.log_column(question, answer));
  if (!std::isfinite(kernels::normalize_log_weights(log_w, w)))
    fail(ErrorCode::PosteriorCollapse, "sampled trajectory has zero posterior mass");
  return target_uncertainty_weighted(w, 1.0, target.targets, tensor, target.kind);
}

}  // namespace

McEstimate estimate_expected_uncertainty(std::span<const std::size_t> design,
                                         const TargetSpec& target, const PersonaPrior& prior,
                                         const LikelihoodTensor& tensor, std::size_t mc_samples,
                                         Rng& rng) {
  require(mc_samples > 0, "mc_samples must be positive");
  require(prior.size() == tensor.n_personas(), "prior/tensor persona count mismatch");
  const TrajectoryPool pool = draw_pool(design, prior, tensor, mc_samples, rng);
  const std::vector<double> log_prior = log_prior_of(prior);
  const std::size_t n = tensor.n_personas();
  std::vector<double> base(n), log_w(n), w(n);
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t s = 0; s < mc_samples; ++s) {
    std::copy(log_prior.begin(), log_prior.end(), base.begin());
    for (std::size_t q : design) kernels::add(base, tensor.log_column(q, pool.answer(s, q)));
    const double u =
        score_trajectory(base, static_cast<std::size_t>(-1), 0, target, tensor, log_w, w);
    sum += u;
    sum_sq += u * u;
  }
  const double S = static_cast<double>(mc_samples);
  McEstimate est;
  est.mean = sum / S;
  const double var = mc_samples > 1 ? std::max(0.0, (sum_sq - S * est.mean * est.mean) / (S - 1.0))
                                    : 0.0;
  est.std_error = std::sqrt(var / S);
  return est;
}

std::vector<std::size_t> design_nonadaptive(std::size_t budget, std::span<const std::size_t> feasible,
                                            const TargetSpec& target, const PersonaPrior& prior,
                                            const LikelihoodTensor& tensor, std::size_t mc_samples,
                                            Rng& rng, std::size_t threads) {
  require(mc_samples > 0, "mc_samples must be positive");
  std::vector<std::size_t> pool_questions(feasible.begin(), feasible.end());
  std::sort(pool_questions.begin(), pool_questions.end());
  pool_questions.erase(std::unique(pool_questions.begin(), pool_questions.end()),
                       pool_questions.end());
  require(budget <= pool_questions.size(), "budget exceeds the feasible set");
  require(prior.size() == tensor.n_personas(), "prior/tensor persona count mismatch");
  for (std::size_t x : pool_questions) {
    require(x < tensor.n_questions(), "feasible index out of range");
    require(!contains(target.targets, x), "feasible set overlaps the target set");
  }

  const std::size_t n = tensor.n_personas();
  const std::vector<double> log_prior = log_prior_of(prior);
  std::vector<std::size_t> chosen;
  std::vector<std::uint8_t> taken(tensor.n_questions(), 0);

  for (std::size_t step = 0; step < budget; ++step) {
    const TrajectoryPool pool = draw_pool(pool_questions, prior, tensor, mc_samples, rng);
    std::vector<double> base(mc_samples * n);
    for (std::size_t s = 0; s < mc_samples; ++s) {
      std::span<double> b(base.data() + s * n, n);
      std::copy(log_prior.begin(), log_prior.end(), b.begin());
      for (std::size_t q : chosen) kernels::add(b, tensor.log_column(q, pool.answer(s, q)));
    }
    std::vector<std::size_t> candidates;
    for (std::size_t x : pool_questions)
      if (!taken[x]) candidates.push_back(x);

    std::vector<double> estimate(candidates.size());
    const std::size_t workers = std::min(resolve_threads(threads), candidates.size());
    parallel_for(workers, workers, [&](std::size_t t) {
      std::vector<double> log_w(n), w(n);
      const std::size_t begin = candidates.size() * t / workers;
      const std::size_t end = candidates.size() * (t + 1) / workers;
      for (std::size_t i = begin; i < end; ++i) {
        const std::size_t x = candidates[i];
        double acc = 0.0;
        for (std::size_t s = 0; s < mc_samples; ++s)
          acc += score_trajectory(std::span<const double>(base.data() + s * n, n), x,
                                  pool.answer(s, x), target, tensor, log_w, w);
        estimate[i] = acc / static_cast<double>(mc_samples);
      }
    });
    std::size_t best = 0;
    for (std::size_t i = 1; i < estimate.size(); ++i)
      if (estimate[i] < estimate[best]) best = i;
    chosen.push_back(candidates[best]);
    taken[candidates[best]] = 1;
  }
  return chosen;
}

SessionState run_session(std::span<const Answer> responses, std::size_t budget,
                         const Policy& policy, std::span<const std::size_t> feasible,
                         const TargetSpec& target, const PersonaPrior& prior,
                         const LikelihoodTensor& tensor, Rng& rng, const StepObserver& observer) {
  require(responses.size() == tensor.n_questions(), "response vector length must equal m");
  require(prior.size() == tensor.n_personas(), "prior/tensor persona count mismatch");
  std::vector<std::size_t> user_feasible;
  for (std::size_t x : feasible)
    if (responses[x] != kMissing) user_feasible.push_back(x);

  SessionState state(prior, tensor.n_questions());
  if (observer) observer(state);
  for (std::size_t t = 0; t < budget && state.size() < user_feasible.size(); ++t) {
    std::size_t x;
    try {
      x = select_next(state, user_feasible, policy, target, tensor, rng);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::BudgetExceedsFeasible) break;
      throw;
    }
    state = state.observe(x, static_cast<std::size_t>(responses[x]), tensor);
    if (observer) observer(state);
  }
  return state;
}

}  // namespace baq
