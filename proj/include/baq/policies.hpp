#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "baq/persona_model.hpp"
#include "baq/rng.hpp"
#include "baq/scoring.hpp"

namespace baq {

enum class PolicyKind { Greedy, NonAdaptive, Random, RandomFixed, Full };

PolicyKind parse_policy_kind(std::string_view name);
std::string_view to_string(PolicyKind kind);

/// A selection rule. NonAdaptive and RandomFixed carry their user-independent
/// question order; the others compute each choice on the fly.
struct Policy {
  PolicyKind kind = PolicyKind::Greedy;
  std::vector<std::size_t> order;

  static Policy greedy() { return {PolicyKind::Greedy, {}}; }
  static Policy random() { return {PolicyKind::Random, {}}; }
  static Policy full() { return {PolicyKind::Full, {}}; }
  static Policy nonadaptive(std::vector<std::size_t> order) {
    return {PolicyKind::NonAdaptive, std::move(order)};
  }
  static Policy random_fixed(std::vector<std::size_t> order) {
    return {PolicyKind::RandomFixed, std::move(order)};
  }
};

/// Target questions plus the uncertainty functional scored over them.
struct TargetSpec {
  std::span<const std::size_t> targets;
  UncertaintyKind kind = UncertaintyKind::ShannonEntropy;
};

struct LookaheadScore {
  std::size_t question = 0;
  double expected_uncertainty = 0.0;
};

/// Exact one-step lookahead: sum_k p(Y_x = k | h) * U(targets | h, Y_x = k).
LookaheadScore greedy_lookahead(const SessionState& state, std::size_t candidate,
                                const TargetSpec& target, const LikelihoodTensor& tensor);

/// Next question under `policy`. Greedy takes the argmin of the lookahead
/// with ties to the lowest index; Random draws uniformly from the remaining
/// feasible questions; list policies return the next unqueried feasible entry
/// of their order; Full returns the lowest-index remaining question. Throws
/// BudgetExceedsFeasible when nothing is left to ask.
std::size_t select_next(const SessionState& state, std::span<const std::size_t> feasible,
                        const Policy& policy, const TargetSpec& target,
                        const LikelihoodTensor& tensor, Rng& rng, std::size_t threads = 1);

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Monte Carlo estimate of E[U(targets | Y_design)] under the prior: draw
/// theta ~ prior, answer every design question from mu[theta], score the
/// induced posterior, average.
McEstimate estimate_expected_uncertainty(std::span<const std::size_t> design,
                                         const TargetSpec& target, const PersonaPrior& prior,
                                         const LikelihoodTensor& tensor, std::size_t mc_samples,
                                         Rng& rng);

inline constexpr std::size_t kDefaultMcSamples = 2000;

/// Forward-greedy batch design of length `budget`. Each step draws one pool
/// of trajectories (persona, then one uniform variate per feasible question)
/// and scores every candidate against that same pool.
std::vector<std::size_t> design_nonadaptive(std::size_t budget, std::span<const std::size_t> feasible,
                                            const TargetSpec& target, const PersonaPrior& prior,
                                            const LikelihoodTensor& tensor, std::size_t mc_samples,
                                            Rng& rng, std::size_t threads = 1);

/// Called with the state before the first query and after every query.
using StepObserver = std::function<void(const SessionState&)>;

/// Runs one user's session. Questions the user did not answer are infeasible;
/// the session ends early when no feasible question remains.
SessionState run_session(std::span<const Answer> responses, std::size_t budget,
                         const Policy& policy, std::span<const std::size_t> feasible,
                         const TargetSpec& target, const PersonaPrior& prior,
                         const LikelihoodTensor& tensor, Rng& rng,
                         const StepObserver& observer = {});

}  // namespace baq
