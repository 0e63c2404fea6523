#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>

#include "baq/persona_model.hpp"

namespace baq {

enum class UncertaintyKind { ShannonEntropy, GiniImpurity };

UncertaintyKind parse_uncertainty_kind(std::string_view name);
std::string_view to_string(UncertaintyKind kind);

/// Shannon entropy in nats with 0 log 0 = 0.
double entropy(std::span<const double> p);

/// 1 - sum p_k^2.
double gini(std::span<const double> p);

double uncertainty(std::span<const double> p, UncertaintyKind kind);

/// -log p[outcome]. Throws InvalidArgument when p[outcome] is zero.
double log_score(std::span<const double> p, std::size_t outcome);

/// sum_k (p_k - 1{k = outcome})^2, in [0, 2].
double brier_score(std::span<const double> p, std::size_t outcome);

/// (sum_k k p_k - outcome)^2 with categories coded 0..K-1.
double ordinal_mse(std::span<const double> p, std::size_t outcome);

/// Sum over target questions of U(posterior predictive of that target).
double target_uncertainty(const PersonaPosterior& posterior, std::span<const std::size_t> targets,
                          const LikelihoodTensor& tensor, UncertaintyKind kind);
inline double target_uncertainty(const SessionState& state, std::span<const std::size_t> targets,
                                 const LikelihoodTensor& tensor, UncertaintyKind kind) {
  return target_uncertainty(state.posterior(), targets, tensor, kind);
}

/// Same quantity for arbitrary non-negative persona weights with total
/// mass `mass` (> 0); the weights need not be normalized.
double target_uncertainty_weighted(std::span<const double> weights, double mass,
                                   std::span<const std::size_t> targets,
                                   const LikelihoodTensor& tensor, UncertaintyKind kind);

enum class Metric { LogLoss, Brier, OrdinalMse };

Metric parse_metric(std::string_view name);
std::string_view to_string(Metric metric);
double score(Metric metric, std::span<const double> p, std::size_t outcome);

struct ScoreRecord {
  std::string user_id;
  std::string question_id;
  double log_loss = 0.0;
  double brier = 0.0;
  double ordinal_mse = 0.0;
};

ScoreRecord score_all(std::string user_id, std::string question_id, std::span<const double> p,
                      std::size_t outcome);

}  // namespace baq
