#include "baq/scoring.hpp"

#include <array>
#include <cmath>
#include <vector>

#include "baq/error.hpp"

namespace baq {

UncertaintyKind parse_uncertainty_kind(std::string_view name) {
  if (name == "entropy" || name == "shannon_entropy") return UncertaintyKind::ShannonEntropy;
  if (name == "gini" || name == "gini_impurity") return UncertaintyKind::GiniImpurity;
  fail(ErrorCode::InvalidArgument, "unknown uncertainty kind '" + std::string(name) + "'");
}

std::string_view to_string(UncertaintyKind kind) {
  return kind == UncertaintyKind::ShannonEntropy ? "entropy" : "gini";
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

double gini(std::span<const double> p) {
  double s = 0.0;
  for (double v : p) s += v * v;
  return 1.0 - s;
}

double uncertainty(std::span<const double> p, UncertaintyKind kind) {
  return kind == UncertaintyKind::ShannonEntropy ? entropy(p) : gini(p);
}

double log_score(std::span<const double> p, std::size_t outcome) {
  require(outcome < p.size(), "outcome out of range");
  if (!(p[outcome] > 0.0))
    fail(ErrorCode::InvalidArgument, "log score of an outcome with zero predicted probability");
  return -std::log(p[outcome]);
}

double brier_score(std::span<const double> p, std::size_t outcome) {
  require(outcome < p.size(), "outcome out of range");
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double d = p[k] - (k == outcome ? 1.0 : 0.0);
    s += d * d;
  }
  return s;
}

double ordinal_mse(std::span<const double> p, std::size_t outcome) {
  require(outcome < p.size(), "outcome out of range");
  double mean = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) mean += static_cast<double>(k) * p[k];
  const double d = mean - static_cast<double>(outcome);
  return d * d;
}

double target_uncertainty_weighted(std::span<const double> weights, double mass,
                                   std::span<const std::size_t> targets,
                                   const LikelihoodTensor& tensor, UncertaintyKind kind) {
  const std::size_t K = tensor.n_categories();
  std::array<double, 16> small{};
  std::vector<double> large;
  std::span<double> pred;
  if (K <= small.size()) {
    pred = std::span<double>(small.data(), K);
  } else {
    large.resize(K);
    pred = large;
  }
  const double inv = 1.0 / mass;
  double total = 0.0;
  for (std::size_t t : targets) {
    mixture_predictive(weights, t, tensor, pred);
    for (double& v : pred) v *= inv;
    total += uncertainty(pred, kind);
  }
  return total;
}

double target_uncertainty(const PersonaPosterior& posterior, std::span<const std::size_t> targets,
                          const LikelihoodTensor& tensor, UncertaintyKind kind) {
  require(!targets.empty(), "target set must be non-empty");
  for (std::size_t t : targets) require(t < tensor.n_questions(), "target index out of range");
  return target_uncertainty_weighted(posterior.weights(), 1.0, targets, tensor, kind);
}

Metric parse_metric(std::string_view name) {
  if (name == "log_loss") return Metric::LogLoss;
  if (name == "brier") return Metric::Brier;
  if (name == "ordinal_mse") return Metric::OrdinalMse;
  fail(ErrorCode::InvalidArgument, "unknown metric '" + std::string(name) + "'");
}

std::string_view to_string(Metric metric) {
  switch (metric) {
    case Metric::LogLoss: return "log_loss";
    case Metric::Brier: return "brier";
    case Metric::OrdinalMse: return "ordinal_mse";
  }
  return "unknown";
}

double score(Metric metric, std::span<const double> p, std::size_t outcome) {
  switch (metric) {
    case Metric::LogLoss: return log_score(p, outcome);
    case Metric::Brier: return brier_score(p, outcome);
    case Metric::OrdinalMse: return ordinal_mse(p, outcome);
  }
  return 0.0;
}

ScoreRecord score_all(std::string user_id, std::string question_id, std::span<const double> p,
                      std::size_t outcome) {
  ScoreRecord r;
  r.user_id = std::move(user_id);
  r.question_id = std::move(question_id);
  r.log_loss = log_score(p, outcome);
  r.brier = brier_score(p, outcome);
  r.ordinal_mse = ordinal_mse(p, outcome);
  return r;
}

}  // namespace baq
