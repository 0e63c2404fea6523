#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "baq/persona_model.hpp"

namespace baq {

/// Jensen–Shannon divergence in nats, using the midpoint mixture (p + q) / 2.
double jensen_shannon(std::span<const double> p, std::span<const double> q);

struct ClusterConfig {
  std::size_t n_clusters = 1;
  /// Lowest-prior personas are dropped while their cumulative mass stays
  /// at or below this value.
  double prune_mass = 0.0;
  std::size_t max_kmeans_iters = 100;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct ClusteredDictionary {
  LikelihoodTensor tensor;
  PersonaPrior prior;
  /// Cluster of each original persona; -1 for pruned personas.
  std::vector<std::int64_t> assignment;
  /// Prior-weighted total divergence to the assigned centroid, one entry per
  /// completed k-means iteration.
  std::vector<double> objective;
};

/// Prunes low-mass personas, runs prior-weighted k-means with per-question
/// summed JS divergence (k-means++ seeding), and returns the prior-weighted
/// mean distribution of each cluster as its prototype. The prototype prior
/// is the member mass, renormalized over survivors.
ClusteredDictionary cluster_dictionary(const LikelihoodTensor& tensor, const PersonaPrior& prior,
                                       const ClusterConfig& config);

/// Rows become p^(1/tau) renormalized; tau must be positive.
LikelihoodTensor temperature_scale(const LikelihoodTensor& tensor, double tau);

/// Mass 1 - epsilon on the mode and epsilon / (K - 1) on each other category.
/// `modes` is persona-major (n x m).
LikelihoodTensor deterministic_with_noise(std::span<const std::size_t> modes, std::size_t n_personas,
                                          std::size_t n_questions, double epsilon,
                                          std::size_t n_categories);

/// Per-row argmax (lowest category on ties), persona-major.
std::vector<std::size_t> modes_from_tensor(const LikelihoodTensor& tensor);

}  // namespace baq
