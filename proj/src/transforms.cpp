#include "baq/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "baq/error.hpp"
#include "baq/parallel.hpp"
#include "baq/rng.hpp"

namespace baq {

double jensen_shannon(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size(), "JS divergence needs equal-length distributions");
  double d = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double m = 0.5 * (p[k] + q[k]);
    if (p[k] > 0.0) d += 0.5 * p[k] * std::log(p[k] / m);
    if (q[k] > 0.0) d += 0.5 * q[k] * std::log(q[k] / m);
  }
  return std::max(d, 0.0);
}

namespace {

// A point is a persona's concatenated per-question distributions (m * K).
double point_divergence(const double* a, const double* b, std::size_t m, std::size_t K) {
  double d = 0.0;
  for (std::size_t q = 0; q < m; ++q)
    d += jensen_shannon(std::span<const double>(a + q * K, K), std::span<const double>(b + q * K, K));
  return d;
}

struct KMeansState {
  std::vector<double> centroids;  // k x (m*K)
  std::vector<std::size_t> assign;
};

double objective_of(const std::vector<double>& points, std::span<const double> weights,
                    const KMeansState& s, std::size_t dim, std::size_t m, std::size_t K) {
  double total = 0.0;
  for (std::size_t i = 0; i < s.assign.size(); ++i)
    total += weights[i] * point_divergence(points.data() + i * dim,
                                           s.centroids.data() + s.assign[i] * dim, m, K);
  return total;
}

// Weighted mean of members per cluster; clusters without mass fall back to the
// unweighted mean, and empty clusters keep `fallback`.
std::vector<double> weighted_means(const std::vector<double>& points, std::span<const double> weights,
                                   const std::vector<std::size_t>& assign, std::size_t k,
                                   std::size_t dim, std::size_t m, std::size_t K,
                                   const std::vector<double>& fallback) {
  std::vector<double> sums(k * dim, 0.0), plain(k * dim, 0.0);
  std::vector<double> mass(k, 0.0);
  std::vector<std::size_t> count(k, 0);
  for (std::size_t i = 0; i < assign.size(); ++i) {
    const std::size_t c = assign[i];
    mass[c] += weights[i];
    ++count[c];
    for (std::size_t d = 0; d < dim; ++d) {
      sums[c * dim + d] += weights[i] * points[i * dim + d];
      plain[c * dim + d] += points[i * dim + d];
    }
  }
  std::vector<double> out(k * dim);
  for (std::size_t c = 0; c < k; ++c) {
    double* dst = out.data() + c * dim;
    if (count[c] == 0) {
      std::copy(fallback.begin() + static_cast<std::ptrdiff_t>(c * dim),
                fallback.begin() + static_cast<std::ptrdiff_t>((c + 1) * dim), dst);
      continue;
    }
    const bool weighted = mass[c] > 0.0;
    const double* src = weighted ? sums.data() + c * dim : plain.data() + c * dim;
    for (std::size_t q = 0; q < m; ++q) {
      double s = 0.0;
      for (std::size_t j = 0; j < K; ++j) s += src[q * K + j];
      for (std::size_t j = 0; j < K; ++j) dst[q * K + j] = src[q * K + j] / s;
    }
  }
  return out;
}

void assign_points(const std::vector<double>& points, KMeansState& s, std::size_t n, std::size_t k,
                   std::size_t dim, std::size_t m, std::size_t K, std::size_t threads) {
  parallel_for(n, threads, [&](std::size_t i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      const double d = point_divergence(points.data() + i * dim, s.centroids.data() + c * dim, m, K);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    s.assign[i] = best;
  });
}

// Moves the worst-fitting point of a multi-member cluster into each empty one.
void fill_empty_clusters(const std::vector<double>& points, std::span<const double> weights,
                         KMeansState& s, std::size_t n, std::size_t k, std::size_t dim,
                         std::size_t m, std::size_t K) {
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<std::size_t> count(k, 0);
    for (std::size_t a : s.assign) ++count[a];
    if (count[c] > 0) continue;
    std::size_t pick = n;
    double worst = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (count[s.assign[i]] < 2) continue;
      const double d = (weights[i] > 0.0 ? weights[i] : 1e-300) *
                       point_divergence(points.data() + i * dim,
                                        s.centroids.data() + s.assign[i] * dim, m, K);
      if (d > worst) {
        worst = d;
        pick = i;
      }
    }
    if (pick == n) continue;
    s.assign[pick] = c;
    std::copy(points.begin() + static_cast<std::ptrdiff_t>(pick * dim),
              points.begin() + static_cast<std::ptrdiff_t>((pick + 1) * dim),
              s.centroids.begin() + static_cast<std::ptrdiff_t>(c * dim));
  }
}

}  // namespace

ClusteredDictionary cluster_dictionary(const LikelihoodTensor& tensor, const PersonaPrior& prior,
                                       const ClusterConfig& config) {
  const std::size_t n_all = tensor.n_personas();
  const std::size_t m = tensor.n_questions();
  const std::size_t K = tensor.n_categories();
  require(prior.size() == n_all, "prior/tensor persona count mismatch");
  require(config.prune_mass >= 0.0 && config.prune_mass < 1.0, "prune_mass must be in [0,1)");
  require(config.n_clusters >= 1, "n_clusters must be at least 1");
  require(config.max_kmeans_iters >= 1, "max_kmeans_iters must be at least 1");

  // (1) prune
  std::vector<std::size_t> order(n_all);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return prior[a] < prior[b]; });
  std::vector<std::uint8_t> dropped(n_all, 0);
  double cumulative = 0.0;
  for (std::size_t i = 0; config.prune_mass > 0.0 && i + 1 < n_all; ++i) {
    const std::size_t t = order[i];
    if (cumulative + prior[t] > config.prune_mass) break;
    cumulative += prior[t];
    dropped[t] = 1;
  }
  std::vector<std::size_t> survivors;
  for (std::size_t t = 0; t < n_all; ++t)
    if (!dropped[t]) survivors.push_back(t);
  const std::size_t n = survivors.size();
  const std::size_t k = config.n_clusters;
  if (k > n)
    fail(ErrorCode::InvalidArgument, "n_clusters (" + std::to_string(k) +
                                         ") exceeds surviving persona count (" +
                                         std::to_string(n) + ")");

  std::vector<double> weights(n);
  double kept_mass = 0.0;
  for (std::size_t i = 0; i < n; ++i) kept_mass += prior[survivors[i]];
  for (std::size_t i = 0; i < n; ++i)
    weights[i] = kept_mass > 0.0 ? prior[survivors[i]] / kept_mass : 1.0 / static_cast<double>(n);

  const std::size_t dim = m * K;
  std::vector<double> points(n * dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t q = 0; q < m; ++q) {
      auto row = tensor.row(survivors[i], q);
      std::copy(row.begin(), row.end(), points.begin() + static_cast<std::ptrdiff_t>(i * dim + q * K));
    }

  // (2) weighted k-means++ seeding. JS divergence already behaves like a
  // squared distance, so candidates are drawn proportional to weight * D.
  Rng rng(derive_seed(config.seed, 0x6b6d65616e73ULL));
  KMeansState state;
  state.centroids.resize(k * dim);
  state.assign.assign(n, 0);
  std::vector<std::uint8_t> is_center(n, 0);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> score(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      if (!is_center[i]) score[i] = c == 0 ? weights[i] : weights[i] * nearest[i];
    double total = std::accumulate(score.begin(), score.end(), 0.0);
    std::size_t pick = n;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      for (std::size_t i = 0; i < n; ++i) {
        if (score[i] <= 0.0) continue;
        pick = i;
        if (u < score[i]) break;
        u -= score[i];
      }
    } else {
      for (std::size_t i = 0; i < n; ++i)
        if (!is_center[i]) {
          pick = i;
          break;
        }
    }
    is_center[pick] = 1;
    std::copy(points.begin() + static_cast<std::ptrdiff_t>(pick * dim),
              points.begin() + static_cast<std::ptrdiff_t>((pick + 1) * dim),
              state.centroids.begin() + static_cast<std::ptrdiff_t>(c * dim));
    for (std::size_t i = 0; i < n; ++i)
      nearest[i] = std::min(nearest[i], point_divergence(points.data() + i * dim,
                                                         points.data() + pick * dim, m, K));
  }

  ClusteredDictionary out;
  assign_points(points, state, n, k, dim, m, K, config.threads);
  fill_empty_clusters(points, weights, state, n, k, dim, m, K);
  double current = objective_of(points, weights, state, dim, m, K);
  out.objective.push_back(current);
  for (std::size_t iter = 1; iter < config.max_kmeans_iters; ++iter) {
    // Mean centroids need not minimize JS divergence; stop if they would
    // raise the objective so the trace stays monotone.
    KMeansState next = state;
    next.centroids = weighted_means(points, weights, state.assign, k, dim, m, K, state.centroids);
    if (objective_of(points, weights, next, dim, m, K) > current) break;
    assign_points(points, next, n, k, dim, m, K, config.threads);
    fill_empty_clusters(points, weights, next, n, k, dim, m, K);
    const double updated = objective_of(points, weights, next, dim, m, K);
    if (updated > current) break;
    const bool stable = next.assign == state.assign;
    state = std::move(next);
    current = updated;
    out.objective.push_back(current);
    if (stable) break;
  }

  // (3) prototypes and (4) their prior.
  const std::vector<double> protos =
      weighted_means(points, weights, state.assign, k, dim, m, K, state.centroids);
  std::vector<double> mass(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) mass[state.assign[i]] += weights[i];
  const double total_mass = std::accumulate(mass.begin(), mass.end(), 0.0);
  for (double& v : mass) v /= total_mass;

  out.tensor = LikelihoodTensor::from_probs(k, m, K, protos);
  out.prior = PersonaPrior(std::move(mass));
  out.assignment.assign(n_all, -1);
  for (std::size_t i = 0; i < n; ++i)
    out.assignment[survivors[i]] = static_cast<std::int64_t>(state.assign[i]);
  return out;
}

LikelihoodTensor temperature_scale(const LikelihoodTensor& tensor, double tau) {
  require(tau > 0.0 && std::isfinite(tau), "temperature must be positive");
  const std::size_t K = tensor.n_categories();
  std::vector<double> probs = tensor.probs();
  if (tau == 1.0) return LikelihoodTensor::from_probs(tensor.n_personas(), tensor.n_questions(), K,
                                                      std::move(probs));
  const double power = 1.0 / tau;
  for (std::size_t r = 0; r < probs.size() / K; ++r) {
    double* row = probs.data() + r * K;
    // Scale by the row max first so large powers do not underflow.
    const double mx = *std::max_element(row, row + K);
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      row[k] = row[k] > 0.0 ? std::pow(row[k] / mx, power) : 0.0;
      s += row[k];
    }
    for (std::size_t k = 0; k < K; ++k) row[k] /= s;
  }
  return LikelihoodTensor::from_probs(tensor.n_personas(), tensor.n_questions(), K, std::move(probs));
}

LikelihoodTensor deterministic_with_noise(std::span<const std::size_t> modes, std::size_t n_personas,
                                          std::size_t n_questions, double epsilon,
                                          std::size_t n_categories) {
  require(epsilon >= 0.0 && epsilon <= 1.0, "epsilon must lie in [0,1]");
  require(n_categories >= 2, "need at least two categories");
  require(modes.size() == n_personas * n_questions, "modes must be n x m");
  const double off = epsilon / static_cast<double>(n_categories - 1);
  std::vector<double> probs(modes.size() * n_categories, off);
  for (std::size_t r = 0; r < modes.size(); ++r) {
    require(modes[r] < n_categories, "mode out of range");
    probs[r * n_categories + modes[r]] = 1.0 - epsilon;
  }
  return LikelihoodTensor::from_probs(n_personas, n_questions, n_categories, std::move(probs));
}

std::vector<std::size_t> modes_from_tensor(const LikelihoodTensor& tensor) {
  const std::size_t K = tensor.n_categories();
  std::vector<std::size_t> modes(tensor.n_personas() * tensor.n_questions());
  for (std::size_t r = 0; r < modes.size(); ++r) {
    const double* row = tensor.probs().data() + r * K;
    modes[r] = static_cast<std::size_t>(std::max_element(row, row + K) - row);
  }
  return modes;
}

}  // namespace baq
