#pragma once

// Persona-induced finite mixture: a user is one of n personas, and persona
// theta answers question x with Categorical(mu[theta][x]). All posterior
// arithmetic is carried in log space.

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace baq {

/// 0-based category; kMissing marks an unobserved response.
using Answer = std::int16_t;
inline constexpr Answer kMissing = -1;

inline constexpr double kLikelihoodFloor = 1e-6;
inline constexpr double kRowSumTolerance = 1e-9;

/// mu[theta][x][k], stored persona-major. A question-major transposed copy
/// (and its logarithm) is kept so that per-observation updates and
/// predictive mixtures run over contiguous persona vectors.
class LikelihoodTensor {
 public:
  LikelihoodTensor() = default;

  /// Validates shape, range and row sums; throws InvalidArgument otherwise.
  static LikelihoodTensor from_probs(std::size_t n_personas, std::size_t n_questions,
                                     std::size_t n_categories, std::vector<double> probs);

  std::size_t n_personas() const { return n_; }
  std::size_t n_questions() const { return m_; }
  std::size_t n_categories() const { return k_; }

  double prob(std::size_t persona, std::size_t question, std::size_t category) const {
    return probs_[(persona * m_ + question) * k_ + category];
  }
  std::span<const double> row(std::size_t persona, std::size_t question) const {
    return {probs_.data() + (persona * m_ + question) * k_, k_};
  }
  /// mu[.][question][category] over all personas.
  std::span<const double> column(std::size_t question, std::size_t category) const {
    return {by_question_.data() + (question * k_ + category) * n_, n_};
  }
  std::span<const double> log_column(std::size_t question, std::size_t category) const {
    return {log_by_question_.data() + (question * k_ + category) * n_, n_};
  }
  const std::vector<double>& probs() const { return probs_; }

  /// Clamps entries below `floor` and renormalizes the affected rows. Rows
  /// already at or above the floor are left bit-for-bit unchanged.
  LikelihoodTensor with_floor(double floor = kLikelihoodFloor) const;

  /// Keeps the listed personas, in order.
  LikelihoodTensor select_personas(std::span<const std::size_t> personas) const;

  bool operator==(const LikelihoodTensor& other) const {
    return n_ == other.n_ && m_ == other.m_ && k_ == other.k_ && probs_ == other.probs_;
  }

 private:
  void build_views();

  std::size_t n_ = 0, m_ = 0, k_ = 0;
  std::vector<double> probs_;
  std::vector<double> by_question_;
  std::vector<double> log_by_question_;
};

class PersonaPrior {
 public:
  PersonaPrior() = default;
  /// Validates non-negativity and unit sum (1e-9).
  explicit PersonaPrior(std::vector<double> weights);
  static PersonaPrior uniform(std::size_t n);

  std::size_t size() const { return weights_.size(); }
  std::span<const double> weights() const { return weights_; }
  double operator[](std::size_t i) const { return weights_[i]; }

 private:
  std::vector<double> weights_;
};

class PersonaPosterior {
 public:
  PersonaPosterior() = default;
  explicit PersonaPosterior(const PersonaPrior& prior);
  /// Normalizes unnormalized log-weights; PosteriorCollapse if all are -inf.
  static PersonaPosterior from_log_weights(std::vector<double> log_weights);

  std::size_t size() const { return weights_.size(); }
  std::span<const double> weights() const { return weights_; }
  std::span<const double> log_weights() const { return log_weights_; }

  /// Multiplies in mu[.][question][answer] and renormalizes. Throws
  /// PosteriorCollapse when every persona gives the observation zero mass.
  void absorb(const LikelihoodTensor& tensor, std::size_t question, std::size_t answer);

 private:
  std::vector<double> log_weights_;
  std::vector<double> weights_;
};

struct Observation {
  std::size_t question;
  std::size_t answer;
};

/// One user's interaction history. Immutable: observe() returns a new state.
class SessionState {
 public:
  SessionState() = default;
  SessionState(const PersonaPrior& prior, std::size_t n_questions);

  const std::vector<std::size_t>& queried() const { return queried_; }
  const std::vector<std::size_t>& answers() const { return answers_; }
  const PersonaPosterior& posterior() const { return posterior_; }
  bool was_queried(std::size_t question) const {
    return question < asked_.size() && asked_[question] != 0;
  }
  std::size_t size() const { return queried_.size(); }

  SessionState observe(std::size_t question, std::size_t answer,
                       const LikelihoodTensor& tensor) const;

 private:
  friend SessionState posterior_update(const SessionState&, std::size_t, std::size_t,
                                       const LikelihoodTensor&);
  std::vector<std::size_t> queried_;
  std::vector<std::size_t> answers_;
  std::vector<std::uint8_t> asked_;
  PersonaPosterior posterior_;
};

/// Bayes update for one more answer. Rejects repeated questions and
/// out-of-range answers.
SessionState posterior_update(const SessionState& state, std::size_t question, std::size_t answer,
                              const LikelihoodTensor& tensor);

/// p(Y_x = k | history) = sum_theta mu[theta][x][k] * w[theta].
std::vector<double> posterior_predictive(const PersonaPosterior& posterior, std::size_t question,
                                         const LikelihoodTensor& tensor);
inline std::vector<double> posterior_predictive(const SessionState& state, std::size_t question,
                                                const LikelihoodTensor& tensor) {
  return posterior_predictive(state.posterior(), question, tensor);
}

/// Same as posterior_predictive, for arbitrary (possibly unnormalized)
/// persona weights; writes K values into `out`.
void mixture_predictive(std::span<const double> weights, std::size_t question,
                        const LikelihoodTensor& tensor, std::span<double> out);

/// Posterior after folding a whole observation set at once.
PersonaPosterior batch_posterior(const PersonaPrior& prior, std::span<const Observation> observations,
                                 const LikelihoodTensor& tensor);

/// log sum_theta p(theta) prod_{i observed} mu[theta][i][y_i]; missing entries
/// (kMissing) are skipped and an all-missing vector yields 0.
double log_marginal_likelihood(std::span<const Answer> responses, const PersonaPrior& prior,
                               const LikelihoodTensor& tensor);

/// Unnormalized per-persona log joint log p(theta) + log p(y | theta) for a
/// sparse response vector, written into `out` (length n).
void log_joint(std::span<const Answer> responses, std::span<const double> log_prior,
               const LikelihoodTensor& tensor, std::span<double> out);

}  // namespace baq
