#include "baq/persona_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "baq/error.hpp"
#include "baq/kernels.hpp"

namespace baq {

LikelihoodTensor LikelihoodTensor::from_probs(std::size_t n_personas, std::size_t n_questions,
                                              std::size_t n_categories, std::vector<double> probs) {
  require(n_personas >= 1, "tensor needs at least one persona");
  require(n_questions >= 1, "tensor needs at least one question");
  require(n_categories >= 2, "tensor needs at least two categories");
  require(probs.size() == n_personas * n_questions * n_categories,
          "tensor data size does not match n*m*K");
  for (std::size_t t = 0; t < n_personas; ++t) {
    for (std::size_t x = 0; x < n_questions; ++x) {
      const double* row = probs.data() + (t * n_questions + x) * n_categories;
      double s = 0.0;
      for (std::size_t k = 0; k < n_categories; ++k) {
        if (!(row[k] >= 0.0 && row[k] <= 1.0))
          fail(ErrorCode::InvalidArgument, "probability out of [0,1] at persona " +
                                               std::to_string(t) + ", question " +
                                               std::to_string(x));
        s += row[k];
      }
      if (std::abs(s - 1.0) > kRowSumTolerance)
        fail(ErrorCode::InvalidArgument, "row sum " + std::to_string(s) + " at persona " +
                                             std::to_string(t) + ", question " +
                                             std::to_string(x));
    }
  }
  LikelihoodTensor out;
  out.n_ = n_personas;
  out.m_ = n_questions;
  out.k_ = n_categories;
  out.probs_ = std::move(probs);
  out.build_views();
  return out;
}

void LikelihoodTensor::build_views() {
  by_question_.assign(probs_.size(), 0.0);
  log_by_question_.assign(probs_.size(), 0.0);
  for (std::size_t t = 0; t < n_; ++t)
    for (std::size_t x = 0; x < m_; ++x)
      for (std::size_t k = 0; k < k_; ++k) {
        const double p = probs_[(t * m_ + x) * k_ + k];
        const std::size_t dst = (x * k_ + k) * n_ + t;
        by_question_[dst] = p;
        log_by_question_[dst] = std::log(p);
      }
}

LikelihoodTensor LikelihoodTensor::with_floor(double floor) const {
  require(floor >= 0.0 && floor * static_cast<double>(k_) < 1.0, "invalid likelihood floor");
  std::vector<double> probs = probs_;
  std::vector<std::uint8_t> pinned(k_);
  for (std::size_t r = 0; r < n_ * m_; ++r) {
    double* row = probs.data() + r * k_;
    if (std::none_of(row, row + k_, [&](double v) { return v < floor; })) continue;
    // Entries below the floor are pinned to it and the rest are rescaled to
    // the remaining mass, repeating if rescaling pushes another entry under.
    // Every entry of the result is >= floor, so flooring again is a no-op.
    std::fill(pinned.begin(), pinned.end(), 0);
    for (;;) {
      std::size_t n_pinned = 0;
      double free_mass = 0.0;
      for (std::size_t k = 0; k < k_; ++k) {
        if (!pinned[k] && row[k] < floor) pinned[k] = 1;
        if (pinned[k])
          ++n_pinned;
        else
          free_mass += row[k];
      }
      const double scale = (1.0 - static_cast<double>(n_pinned) * floor) / free_mass;
      bool again = false;
      for (std::size_t k = 0; k < k_; ++k) {
        if (pinned[k]) {
          row[k] = floor;
        } else {
          row[k] *= scale;
          again = again || row[k] < floor;
        }
      }
      if (!again) break;
    }
  }
  return from_probs(n_, m_, k_, std::move(probs));
}

LikelihoodTensor LikelihoodTensor::select_personas(std::span<const std::size_t> personas) const {
  std::vector<double> probs;
  probs.reserve(personas.size() * m_ * k_);
  for (std::size_t t : personas) {
    require(t < n_, "persona index out of range");
    probs.insert(probs.end(), probs_.begin() + static_cast<std::ptrdiff_t>(t * m_ * k_),
                 probs_.begin() + static_cast<std::ptrdiff_t>((t + 1) * m_ * k_));
  }
  return from_probs(personas.size(), m_, k_, std::move(probs));
}

PersonaPrior::PersonaPrior(std::vector<double> weights) : weights_(std::move(weights)) {
  require(!weights_.empty(), "prior must have at least one persona");
  double s = 0.0;
  for (double w : weights_) {
    require(w >= 0.0 && std::isfinite(w), "prior weights must be finite and non-negative");
    s += w;
  }
  require(std::abs(s - 1.0) <= 1e-9, "prior weights must sum to 1 (got " + std::to_string(s) + ")");
}

PersonaPrior PersonaPrior::uniform(std::size_t n) {
  require(n >= 1, "prior must have at least one persona");
  return PersonaPrior(std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

PersonaPosterior::PersonaPosterior(const PersonaPrior& prior)
    : log_weights_(prior.size()), weights_(prior.weights().begin(), prior.weights().end()) {
  for (std::size_t i = 0; i < weights_.size(); ++i) log_weights_[i] = std::log(weights_[i]);
}

void PersonaPosterior::absorb(const LikelihoodTensor& tensor, std::size_t question,
                              std::size_t answer) {
  kernels::add(log_weights_, tensor.log_column(question, answer));
  const double lse = kernels::normalize_log_weights(log_weights_, weights_);
  if (!std::isfinite(lse))
    fail(ErrorCode::PosteriorCollapse, "no persona assigns positive probability to answer " +
                                           std::to_string(answer) + " on question " +
                                           std::to_string(question));
}

SessionState::SessionState(const PersonaPrior& prior, std::size_t n_questions)
    : asked_(n_questions, 0), posterior_(prior) {}

SessionState SessionState::observe(std::size_t question, std::size_t answer,
                                   const LikelihoodTensor& tensor) const {
  return posterior_update(*this, question, answer, tensor);
}

SessionState posterior_update(const SessionState& state, std::size_t question, std::size_t answer,
                              const LikelihoodTensor& tensor) {
  if (question >= tensor.n_questions())
    fail(ErrorCode::InvalidArgument, "question index " + std::to_string(question) + " out of range");
  if (answer >= tensor.n_categories())
    fail(ErrorCode::InvalidArgument, "answer " + std::to_string(answer) + " out of range");
  if (state.was_queried(question))
    fail(ErrorCode::DuplicateQuestion, "question " + std::to_string(question) + " already queried");
  SessionState next = state;
  if (next.asked_.size() < tensor.n_questions()) next.asked_.resize(tensor.n_questions(), 0);
  next.posterior_.absorb(tensor, question, answer);
  next.queried_.push_back(question);
  next.answers_.push_back(answer);
  next.asked_[question] = 1;
  return next;
}

void mixture_predictive(std::span<const double> weights, std::size_t question,
                        const LikelihoodTensor& tensor, std::span<double> out) {
  for (std::size_t k = 0; k < tensor.n_categories(); ++k)
    out[k] = kernels::dot(weights, tensor.column(question, k));
}

std::vector<double> posterior_predictive(const PersonaPosterior& posterior, std::size_t question,
                                         const LikelihoodTensor& tensor) {
  if (question >= tensor.n_questions())
    fail(ErrorCode::InvalidArgument, "question index " + std::to_string(question) + " out of range");
  std::vector<double> out(tensor.n_categories());
  mixture_predictive(posterior.weights(), question, tensor, out);
  return out;
}

PersonaPosterior batch_posterior(const PersonaPrior& prior, std::span<const Observation> observations,
                                 const LikelihoodTensor& tensor) {
  // Sum all log-likelihoods first, normalize once.
  std::vector<double> log_w(prior.size());
  for (std::size_t i = 0; i < prior.size(); ++i) log_w[i] = std::log(prior[i]);
  for (const auto& obs : observations) {
    require(obs.question < tensor.n_questions() && obs.answer < tensor.n_categories(),
            "observation out of range");
    kernels::add(log_w, tensor.log_column(obs.question, obs.answer));
  }
  return PersonaPosterior::from_log_weights(std::move(log_w));
}

PersonaPosterior PersonaPosterior::from_log_weights(std::vector<double> log_weights) {
  PersonaPosterior out;
  out.log_weights_ = std::move(log_weights);
  out.weights_.assign(out.log_weights_.size(), 0.0);
  if (!std::isfinite(kernels::normalize_log_weights(out.log_weights_, out.weights_)))
    fail(ErrorCode::PosteriorCollapse, "observation set has zero probability under every persona");
  return out;
}

void log_joint(std::span<const Answer> responses, std::span<const double> log_prior,
               const LikelihoodTensor& tensor, std::span<double> out) {
  require(responses.size() == tensor.n_questions(), "response vector length must equal m");
  std::copy(log_prior.begin(), log_prior.end(), out.begin());
  for (std::size_t x = 0; x < responses.size(); ++x) {
    const Answer y = responses[x];
    if (y == kMissing) continue;
    require(y >= 0 && static_cast<std::size_t>(y) < tensor.n_categories(), "answer out of range");
    kernels::add(out, tensor.log_column(x, static_cast<std::size_t>(y)));
  }
}

double log_marginal_likelihood(std::span<const Answer> responses, const PersonaPrior& prior,
                               const LikelihoodTensor& tensor) {
  bool any = false;
  for (Answer y : responses) any = any || y != kMissing;
  if (!any) return 0.0;
  std::vector<double> log_prior(prior.size());
  for (std::size_t i = 0; i < prior.size(); ++i) log_prior[i] = std::log(prior[i]);
  std::vector<double> joint(prior.size());
  log_joint(responses, log_prior, tensor, joint);
  return kernels::log_sum_exp(joint);
}

}  // namespace baq
