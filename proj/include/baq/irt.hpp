#pragma once

// Polytomous item response models (graded response and generalized partial
// credit, each with a multidimensional variant), grid-based marginal
// maximum likelihood calibration, and grid-posterior adaptive testing.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "baq/answer_matrix.hpp"

namespace baq {

enum class IrtModelKind { GRM, GPCM, MGRM, MGPCM };

IrtModelKind parse_irt_kind(std::string_view name);
std::string_view to_string(IrtModelKind kind);
inline bool is_graded(IrtModelKind k) { return k == IrtModelKind::GRM || k == IrtModelKind::MGRM; }
inline bool is_multidimensional(IrtModelKind k) {
  return k == IrtModelKind::MGRM || k == IrtModelKind::MGPCM;
}

/// Discrimination (length 1, or D for the multidimensional models) and
/// thresholds: GRM b_1..b_{K-1}, GPCM steps d_1..d_{K-1}.
struct IrtItem {
  std::vector<double> a;
  std::vector<double> thresholds;
};

class IrtItemBank {
 public:
  IrtItemBank() = default;
  /// Rejects non-finite parameters, a <= 0 for unidimensional models and
  /// decreasing graded thresholds.
  IrtItemBank(IrtModelKind kind, std::size_t dims, std::size_t n_categories,
              std::vector<IrtItem> items);

  IrtModelKind kind() const { return kind_; }
  std::size_t dims() const { return dims_; }
  std::size_t n_categories() const { return k_; }
  std::size_t size() const { return items_.size(); }
  const IrtItem& item(std::size_t i) const { return items_[i]; }
  const std::vector<IrtItem>& items() const { return items_; }

 private:
  IrtModelKind kind_ = IrtModelKind::GRM;
  std::size_t dims_ = 1;
  std::size_t k_ = 2;
  std::vector<IrtItem> items_;
};

/// P(Y = k | theta) for k = 0..K-1 into `out`.
void irt_category_probs(IrtModelKind kind, const IrtItem& item, std::span<const double> theta,
                        std::span<double> out);
std::vector<double> irt_category_probs(IrtModelKind kind, const IrtItem& item,
                                       std::span<const double> theta);

/// sum_k grad P_k grad P_k^T / P_k with analytic derivatives; D x D row-major
/// (a single value for unidimensional models).
std::vector<double> fisher_information(IrtModelKind kind, const IrtItem& item,
                                       std::span<const double> theta);

struct GridConfig {
  double theta_max = 4.0;
  std::size_t points = 41;  // per dimension
  std::size_t dims = 1;
};

/// 41 points in 1D; 9 points per dimension over 3 dimensions otherwise.
GridConfig default_grid(IrtModelKind kind);

/// Cartesian grid on [-theta_max, theta_max]^D with standard-normal weights.
class TraitGrid {
 public:
  TraitGrid() = default;
  explicit TraitGrid(const GridConfig& config);

  const GridConfig& config() const { return config_; }
  std::size_t size() const { return prior_.size(); }
  std::size_t dims() const { return config_.dims; }
  /// Coordinate d of every grid point.
  std::span<const double> coord(std::size_t d) const {
    return {coords_.data() + d * size(), size()};
  }
  std::span<const double> coord_squared(std::size_t d) const {
    return {coords_sq_.data() + d * size(), size()};
  }
  std::vector<double> point(std::size_t g) const;
  std::span<const double> prior() const { return prior_; }
  std::span<const double> log_prior() const { return log_prior_; }

 private:
  GridConfig config_;
  std::vector<double> coords_;
  std::vector<double> coords_sq_;
  std::vector<double> prior_;
  std::vector<double> log_prior_;
};

inline constexpr double kIrtProbFloor = 1e-10;

/// A calibrated bank on its grid, with P(Y_x = k | theta_g) tabulated as
/// contiguous grid vectors.
class CatModel {
 public:
  CatModel() = default;
  CatModel(IrtItemBank bank, TraitGrid grid);

  const IrtItemBank& bank() const { return bank_; }
  const TraitGrid& grid() const { return grid_; }
  std::span<const double> prob_column(std::size_t item, std::size_t k) const {
    return {probs_.data() + (item * bank_.n_categories() + k) * grid_.size(), grid_.size()};
  }
  std::span<const double> log_prob_column(std::size_t item, std::size_t k) const {
    return {log_probs_.data() + (item * bank_.n_categories() + k) * grid_.size(), grid_.size()};
  }

 private:
  IrtItemBank bank_;
  TraitGrid grid_;
  std::vector<double> probs_;
  std::vector<double> log_probs_;  // floored at kIrtProbFloor
};

class CatSession {
 public:
  CatSession() = default;
  explicit CatSession(const CatModel& model);

  std::span<const double> weights() const { return weights_; }
  const std::vector<std::size_t>& administered() const { return administered_; }
  bool was_administered(std::size_t item) const {
    return item < asked_.size() && asked_[item] != 0;
  }

 private:
  friend CatSession cat_update(const CatSession&, std::size_t, std::size_t, const CatModel&);
  std::vector<double> weights_;
  std::vector<std::size_t> administered_;
  std::vector<std::uint8_t> asked_;
};

/// w_g <- w_g P(Y_item = response | theta_g), renormalized.
CatSession cat_update(const CatSession& session, std::size_t item, std::size_t response,
                      const CatModel& model);

/// sum_g w_g P(Y_item = k | theta_g).
std::vector<double> cat_predict(const CatSession& session, std::size_t item, const CatModel& model);

std::vector<double> posterior_mean(const CatSession& session, const CatModel& model);
/// D x D row-major.
std::vector<double> posterior_covariance(const CatSession& session, const CatModel& model);

enum class CatCriterion { MFI, MEPV, A_OPT };

CatCriterion parse_cat_criterion(std::string_view name);
std::string_view to_string(CatCriterion c);

/// E_{Y ~ predictive}[sum_d Var(theta_d | data, Y)] after administering `item`.
double expected_posterior_trace(const CatSession& session, std::size_t item, const CatModel& model);

/// Unidimensional expected posterior variance (two-pass variance per outcome).
double expected_posterior_variance(const CatSession& session, std::size_t item,
                                   const CatModel& model);

/// MFI maximizes information at the posterior mean (trace of the matrix in
/// the multidimensional case); MEPV (unidimensional only) and A_OPT minimize
/// the expected posterior variance / covariance trace. Ties go to the lowest
/// item index.
std::size_t cat_select(const CatSession& session, std::span<const std::size_t> remaining,
                       const CatModel& model, CatCriterion criterion);

struct IrtEmConfig {
  std::size_t max_iters = 50;
  double tol = 1e-3;
  std::size_t threads = 1;
  /// Seeds the symmetry-breaking jitter of multidimensional discriminations.
  std::uint64_t seed = 0;
  std::size_t mstep_max_iters = 100;
};

struct IrtFit {
  IrtItemBank bank;
  GridConfig grid;
  /// Marginal log-likelihood at the parameters entering each iteration.
  std::vector<double> log_likelihood;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Starting parameters: a = 1 (1/sqrt(D) per coordinate, jittered when
/// D > 1), thresholds evenly spaced on [-1, 1].
IrtItemBank initial_bank(IrtModelKind kind, std::size_t dims, std::size_t n_items,
                         std::size_t n_categories, std::uint64_t seed);

/// Marginal maximum likelihood by EM on the grid; each M-step maximizes the
/// expected complete-data log-likelihood per item with BFGS on an
/// unconstrained reparameterization (log a; b_1 plus exp increments).
IrtFit fit_irt_em(const AnswerMatrix& train, std::size_t n_categories, IrtModelKind kind,
                  const GridConfig& grid, const IrtEmConfig& config = {});

/// Same, starting from `start` instead of initial_bank.
IrtFit fit_irt_em_from(const AnswerMatrix& train, const IrtItemBank& start, const GridConfig& grid,
                       const IrtEmConfig& config = {});

/// sum_i log sum_g w_g prod_x P(y_ix | theta_g) with floored probabilities.
double irt_marginal_log_likelihood(const AnswerMatrix& data, const CatModel& model,
                                   std::size_t threads = 1);

/// JSON persistence: kind, dims, categories, grid, per-item arrays and fit trace.
void save_irt_fit(const IrtFit& fit, const std::string& path);
IrtFit load_irt_fit(const std::string& path);

}  // namespace baq
