#include "baq/irt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "baq/error.hpp"
#include "baq/kernels.hpp"
#include "baq/optim.hpp"
#include "baq/parallel.hpp"
#include "baq/rng.hpp"
#include "json.hpp"

namespace baq {

IrtModelKind parse_irt_kind(std::string_view name) {
  if (name == "grm" || name == "GRM") return IrtModelKind::GRM;
  if (name == "gpcm" || name == "GPCM") return IrtModelKind::GPCM;
  if (name == "mgrm" || name == "MGRM") return IrtModelKind::MGRM;
  if (name == "mgpcm" || name == "MGPCM") return IrtModelKind::MGPCM;
  fail(ErrorCode::InvalidArgument, "unknown IRT model '" + std::string(name) + "'");
}

std::string_view to_string(IrtModelKind kind) {
  switch (kind) {
    case IrtModelKind::GRM: return "GRM";
    case IrtModelKind::GPCM: return "GPCM";
    case IrtModelKind::MGRM: return "MGRM";
    case IrtModelKind::MGPCM: return "MGPCM";
  }
  return "unknown";
}

CatCriterion parse_cat_criterion(std::string_view name) {
  if (name == "mfi" || name == "MFI") return CatCriterion::MFI;
  if (name == "mepv" || name == "MEPV") return CatCriterion::MEPV;
  if (name == "a_opt" || name == "A_OPT" || name == "aopt") return CatCriterion::A_OPT;
  fail(ErrorCode::InvalidArgument, "unknown CAT criterion '" + std::string(name) + "'");
}

std::string_view to_string(CatCriterion c) {
  switch (c) {
    case CatCriterion::MFI: return "mfi";
    case CatCriterion::MEPV: return "mepv";
    case CatCriterion::A_OPT: return "a_opt";
  }
  return "unknown";
}

IrtItemBank::IrtItemBank(IrtModelKind kind, std::size_t dims, std::size_t n_categories,
                         std::vector<IrtItem> items)
    : kind_(kind), dims_(dims), k_(n_categories), items_(std::move(items)) {
  require(dims_ >= 1, "latent dimension must be at least 1");
  require(is_multidimensional(kind_) || dims_ == 1, "unidimensional models have D = 1");
  require(k_ >= 2, "items need at least two categories");
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const IrtItem& it = items_[i];
    const std::string where = "item " + std::to_string(i);
    require(it.a.size() == dims_, where + ": discrimination length must equal D");
    require(it.thresholds.size() == k_ - 1, where + ": expected K-1 thresholds");
    for (double v : it.a) require(std::isfinite(v), where + ": non-finite discrimination");
    for (double v : it.thresholds) require(std::isfinite(v), where + ": non-finite threshold");
    if (!is_multidimensional(kind_)) require(it.a[0] > 0.0, where + ": discrimination must be > 0");
    if (is_graded(kind_))
      for (std::size_t j = 1; j < it.thresholds.size(); ++j)
        require(it.thresholds[j - 1] <= it.thresholds[j], where + ": thresholds must be ordered");
  }
}

namespace {

inline double sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

double linear_term(const IrtItem& item, std::span<const double> theta, bool multi) {
  if (!multi) return item.a[0] * theta[0];
  double s = 0.0;
  for (std::size_t d = 0; d < item.a.size(); ++d) s += item.a[d] * theta[d];
  return s;
}

// eta_j for thresholds j = 1..K-1: a(theta - c_j) or a^T theta - c_j.
inline double eta(const IrtItem& item, double lin, std::size_t j, bool multi) {
  return multi ? lin - item.thresholds[j] : lin - item.a[0] * item.thresholds[j];
}

// Fills probs (K) and, for graded models, the logistic slopes s_j (K + 1
// entries, s_0 = s_K = 0).
void probs_and_slopes(IrtModelKind kind, const IrtItem& item, std::span<const double> theta,
                      std::span<double> probs, std::span<double> slopes) {
  const std::size_t K = probs.size();
  const bool multi = is_multidimensional(kind);
  const double lin = linear_term(item, theta, multi);
  if (is_graded(kind)) {
    double upper = 1.0;  // P(Y >= k)
    if (!slopes.empty()) slopes[0] = 0.0;
    for (std::size_t k = 0; k + 1 < K; ++k) {
      const double star = sigmoid(eta(item, lin, k, multi));
      probs[k] = std::max(upper - star, 0.0);
      if (!slopes.empty()) slopes[k + 1] = star * (1.0 - star);
      upper = star;
    }
    probs[K - 1] = upper;
    if (!slopes.empty()) slopes[K] = 0.0;
  } else {
    // z_0 = 0, z_k = z_{k-1} + eta_k; softmax with max shift.
    double z = 0.0, zmax = 0.0;
    probs[0] = 0.0;
    for (std::size_t k = 1; k < K; ++k) {
      z += eta(item, lin, k - 1, multi);
      probs[k] = z;
      zmax = std::max(zmax, z);
    }
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      probs[k] = std::exp(probs[k] - zmax);
      s += probs[k];
    }
    for (std::size_t k = 0; k < K; ++k) probs[k] /= s;
  }
}

}  // namespace

void irt_category_probs(IrtModelKind kind, const IrtItem& item, std::span<const double> theta,
                        std::span<double> out) {
  probs_and_slopes(kind, item, theta, out, {});
}

std::vector<double> irt_category_probs(IrtModelKind kind, const IrtItem& item,
                                       std::span<const double> theta) {
  std::vector<double> out(item.thresholds.size() + 1);
  irt_category_probs(kind, item, theta, out);
  return out;
}

std::vector<double> fisher_information(IrtModelKind kind, const IrtItem& item,
                                       std::span<const double> theta) {
  const std::size_t K = item.thresholds.size() + 1;
  const std::size_t D = item.a.size();
  std::vector<double> probs(K), slopes(K + 1);
  probs_and_slopes(kind, item, theta, probs, slopes);
  // grad P_k = c_k * a in every model.
  double mean_cat = 0.0;
  for (std::size_t k = 0; k < K; ++k) mean_cat += static_cast<double>(k) * probs[k];
  double scalar = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    if (!(probs[k] > 0.0)) continue;
    const double c = is_graded(kind) ? slopes[k] - slopes[k + 1]
                                     : probs[k] * (static_cast<double>(k) - mean_cat);
    scalar += c * c / probs[k];
  }
  std::vector<double> info(D * D);
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = 0; j < D; ++j) info[i * D + j] = scalar * item.a[i] * item.a[j];
  return info;
}

GridConfig default_grid(IrtModelKind kind) {
  if (is_multidimensional(kind)) return {4.0, 9, 3};
  return {4.0, 41, 1};
}

TraitGrid::TraitGrid(const GridConfig& config) : config_(config) {
  require(config.theta_max > 0.0, "theta_max must be positive");
  require(config.points >= 2, "grid needs at least two points per dimension");
  require(config.dims >= 1, "grid needs at least one dimension");
  const std::size_t G = config.points;
  std::size_t total = 1;
  for (std::size_t d = 0; d < config.dims; ++d) {
    require(total <= 50'000'000 / G, "grid too large");
    total *= G;
  }
  std::vector<double> axis(G);
  for (std::size_t i = 0; i < G; ++i)
    axis[i] = -config.theta_max + 2.0 * config.theta_max * static_cast<double>(i) /
                                      static_cast<double>(G - 1);
  // Exact symmetry about the origin.
  for (std::size_t i = 0; i < G / 2; ++i) axis[G - 1 - i] = -axis[i];
  if (G % 2 == 1) axis[G / 2] = 0.0;

  coords_.resize(config.dims * total);
  coords_sq_.resize(config.dims * total);
  log_prior_.resize(total);
  for (std::size_t g = 0; g < total; ++g) {
    std::size_t rem = g;
    double sq = 0.0;
    // Last dimension varies fastest.
    for (std::size_t d = config.dims; d-- > 0;) {
      const double v = axis[rem % G];
      rem /= G;
      coords_[d * total + g] = v;
      coords_sq_[d * total + g] = v * v;
      sq += v * v;
    }
    log_prior_[g] = -0.5 * sq;
  }
  prior_.resize(total);
  kernels::normalize_log_weights(log_prior_, prior_);
}

std::vector<double> TraitGrid::point(std::size_t g) const {
  std::vector<double> p(dims());
  for (std::size_t d = 0; d < dims(); ++d) p[d] = coords_[d * size() + g];
  return p;
}

CatModel::CatModel(IrtItemBank bank, TraitGrid grid) : bank_(std::move(bank)), grid_(std::move(grid)) {
  require(bank_.dims() == grid_.dims(), "bank and grid dimensions differ");
  const std::size_t K = bank_.n_categories();
  const std::size_t G = grid_.size();
  probs_.assign(bank_.size() * K * G, 0.0);
  log_probs_.assign(bank_.size() * K * G, 0.0);
  std::vector<double> p(K);
  for (std::size_t x = 0; x < bank_.size(); ++x)
    for (std::size_t g = 0; g < G; ++g) {
      const std::vector<double> theta = grid_.point(g);
      irt_category_probs(bank_.kind(), bank_.item(x), theta, p);
      for (std::size_t k = 0; k < K; ++k) {
        probs_[(x * K + k) * G + g] = p[k];
        log_probs_[(x * K + k) * G + g] = std::log(std::max(p[k], kIrtProbFloor));
      }
    }
}

CatSession::CatSession(const CatModel& model)
    : weights_(model.grid().prior().begin(), model.grid().prior().end()),
      asked_(model.bank().size(), 0) {}

CatSession cat_update(const CatSession& session, std::size_t item, std::size_t response,
                      const CatModel& model) {
  require(item < model.bank().size(), "item index out of range");
  require(response < model.bank().n_categories(), "response out of range");
  if (session.was_administered(item))
    fail(ErrorCode::DuplicateQuestion, "item " + std::to_string(item) + " already administered");
  CatSession next = session;
  kernels::mul(next.weights_, session.weights_, model.prob_column(item, response));
  const double s = kernels::sum(next.weights_);
  if (!(s > 0.0))
    fail(ErrorCode::PosteriorCollapse, "grid posterior has zero mass after item " +
                                           std::to_string(item));
  kernels::scale(next.weights_, 1.0 / s);
  next.administered_.push_back(item);
  next.asked_[item] = 1;
  return next;
}

std::vector<double> cat_predict(const CatSession& session, std::size_t item, const CatModel& model) {
  require(item < model.bank().size(), "item index out of range");
  std::vector<double> out(model.bank().n_categories());
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] = kernels::dot(session.weights(), model.prob_column(item, k));
  return out;
}

std::vector<double> posterior_mean(const CatSession& session, const CatModel& model) {
  std::vector<double> mean(model.grid().dims());
  for (std::size_t d = 0; d < mean.size(); ++d)
    mean[d] = kernels::dot(session.weights(), model.grid().coord(d));
  return mean;
}

std::vector<double> posterior_covariance(const CatSession& session, const CatModel& model) {
  const std::size_t D = model.grid().dims();
  const std::vector<double> mean = posterior_mean(session, model);
  std::vector<double> cov(D * D);
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = i; j < D; ++j) {
      const double e =
          kernels::dot3(session.weights(), model.grid().coord(i), model.grid().coord(j));
      cov[i * D + j] = cov[j * D + i] = e - mean[i] * mean[j];
    }
  return cov;
}

double expected_posterior_trace(const CatSession& session, std::size_t item, const CatModel& model) {
  const std::size_t G = model.grid().size();
  const std::size_t D = model.grid().dims();
  std::vector<double> u(G);
  double expected = 0.0;
  for (std::size_t k = 0; k < model.bank().n_categories(); ++k) {
    kernels::mul(u, session.weights(), model.prob_column(item, k));
    const double pk = kernels::sum(u);
    if (!(pk > 0.0)) continue;
    double trace = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      const double m1 = kernels::dot(u, model.grid().coord(d)) / pk;
      const double m2 = kernels::dot(u, model.grid().coord_squared(d)) / pk;
      trace += std::max(m2 - m1 * m1, 0.0);
    }
    expected += pk * trace;
  }
  return expected;
}

double expected_posterior_variance(const CatSession& session, std::size_t item,
                                   const CatModel& model) {
  require(model.grid().dims() == 1, "MEPV is defined for unidimensional traits");
  const std::size_t G = model.grid().size();
  const auto theta = model.grid().coord(0);
  std::vector<double> u(G);
  double expected = 0.0;
  for (std::size_t k = 0; k < model.bank().n_categories(); ++k) {
    kernels::mul(u, session.weights(), model.prob_column(item, k));
    const double pk = kernels::sum(u);
    if (!(pk > 0.0)) continue;
    const double mean = kernels::dot(u, theta) / pk;
    double var = 0.0;
    for (std::size_t g = 0; g < G; ++g) {
      const double dv = theta[g] - mean;
      var += u[g] * dv * dv;
    }
    expected += var;  // pk * (var / pk)
  }
  return expected;
}

std::size_t cat_select(const CatSession& session, std::span<const std::size_t> remaining,
                       const CatModel& model, CatCriterion criterion) {
  std::vector<std::size_t> items;
  for (std::size_t x : remaining) {
    require(x < model.bank().size(), "item index out of range");
    if (!session.was_administered(x)) items.push_back(x);
  }
  if (items.empty()) fail(ErrorCode::BudgetExceedsFeasible, "no item left to administer");
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  if (criterion == CatCriterion::MEPV)
    require(model.grid().dims() == 1, "MEPV is defined for unidimensional traits");

  std::vector<double> theta_hat;
  if (criterion == CatCriterion::MFI) theta_hat = posterior_mean(session, model);
  const std::size_t D = model.grid().dims();

  std::size_t best = items.front();
  double best_score = std::numeric_limits<double>::infinity();
  for (std::size_t x : items) {
    double score = 0.0;
    switch (criterion) {
      case CatCriterion::MFI: {
        const auto info = fisher_information(model.bank().kind(), model.bank().item(x), theta_hat);
        double trace = 0.0;
        for (std::size_t d = 0; d < D; ++d) trace += info[d * D + d];
        score = -trace;  // maximize
        break;
      }
      case CatCriterion::MEPV:
        score = expected_posterior_variance(session, x, model);
        break;
      case CatCriterion::A_OPT:
        score = expected_posterior_trace(session, x, model);
        break;
    }
    if (score < best_score) {
      best_score = score;
      best = x;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Calibration

namespace {

struct ParamLayout {
  IrtModelKind kind;
  std::size_t dims;
  std::size_t k;

  bool multi() const { return is_multidimensional(kind); }
  std::size_t a_count() const { return multi() ? dims : 1; }
  std::size_t size() const { return a_count() + (k - 1); }
};

IrtItem raw_to_item(const ParamLayout& L, std::span<const double> raw) {
  IrtItem item;
  if (L.multi())
    item.a.assign(raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(L.dims));
  else
    item.a = {std::exp(raw[0])};
  const std::size_t off = L.a_count();
  item.thresholds.resize(L.k - 1);
  for (std::size_t j = 0; j + 1 < L.k; ++j) {
    if (is_graded(L.kind))
      item.thresholds[j] = j == 0 ? raw[off] : item.thresholds[j - 1] + std::exp(raw[off + j]);
    else
      item.thresholds[j] = raw[off + j];
  }
  return item;
}

std::vector<double> item_to_raw(const ParamLayout& L, const IrtItem& item) {
  std::vector<double> raw(L.size());
  if (L.multi())
    std::copy(item.a.begin(), item.a.end(), raw.begin());
  else
    raw[0] = std::log(item.a[0]);
  const std::size_t off = L.a_count();
  for (std::size_t j = 0; j + 1 < L.k; ++j) {
    if (is_graded(L.kind))
      raw[off + j] = j == 0 ? item.thresholds[0]
                            : std::log(std::max(item.thresholds[j] - item.thresholds[j - 1], 1e-8));
    else
      raw[off + j] = item.thresholds[j];
  }
  return raw;
}

// Negative expected complete-data log-likelihood of one item and its
// gradient in raw coordinates. `r` holds expected category counts per grid
// point, laid out r[k * G + g].
double item_objective(const ParamLayout& L, const TraitGrid& grid, std::span<const double> r,
                      std::span<const double> raw, std::span<double> grad) {
  const IrtItem item = raw_to_item(L, raw);
  const std::size_t K = L.k;
  const std::size_t G = grid.size();
  const std::size_t D = grid.dims();
  const bool multi = L.multi();
  const bool graded = is_graded(L.kind);

  std::vector<double> probs(K), slopes(K + 1), w(K), g_eta(K - 1), theta(D);
  std::vector<double> g_a(L.a_count(), 0.0), g_c(K - 1, 0.0);
  double q = 0.0;
  for (std::size_t g = 0; g < G; ++g) {
    double mass = 0.0;
    for (std::size_t k = 0; k < K; ++k) mass += r[k * G + g];
    if (mass == 0.0) continue;
    for (std::size_t d = 0; d < D; ++d) theta[d] = grid.coord(d)[g];
    probs_and_slopes(L.kind, item, theta, probs, slopes);
    for (std::size_t k = 0; k < K; ++k) {
      const double rk = r[k * G + g];
      if (probs[k] > kIrtProbFloor) {
        q += rk * std::log(probs[k]);
        w[k] = rk / probs[k];
      } else {
        q += rk * std::log(kIrtProbFloor);
        w[k] = 0.0;
      }
    }
    if (graded) {
      for (std::size_t j = 1; j < K; ++j) g_eta[j - 1] = slopes[j] * (w[j] - w[j - 1]);
    } else {
      double wp = 0.0;
      for (std::size_t k = 0; k < K; ++k) wp += w[k] * probs[k];
      double tail = 0.0;  // sum_{m >= s} dQ/dz_m
      for (std::size_t m = K; m-- > 1;) {
        tail += probs[m] * (w[m] - wp);
        g_eta[m - 1] = tail;
      }
    }
    const double lin = linear_term(item, theta, multi);
    for (std::size_t j = 0; j + 1 < K; ++j) {
      if (multi) {
        for (std::size_t d = 0; d < D; ++d) g_a[d] += g_eta[j] * theta[d];
        g_c[j] -= g_eta[j];
      } else {
        // d eta / d log a = a (theta - c_j)
        g_a[0] += g_eta[j] * (lin - item.a[0] * item.thresholds[j]);
        g_c[j] -= g_eta[j] * item.a[0];
      }
    }
  }

  std::fill(grad.begin(), grad.end(), 0.0);
  for (std::size_t i = 0; i < L.a_count(); ++i) grad[i] = -g_a[i];
  const std::size_t off = L.a_count();
  if (graded) {
    // b_j = raw_off + sum_{i=2..j} exp(raw_{off+i-1})
    double suffix = 0.0;
    for (std::size_t j = K - 1; j-- > 1;) {
      suffix += g_c[j];
      grad[off + j] = -std::exp(raw[off + j]) * suffix;
    }
    suffix += g_c[0];
    grad[off] = -suffix;
  } else {
    for (std::size_t j = 0; j + 1 < K; ++j) grad[off + j] = -g_c[j];
  }
  return -q;
}

constexpr std::size_t kUserChunk = 256;

struct EStepResult {
  double log_likelihood = 0.0;
  std::vector<double> counts;  // items x K x G
};

EStepResult e_step(const AnswerMatrix& data, const CatModel& model, bool want_counts,
                   std::size_t threads) {
  const std::size_t G = model.grid().size();
  const std::size_t K = model.bank().n_categories();
  const std::size_t m = data.n_questions;
  const std::size_t n_chunks = (data.n_users + kUserChunk - 1) / kUserChunk;
  std::vector<double> chunk_ll(n_chunks, 0.0);
  std::vector<std::vector<double>> chunk_counts(n_chunks);

  parallel_for(n_chunks, threads, [&](std::size_t c) {
    std::vector<double> lp(G), post(G);
    if (want_counts) chunk_counts[c].assign(m * K * G, 0.0);
    double ll = 0.0;
    const std::size_t end = std::min(data.n_users, (c + 1) * kUserChunk);
    for (std::size_t i = c * kUserChunk; i < end; ++i) {
      const auto row = data.user(i);
      std::copy(model.grid().log_prior().begin(), model.grid().log_prior().end(), lp.begin());
      bool any = false;
      for (std::size_t x = 0; x < m; ++x) {
        if (row[x] == kMissing) continue;
        any = true;
        kernels::add(lp, model.log_prob_column(x, static_cast<std::size_t>(row[x])));
      }
      if (!any) continue;
      ll += kernels::normalize_log_weights(lp, post);
      if (!want_counts) continue;
      for (std::size_t x = 0; x < m; ++x) {
        if (row[x] == kMissing) continue;
        double* dst = chunk_counts[c].data() + (x * K + static_cast<std::size_t>(row[x])) * G;
        kernels::add(std::span<double>(dst, G), post);
      }
    }
    chunk_ll[c] = ll;
  });

  EStepResult out;
  if (want_counts) out.counts.assign(m * K * G, 0.0);
  for (std::size_t c = 0; c < n_chunks; ++c) {
    out.log_likelihood += chunk_ll[c];
    if (want_counts) kernels::add(out.counts, chunk_counts[c]);
  }
  return out;
}

}  // namespace

IrtItemBank initial_bank(IrtModelKind kind, std::size_t dims, std::size_t n_items,
                         std::size_t n_categories, std::uint64_t seed) {
  require(n_categories >= 2, "need at least two categories");
  if (!is_multidimensional(kind)) dims = 1;
  Rng rng(derive_seed(seed, 0x697274ULL));
  std::vector<IrtItem> items(n_items);
  for (auto& item : items) {
    item.a.assign(dims, 1.0 / std::sqrt(static_cast<double>(dims)));
    if (dims > 1)
      for (double& a : item.a) a *= 1.0 + 0.3 * (2.0 * rng.uniform() - 1.0);
    item.thresholds.resize(n_categories - 1);
    for (std::size_t j = 0; j + 1 < n_categories; ++j)
      item.thresholds[j] = n_categories == 2 ? 0.0
                                             : -1.0 + 2.0 * static_cast<double>(j) /
                                                          static_cast<double>(n_categories - 2);
  }
  return IrtItemBank(kind, dims, n_categories, std::move(items));
}

IrtFit fit_irt_em(const AnswerMatrix& train, std::size_t n_categories, IrtModelKind kind,
                  const GridConfig& grid, const IrtEmConfig& config) {
  return fit_irt_em_from(
      train, initial_bank(kind, grid.dims, train.n_questions, n_categories, config.seed), grid,
      config);
}

IrtFit fit_irt_em_from(const AnswerMatrix& train, const IrtItemBank& start, const GridConfig& grid_config,
                       const IrtEmConfig& config) {
  require(config.max_iters >= 1, "max_iters must be at least 1");
  require(config.tol > 0.0, "tol must be positive");
  require(start.size() == train.n_questions, "bank size must equal the number of questions");
  require(grid_config.dims == start.dims(), "grid dimension must equal the bank dimension");
  bool any = false;
  for (Answer y : train.values) {
    if (y == kMissing) continue;
    require(y >= 0 && static_cast<std::size_t>(y) < start.n_categories(), "answer out of range");
    any = true;
  }
  if (!any) fail(ErrorCode::InvalidArgument, "IRT calibration needs a non-empty training set");

  const ParamLayout layout{start.kind(), start.dims(), start.n_categories()};
  const TraitGrid grid(grid_config);
  const std::size_t m = start.size();
  const std::size_t G = grid.size();
  const std::size_t K = start.n_categories();

  std::vector<std::vector<double>> raw(m);
  for (std::size_t x = 0; x < m; ++x) raw[x] = item_to_raw(layout, start.item(x));

  auto bank_from_raw = [&] {
    std::vector<IrtItem> items(m);
    for (std::size_t x = 0; x < m; ++x) items[x] = raw_to_item(layout, raw[x]);
    return IrtItemBank(layout.kind, layout.dims, K, std::move(items));
  };

  IrtFit fit;
  fit.grid = grid_config;
  double previous = -std::numeric_limits<double>::infinity();
  for (std::size_t iter = 0; iter < config.max_iters; ++iter) {
    const CatModel model(bank_from_raw(), grid);
    EStepResult e = e_step(train, model, true, config.threads);
    fit.log_likelihood.push_back(e.log_likelihood);
    fit.iterations = iter + 1;
    if (std::abs(e.log_likelihood - previous) < config.tol) {
      fit.converged = true;
      break;
    }
    previous = e.log_likelihood;

    parallel_for(m, config.threads, [&](std::size_t x) {
      const std::span<const double> r(e.counts.data() + x * K * G, K * G);
      const DifferentiableObjective f = [&](std::span<const double> p, std::span<double> g) {
        return item_objective(layout, grid, r, p, g);
      };
      BfgsOptions opts;
      opts.max_iters = config.mstep_max_iters;
      raw[x] = minimize_bfgs(f, raw[x], opts).x;
    });
  }
  fit.bank = bank_from_raw();
  return fit;
}

double irt_marginal_log_likelihood(const AnswerMatrix& data, const CatModel& model,
                                   std::size_t threads) {
  return e_step(data, model, false, threads).log_likelihood;
}

void save_irt_fit(const IrtFit& fit, const std::string& path) {
  nlohmann::json j;
  j["format"] = "baq-irt-bank";
  j["version"] = 1;
  j["kind"] = std::string(to_string(fit.bank.kind()));
  j["dims"] = fit.bank.dims();
  j["n_categories"] = fit.bank.n_categories();
  j["grid"] = {{"theta_max", fit.grid.theta_max},
               {"points", fit.grid.points},
               {"dims", fit.grid.dims}};
  nlohmann::json items = nlohmann::json::array();
  for (const auto& it : fit.bank.items()) items.push_back({{"a", it.a}, {"thresholds", it.thresholds}});
  j["items"] = std::move(items);
  j["fit"] = {{"iterations", fit.iterations},
              {"converged", fit.converged},
              {"log_likelihood", fit.log_likelihood}};
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out << j.dump(2) << '\n';
}

IrtFit load_irt_fit(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::MissingArtifact, "IRT bank file not found: " + path);
  nlohmann::json j;
  try {
    in >> j;
    IrtFit fit;
    const IrtModelKind kind = parse_irt_kind(j.at("kind").get<std::string>());
    const auto dims = j.at("dims").get<std::size_t>();
    const auto K = j.at("n_categories").get<std::size_t>();
    std::vector<IrtItem> items;
    for (const auto& it : j.at("items"))
      items.push_back({it.at("a").get<std::vector<double>>(),
                       it.at("thresholds").get<std::vector<double>>()});
    fit.bank = IrtItemBank(kind, dims, K, std::move(items));
    const auto& g = j.at("grid");
    fit.grid = {g.at("theta_max").get<double>(), g.at("points").get<std::size_t>(),
                g.at("dims").get<std::size_t>()};
    if (j.contains("fit")) {
      fit.iterations = j["fit"].value("iterations", std::size_t{0});
      fit.converged = j["fit"].value("converged", false);
      fit.log_likelihood = j["fit"].value("log_likelihood", std::vector<double>{});
    }
    return fit;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::FormatError, path + ": " + e.what());
  }
}

}  // namespace baq
