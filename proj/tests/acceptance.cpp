// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Reference values come from the independent routines in
// oracles.hpp or from direct simulation.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "baq/dataset_io.hpp"
#include "baq/elicitation.hpp"
#include "baq/error.hpp"
#include "baq/harness.hpp"
#include "baq/irt.hpp"
#include "baq/kernels.hpp"
#include "baq/policies.hpp"
#include "baq/prior_fit.hpp"
#include "baq/transforms.hpp"
#include "httplib.h"
#include "oracles.hpp"

using namespace baq;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

// Paired t-statistic of (worse - better) over users with both scores.
double paired_t(const std::vector<double>& better, const std::vector<double>& worse) {
  std::vector<double> d;
  for (std::size_t i = 0; i < better.size(); ++i)
    if (std::isfinite(better[i]) && std::isfinite(worse[i])) d.push_back(worse[i] - better[i]);
  const double n = static_cast<double>(d.size());
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  return mean / (sd / std::sqrt(n));
}

struct Instance {
  oracle::Mu mu;
  std::vector<double> prior;
  LikelihoodTensor tensor;
};

Instance random_instance(std::mt19937_64& g, std::size_t n, std::size_t m, std::size_t K) {
  Instance in;
  in.mu = oracle::random_mu(g, n, m, K);
  in.prior = oracle::random_simplex(g, n);
  in.tensor = LikelihoodTensor::from_probs(n, m, K, oracle::flatten(in.mu));
  return in;
}

// ---------------------------------------------------------------------------

Outcome exact_inference() {
  Outcome out;
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::vector<kernels::Backend> backends = {kernels::Backend::Scalar};
  for (auto b : {kernels::Backend::Avx2, kernels::Backend::Neon})
    if (kernels::backend_available(b)) backends.push_back(b);
  const auto original = kernels::active_backend();
  for (auto backend : backends) {
    kernels::set_active_backend(backend);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      std::mt19937_64 g(seed);
      const std::size_t n = 1 + g() % 5, m = 1 + g() % 4, K = 2 + g() % 2;
      const auto in = random_instance(g, n, m, K);
      SessionState s(PersonaPrior(in.prior), m);
      std::vector<oracle::Obs> obs;
      std::vector<std::size_t> order(m);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), g);
      for (std::size_t step = 0; step <= m; ++step) {
        const auto w = oracle::posterior(in.prior, in.mu, obs);
        for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(s.posterior().weights()[i] - w[i]));
        for (std::size_t x = 0; x < m; ++x) {
          if (s.was_queried(x)) continue;
          const auto p = posterior_predictive(s, x, in.tensor);
          const auto q = oracle::predictive(in.prior, in.mu, obs, x);
          for (std::size_t k = 0; k < K; ++k) worst = std::max(worst, std::abs(p[k] - q[k]));
        }
        if (step == m) break;
        const std::size_t x = order[step], a = g() % K;
        s = posterior_update(s, x, a, in.tensor);
        obs.push_back({x, a});
      }
    }
  }
  kernels::set_active_backend(original);
  const double elapsed = seconds_since(t0);
  out.check(worst <= 1e-10, fmt("max deviation %.3g exceeds 1e-10", worst));
  out.check(elapsed < 5.0, fmt("took %.2f s", elapsed));
  if (out.pass)
    out.detail = fmt("max deviation %.2g, %.3f s", worst, elapsed) + " over " + std::to_string(backends.size()) +
                 " kernel backend(s)";
  return out;
}

Outcome lookahead_oracle() {
  Outcome out;
  double worst = 0.0, worst_gap = -1e300;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 g(seed + 1000);
    const std::size_t n = 1 + g() % 5, m = 2 + g() % 3, K = 2 + g() % 2;
    const auto in = random_instance(g, n, m, K);
    const std::vector<std::size_t> targets = {m - 1};
    for (auto kind : {UncertaintyKind::ShannonEntropy, UncertaintyKind::GiniImpurity}) {
      const bool gini_kind = kind == UncertaintyKind::GiniImpurity;
      SessionState s(PersonaPrior(in.prior), m);
      std::vector<oracle::Obs> obs;
      for (std::size_t step = 0; step + 1 < m; ++step) {
        const double current = oracle::target_uncertainty(in.prior, in.mu, obs, targets, gini_kind);
        for (std::size_t x = 0; x + 1 < m; ++x) {
          if (s.was_queried(x)) continue;
          const double got = greedy_lookahead(s, x, {targets, kind}, in.tensor).expected_uncertainty;
          worst = std::max(worst, std::abs(got - oracle::lookahead(in.prior, in.mu, obs, x, targets, gini_kind)));
          if (!gini_kind) worst_gap = std::max(worst_gap, got - current);
        }
        const std::size_t a = g() % K;
        s = posterior_update(s, step, a, in.tensor);
        obs.push_back({step, a});
      }
    }
  }
  out.check(worst <= 1e-12, fmt("max deviation %.3g exceeds 1e-12", worst));
  out.check(worst_gap <= 1e-9, fmt("lookahead exceeds current uncertainty by %.3g", worst_gap));
  if (out.pass) out.detail = fmt("max deviation %.2g, max (lookahead - current) %.2g", worst, worst_gap);
  return out;
}

Outcome nonadaptive_estimator() {
  Outcome out;
  int inside = 0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    std::mt19937_64 g(trial + 2000);
    const std::size_t n = 1 + g() % 4, m = 2 + g() % 3;
    const auto in = random_instance(g, n, m, 2);
    const std::vector<std::size_t> targets = {m - 1};
    const std::size_t T = 1 + g() % std::min<std::size_t>(2, m - 1);
    std::vector<std::size_t> design(m - 1);
    std::iota(design.begin(), design.end(), std::size_t{0});
    std::shuffle(design.begin(), design.end(), g);
    design.resize(T);
    const double exact = oracle::nonadaptive_expected(in.prior, in.mu, design, targets);
    Rng rng(derive_seed(2024, trial));
    const auto est =
        estimate_expected_uncertainty(design, {targets}, PersonaPrior(in.prior), in.tensor, 100000, rng);
    if (std::abs(est.mean - exact) <= 3.0 * est.std_error + 1e-12) ++inside;
  }
  out.check(inside >= 95, std::to_string(inside) + "/100 trials within 3 SE");
  if (out.pass) out.detail = std::to_string(inside) + "/100 trials within 3 SE";
  return out;
}

// Shared by the synthetic reproduction, the CAT comparison and determinism.
ExperimentConfig synthetic_config() {
  ExperimentConfig c;
  SyntheticSpec s;
  s.n_personas = 50;
  s.n_questions = 30;
  s.n_categories = 4;
  s.concentration = 0.5;
  s.n_users = 2500;
  s.seed = 7;
  c.synthetic = s;
  c.train_fraction = 0.2;  // 2,000 test users
  c.split_seed = 11;
  c.n_targets = 5;
  c.target_seed = 3;
  c.policies = {"greedy", "nonadaptive", "random", "random_fixed", "full", "cat_grm"};
  c.budgets = {3, 5, 10, 15, 25};
  c.budget_all = false;
  c.metrics = {Metric::LogLoss};
  c.seed = 2024;
  c.threads = 0;
  c.record_user_scores = true;
  return c;
}

const std::vector<std::string> kPersonaPolicies = {"greedy", "nonadaptive", "random", "random_fixed", "full"};

Outcome synthetic_reproduction(const ResultTable& table, double seconds) {
  Outcome out;
  out.check(table.n_test_users == 2000, "expected 2000 test users, got " + std::to_string(table.n_test_users));
  std::string tstats;
  for (std::size_t T : {3, 5, 10, 15, 25}) {
    const auto* g = table.find("greedy", T, "log_loss");
    const auto* r = table.find("random", T, "log_loss");
    if (g == nullptr || r == nullptr) {
      out.check(false, "missing cell at T=" + std::to_string(T));
      continue;
    }
    out.check(g->mean <= r->mean, fmt("greedy %.4f > random %.4f", g->mean, r->mean) + " at T=" + std::to_string(T));
    if (T <= 10) {
      const double t = paired_t(table.user_scores.at(user_score_key("greedy", T, "log_loss")),
                                table.user_scores.at(user_score_key("random", T, "log_loss")));
      out.check(t >= 2.0, fmt("paired t %.2f < 2", t) + " at T=" + std::to_string(T));
      tstats += (tstats.empty() ? "" : ", ") + std::string("T=") + std::to_string(T) + fmt(" t=%.1f", t);
    }
  }
  for (const auto& p : kPersonaPolicies) {
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t T : {3, 5, 10, 15, 25}) {
      const double v = table.find(p, T, "log_loss")->mean;
      out.check(v <= prev + 0.005, p + " log loss rises at T=" + std::to_string(T));
      prev = v;
    }
  }
  const double ref = table.find("full", 25, "log_loss")->mean;
  double spread = 0.0;
  for (const auto& p : kPersonaPolicies) spread = std::max(spread, std::abs(table.find(p, 25, "log_loss")->mean - ref));
  out.check(spread <= 1e-9, fmt("policies differ by %.3g at T=25", spread));
  if (out.pass)
    out.detail = "greedy <= random at all budgets (" + tstats + "), T=25 spread " + fmt("%.2g", spread) +
                 fmt(", %.1f s", seconds);
  return out;
}

AnswerMatrix two_persona_users(const LikelihoodTensor& t, const PersonaPrior& prior, std::size_t n,
                               std::uint64_t seed) {
  return generate_synthetic_users(prior, t, n, seed).data.answers;
}

Outcome prior_em() {
  Outcome out;
  double worst_drop = 0.0;
  auto track = [&](const EmTrace& tr) {
    for (std::size_t i = 1; i < tr.log_likelihood.size(); ++i)
      worst_drop = std::max(worst_drop, tr.log_likelihood[i - 1] - tr.log_likelihood[i]);
  };

  // Random corpora, some with missing answers.
  std::mt19937_64 g(3000);
  for (int c = 0; c < 10; ++c) {
    const std::size_t n = 2 + g() % 10, m = 3 + g() % 8, K = 2 + g() % 3;
    const auto t = LikelihoodTensor::from_probs(n, m, K, oracle::flatten(oracle::random_mu(g, n, m, K)));
    auto data = two_persona_users(t, PersonaPrior(oracle::random_simplex(g, n)), 500, g());
    if (c % 2 == 1)
      for (auto& v : data.values)
        if (g() % 4 == 0) v = kMissing;
    track(fit_prior_em(data, t, {.max_iters = 300, .tol = 1e-10}).trace);
  }
  // The synthetic dictionary used for the reproduction.
  const auto dict = generate_synthetic_dictionary(50, 30, 4, 0.5, 7);
  track(fit_prior_em(two_persona_users(dict.tensor, dict.prior, 1000, 8), dict.tensor, {.max_iters = 100}).trace);

  // Recovery of a (0.3, 0.7) prior over two well-separated personas.
  std::vector<double> probs;
  for (int p = 0; p < 2; ++p)
    for (int x = 0; x < 10; ++x) {
      const std::vector<double> row = p == 0 ? std::vector<double>{0.8, 0.15, 0.05}
                                             : std::vector<double>{0.05, 0.15, 0.8};
      probs.insert(probs.end(), row.begin(), row.end());
    }
  const auto t = LikelihoodTensor::from_probs(2, 10, 3, probs);
  const auto fit = fit_prior_em(two_persona_users(t, PersonaPrior({0.3, 0.7}), 5000, 9), t, {.max_iters = 500, .tol = 1e-9});
  track(fit.trace);
  const double w0 = fit.prior.weights()[0], w1 = fit.prior.weights()[1];

  out.check(worst_drop <= 1e-9, fmt("log-likelihood dropped by %.3g", worst_drop));
  out.check(std::abs(w0 - 0.3) <= 0.03 && std::abs(w1 - 0.7) <= 0.03, fmt("fitted prior (%.4f, %.4f)", w0, w1));
  if (out.pass) out.detail = fmt("max drop %.2g, fitted prior (%.4f, ", worst_drop, w0) + fmt("%.4f)", w1);
  return out;
}

// GRM/GPCM probabilities from the oracle, used for simulation and checks.
std::vector<double> oracle_irt(IrtModelKind kind, const IrtItem& item, const std::vector<double>& theta) {
  double lin = 0.0;
  for (std::size_t d = 0; d < item.a.size(); ++d) lin += item.a[d] * theta[d];
  std::vector<double> c = item.thresholds;
  if (!is_multidimensional(kind))
    for (double& v : c) v *= item.a[0];
  return is_graded(kind) ? oracle::graded_probs(lin, c) : oracle::partial_credit_probs(lin, c);
}

Outcome cat_correctness() {
  Outcome out;
  // (a) hand example
  const auto hand = irt_category_probs(IrtModelKind::GRM, IrtItem{{1.0}, {-1.0, 0.0, 1.0}}, std::vector<double>{0.0});
  const std::vector<double> want = {0.2689, 0.2311, 0.2311, 0.2689};
  double hand_err = 0.0;
  for (std::size_t k = 0; k < 4; ++k) hand_err = std::max(hand_err, std::abs(hand[k] - want[k]));
  out.check(hand_err <= 1e-4, fmt("hand example off by %.3g", hand_err));

  // (b) Fisher information against central differences
  std::mt19937_64 g(4000);
  std::uniform_real_distribution<double> ua(0.3, 2.5), ub(-2.0, 2.0);
  std::normal_distribution<double> z;
  double fisher_err = 0.0;
  const double h = 1e-5;
  for (int draw = 0; draw < 1000; ++draw) {
    const auto kind = draw % 2 == 0 ? IrtModelKind::GRM : IrtModelKind::GPCM;
    const std::size_t K = 2 + g() % 4;
    IrtItem item{{ua(g)}, {}};
    for (std::size_t k = 0; k + 1 < K; ++k) item.thresholds.push_back(ub(g));
    if (is_graded(kind)) std::sort(item.thresholds.begin(), item.thresholds.end());
    const double theta = 1.5 * z(g);
    const auto p = oracle_irt(kind, item, {theta});
    const auto hi = oracle_irt(kind, item, {theta + h}), lo = oracle_irt(kind, item, {theta - h});
    double fd = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double d = (hi[k] - lo[k]) / (2 * h);
      fd += d * d / p[k];
    }
    fisher_err = std::max(fisher_err, std::abs(fisher_information(kind, item, std::vector<double>{theta})[0] - fd));
  }
  out.check(fisher_err <= 1e-6, fmt("Fisher information off by %.3g", fisher_err));

  // (c) one-dimensional reductions
  double reduce_err = 0.0;
  for (int draw = 0; draw < 1000; ++draw) {
    IrtItem item{{ua(g)}, {ub(g), ub(g), ub(g)}};
    std::sort(item.thresholds.begin(), item.thresholds.end());
    IrtItem multi = item;
    for (double& c : multi.thresholds) c *= item.a[0];
    const std::vector<double> theta = {2.0 * z(g)};
    for (auto [uni, mul] : {std::pair{IrtModelKind::GRM, IrtModelKind::MGRM},
                            std::pair{IrtModelKind::GPCM, IrtModelKind::MGPCM}}) {
      const auto a = irt_category_probs(uni, item, theta), b = irt_category_probs(mul, multi, theta);
      for (std::size_t k = 0; k < 4; ++k) reduce_err = std::max(reduce_err, std::abs(a[k] - b[k]));
    }
  }
  out.check(reduce_err <= 1e-12, fmt("D=1 reduction off by %.3g", reduce_err));

  // (d) recovery and (e) monotone EM
  const auto t0 = std::chrono::steady_clock::now();
  std::uniform_real_distribution<double> a_dist(0.8, 2.0);
  std::vector<IrtItem> truth;
  for (int x = 0; x < 30; ++x) {
    IrtItem it{{a_dist(g)}, {z(g), z(g), z(g)}};
    std::sort(it.thresholds.begin(), it.thresholds.end());
    truth.push_back(it);
  }
  const std::size_t users = 5000;
  AnswerMatrix data{users, truth.size(), std::vector<Answer>(users * truth.size())};
  std::uniform_real_distribution<double> u01;
  for (std::size_t j = 0; j < users; ++j) {
    const double theta = z(g);
    for (std::size_t x = 0; x < truth.size(); ++x) {
      const auto p = oracle_irt(IrtModelKind::GRM, truth[x], {theta});
      double r = u01(g), acc = 0.0;
      std::size_t k = 0;
      for (; k + 1 < p.size(); ++k) {
        acc += p[k];
        if (r < acc) break;
      }
      data.values[j * truth.size() + x] = static_cast<Answer>(k);
    }
  }
  const auto fit = fit_irt_em(data, 4, IrtModelKind::GRM, default_grid(IrtModelKind::GRM),
                              {.threads = std::max(1u, std::thread::hardware_concurrency())});
  const double fit_seconds = seconds_since(t0);
  std::vector<double> a_true, a_fit;
  double b_err = 0.0;
  for (std::size_t x = 0; x < truth.size(); ++x) {
    a_true.push_back(truth[x].a[0]);
    a_fit.push_back(fit.bank.item(x).a[0]);
    for (std::size_t k = 0; k < 3; ++k) b_err += std::abs(fit.bank.item(x).thresholds[k] - truth[x].thresholds[k]);
  }
  b_err /= 90.0;
  const double ma = std::accumulate(a_true.begin(), a_true.end(), 0.0) / 30.0;
  const double mf = std::accumulate(a_fit.begin(), a_fit.end(), 0.0) / 30.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < 30; ++i) {
    sxy += (a_true[i] - ma) * (a_fit[i] - mf);
    sxx += (a_true[i] - ma) * (a_true[i] - ma);
    syy += (a_fit[i] - mf) * (a_fit[i] - mf);
  }
  const double r = sxy / std::sqrt(sxx * syy);
  out.check(r > 0.9, fmt("discrimination correlation %.3f", r));
  out.check(b_err < 0.15, fmt("mean threshold error %.3f", b_err));
  out.check(fit_seconds < 180.0, fmt("recovery fit took %.1f s", fit_seconds));
  double drop = 0.0;
  for (std::size_t i = 1; i < fit.log_likelihood.size(); ++i)
    drop = std::max(drop, fit.log_likelihood[i - 1] - fit.log_likelihood[i]);
  out.check(drop <= 1e-9 * std::abs(fit.log_likelihood.front()),
            fmt("marginal log-likelihood dropped by %.3g", drop));
  if (out.pass)
    out.detail = fmt("hand %.1g, ", hand_err) + fmt("Fisher %.1g, ", fisher_err) + fmt("D=1 %.1g, ", reduce_err) +
                 fmt("r=%.3f, ", r) + fmt("mean |b err| %.3f, ", b_err) + fmt("fit %.1f s", fit_seconds);
  return out;
}

Outcome cat_vs_persona(const ResultTable& table) {
  Outcome out;
  const auto* g = table.find("greedy", 10, "log_loss");
  const auto* c = table.find("cat_grm", 10, "log_loss");
  if (g == nullptr || c == nullptr) {
    out.check(false, "missing cells at T=10");
    return out;
  }
  const double t = paired_t(table.user_scores.at(user_score_key("greedy", 10, "log_loss")),
                            table.user_scores.at(user_score_key("cat_grm", 10, "log_loss")));
  out.check(g->mean < c->mean, fmt("greedy %.4f vs cat_grm %.4f", g->mean, c->mean));
  out.check(t >= 2.0, fmt("paired t %.2f < 2", t));
  if (out.pass) out.detail = fmt("greedy %.4f vs cat_grm %.4f", g->mean, c->mean) + fmt(", paired t=%.1f", t);
  return out;
}

Outcome transform_identities() {
  Outcome out;
  std::mt19937_64 g(5000);
  const std::size_t n = 12, m = 6, K = 4;
  const auto t = LikelihoodTensor::from_probs(n, m, K, oracle::flatten(oracle::random_mu(g, n, m, K)));
  const PersonaPrior prior(oracle::random_simplex(g, n));

  double temp_err = 0.0;
  const auto same = temperature_scale(t, 1.0);
  for (std::size_t i = 0; i < t.probs().size(); ++i) temp_err = std::max(temp_err, std::abs(same.probs()[i] - t.probs()[i]));
  out.check(temp_err <= 1e-12, fmt("temperature 1 changes entries by %.3g", temp_err));

  std::vector<std::size_t> modes(n * m);
  for (auto& v : modes) v = g() % K;
  const auto noisy = deterministic_with_noise(modes, n, m, 0.75, K);
  double noise_err = 0.0;
  for (double v : noisy.probs()) noise_err = std::max(noise_err, std::abs(v - 0.25));
  out.check(noise_err <= 1e-12, fmt("epsilon 0.75 rows off uniform by %.3g", noise_err));

  const auto c = cluster_dictionary(t, prior, {.n_clusters = n, .prune_mass = 0.0, .seed = 6});
  double ident_err = 0.0, marg_err = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    const auto cl = static_cast<std::size_t>(c.assignment[p]);
    ident_err = std::max(ident_err, std::abs(c.prior.weights()[cl] - prior.weights()[p]));
    for (std::size_t x = 0; x < m; ++x)
      for (std::size_t k = 0; k < K; ++k) ident_err = std::max(ident_err, std::abs(c.tensor.prob(cl, x, k) - t.prob(p, x, k)));
  }
  for (std::size_t x = 0; x < m; ++x)
    for (std::size_t k = 0; k < K; ++k) {
      double a = 0.0, b = 0.0;
      for (std::size_t p = 0; p < n; ++p) a += prior.weights()[p] * t.prob(p, x, k);
      for (std::size_t p = 0; p < c.tensor.n_personas(); ++p) b += c.prior.weights()[p] * c.tensor.prob(p, x, k);
      marg_err = std::max(marg_err, std::abs(a - b));
    }
  out.check(c.tensor.n_personas() == n, "clustering changed the persona count");
  out.check(ident_err <= 1e-12, fmt("clustering identity off by %.3g", ident_err));
  out.check(marg_err <= 1e-10, fmt("prior-mixture marginal off by %.3g", marg_err));
  if (out.pass)
    out.detail = fmt("temperature %.1g, ", temp_err) + fmt("noise %.1g, ", noise_err) +
                 fmt("cluster identity %.1g, ", ident_err) + fmt("marginal %.1g", marg_err);
  return out;
}

class MockEndpoint {
 public:
  explicit MockEndpoint(std::string reply) : reply_(std::move(reply)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request&, httplib::Response& res) {
      ++calls;
      const nlohmann::json body = {{"choices", {{{"message", {{"role", "assistant"}, {"content", reply_}}}}}}};
      res.set_content(body.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockEndpoint() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  std::atomic<int> calls{0};

 private:
  std::string reply_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

Outcome determinism_and_plumbing() {
  Outcome out;
  const fs::path dir = fs::temp_directory_path() / "baq_acceptance_plumbing";
  fs::remove_all(dir);
  fs::create_directories(dir);

  // Same config at several thread counts.
  ExperimentConfig c = synthetic_config();
  c.synthetic->n_users = 600;
  c.record_user_scores = true;
  c.mc_samples = 500;
  std::string reference;
  for (std::size_t threads : {1, 2, 5}) {
    c.threads = threads;
    const std::string dump = to_json(run_experiment(c), false).dump();
    if (reference.empty())
      reference = dump;
    else
      out.check(dump == reference, "result table differs at " + std::to_string(threads) + " threads");
  }

  // Tensor and response round-trips.
  const auto dict = generate_synthetic_dictionary(20, 15, 4, 0.5, 21);
  save_tensor(dict.tensor, (dir / "t.jsonl").string());
  out.check(load_tensor((dir / "t.jsonl").string()).tensor == dict.tensor, "tensor JSONL round-trip changed bits");
  out.check(load_tensor_fast((dir / "t.jsonl").string()).tensor == dict.tensor, "tensor sidecar round-trip changed bits");
  auto users = generate_synthetic_users(dict.prior, dict.tensor, 300, 22).data;
  for (std::size_t i = 0; i < users.answers.values.size(); i += 7) users.answers.values[i] = kMissing;
  save_responses(users, (dir / "r.csv").string());
  out.check(load_responses((dir / "r.csv").string()) == users, "response round-trip changed the data");

  // Elicitation against a local endpoint, then again from a warm cache.
  MockEndpoint endpoint("[0.55, 0.25, 0.15, 0.05]");
  ApiConfig api;
  api.base_url = endpoint.url();
  api.retries = 0;
  api.timeout_seconds = 10;
  std::vector<PersonaProfile> personas;
  for (int i = 0; i < 4; ++i) personas.push_back({"persona" + std::to_string(i), "Profile text " + std::to_string(i)});
  std::vector<QuestionSpec> questions;
  for (int i = 0; i < 5; ++i) questions.push_back({"item" + std::to_string(i), "Question " + std::to_string(i), 4, {}});
  const auto cache = (dir / "cache").string();
  const auto first = elicit_tensor(personas, questions, api, cache);
  const int cold_calls = endpoint.calls.load();
  const auto second = elicit_tensor(personas, questions, api, cache);
  out.check(cold_calls == 20, "cold run made " + std::to_string(cold_calls) + " calls");
  out.check(second.stats.network_calls == 0 && endpoint.calls.load() == cold_calls,
            "warm cache still called the endpoint");
  out.check(second.bundle.tensor == first.bundle.tensor, "warm-cache tensor differs");
  save_tensor(first.bundle, (dir / "elicited.jsonl").string());
  out.check(load_tensor((dir / "elicited.jsonl").string()).tensor == first.bundle.tensor,
            "elicited tensor does not reload");
  fs::remove_all(dir);
  if (out.pass)
    out.detail = "identical tables at 1/2/5 threads, bitwise round-trips, " + std::to_string(cold_calls) +
                 " cold calls then 0 warm";
  return out;
}

void report(int number, const std::string& name, const std::function<Outcome()>& run, bool& all) {
  Outcome o;
  try {
    o = run();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  all = all && o.pass;
  std::printf("criterion %d %-28s %s  %s\n", number, name.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
  std::fflush(stdout);
}

}  // namespace

int main() {
  bool all = true;
  report(1, "exact inference", exact_inference, all);
  report(2, "lookahead", lookahead_oracle, all);
  report(3, "non-adaptive estimator", nonadaptive_estimator, all);

  ResultTable synthetic;
  double synthetic_seconds = 0.0;
  std::string synthetic_error;
  try {
    const auto t0 = std::chrono::steady_clock::now();
    synthetic = run_experiment(synthetic_config());
    synthetic_seconds = seconds_since(t0);
  } catch (const std::exception& e) {
    synthetic_error = e.what();
  }
  auto needs_run = [&](const std::function<Outcome()>& f) {
    return [&, f] {
      if (!synthetic_error.empty()) return Outcome{false, "synthetic run failed: " + synthetic_error};
      return f();
    };
  };
  report(4, "synthetic reproduction", needs_run([&] { return synthetic_reproduction(synthetic, synthetic_seconds); }), all);
  report(5, "prior EM", prior_em, all);
  report(6, "CAT correctness", cat_correctness, all);
  report(7, "CAT vs persona greedy", needs_run([&] { return cat_vs_persona(synthetic); }), all);
  report(8, "transform identities", transform_identities, all);
  report(9, "determinism and plumbing", determinism_and_plumbing, all);
  return all ? 0 : 1;
}
