#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <vector>

#include "baq/error.hpp"
#include "baq/irt.hpp"
#include "oracles.hpp"

using namespace baq;

namespace {

// Category probabilities from the test oracle, for any of the four models.
std::vector<double> oracle_probs(IrtModelKind kind, const IrtItem& item, const std::vector<double>& theta) {
  double lin = 0.0;
  for (std::size_t d = 0; d < item.a.size(); ++d) lin += item.a[d] * theta[d];
  std::vector<double> c = item.thresholds;
  if (!is_multidimensional(kind))
    for (double& v : c) v *= item.a[0];
  return is_graded(kind) ? oracle::graded_probs(lin, c) : oracle::partial_credit_probs(lin, c);
}

IrtItem random_item(std::mt19937_64& g, IrtModelKind kind, std::size_t D, std::size_t K) {
  std::uniform_real_distribution<double> ua(0.3, 2.5), ub(-2.0, 2.0);
  IrtItem it;
  for (std::size_t d = 0; d < D; ++d) it.a.push_back(ua(g));
  for (std::size_t k = 0; k + 1 < K; ++k) it.thresholds.push_back(ub(g));
  if (is_graded(kind)) std::sort(it.thresholds.begin(), it.thresholds.end());
  return it;
}

AnswerMatrix simulate(IrtModelKind kind, const std::vector<IrtItem>& items, std::size_t D, std::size_t users,
                      std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u;
  AnswerMatrix out{users, items.size(), std::vector<Answer>(users * items.size())};
  for (std::size_t j = 0; j < users; ++j) {
    std::vector<double> theta(D);
    for (double& v : theta) v = z(g);
    for (std::size_t x = 0; x < items.size(); ++x) {
      const auto p = oracle_probs(kind, items[x], theta);
      double r = u(g), acc = 0.0;
      std::size_t k = 0;
      for (; k + 1 < p.size(); ++k) {
        acc += p[k];
        if (r < acc) break;
      }
      out.values[j * items.size() + x] = static_cast<Answer>(k);
    }
  }
  return out;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i] / n, my += y[i] / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST_CASE("graded hand example") {
  const IrtItem item{{1.0}, {-1.0, 0.0, 1.0}};
  const auto p = irt_category_probs(IrtModelKind::GRM, item, std::vector<double>{0.0});
  const std::vector<double> expected = {0.2689, 0.2311, 0.2311, 0.2689};
  for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(p[k] - expected[k]) <= 1e-4);
}

TEST_CASE("partial credit at the step values is uniform") {
  const IrtItem item{{1.7}, {0.4, 0.4, 0.4}};
  const auto p = irt_category_probs(IrtModelKind::GPCM, item, std::vector<double>{0.4});
  for (double v : p) CHECK(std::abs(v - 0.25) <= 1e-14);
}

TEST_CASE("probabilities match the oracle") {
  std::mt19937_64 g(101);
  std::normal_distribution<double> z;
  for (auto kind : {IrtModelKind::GRM, IrtModelKind::GPCM, IrtModelKind::MGRM, IrtModelKind::MGPCM}) {
    const std::size_t D = is_multidimensional(kind) ? 3 : 1;
    for (int trial = 0; trial < 200; ++trial) {
      const auto item = random_item(g, kind, D, 2 + g() % 4);
      std::vector<double> theta(D);
      for (double& v : theta) v = 2.0 * z(g);
      const auto got = irt_category_probs(kind, item, theta);
      const auto want = oracle_probs(kind, item, theta);
      double sum = 0.0;
      for (std::size_t k = 0; k < got.size(); ++k) {
        CHECK(std::abs(got[k] - want[k]) <= 1e-13);
        sum += got[k];
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("multidimensional models with one dimension reduce exactly") {
  std::mt19937_64 g(103);
  std::normal_distribution<double> z;
  for (int trial = 0; trial < 200; ++trial) {
    const auto item = random_item(g, IrtModelKind::GRM, 1, 4);
    IrtItem multi = item;
    for (double& c : multi.thresholds) c *= item.a[0];
    const std::vector<double> theta = {2.0 * z(g)};
    const auto grm = irt_category_probs(IrtModelKind::GRM, item, theta);
    const auto mgrm = irt_category_probs(IrtModelKind::MGRM, multi, theta);
    const auto gpcm = irt_category_probs(IrtModelKind::GPCM, item, theta);
    const auto mgpcm = irt_category_probs(IrtModelKind::MGPCM, multi, theta);
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(std::abs(grm[k] - mgrm[k]) <= 1e-12);
      CHECK(std::abs(gpcm[k] - mgpcm[k]) <= 1e-12);
    }
  }
}

TEST_CASE("fisher information matches finite differences") {
  std::mt19937_64 g(107);
  std::normal_distribution<double> z;
  const double h = 1e-5;
  for (auto kind : {IrtModelKind::GRM, IrtModelKind::GPCM, IrtModelKind::MGRM, IrtModelKind::MGPCM}) {
    const std::size_t D = is_multidimensional(kind) ? 2 : 1;
    for (int trial = 0; trial < 250; ++trial) {
      const auto item = random_item(g, kind, D, 2 + g() % 4);
      std::vector<double> theta(D);
      for (double& v : theta) v = 1.5 * z(g);
      const auto p = oracle_probs(kind, item, theta);
      std::vector<std::vector<double>> grad(p.size(), std::vector<double>(D));
      for (std::size_t d = 0; d < D; ++d) {
        auto hi = theta, lo = theta;
        hi[d] += h;
        lo[d] -= h;
        const auto ph = oracle_probs(kind, item, hi), pl = oracle_probs(kind, item, lo);
        for (std::size_t k = 0; k < p.size(); ++k) grad[k][d] = (ph[k] - pl[k]) / (2 * h);
      }
      const auto info = fisher_information(kind, item, theta);
      for (std::size_t i = 0; i < D; ++i)
        for (std::size_t j = 0; j < D; ++j) {
          double want = 0.0;
          for (std::size_t k = 0; k < p.size(); ++k) want += grad[k][i] * grad[k][j] / p[k];
          CHECK(std::abs(info[i * D + j] - want) <= 1e-6);
        }
      CHECK(info[0] >= 0.0);
    }
  }
}

TEST_CASE("information vanishes as discrimination goes to zero") {
  const IrtItem item{{1e-6}, {-1.0, 0.0, 1.0}};
  CHECK(fisher_information(IrtModelKind::GRM, item, std::vector<double>{0.3})[0] < 1e-11);
}

TEST_CASE("bank validation") {
  CHECK_THROWS_AS(IrtItemBank(IrtModelKind::GRM, 1, 3, {IrtItem{{1.0}, {0.5, -0.5}}}), Error);
  CHECK_THROWS_AS(IrtItemBank(IrtModelKind::GRM, 1, 3, {IrtItem{{0.0}, {-0.5, 0.5}}}), Error);
  CHECK_THROWS_AS(IrtItemBank(IrtModelKind::GPCM, 1, 3, {IrtItem{{1.0}, {0.5}}}), Error);
  CHECK_NOTHROW(IrtItemBank(IrtModelKind::GPCM, 1, 3, {IrtItem{{1.0}, {0.5, -0.5}}}));
  for (auto k : {IrtModelKind::GRM, IrtModelKind::GPCM, IrtModelKind::MGRM, IrtModelKind::MGPCM})
    CHECK(parse_irt_kind(to_string(k)) == k);
}

TEST_CASE("grid") {
  const TraitGrid grid(GridConfig{4.0, 41, 1});
  CHECK(grid.size() == 41);
  CHECK(grid.coord(0)[0] == -4.0);
  CHECK(grid.coord(0)[40] == 4.0);
  CHECK(grid.coord(0)[20] == 0.0);
  double total = 0.0, mean = 0.0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    total += grid.prior()[g];
    mean += grid.prior()[g] * grid.coord(0)[g];
  }
  CHECK(std::abs(total - 1.0) <= 1e-12);
  CHECK(std::abs(mean) <= 1e-15);
  const TraitGrid cube(default_grid(IrtModelKind::MGRM));
  CHECK(cube.size() == 729);
  CHECK(cube.point(1) == std::vector<double>{-4.0, -4.0, -3.0});
}

TEST_CASE("cat updates and predictions") {
  const IrtItemBank bank(IrtModelKind::GRM, 1, 3,
                         {IrtItem{{1.5}, {-0.5, 0.5}}, IrtItem{{1e-9}, {-0.5, 0.5}}, IrtItem{{0.8}, {-1.0, 1.2}}});
  const CatModel model(bank, TraitGrid(GridConfig{4.0, 41, 1}));
  const CatSession start(model);

  // A zero-discrimination item leaves the weights where they were.
  const CatModel flat_model(IrtItemBank(IrtModelKind::MGRM, 1, 3, {IrtItem{{0.0}, {-0.5, 0.5}}}),
                            TraitGrid(GridConfig{4.0, 41, 1}));
  const CatSession flat_start(flat_model);
  const auto flat = cat_update(flat_start, 0, 2, flat_model);
  for (std::size_t g = 0; g < 41; ++g) CHECK(std::abs(flat.weights()[g] - flat_start.weights()[g]) <= 1e-12);

  const auto up = cat_update(cat_update(start, 0, 2, model), 2, 2, model);
  CHECK(posterior_mean(up, model)[0] > 0.0);
  const auto swapped = cat_update(cat_update(start, 2, 2, model), 0, 2, model);
  for (std::size_t g = 0; g < 41; ++g) CHECK(std::abs(up.weights()[g] - swapped.weights()[g]) <= 1e-12);
  CHECK_THROWS_AS(cat_update(up, 0, 1, model), Error);

  // Prior predictive is the prior-weighted average over the grid.
  const auto pred = cat_predict(start, 2, model);
  const TraitGrid& grid = model.grid();
  for (std::size_t k = 0; k < 3; ++k) {
    double want = 0.0;
    for (std::size_t g = 0; g < grid.size(); ++g)
      want += grid.prior()[g] *
              irt_category_probs(IrtModelKind::GRM, bank.item(2), std::vector<double>{grid.coord(0)[g]})[k];
    CHECK(std::abs(pred[k] - want) <= 1e-14);
  }

  // Finer grid gives nearly the same prior predictive.
  const CatModel fine(bank, TraitGrid(GridConfig{4.0, 81, 1}));
  const auto fine_pred = cat_predict(CatSession(fine), 2, fine);
  for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(pred[k] - fine_pred[k]) <= 2e-3);
}

TEST_CASE("cat selection") {
  const IrtItemBank bank(IrtModelKind::GRM, 1, 3,
                         {IrtItem{{1e-9}, {-0.5, 0.5}}, IrtItem{{1.8}, {-0.3, 0.4}}, IrtItem{{0.6}, {-2.0, 2.0}}});
  const CatModel model(bank, TraitGrid(GridConfig{4.0, 41, 1}));
  const CatSession s(model);
  const std::vector<std::size_t> one = {2}, all = {0, 1, 2};
  for (auto c : {CatCriterion::MFI, CatCriterion::MEPV, CatCriterion::A_OPT}) {
    CHECK(cat_select(s, one, model, c) == 2);
    CHECK(cat_select(s, all, model, c) == 1);
    CHECK(parse_cat_criterion(to_string(c)) == c);
  }
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(std::abs(expected_posterior_variance(s, i, model) - expected_posterior_trace(s, i, model)) <= 1e-12);

  // Expected posterior variance recomputed by explicit hypothetical updates.
  const auto pred = cat_predict(s, 1, model);
  double want = 0.0;
  for (std::size_t k = 0; k < 3; ++k) want += pred[k] * posterior_covariance(cat_update(s, 1, k, model), model)[0];
  CHECK(std::abs(expected_posterior_variance(s, 1, model) - want) <= 1e-12);
  // The flat item leaves the variance at the prior value.
  CHECK(std::abs(expected_posterior_variance(s, 0, model) - posterior_covariance(s, model)[0]) <= 1e-9);
}

TEST_CASE("graded calibration recovers parameters and never lowers the likelihood") {
  std::mt19937_64 g(109);
  std::uniform_real_distribution<double> ua(0.8, 2.0);
  std::normal_distribution<double> z;
  std::vector<IrtItem> truth;
  for (int x = 0; x < 15; ++x) {
    IrtItem it{{ua(g)}, {z(g), z(g), z(g)}};
    std::sort(it.thresholds.begin(), it.thresholds.end());
    truth.push_back(it);
  }
  const auto data = simulate(IrtModelKind::GRM, truth, 1, 2000, 5);
  const auto fit = fit_irt_em(data, 4, IrtModelKind::GRM, default_grid(IrtModelKind::GRM), {.threads = 4});
  for (std::size_t i = 1; i < fit.log_likelihood.size(); ++i)
    CHECK(fit.log_likelihood[i] >= fit.log_likelihood[i - 1] - 1e-6);
  std::vector<double> a_true, a_fit;
  double b_err = 0.0;
  for (std::size_t x = 0; x < truth.size(); ++x) {
    a_true.push_back(truth[x].a[0]);
    a_fit.push_back(fit.bank.item(x).a[0]);
    for (std::size_t k = 0; k < 3; ++k) b_err += std::abs(fit.bank.item(x).thresholds[k] - truth[x].thresholds[k]);
  }
  CHECK(pearson(a_true, a_fit) > 0.85);
  CHECK(b_err / 45.0 < 0.2);

  const auto again = fit_irt_em(data, 4, IrtModelKind::GRM, default_grid(IrtModelKind::GRM), {.threads = 1});
  CHECK(again.log_likelihood == fit.log_likelihood);
}

TEST_CASE("partial credit and multidimensional fits climb") {
  std::mt19937_64 g(113);
  for (auto kind : {IrtModelKind::GPCM, IrtModelKind::MGRM, IrtModelKind::MGPCM}) {
    const std::size_t D = is_multidimensional(kind) ? 2 : 1;
    std::vector<IrtItem> truth;
    for (int x = 0; x < 8; ++x) truth.push_back(random_item(g, kind, D, 3));
    const auto data = simulate(kind, truth, D, 400, 7);
    const GridConfig grid{4.0, is_multidimensional(kind) ? 9u : 41u, D};
    const auto fit = fit_irt_em(data, 3, kind, grid, {.max_iters = 15, .threads = 2, .seed = 3});
    REQUIRE(fit.log_likelihood.size() >= 2);
    for (std::size_t i = 1; i < fit.log_likelihood.size(); ++i)
      CHECK(fit.log_likelihood[i] >= fit.log_likelihood[i - 1] - 1e-6);
  }
}

TEST_CASE("fit save and load") {
  const auto bank = initial_bank(IrtModelKind::MGPCM, 2, 3, 4, 9);
  IrtFit fit{bank, {3.0, 7, 2}, {-10.5, -9.25}, 2, true};
  const auto path = (std::filesystem::temp_directory_path() / "baq_irt_fit_test.json").string();
  save_irt_fit(fit, path);
  const auto back = load_irt_fit(path);
  CHECK(back.bank.kind() == IrtModelKind::MGPCM);
  CHECK(back.bank.dims() == 2);
  CHECK(back.grid.points == 7);
  CHECK(back.grid.theta_max == 3.0);
  CHECK(back.log_likelihood == fit.log_likelihood);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.bank.item(i).a == bank.item(i).a);
    CHECK(back.bank.item(i).thresholds == bank.item(i).thresholds);
  }
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_irt_fit(path), Error);
}
