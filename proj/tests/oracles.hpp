#pragma once

// Reference computations used only by tests. They work in plain linear
// space on nested vectors and never call into the library, so agreement
// with the optimized code is meaningful.

#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <utility>
#include <vector>

namespace oracle {

using Mu = std::vector<std::vector<std::vector<double>>>;  // [persona][question][category]

struct Obs {
  std::size_t question;
  std::size_t answer;
};

inline double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

inline double gini(const std::vector<double>& p) {
  double s = 0.0;
  for (double v : p) s += v * v;
  return 1.0 - s;
}

// Visits every full response vector y in K^m.
inline void for_each_response(std::size_t m, std::size_t K,
                              const std::function<void(const std::vector<std::size_t>&)>& f) {
  std::vector<std::size_t> y(m, 0);
  for (;;) {
    f(y);
    std::size_t i = 0;
    while (i < m && ++y[i] == K) y[i++] = 0;
    if (i == m) return;
  }
}

inline bool consistent(const std::vector<std::size_t>& y, const std::vector<Obs>& obs) {
  for (const auto& o : obs)
    if (y[o.question] != o.answer) return false;
  return true;
}

inline double joint(const std::vector<double>& prior, const Mu& mu, std::size_t theta,
                    const std::vector<std::size_t>& y) {
  double p = prior[theta];
  for (std::size_t x = 0; x < y.size(); ++x) p *= mu[theta][x][y[x]];
  return p;
}

// p(theta | obs) by summing the full joint over all response vectors
// consistent with the observations.
inline std::vector<double> posterior(const std::vector<double>& prior, const Mu& mu, const std::vector<Obs>& obs) {
  const std::size_t n = prior.size(), m = mu[0].size(), K = mu[0][0].size();
  std::vector<double> w(n, 0.0);
  for_each_response(m, K, [&](const std::vector<std::size_t>& y) {
    if (!consistent(y, obs)) return;
    for (std::size_t t = 0; t < n; ++t) w[t] += joint(prior, mu, t, y);
  });
  double z = 0.0;
  for (double v : w) z += v;
  for (double& v : w) v /= z;
  return w;
}

// p(Y_x = k | obs) from the full joint.
inline std::vector<double> predictive(const std::vector<double>& prior, const Mu& mu, const std::vector<Obs>& obs,
                                      std::size_t x) {
  const std::size_t n = prior.size(), m = mu[0].size(), K = mu[0][0].size();
  std::vector<double> p(K, 0.0);
  double z = 0.0;
  for_each_response(m, K, [&](const std::vector<std::size_t>& y) {
    if (!consistent(y, obs)) return;
    for (std::size_t t = 0; t < n; ++t) {
      const double j = joint(prior, mu, t, y);
      p[y[x]] += j;
      z += j;
    }
  });
  for (double& v : p) v /= z;
  return p;
}

inline double target_uncertainty(const std::vector<double>& prior, const Mu& mu, const std::vector<Obs>& obs,
                                 const std::vector<std::size_t>& targets, bool gini_kind = false) {
  double u = 0.0;
  for (std::size_t t : targets) {
    const auto p = predictive(prior, mu, obs, t);
    u += gini_kind ? gini(p) : entropy(p);
  }
  return u;
}

// sum_k p(Y_x = k | obs) U(targets | obs, Y_x = k), every term recomputed
// from the joint.
inline double lookahead(const std::vector<double>& prior, const Mu& mu, const std::vector<Obs>& obs, std::size_t x,
                        const std::vector<std::size_t>& targets, bool gini_kind = false) {
  const auto px = predictive(prior, mu, obs, x);
  double e = 0.0;
  for (std::size_t k = 0; k < px.size(); ++k) {
    if (px[k] == 0.0) continue;
    auto next = obs;
    next.push_back({x, k});
    e += px[k] * target_uncertainty(prior, mu, next, targets, gini_kind);
  }
  return e;
}

// E_{Y_design}[U(targets | Y_design)] by enumerating all K^|design| answer
// combinations.
inline double nonadaptive_expected(const std::vector<double>& prior, const Mu& mu,
                                   const std::vector<std::size_t>& design, const std::vector<std::size_t>& targets) {
  const std::size_t K = mu[0][0].size(), n = prior.size();
  double e = 0.0;
  for_each_response(design.size(), K, [&](const std::vector<std::size_t>& ans) {
    std::vector<Obs> obs;
    double p = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      double j = prior[t];
      for (std::size_t i = 0; i < design.size(); ++i) j *= mu[t][design[i]][ans[i]];
      p += j;
    }
    if (p == 0.0) return;
    for (std::size_t i = 0; i < design.size(); ++i) obs.push_back({design[i], ans[i]});
    e += p * target_uncertainty(prior, mu, obs, targets);
  });
  return e;
}

inline double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }

// Graded response: P(Y >= k) = sigmoid(eta_k), eta_k = lin - c_k.
inline std::vector<double> graded_probs(double lin, const std::vector<double>& c) {
  const std::size_t K = c.size() + 1;
  std::vector<double> star(K + 1);
  star[0] = 1.0;
  star[K] = 0.0;
  for (std::size_t k = 1; k < K; ++k) star[k] = sigmoid(lin - c[k - 1]);
  std::vector<double> p(K);
  for (std::size_t k = 0; k < K; ++k) p[k] = star[k] - star[k + 1];
  return p;
}

// Partial credit: P(Y = k) proportional to exp(sum_{s<=k} (lin - c_s)).
inline std::vector<double> partial_credit_probs(double lin, const std::vector<double>& c) {
  const std::size_t K = c.size() + 1;
  std::vector<double> z(K, 0.0);
  for (std::size_t k = 1; k < K; ++k) z[k] = z[k - 1] + lin - c[k - 1];
  double s = 0.0;
  for (double& v : z) s += v = std::exp(v);
  for (double& v : z) v /= s;
  return z;
}

inline Mu random_mu(std::mt19937_64& g, std::size_t n, std::size_t m, std::size_t K) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Mu mu(n, std::vector<std::vector<double>>(m, std::vector<double>(K)));
  for (auto& persona : mu)
    for (auto& row : persona) {
      double s = 0.0;
      for (double& v : row) s += v = u(g);
      for (double& v : row) v /= s;
    }
  return mu;
}

inline std::vector<double> random_simplex(std::mt19937_64& g, std::size_t n) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> w(n);
  double s = 0.0;
  for (double& v : w) s += v = u(g);
  for (double& v : w) v /= s;
  return w;
}

inline std::vector<double> flatten(const Mu& mu) {
  std::vector<double> out;
  for (const auto& persona : mu)
    for (const auto& row : persona) out.insert(out.end(), row.begin(), row.end());
  return out;
}

}  // namespace oracle
