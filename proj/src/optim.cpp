#include "baq/optim.hpp"

#include <algorithm>
#include <cmath>

#include "baq/error.hpp"

namespace baq {

namespace {

double inf_norm(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void reset_identity(std::vector<double>& h, std::size_t n) {
  std::fill(h.begin(), h.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i) h[i * n + i] = 1.0;
}

}  // namespace

BfgsResult minimize_bfgs(const DifferentiableObjective& f, std::vector<double> x0,
                         const BfgsOptions& options) {
  const std::size_t n = x0.size();
  BfgsResult out;
  std::vector<double> g(n), g_new(n), x_new(n), dir(n), s(n), y(n), hy(n);
  out.x = std::move(x0);
  out.value = f(out.x, g);
  if (!std::isfinite(out.value)) fail(ErrorCode::InvalidArgument, "objective is not finite at x0");
  if (n == 0) {
    out.converged = true;
    return out;
  }

  std::vector<double> h(n * n);
  reset_identity(h, n);
  bool fresh = true;

  for (std::size_t iter = 0; iter < options.max_iters; ++iter) {
    out.iterations = iter;
    if (inf_norm(g) <= options.grad_tol * std::max(1.0, std::abs(out.value))) {
      out.converged = true;
      return out;
    }
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc -= h[i * n + j] * g[j];
      dir[i] = acc;
    }
    double slope = dot(g, dir);
    if (!(slope < 0.0)) {
      reset_identity(h, n);
      for (std::size_t i = 0; i < n; ++i) dir[i] = -g[i];
      slope = dot(g, dir);
      fresh = true;
    }

    // First step of a fresh Hessian estimate is scaled to unit length.
    double step = fresh ? std::min(1.0, 1.0 / std::max(inf_norm(dir), 1e-300)) : 1.0;
    double value_new = 0.0;
    bool accepted = false;
    for (int tries = 0; tries < 60; ++tries) {
      for (std::size_t i = 0; i < n; ++i) x_new[i] = out.x[i] + step * dir[i];
      value_new = f(x_new, g_new);
      if (std::isfinite(value_new) && value_new <= out.value + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (fresh) return out;  // no descent possible from here
      reset_identity(h, n);
      fresh = true;
      continue;
    }

    for (std::size_t i = 0; i < n; ++i) {
      s[i] = x_new[i] - out.x[i];
      y[i] = g_new[i] - g[i];
    }
    const double sy = dot(s, y);
    const double improvement = out.value - value_new;
    out.x.swap(x_new);
    g.swap(g_new);
    out.value = value_new;
    if (sy > 1e-12 * std::sqrt(dot(s, s) * dot(y, y))) {
      if (fresh) {
        // Shanno–Phua scaling of the initial inverse Hessian.
        const double scale = sy / dot(y, y);
        for (double& v : h) v *= scale;
      }
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += h[i * n + j] * y[j];
        hy[i] = acc;
      }
      const double yhy = dot(y, hy);
      const double rho = 1.0 / sy;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          h[i * n + j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
      fresh = false;
    }
    if (improvement <= 1e-15 * std::max(1.0, std::abs(out.value))) {
      out.converged = true;
      out.iterations = iter + 1;
      return out;
    }
  }
  out.iterations = options.max_iters;
  return out;
}

}  // namespace baq
