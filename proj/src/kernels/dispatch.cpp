#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <limits>

#include "baq/kernels.hpp"

namespace baq::kernels {

#ifndef BAQ_HAVE_AVX2
namespace avx2 {
const KernelTable* table() { return nullptr; }
}  // namespace avx2
#endif
#ifndef BAQ_HAVE_NEON
namespace neon {
const KernelTable* table() { return nullptr; }
}  // namespace neon
#endif

namespace {

bool cpu_supports(Backend b) {
  switch (b) {
    case Backend::Scalar:
      return true;
    case Backend::Avx2:
#if defined(BAQ_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Backend::Neon:
#if defined(BAQ_HAVE_NEON)
      return true;  // mandatory on aarch64
#else
      return false;
#endif
  }
  return false;
}

std::atomic<const KernelTable*> g_active{nullptr};
std::atomic<Backend> g_backend{Backend::Scalar};

}  // namespace

std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::Scalar: return "scalar";
    case Backend::Avx2: return "avx2";
    case Backend::Neon: return "neon";
  }
  return "unknown";
}

bool backend_available(Backend b) {
  switch (b) {
    case Backend::Scalar: return true;
    case Backend::Avx2: return avx2::table() != nullptr && cpu_supports(b);
    case Backend::Neon: return neon::table() != nullptr && cpu_supports(b);
  }
  return false;
}

Backend detect_backend() {
  if (const char* env = std::getenv("BAQ_KERNELS"); env && std::strcmp(env, "scalar") == 0)
    return Backend::Scalar;
  if (backend_available(Backend::Avx2)) return Backend::Avx2;
  if (backend_available(Backend::Neon)) return Backend::Neon;
  return Backend::Scalar;
}

const KernelTable& table_for(Backend b) {
  switch (b) {
    case Backend::Avx2:
      if (backend_available(b)) return *avx2::table();
      break;
    case Backend::Neon:
      if (backend_available(b)) return *neon::table();
      break;
    case Backend::Scalar:
      break;
  }
  return scalar::table();
}

const KernelTable& active() {
  const KernelTable* t = g_active.load(std::memory_order_acquire);
  if (t) return *t;
  Backend b = detect_backend();
  g_backend.store(b, std::memory_order_relaxed);
  t = &table_for(b);
  g_active.store(t, std::memory_order_release);
  return *t;
}

Backend active_backend() {
  active();
  return g_backend.load(std::memory_order_relaxed);
}

void set_active_backend(Backend b) {
  if (!backend_available(b)) b = Backend::Scalar;
  g_backend.store(b, std::memory_order_relaxed);
  g_active.store(&table_for(b), std::memory_order_release);
}

double log_sum_exp(std::span<const double> x) {
  const double m = max(x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

double normalize_log_weights(std::span<double> log_w, std::span<double> w) {
  const double m = max(log_w);
  if (m == -std::numeric_limits<double>::infinity() || std::isnan(m)) return m;
  for (std::size_t i = 0; i < log_w.size(); ++i) w[i] = std::exp(log_w[i] - m);
  const double s = sum(w);
  const double lse = m + std::log(s);
  const double inv = 1.0 / s;
  scale(w, inv);
  for (double& v : log_w) v -= lse;
  return lse;
}

}  // namespace baq::kernels
