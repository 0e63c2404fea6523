#pragma once

// Data-parallel inner loops shared by the persona posterior, the lookahead
// scorer and the IRT grid posterior. Every kernel has a scalar reference
// implementation; vector variants are selected once at startup from the CPU
// feature set and must agree with the reference to rounding.

#include <cstddef>
#include <span>
#include <string_view>

namespace baq::kernels {

enum class Backend { Scalar, Avx2, Neon };

std::string_view backend_name(Backend b);

struct KernelTable {
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* a, std::size_t n);
  double (*max)(const double* a, std::size_t n);
  // dst[i] += src[i]
  void (*add)(double* dst, const double* src, std::size_t n);
  // dst[i] = a[i] * b[i]
  void (*mul)(double* dst, const double* a, const double* b, std::size_t n);
  // dst[i] *= s
  void (*scale)(double* dst, double s, std::size_t n);
  // dst[i] += s * src[i]
  void (*axpy)(double* dst, double s, const double* src, std::size_t n);
  // sum_i a[i] * b[i] * c[i]
  double (*dot3)(const double* a, const double* b, const double* c, std::size_t n);
};

namespace scalar {
const KernelTable& table();
}
namespace avx2 {
const KernelTable* table();  // nullptr when not compiled in
}
namespace neon {
const KernelTable* table();
}

/// Best backend supported by the running CPU (honours BAQ_KERNELS=scalar).
Backend detect_backend();

/// Backends both compiled in and supported by this CPU.
bool backend_available(Backend b);

const KernelTable& table_for(Backend b);

/// The active table. Chosen once on first use.
const KernelTable& active();
Backend active_backend();

/// Test hook: pin the active backend. Not thread-safe against concurrent kernel calls.
void set_active_backend(Backend b);

// Span conveniences over the active table.

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}
inline double sum(std::span<const double> a) { return active().sum(a.data(), a.size()); }
inline double max(std::span<const double> a) { return active().max(a.data(), a.size()); }
inline void add(std::span<double> dst, std::span<const double> src) {
  active().add(dst.data(), src.data(), dst.size());
}
inline void mul(std::span<double> dst, std::span<const double> a, std::span<const double> b) {
  active().mul(dst.data(), a.data(), b.data(), dst.size());
}
inline void scale(std::span<double> dst, double s) { active().scale(dst.data(), s, dst.size()); }
inline void axpy(std::span<double> dst, double s, std::span<const double> src) {
  active().axpy(dst.data(), s, src.data(), dst.size());
}
inline double dot3(std::span<const double> a, std::span<const double> b,
                   std::span<const double> c) {
  return active().dot3(a.data(), b.data(), c.data(), a.size());
}

/// Normalizes log-weights in place (subtract log-sum-exp) and writes the
/// matching linear weights. Returns the log-sum-exp of the input, which is
/// -inf when every entry is -inf.
double normalize_log_weights(std::span<double> log_w, std::span<double> w);

/// log(sum(exp(x))) with max shift; -inf for all -inf input.
double log_sum_exp(std::span<const double> x);

}  // namespace baq::kernels
