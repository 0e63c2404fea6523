#include <limits>

#include "baq/kernels.hpp"

namespace baq::kernels::scalar {
namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double sum(const double* a, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i];
  return s;
}

double max(const double* a, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i)
    if (a[i] > m) m = a[i];
  return m;
}

void add(double* dst, const double* src, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

void mul(double* dst, const double* a, const double* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] * b[i];
}

void scale(double* dst, double s, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] *= s;
}

void axpy(double* dst, double s, const double* src, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] += s * src[i];
}

double dot3(const double* a, const double* b, const double* c, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i] * c[i];
  return s;
}

const KernelTable kTable{dot, sum, max, add, mul, scale, axpy, dot3};

}  // namespace

const KernelTable& table() { return kTable; }

}  // namespace baq::kernels::scalar
