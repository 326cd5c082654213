#include "conceptkit/kernels.hpp"

#include <algorithm>

namespace conceptkit::kernels::generic {
namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double squared_distance(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

double sum(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void nonneg_prox_step(double* v, const double* grad, double step, double shrink,
                      std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) v[i] = std::max(0.0, v[i] - step * grad[i] - shrink);
}

std::size_t count_at_least(const double* x, double tau, std::size_t n) {
  std::size_t c = 0;
  for (std::size_t i = 0; i < n; ++i) c += x[i] >= tau ? 1 : 0;
  return c;
}

void threshold_mask(const double* x, double tau, std::uint8_t* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] >= tau ? 1 : 0;
}

}  // namespace

const KernelTable& table() {
  static const KernelTable t{"generic",        dot,           squared_distance,
                             sum,              axpy,          nonneg_prox_step,
                             count_at_least,   threshold_mask};
  return t;
}

}  // namespace conceptkit::kernels::generic
