#pragma once

// Data-parallel inner loops. Every kernel has a portable scalar reference in
// `generic` and, when compiled in, an AVX2/FMA variant. The active table is
// chosen once at startup from CPUID; CONCEPTKIT_SIMD=generic forces the
// scalar path.

#include <cstddef>
#include <cstdint>
#include <span>

namespace conceptkit::kernels {

struct KernelTable {
  const char* name;

  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*squared_distance)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // v = max(0, v - step * grad - shrink)
  void (*nonneg_prox_step)(double* v, const double* grad, double step, double shrink,
                           std::size_t n);
  // number of x[i] >= tau
  std::size_t (*count_at_least)(const double* x, double tau, std::size_t n);
  // out[i] = x[i] >= tau
  void (*threshold_mask)(const double* x, double tau, std::uint8_t* out, std::size_t n);
};

namespace generic {
const KernelTable& table();
}

#if defined(CONCEPTKIT_HAVE_AVX2)
namespace avx2 {
const KernelTable& table();
}
#endif

// AVX2 table when both compiled in and supported by this CPU, else nullptr.
const KernelTable* avx2_table();

const KernelTable& active();

// Overrides the active table (tests and benchmarking).
void set_active(const KernelTable& table);

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}
inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  return active().squared_distance(a.data(), b.data(), a.size());
}
inline double sum(std::span<const double> x) { return active().sum(x.data(), x.size()); }
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), y.size());
}
inline void nonneg_prox_step(std::span<double> v, std::span<const double> grad, double step,
                             double shrink) {
  active().nonneg_prox_step(v.data(), grad.data(), step, shrink, v.size());
}
inline std::size_t count_at_least(std::span<const double> x, double tau) {
  return active().count_at_least(x.data(), tau, x.size());
}
inline void threshold_mask(std::span<const double> x, double tau, std::span<std::uint8_t> out) {
  active().threshold_mask(x.data(), tau, out.data(), x.size());
}

}  // namespace conceptkit::kernels
