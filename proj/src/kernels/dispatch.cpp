#include <atomic>
#include <cstdlib>
#include <cstring>

#include "conceptkit/kernels.hpp"

namespace conceptkit::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* select_table() {
  const char* forced = std::getenv("CONCEPTKIT_SIMD");
  if (forced && std::strcmp(forced, "generic") == 0) return &generic::table();
  if (const KernelTable* t = avx2_table()) return t;
  return &generic::table();
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> s{select_table()};
  return s;
}

}  // namespace

const KernelTable* avx2_table() {
#if defined(CONCEPTKIT_HAVE_AVX2)
  static const bool ok = cpu_has_avx2();
  return ok ? &avx2::table() : nullptr;
#else
  (void)cpu_has_avx2;
  return nullptr;
#endif
}

const KernelTable& active() { return *slot().load(std::memory_order_relaxed); }

void set_active(const KernelTable& table) { slot().store(&table); }

}  // namespace conceptkit::kernels
