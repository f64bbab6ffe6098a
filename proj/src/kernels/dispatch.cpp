#include <atomic>
#include <cstdlib>
#include <string>

#include "kernels_impl.hpp"

namespace sahgnn::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* resolve_default() {
  if (const char* env = std::getenv("SAHGNN_KERNELS")) {
    const std::string want(env);
    if (want == "scalar") return &scalar_table();
    if (want == "avx2" && avx2_table()) return avx2_table();
    if (want == "neon" && neon_table()) return neon_table();
  }
  if (const KernelTable* t = avx2_table()) return t;
  if (const KernelTable* t = neon_table()) return t;
  return &scalar_table();
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> table{resolve_default()};
  return table;
}

}  // namespace

const KernelTable* avx2_table() { return cpu_has_avx2() ? detail::avx2_table_if_built() : nullptr; }

const KernelTable* neon_table() { return detail::neon_table_if_built(); }

const KernelTable& active() { return *slot().load(std::memory_order_acquire); }

bool select(Backend backend) {
  const KernelTable* t = nullptr;
  switch (backend) {
    case Backend::scalar: t = &scalar_table(); break;
    case Backend::avx2: t = avx2_table(); break;
    case Backend::neon: t = neon_table(); break;
  }
  if (t == nullptr) return false;
  slot().store(t, std::memory_order_release);
  return true;
}

std::string_view name(Backend backend) {
  switch (backend) {
    case Backend::scalar: return "scalar";
    case Backend::avx2: return "avx2";
    case Backend::neon: return "neon";
  }
  return "unknown";
}

}  // namespace sahgnn::kernels
