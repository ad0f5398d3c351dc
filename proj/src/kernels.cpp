#include "circuitlab/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace circuitlab::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(CIRCUITLAB_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend detect() {
  if (const char* env = std::getenv("CIRCUITLAB_SIMD")) {
    const std::string v(env);
    if (v == "scalar") return Backend::kScalar;
    if (v == "avx2" && cpu_has_avx2()) return Backend::kAvx2;
  }
  return cpu_has_avx2() ? Backend::kAvx2 : Backend::kScalar;
}

const KernelTable* table_for(Backend b) {
#if defined(CIRCUITLAB_HAVE_AVX2)
  if (b == Backend::kAvx2) return &avx2_table();
#endif
  (void)b;
  return &scalar_table();
}

struct State {
  std::atomic<Backend> backend;
  std::atomic<const KernelTable*> table;
  State() : backend(detect()), table(table_for(backend.load())) {}
};

State& state() {
  static State s;
  return s;
}

}  // namespace

bool backend_available(Backend b) {
  return b == Backend::kScalar || (b == Backend::kAvx2 && cpu_has_avx2());
}

Backend active_backend() { return state().backend.load(); }

bool set_backend(Backend b) {
  if (!backend_available(b)) return false;
  state().backend.store(b);
  state().table.store(table_for(b));
  return true;
}

std::string_view backend_name(Backend b) { return b == Backend::kAvx2 ? "avx2" : "scalar"; }

const KernelTable& table() { return *state().table.load(std::memory_order_relaxed); }

}  // namespace circuitlab::kernels
