#pragma once

// Inner-loop arithmetic used by the forward pass and the autoencoders.
//
// Every kernel exists as a scalar reference and, on x86-64 hosts with AVX2+FMA,
// as a vectorized variant. The active backend is chosen once at startup from
// CPU features (override with CIRCUITLAB_SIMD=scalar|avx2) and can be switched
// explicitly for equivalence testing. Results differ between backends only by
// floating-point reassociation; within one backend every call is deterministic.

#include <cstddef>
#include <span>
#include <string_view>

namespace circuitlab::kernels {

enum class Backend { kScalar, kAvx2 };

struct KernelTable {
  double (*dot)(const double* a, const double* b, std::size_t n);
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y[r] = bias[r] + dot(W[r, :], x) for a row-major rows x cols matrix; bias may be null.
  void (*gemv)(const double* w, std::size_t rows, std::size_t cols, const double* x,
               const double* bias, double* y);
  double (*sum_squares)(const double* a, std::size_t n);
};

const KernelTable& scalar_table();
#if defined(CIRCUITLAB_HAVE_AVX2)
const KernelTable& avx2_table();
#endif

bool backend_available(Backend b);
Backend active_backend();
/// Returns false (and leaves the backend unchanged) if `b` is not supported here.
bool set_backend(Backend b);
std::string_view backend_name(Backend b);

const KernelTable& table();

inline double dot(std::span<const double> a, std::span<const double> b) {
  return table().dot(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  table().axpy(alpha, x.data(), y.data(), x.size());
}

inline double sum_squares(std::span<const double> a) {
  return table().sum_squares(a.data(), a.size());
}

}  // namespace circuitlab::kernels
