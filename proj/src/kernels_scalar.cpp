#include "circuitlab/kernels.hpp"

namespace circuitlab::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_scalar(const double* w, std::size_t rows, std::size_t cols, const double* x,
                 const double* bias, double* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double d = dot_scalar(w + r * cols, x, cols);
    y[r] = bias ? bias[r] + d : d;
  }
}

double sum_squares_scalar(const double* a, std::size_t n) { return dot_scalar(a, a, n); }

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable t{dot_scalar, axpy_scalar, gemv_scalar, sum_squares_scalar};
  return t;
}

}  // namespace circuitlab::kernels
