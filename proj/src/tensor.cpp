#include "circuitlab/tensor.hpp"

#include <bit>
#include <cassert>
#include <cmath>

#include "circuitlab/kernels.hpp"

namespace circuitlab {

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

void gemv(const Matrix& w, std::span<const double> x, std::span<const double> bias,
          std::span<double> y) {
  assert(x.size() == w.cols() && y.size() == w.rows());
  assert(bias.empty() || bias.size() == w.rows());
  kernels::table().gemv(w.data(), w.rows(), w.cols(), x.data(), bias.empty() ? nullptr : bias.data(),
                        y.data());
}

double norm2(std::span<const double> v) { return std::sqrt(kernels::sum_squares(v)); }

double normalize(std::span<double> v) {
  const double n = norm2(v);
  if (n > 0.0) {
    for (double& x : v) x /= n;
  }
  return n;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  return kernels::dot(a, b) / (norm2(a) * norm2(b));
}

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t h) {
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t fnv1a(std::span<const double> values, std::uint64_t h) {
  for (double v : values) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xffU;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace circuitlab
