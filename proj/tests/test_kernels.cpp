#include <cmath>
#include <random>
#include <vector>

#include <doctest.h>

#include "circuitlab/kernels.hpp"
#include "circuitlab/tensor.hpp"

using namespace circuitlab;

namespace {

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Reassociation bound for a length-n sum of products.
double tol(std::size_t n, double magnitude) { return 8.0 * static_cast<double>(n + 1) * 2.2e-16 * magnitude; }

}  // namespace

TEST_CASE("scalar kernels match naive loops") {
  std::mt19937_64 rng(1);
  const auto& t = kernels::scalar_table();
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 16u, 33u, 128u}) {
    auto a = random_vec(rng, n), b = random_vec(rng, n);
    double ref = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      ref += a[i] * b[i];
      ss += a[i] * a[i];
    }
    CHECK(t.dot(a.data(), b.data(), n) == ref);
    CHECK(t.sum_squares(a.data(), n) == ss);
    auto y = b;
    t.axpy(0.5, a.data(), y.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(y[i] == b[i] + 0.5 * a[i]);
  }
}

#if defined(CIRCUITLAB_HAVE_AVX2)
TEST_CASE("avx2 kernels agree with the scalar reference") {
  if (!kernels::backend_available(kernels::Backend::kAvx2)) return;
  std::mt19937_64 rng(2);
  const auto& s = kernels::scalar_table();
  const auto& v = kernels::avx2_table();
  for (std::size_t n : {0u, 1u, 2u, 3u, 4u, 5u, 7u, 8u, 9u, 15u, 16u, 17u, 31u, 64u, 127u, 512u}) {
    auto a = random_vec(rng, n), b = random_vec(rng, n);
    double mag = 0.0;
    for (std::size_t i = 0; i < n; ++i) mag += std::fabs(a[i] * b[i]);
    CHECK(std::fabs(s.dot(a.data(), b.data(), n) - v.dot(a.data(), b.data(), n)) <= tol(n, mag));
    const double ss = s.sum_squares(a.data(), n);
    CHECK(std::fabs(ss - v.sum_squares(a.data(), n)) <= tol(n, ss));
    auto y1 = b, y2 = b;
    s.axpy(-1.25, a.data(), y1.data(), n);
    v.axpy(-1.25, a.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::fabs(y1[i] - y2[i]) <= 4e-16 * (std::fabs(b[i]) + 1.25 * std::fabs(a[i])));
  }
  for (auto [rows, cols] : {std::pair{1u, 1u}, {3u, 5u}, {8u, 8u}, {17u, 33u}, {512u, 128u}}) {
    const auto w = random_vec(rng, rows * cols), x = random_vec(rng, cols), bias = random_vec(rng, rows);
    std::vector<double> y1(rows), y2(rows);
    s.gemv(w.data(), rows, cols, x.data(), bias.data(), y1.data());
    v.gemv(w.data(), rows, cols, x.data(), bias.data(), y2.data());
    for (std::size_t r = 0; r < rows; ++r) {
      double mag = std::fabs(bias[r]);
      for (std::size_t c = 0; c < cols; ++c) mag += std::fabs(w[r * cols + c] * x[c]);
      CHECK(std::fabs(y1[r] - y2[r]) <= tol(cols, mag));
    }
    s.gemv(w.data(), rows, cols, x.data(), nullptr, y1.data());
    v.gemv(w.data(), rows, cols, x.data(), nullptr, y2.data());
    for (std::size_t r = 0; r < rows; ++r) CHECK(std::fabs(y1[r] - y2[r]) <= tol(cols, 100.0 * cols));
  }
}
#endif

TEST_CASE("backend switching") {
  const auto before = kernels::active_backend();
  CHECK(kernels::set_backend(kernels::Backend::kScalar));
  CHECK(kernels::active_backend() == kernels::Backend::kScalar);
  CHECK(kernels::backend_name(kernels::Backend::kScalar) == "scalar");
  kernels::set_backend(before);
  CHECK(kernels::active_backend() == before);
}

TEST_CASE("vector helpers") {
  std::vector<double> v = {3.0, 4.0};
  CHECK(norm2(v) == doctest::Approx(5.0));
  CHECK(normalize(v) == doctest::Approx(5.0));
  CHECK(v[0] == doctest::Approx(0.6));
  std::vector<double> z = {0.0, 0.0};
  CHECK(normalize(z) == 0.0);
  CHECK(z[0] == 0.0);
  std::vector<double> a = {1.0, 0.0}, b = {0.0, 2.0}, c = {-3.0, 0.0};
  CHECK(cosine(a, b) == doctest::Approx(0.0));
  CHECK(cosine(a, c) == doctest::Approx(-1.0));
}

TEST_CASE("matrix transpose and gemv") {
  Matrix m(2, 3);
  for (std::size_t i = 0; i < 6; ++i) m.flat()[i] = static_cast<double>(i);
  const auto t = m.transposed();
  CHECK(t.rows() == 3);
  CHECK(t(2, 1) == m(1, 2));
  std::vector<double> x = {1.0, 1.0, 1.0}, y(2), bias = {10.0, 20.0};
  gemv(m, x, bias, y);
  CHECK(y[0] == 13.0);
  CHECK(y[1] == 32.0);
}

TEST_CASE("fnv1a is order sensitive and deterministic") {
  std::vector<double> a = {1.0, 2.0}, b = {2.0, 1.0};
  CHECK(fnv1a(a) == fnv1a(a));
  CHECK(fnv1a(a) != fnv1a(b));
}
