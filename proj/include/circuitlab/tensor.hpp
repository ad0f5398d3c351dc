#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace circuitlab {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> flat() noexcept { return data_; }
  std::span<const double> flat() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  Matrix transposed() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// y = W x + bias (bias may be empty), through the active SIMD kernel.
void gemv(const Matrix& w, std::span<const double> x, std::span<const double> bias,
          std::span<double> y);

double norm2(std::span<const double> v);
/// Scales v to unit norm; returns the original norm (v untouched when the norm is 0).
double normalize(std::span<double> v);
double cosine(std::span<const double> a, std::span<const double> b);

/// FNV-1a over raw bytes; used for checksums and provenance hashes.
std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t seed = 14695981039346656037ULL);
std::uint64_t fnv1a(std::span<const double> values, std::uint64_t seed = 14695981039346656037ULL);

}  // namespace circuitlab
