#pragma once

#include <cstdint>
#include <span>

namespace circuitlab {

/// Streaming mean and sum of squared deviations (Welford), with Chan's merge.
class WelfordAccumulator {
 public:
  void add(double x) {
    ++count_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(count_);
    m2_ += delta * (x - mean_);
  }

  void merge(const WelfordAccumulator& other);

  std::uint64_t count() const noexcept { return count_; }
  double mean() const noexcept { return mean_; }
  double m2() const noexcept { return m2_; }
  /// Sample variance m2 / (n - 1); 0 for fewer than two samples.
  double variance() const noexcept { return count_ > 1 ? m2_ / static_cast<double>(count_ - 1) : 0.0; }

 private:
  std::uint64_t count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

/// Standardized mean difference (ablated - clean) over the pooled standard
/// deviation. Zero pooled deviation gives 0 for equal means and a signed
/// infinity otherwise. Throws InsufficientDataError when either count < 2.
double cohens_d(const WelfordAccumulator& clean, const WelfordAccumulator& ablated);

/// Fraction of entries sharing the majority sign. Zeros never count toward
/// the majority; ties between signs resolve to negative. Requires nonempty input.
double consistency(std::span<const double> deltas);

/// Same statistic from precomputed tallies.
double consistency_from_counts(std::uint64_t n_positive, std::uint64_t n_negative, std::uint64_t n_total);

}  // namespace circuitlab
