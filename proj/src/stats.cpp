#include "circuitlab/stats.hpp"

#include <cmath>
#include <limits>

#include "circuitlab/errors.hpp"

namespace circuitlab {

void WelfordAccumulator::merge(const WelfordAccumulator& other) {
  if (other.count_ == 0) return;
  if (count_ == 0) {
    *this = other;
    return;
  }
  const double n_a = static_cast<double>(count_);
  const double n_b = static_cast<double>(other.count_);
  const double n = n_a + n_b;
  const double delta = other.mean_ - mean_;
  mean_ += delta * n_b / n;
  m2_ += other.m2_ + delta * delta * n_a * n_b / n;
  count_ += other.count_;
}

double cohens_d(const WelfordAccumulator& clean, const WelfordAccumulator& ablated) {
  if (clean.count() < 2 || ablated.count() < 2)
    throw InsufficientDataError("Cohen's d needs at least two samples per group");
  const double n1 = static_cast<double>(clean.count());
  const double n2 = static_cast<double>(ablated.count());
  const double pooled = std::sqrt((clean.m2() + ablated.m2()) / (n1 + n2 - 2.0));
  const double diff = ablated.mean() - clean.mean();
  if (pooled == 0.0) {
    if (diff == 0.0) return 0.0;
    return diff > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
  }
  return diff / pooled;
}

double consistency_from_counts(std::uint64_t n_positive, std::uint64_t n_negative, std::uint64_t n_total) {
  if (n_total == 0) throw InsufficientDataError("consistency needs at least one delta");
  const auto majority = n_negative >= n_positive ? n_negative : n_positive;
  return static_cast<double>(majority) / static_cast<double>(n_total);
}

double consistency(std::span<const double> deltas) {
  std::uint64_t pos = 0, neg = 0;
  for (double d : deltas) {
    if (d > 0.0) ++pos;
    else if (d < 0.0) ++neg;
  }
  return consistency_from_counts(pos, neg, deltas.size());
}

}  // namespace circuitlab
