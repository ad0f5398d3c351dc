#pragma once

// Descriptive statistics over an edge graph: per-feature edge counts, tail
// thresholds, hub tables, per-layer attenuation and annotation enrichment.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "circuitlab/sae.hpp"
#include "circuitlab/tracing.hpp"

namespace circuitlab {

struct FeatureCount {
  std::uint32_t feature = 0;
  std::uint64_t edges = 0;

  friend bool operator==(const FeatureCount&, const FeatureCount&) = default;
};

/// Edge totals for every traced feature (ascending id); edgeless features report 0.
std::vector<FeatureCount> edge_counts(const EdgeGraph& graph);

struct CountSummary {
  std::size_t n_features = 0;
  std::uint64_t total_edges = 0;
  double mean = 0.0;
  double median = 0.0;
  std::uint64_t max = 0;
  std::size_t zero_edge_features = 0;
};
CountSummary summarize_counts(std::span<const FeatureCount> counts);

struct TailRow {
  std::uint64_t threshold = 0;
  std::size_t above = 0;  // strictly greater
  double fraction = 0.0;
};
std::vector<TailRow> tail_stats(std::span<const FeatureCount> counts, std::span<const std::uint64_t> thresholds = {});

/// Ratio of the mean count over the top `top_fraction` of features (at least one) to the median.
std::optional<double> top_to_median_ratio(std::span<const FeatureCount> counts, double top_fraction = 0.02);

struct HubRow {
  std::size_t rank = 0;
  std::uint32_t feature = 0;
  std::uint64_t edges = 0;
  std::string annotation;  // "unannotated" when absent
};
std::vector<HubRow> hub_table(std::span<const FeatureCount> counts, const FeatureCatalog* catalog, std::size_t top_n);

struct AttenuationRow {
  std::uint32_t layer = 0;
  std::uint64_t edges = 0;
  double fraction = 0.0;
};
/// Rows follow the graph's downstream-layer order; an empty graph yields zero fractions.
std::vector<AttenuationRow> attenuation(const EdgeGraph& graph);

struct EnrichmentRow {
  std::string cut;  // "all" or "top<N>"
  std::size_t n = 0;
  std::size_t annotated = 0;
  double fraction = 0.0;
};
std::vector<EnrichmentRow> annotation_enrichment(std::span<const FeatureCount> counts, const FeatureCatalog& catalog,
                                                 std::span<const std::size_t> top_sizes);

std::string hub_table_csv(std::span<const HubRow> rows);
/// Two columns: edge count and the number of features with that count.
std::string edge_histogram_csv(std::span<const FeatureCount> counts);
std::string analysis_json(std::span<const FeatureCount> counts, std::span<const TailRow> tails,
                          std::span<const AttenuationRow> attenuation, std::span<const EnrichmentRow> enrichment);

}  // namespace circuitlab
