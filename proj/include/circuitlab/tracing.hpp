#pragma once

// Exhaustive single-feature ablation tracing.
//
// A clean cache holds, per cell, the source-layer residual stream, its TopK
// codes and the clean codes at every downstream layer. Tracing a feature
// zeroes its coefficient (subtracts a_f d_f wherever a_f != 0), resumes the
// forward pass from the source layer and re-encodes downstream. Blocks act on
// positions independently, so only ablated positions are recomputed; the rest
// reuse cached codes and give bit-identical results to a full resume.
//
// A cell's activation of a target feature is the position-mean of its TopK
// coefficient. Per target, clean and ablated per-cell activations feed paired
// Welford accumulators and a sign tally of (ablated - clean).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "circuitlab/model.hpp"
#include "circuitlab/sae.hpp"
#include "circuitlab/stats.hpp"

namespace circuitlab {

struct Thresholds {
  double d_threshold = 0.5;
  double consistency_threshold = 0.7;
  double frequency_gate = 0.001;
};

struct CachedCell {
  Matrix source_hidden;
  std::vector<SparseCode> source_codes;                   // per position
  std::vector<std::vector<SparseCode>> downstream_codes;  // [downstream layer][position]
  std::vector<std::vector<double>> downstream_means;      // [downstream layer][d_sae]
};

struct CleanCache {
  std::size_t source_layer = 0;
  std::vector<std::size_t> downstream_layers;
  std::vector<CachedCell> cells;
  /// Full forward passes spent building the cache.
  std::size_t forward_passes = 0;
};

/// Autoencoders indexed by layer: saes[l].layer == l.
using SaeSet = std::span<const SaeParams>;

/// Position-mean of TopK coefficients; positions are summed in order.
std::vector<double> cell_feature_means(std::span<const SparseCode> codes, std::size_t d_sae);

/// h - coefficient * direction, element by element.
void subtract_scaled(std::span<double> h, double coefficient, std::span<const double> direction);

CleanCache build_clean_cache(const Model& model, SaeSet saes, const CellBatch& cells, std::size_t source_layer,
                             std::vector<std::size_t> downstream_layers);

Matrix ablate_feature(const Matrix& hidden, const SaeParams& sae, std::uint32_t feature);
Matrix ablate_feature(const Matrix& hidden, const SaeParams& sae, std::uint32_t feature,
                      std::span<const SparseCode> codes);

struct TargetStats {
  WelfordAccumulator clean;
  WelfordAccumulator ablated;
  std::uint32_t n_positive = 0;
  std::uint32_t n_negative = 0;
};

struct FeatureTrace {
  std::uint32_t feature = 0;
  std::size_t d_sae = 0;
  std::vector<std::size_t> downstream_layers;
  /// stats[li * d_sae + target] for downstream layer index li.
  std::vector<TargetStats> stats;

  const TargetStats& at(std::size_t layer_index, std::size_t target) const { return stats[layer_index * d_sae + target]; }
};

FeatureTrace trace_feature(const Model& model, const CleanCache& cache, SaeSet saes, std::size_t source_layer,
                           std::uint32_t feature);

struct Edge {
  std::uint32_t source_feature = 0;
  std::uint32_t target_layer = 0;
  std::uint32_t target_feature = 0;
  double cohens_d = 0.0;
  double consistency = 0.0;
  std::uint32_t n_cells = 0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

bool edge_order(const Edge& a, const Edge& b);
std::vector<Edge> significant_edges(const FeatureTrace& trace, const Thresholds& thresholds);

struct GraphProvenance {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  double d_threshold = 0.5;
  double consistency_threshold = 0.7;
  double frequency_gate = 0.001;
  std::uint32_t source_layer = 0;
  std::vector<std::uint32_t> downstream_layers;
  std::uint32_t n_cells = 0;

  friend bool operator==(const GraphProvenance&, const GraphProvenance&) = default;
};

struct EdgeGraph {
  std::vector<Edge> edges;  // canonical (source, target_layer, target) order
  std::vector<std::uint32_t> traced_features;
  GraphProvenance provenance;

  friend bool operator==(const EdgeGraph&, const EdgeGraph&) = default;
};

struct TraceProgress {
  std::size_t done = 0;
  std::size_t total = 0;
};

struct TraceOptions {
  Thresholds thresholds;
  std::size_t workers = 1;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::function<void(const TraceProgress&)> progress;
  std::size_t progress_every = 32;
};

/// Traces every feature in `features` (ascending ids) against a shared cache.
EdgeGraph trace_features(const Model& model, const CleanCache& cache, SaeSet saes,
                         std::span<const std::uint32_t> features, const TraceOptions& options);

/// Gates features by catalog frequency, builds the cache and traces them all.
EdgeGraph trace_exhaustive(const Model& model, SaeSet saes, const CellBatch& cells, std::size_t source_layer,
                           std::vector<std::size_t> downstream_layers, const FeatureCatalog& source_catalog,
                           const TraceOptions& options);

std::string edges_csv(const EdgeGraph& graph);
std::vector<std::uint8_t> edges_binary(const EdgeGraph& graph);
EdgeGraph parse_edges_binary(std::span<const std::uint8_t> bytes);
/// Totals in the shape of a circuit-summary table: features traced, total edges,
/// mean/median/max edges per feature, zero-edge features, per-layer counts.
std::string trace_summary_json(const EdgeGraph& graph);

}  // namespace circuitlab
