#pragma once

// Trajectory-guided feature steering.
//
// For a selected early cell the feature's clean coefficient a_f at layer l is
// amplified in place: h' = h + (alpha - 1) a_f d_f at every position where
// a_f != 0, then the forward pass resumes from l to pooled logits z'.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "circuitlab/model.hpp"
#include "circuitlab/sae.hpp"

namespace circuitlab {

struct SteerSpec {
  std::size_t layer = 0;
  std::uint32_t feature = 0;
  std::string label;
  /// Effect size carried over from an external switch-feature list; metadata only.
  std::string switch_d;
  std::vector<double> alphas = {2.0, 5.0};
  double early_fraction = 0.30;
  double decile = 0.10;

  void validate() const;
};

struct SignaturePair {
  std::vector<double> g_late;
  std::vector<double> g_early;
  std::vector<std::size_t> late_cells;
  std::vector<std::size_t> early_cells;
};

/// Per-cell logits for every cell, the input to signatures and steering baselines.
struct CellLogits {
  std::vector<std::vector<double>> logits;
};

/// Cell ids of the bottom (or top) floor(fraction * n) cells by pseudotime; ties by cell id.
std::vector<std::size_t> pseudotime_extreme(std::span<const double> pseudotime, double fraction, bool late);

SignaturePair compute_signatures(std::span<const double> pseudotime, std::span<const std::vector<double>> logits,
                                 double decile);

/// Bottom early_fraction cells by pseudotime whose flag in `active` is set, ascending by id.
std::vector<std::size_t> select_early_cells(std::span<const double> pseudotime, const std::vector<bool>& active,
                                            double early_fraction);

/// h + (alpha - 1) a_f d_f at every position of `codes` where a_f != 0.
Matrix amplify_feature(const Matrix& hidden, const SaeParams& sae, std::uint32_t feature, double alpha,
                       std::span<const SparseCode> codes);

/// Steered logits z' for one cell given its clean trace.
std::vector<double> steer_feature(const Model& model, const SaeParams& sae, std::uint32_t feature, double alpha,
                                  const ResidualTrace& clean);

/// cos(z', g_late) - cos(z', g_early) - [cos(z, g_late) - cos(z, g_early)].
double state_shift(std::span<const double> z, std::span<const double> z_steered, const SignaturePair& signatures);

struct AlphaOutcome {
  double alpha = 0.0;
  std::vector<double> shifts;  // per steered cell, in cell id order
  std::optional<double> mean_shift;
  std::optional<double> fraction_positive;
};

struct GeneDelta {
  std::uint32_t gene = 0;
  double mean_delta = 0.0;
};

struct SteeringOutcome {
  SteerSpec spec;
  std::vector<std::size_t> cell_ids;
  std::vector<AlphaOutcome> per_alpha;
  /// Mean logit delta per gene at the largest alpha (empty with no steered cells).
  std::vector<double> gene_deltas;
  std::vector<GeneDelta> top_up;
  std::vector<GeneDelta> top_down;
};

/// Runs every alpha of `spec` over the selected early cells.
SteeringOutcome steering_report(const Model& model, const SaeParams& sae, const SteerSpec& spec,
                                const CellBatch& cells, std::span<const ResidualTrace> traces,
                                const SignaturePair& signatures, std::size_t top_n = 10, std::size_t workers = 1);

std::vector<SteerSpec> parse_steer_specs_csv(const std::string& text);
std::string steering_table_csv(std::span<const SteeringOutcome> outcomes);
std::string steering_cells_jsonl(std::span<const SteeringOutcome> outcomes);
std::string gene_deltas_csv(std::span<const SteeringOutcome> outcomes);

}  // namespace circuitlab
