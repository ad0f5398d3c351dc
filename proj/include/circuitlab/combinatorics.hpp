#pragma once

// Higher-order combinatorial ablation over feature triplets.
//
// Each of the seven conditions (A, B, C, AB, AC, BC, ABC) ablates a subset of
// the triplet in one forward pass. At every member's layer the member's
// coefficient is read from the stream as it stands after upstream ablations
// (sequential hook semantics) and a_f d_f is subtracted where a_f != 0.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "circuitlab/model.hpp"
#include "circuitlab/sae.hpp"
#include "circuitlab/tracing.hpp"

namespace circuitlab {

struct FeatureRef {
  std::size_t layer = 0;
  std::uint32_t feature = 0;

  friend bool operator==(const FeatureRef&, const FeatureRef&) = default;
};

enum class TripletType { kSamePathway, kCrossPathway };

struct Triplet {
  std::array<FeatureRef, 3> members;  // A, B, C
  std::string pathway_tag;
  TripletType type = TripletType::kSamePathway;
};

enum class Condition : std::size_t { kA = 0, kB, kC, kAB, kAC, kBC, kABC };
inline constexpr std::size_t kNumConditions = 7;
inline constexpr std::array<const char*, kNumConditions> kConditionNames = {"A", "B", "C", "AB", "AC", "BC", "ABC"};
/// Bit m set when member m (A=0, B=1, C=2) is ablated.
inline constexpr std::array<unsigned, kNumConditions> kConditionMasks = {0b001, 0b010, 0b100, 0b011,
                                                                         0b101, 0b110, 0b111};

using ConditionValues = std::array<double, kNumConditions>;

enum class CoefficientSource {
  /// Read each member's coefficient from the already-modified stream.
  kSequential,
  /// Read each member's coefficient from the clean stream at its layer.
  kClean,
};

/// Measurement-layer TopK codes (one per position) after ablating `members`.
std::vector<SparseCode> ablate_set(const Model& model, SaeSet saes, const ResidualTrace& clean,
                                   std::span<const FeatureRef> members, std::size_t measurement_layer,
                                   CoefficientSource source = CoefficientSource::kSequential);

struct ConditionEffects {
  std::size_t n_cells = 0;
  std::size_t measurement_layer = 0;
  /// d[target][condition], Cohen's d of the condition against the shared clean baseline.
  std::vector<ConditionValues> d;
  /// mean_shift[target][condition], ablated minus clean mean activation.
  std::vector<ConditionValues> mean_shift;
  std::array<std::uint64_t, kNumConditions> counts{};
};

ConditionEffects run_conditions(const Model& model, SaeSet saes, const Triplet& triplet, const CellBatch& cells,
                                std::size_t measurement_layer, std::size_t workers = 1,
                                CoefficientSource source = CoefficientSource::kSequential);

std::optional<double> redundancy_ratio(const ConditionValues& d);
/// |d_XY| / (|d_X| + |d_Y|) for the pair condition AB, AC or BC.
std::optional<double> pairwise_ratio(const ConditionValues& d, Condition pair);
/// d_ABC - d_AB - d_AC - d_BC + d_A + d_B + d_C. Throws DataError on a non-finite input.
double interaction_term(const ConditionValues& d);
/// |d_ABC| - |d_AB|.
double marginal_contribution(const ConditionValues& d);

enum class Additivity { kSubadditive, kAdditive, kSuperadditive };
std::string_view additivity_name(Additivity a);
std::optional<Additivity> classify_target(const ConditionValues& d, double epsilon = 0.05);
Additivity classify_ratio(double ratio, double epsilon = 0.05);

struct TripletReport {
  std::size_t n_targets = 0;  // targets with at least one significant condition
  std::size_t n_classified = 0;
  std::optional<double> pairwise_ratio_mean;
  std::optional<double> pairwise_ratio_median;
  std::optional<double> threeway_ratio_median;
  std::size_t subadditive_count = 0;
  std::size_t additive_count = 0;
  std::size_t superadditive_count = 0;
  std::optional<double> subadditive_fraction;
  std::optional<double> additive_fraction;
  std::optional<double> superadditive_fraction;
  std::optional<double> marginal_c_given_ab_median;
};

bool target_is_significant(const ConditionValues& d, double threshold);
TripletReport triplet_report(const ConditionEffects& effects, double significance_threshold = 0.5,
                             double epsilon = 0.05);

std::vector<Triplet> parse_triplets_csv(const std::string& text);
std::string triplet_report_csv(std::span<const Triplet> triplets, std::span<const TripletReport> reports);
/// One JSON object per target of one triplet.
std::string triplet_targets_jsonl(std::size_t triplet_index, const Triplet& triplet, const ConditionEffects& effects,
                                  double epsilon = 0.05);

double median(std::vector<double> values);

}  // namespace circuitlab
