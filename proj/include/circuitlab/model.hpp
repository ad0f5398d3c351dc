#pragma once

// Toy residual-stream model and the synthetic world it is built from.
//
// Hidden state layout: hidden[0] is the embedding output and hidden[l] is the
// residual stream after block l (blocks are numbered 1..n_layers). Blocks act
// on each token position independently: h <- h + W_out act(W_in h + b_in).
// Cell logits are the unembedding of the position-mean of hidden[n_layers].

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "circuitlab/tensor.hpp"

namespace circuitlab {

class KeyValueConfig;

struct ModelConfig {
  std::size_t n_layers = 6;
  std::size_t d_model = 64;
  std::size_t n_genes = 256;
  std::size_t seq_len = 32;
  std::uint64_t seed = 0;
  /// Output scale of the random mixing units in every block.
  double mixing_scale = 0.02;
  /// Fraction of each decaying direction that a block removes (0 disables decay).
  /// Decaying directions are everything except the maturity pair and input
  /// concepts that no planted edge reads.
  double decay = 0.0;
  /// Blocks numbered above this apply decay.
  std::size_t decay_start = 0;
  /// Replace the block nonlinearity with the identity.
  bool linear = false;

  void validate() const;
};

struct PlantedEdge {
  std::size_t source_layer = 0;
  std::size_t source_direction = 0;
  std::size_t target_layer = 0;
  std::size_t target_direction = 0;
  double strength = 0.0;

  friend bool operator==(const PlantedEdge&, const PlantedEdge&) = default;
};

/// Directions carrying one shared signal; member m lives at layers[m].
struct PathwayGroup {
  std::string tag;
  std::vector<std::size_t> directions;
  std::vector<std::size_t> layers;
  /// Direction at the last layer that reads every member.
  std::size_t target_direction = 0;

  friend bool operator==(const PathwayGroup&, const PathwayGroup&) = default;
};

/// A direction whose amplification should move cells toward (+1) or away from (-1) maturity.
struct SteerPlant {
  std::size_t layer = 0;
  std::size_t direction = 0;
  int sign = 0;
  std::string label;

  friend bool operator==(const SteerPlant&, const SteerPlant&) = default;
};

struct GeneConcept {
  std::size_t direction = 0;
  double coefficient = 0.0;
  /// Scaled by the token's rank weight rather than constant.
  bool rank_scaled = false;

  friend bool operator==(const GeneConcept&, const GeneConcept&) = default;
};

struct WorldConfig {
  std::uint64_t seed = 1;
  /// Input concepts carried by gene embeddings (excludes the two maturity directions).
  std::size_t n_input_concepts = 16;
  double secondary_concept_prob = 0.5;
  std::size_t n_planted_edges = 0;
  std::size_t source_layer = 2;
  /// Target layers for planted edges; edges are spread by `target_layer_weights`.
  std::vector<std::size_t> target_layers = {3, 4, 5};
  std::vector<double> target_layer_weights = {1.0, 1.0, 1.0};
  double strength_min = 1.0;
  double strength_max = 2.0;
  std::size_t n_hubs = 0;
  std::size_t hub_fanout = 0;
  std::size_t n_pathway_groups = 0;
  std::vector<std::size_t> pathway_layers = {0, 2, 4};
  double pathway_copy_strength = 1.0;
  double pathway_target_strength = 0.5;
  double maturity_strength = 2.0;
  double annotation_rate = 0.5;
};

struct SyntheticWorld {
  std::size_t d_model = 0;
  std::size_t n_genes = 0;
  std::size_t n_layers = 0;
  /// Row i is direction i; rows are orthonormal.
  Matrix basis;
  std::vector<PlantedEdge> planted_edges;
  std::vector<PathwayGroup> pathway_groups;
  std::vector<SteerPlant> steer_plants;
  std::vector<std::vector<GeneConcept>> gene_concepts;
  std::vector<double> gene_base_rate;
  std::vector<double> gene_maturity;
  std::vector<double> maturity_axis;
  std::size_t maturity_direction = 0;
  std::size_t immaturity_direction = 1;
  std::vector<std::size_t> input_directions;
  std::map<std::size_t, std::string> annotations;
  double maturity_strength = 2.0;

  std::span<const double> direction(std::size_t i) const { return basis.row(i); }
  void validate() const;

  friend bool operator==(const SyntheticWorld&, const SyntheticWorld&) = default;
};

struct CellBatch {
  std::vector<std::vector<std::uint32_t>> tokens;
  std::vector<double> pseudotime;

  std::size_t size() const noexcept { return tokens.size(); }
  CellBatch slice(std::size_t begin, std::size_t end) const;
};

struct Block {
  Matrix w_in;  // width x d_model
  std::vector<double> b_in;
  Matrix w_out;  // d_model x width
};

struct Model {
  ModelConfig config;
  Matrix embed_const;  // n_genes x d_model
  Matrix embed_rank;   // n_genes x d_model, scaled by the rank weight of the position
  std::vector<Block> blocks;
  Matrix unembed;  // n_genes x d_model
  std::vector<double> unembed_bias;

  std::uint64_t checksum() const;
  double rank_weight(std::size_t position) const;
};

struct ResidualTrace {
  std::vector<Matrix> hidden;  // n_layers + 1 snapshots of seq_len x d_model
  std::vector<double> logits;  // n_genes
  std::size_t cell_id = 0;
};

struct PartialTrace {
  std::size_t from_layer = 0;
  /// hidden[i] is the residual stream after block from_layer + 1 + i.
  std::vector<Matrix> hidden;
  std::vector<double> logits;
};

/// Reusable buffers for per-position block evaluation.
struct BlockScratch {
  std::vector<double> pre;
  std::vector<double> out;
};

SyntheticWorld generate_world(const ModelConfig& model, const WorldConfig& config);
Model build_toy_model(const ModelConfig& config, const SyntheticWorld& world);
CellBatch generate_cells(const SyntheticWorld& world, std::size_t seq_len, std::size_t n, std::uint64_t seed);

std::vector<ResidualTrace> forward_full(const Model& model, const CellBatch& cells);
ResidualTrace forward_cell(const Model& model, std::span<const std::uint32_t> tokens, std::size_t cell_id = 0);
PartialTrace forward_from_layer(const Model& model, std::size_t layer, const Matrix& modified_hidden);

/// Embedding of one token at one position into `h` (size d_model).
void embed_token(const Model& model, std::uint32_t token, std::size_t position, std::span<double> h);
/// Applies block `layer` (1-based) to one position in place.
void apply_block(const Model& model, std::size_t layer, std::span<double> h, BlockScratch& scratch);
/// Position-mean pooling followed by the unembedding.
std::vector<double> pooled_logits(const Model& model, const Matrix& final_hidden);

void save_model(const Model& model, const std::filesystem::path& path,
               const std::string& provenance = {});
Model load_model(const std::filesystem::path& path);
void save_world(const SyntheticWorld& world, const std::filesystem::path& path,
               const std::string& provenance = {});
SyntheticWorld load_world(const std::filesystem::path& path);
void save_cells(const CellBatch& cells, const std::filesystem::path& path,
               const std::string& provenance = {});
CellBatch load_cells(const std::filesystem::path& path);

ModelConfig model_config_from(const KeyValueConfig& cfg, const std::string& section = "model");
WorldConfig world_config_from(const KeyValueConfig& cfg, const std::string& section = "world");

}  // namespace circuitlab
