#pragma once

// TopK sparse autoencoders over residual-stream activations.
//
// Encoding: pre = W_enc (h - b_dec) + b_enc, keep the k largest entries of pre
// (ties go to the lower feature index), zero the rest. The retained entries are
// the activation coefficients a_f; a feature is "active" at a position when it
// is in the retained set. Decoding: b_dec + sum_f a_f d_f, with each decoder
// direction d_f kept at unit norm.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "circuitlab/tensor.hpp"

namespace circuitlab {

/// Exactly k (feature, coefficient) pairs, ordered by feature index.
struct SparseCode {
  std::vector<std::uint32_t> index;
  std::vector<double> value;

  std::size_t size() const noexcept { return index.size(); }
  /// Coefficient of `feature`, or 0 when it is not retained.
  double coefficient(std::uint32_t feature) const;
  bool contains(std::uint32_t feature) const;

  friend bool operator==(const SparseCode&, const SparseCode&) = default;
};

struct SaeParams {
  std::size_t layer = 0;
  std::size_t k = 8;
  Matrix encoder;                    // d_sae x d_model
  std::vector<double> encoder_bias;  // d_sae
  Matrix decoder;                    // d_sae x d_model; row f is the decoder direction d_f
  std::vector<double> decoder_bias;  // d_model

  std::size_t d_model() const noexcept { return encoder.cols(); }
  std::size_t d_sae() const noexcept { return encoder.rows(); }
  std::span<const double> direction(std::size_t f) const { return decoder.row(f); }
  void validate() const;
  std::uint64_t checksum() const;
};

/// Scratch buffers for repeated encoding without allocation.
struct EncodeScratch {
  std::vector<double> centered;
  std::vector<double> pre;
  std::vector<std::uint32_t> order;
};

void topk_select(std::span<const double> pre, std::size_t k, std::vector<std::uint32_t>& order, SparseCode& out);
void encode_preactivations(const SaeParams& sae, std::span<const double> h, EncodeScratch& scratch);
void encode_topk(const SaeParams& sae, std::span<const double> h, SparseCode& out, EncodeScratch& scratch);
SparseCode encode_topk(const SaeParams& sae, std::span<const double> h);
std::vector<SparseCode> encode_rows(const SaeParams& sae, const Matrix& rows);
std::vector<double> decode(const SaeParams& sae, const SparseCode& code);

struct SaeTrainConfig {
  std::size_t layer = 0;
  std::size_t expansion = 4;
  std::size_t k = 8;
  double learning_rate = 0.05;
  std::size_t batch_size = 64;
  std::size_t epochs = 60;
  double holdout_fraction = 0.1;
  std::uint64_t seed = 7;
  /// Record the training loss every `log_every` steps (0 disables the log).
  std::size_t log_every = 10;
};

struct LossRecord {
  std::size_t step = 0;
  double loss = 0.0;
};

struct SaeTrainResult {
  SaeParams params;
  double initial_train_loss = 0.0;
  double final_train_loss = 0.0;
  double initial_holdout_loss = 0.0;
  double final_holdout_loss = 0.0;
  std::vector<LossRecord> log;
};

/// Deterministic initialization used by train_sae: unit random decoder rows,
/// tied encoder, zero encoder bias, decoder bias at the data mean.
SaeParams init_sae(const Matrix& data, const SaeTrainConfig& config);

/// Mean over rows of the squared reconstruction error ||x - decode(encode(x))||^2.
double reconstruction_loss(const SaeParams& sae, const Matrix& data);

struct SaeGradients {
  Matrix encoder;
  std::vector<double> encoder_bias;
  Matrix decoder;
  std::vector<double> decoder_bias;
  double loss = 0.0;
};

/// Analytic gradient of reconstruction_loss over `rows` of `data`; the TopK
/// support is held fixed, so gradients reach only retained coefficients.
SaeGradients loss_gradients(const SaeParams& sae, const Matrix& data, std::span<const std::size_t> rows);

SaeTrainResult train_sae(const Matrix& activations, const SaeTrainConfig& config);
void renormalize_decoder(SaeParams& sae);

struct FeatureInfo {
  std::size_t feature = 0;
  std::size_t layer = 0;
  double activation_frequency = 0.0;
  std::optional<std::string> annotation;
};

struct FeatureCatalog {
  std::size_t layer = 0;
  std::vector<FeatureInfo> features;
};

/// Per-feature count of positions where the feature is retained by TopK.
std::vector<std::uint64_t> activation_counts(const SaeParams& sae, const Matrix& activations);
std::vector<double> activation_frequency(const SaeParams& sae, const Matrix& activations);
FeatureCatalog build_catalog(const SaeParams& sae, const Matrix& activations);
std::vector<std::uint32_t> active_features(const FeatureCatalog& catalog, double threshold);

std::string catalog_csv(std::span<const FeatureCatalog> catalogs);
/// Reads the catalog CSV; rows are grouped by layer in ascending order.
std::vector<FeatureCatalog> parse_catalog_csv(const std::string& text);

void save_sae(const SaeParams& sae, const std::filesystem::path& path,
               const std::string& provenance = {});
SaeParams load_sae(const std::filesystem::path& path);

}  // namespace circuitlab
