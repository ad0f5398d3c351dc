#pragma once

// Subcommand drivers shared by the command-line tool and the acceptance suite.
//
// Every driver reads its inputs from the run directory, checks that none of
// its outputs exist (unless forced), computes everything in memory and then
// writes each artifact through a temp file and rename. Each artifact embeds
// the tool version and a provenance hash over the command, the resolved
// configuration (worker count and paths excluded) and the input file bytes.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "circuitlab/config.hpp"
#include "circuitlab/model.hpp"
#include "circuitlab/sae.hpp"

namespace circuitlab {

inline constexpr const char* kToolVersion = "0.1.0";

struct RunOptions {
  std::optional<std::filesystem::path> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::filesystem::path out_dir = "out";
  bool force = false;
  /// Extra "section.key" = value pairs applied after the config file.
  std::vector<std::pair<std::string, std::string>> overrides;
};

struct RunContext {
  std::string command;
  KeyValueConfig config;
  std::filesystem::path out_dir;
  bool force = false;
  std::size_t workers = 1;
  std::uint64_t seed = 1;
  bool quiet = false;
};

RunContext make_context(const std::string& command, const RunOptions& options);

struct Artifact {
  std::filesystem::path path;
  std::uint64_t checksum = 0;
};

std::vector<Artifact> cmd_generate(const RunContext& ctx);
std::vector<Artifact> cmd_train_sae(const RunContext& ctx);
std::vector<Artifact> cmd_trace(const RunContext& ctx);
std::vector<Artifact> cmd_triplets(const RunContext& ctx);
std::vector<Artifact> cmd_steer(const RunContext& ctx);
std::vector<Artifact> cmd_analyze(const RunContext& ctx);

/// Feature whose decoder direction has the largest cosine with `direction`.
struct FeatureMatch {
  std::uint32_t feature = 0;
  double cosine = 0.0;
};
FeatureMatch dominant_feature(const SaeParams& sae, std::span<const double> direction);

/// Labels each feature with the annotation of its best-aligned world direction
/// when that alignment exceeds `min_cosine`.
void annotate_catalog(FeatureCatalog& catalog, const SaeParams& sae, const SyntheticWorld& world,
                      double min_cosine = 0.7);

std::string sae_filename(std::size_t layer);

}  // namespace circuitlab
