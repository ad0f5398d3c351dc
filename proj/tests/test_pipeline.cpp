#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>

#include <doctest.h>

#include "circuitlab/errors.hpp"
#include "circuitlab/pipeline.hpp"
#include "tiny_config.hpp"

using namespace circuitlab;
namespace fs = std::filesystem;

namespace {

using Runner = std::vector<Artifact> (*)(const RunContext&);

const std::pair<const char*, Runner> kCommands[] = {
    {"generate", cmd_generate}, {"train-sae", cmd_train_sae}, {"trace", cmd_trace},
    {"triplets", cmd_triplets}, {"steer", cmd_steer},         {"analyze", cmd_analyze},
};

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("circuitlab_pipeline_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunOptions options(const fs::path& config, const fs::path& out, std::size_t workers) {
  RunOptions o;
  o.config_path = config;
  o.out_dir = out;
  o.workers = workers;
  return o;
}

std::map<std::string, std::string> read_all(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    out[e.path().filename().string()] = std::string(std::istreambuf_iterator<char>(in), {});
  }
  return out;
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(CIRCUITLAB_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("full pipeline is deterministic and independent of worker count") {
  const auto root = scratch("det");
  const auto cfg = circuitlab::testing::write_tiny_config(root);
  std::map<std::string, std::map<std::string, std::string>> runs;
  for (std::size_t workers : {1, 3}) {
    const auto out = root / ("w" + std::to_string(workers));
    for (const auto& [name, fn] : kCommands) {
      auto ctx = make_context(name, options(cfg, out, workers));
      ctx.quiet = true;
      const auto arts = fn(ctx);
      CHECK(!arts.empty());
      CHECK(fs::exists(out / (std::string(name) + "_manifest.json")));
    }
    runs["w" + std::to_string(workers)] = read_all(out);
  }
  const auto& a = runs["w1"];
  const auto& b = runs["w3"];
  REQUIRE(a.size() == b.size());
  for (const auto& [file, bytes] : a) {
    INFO(file);
    CHECK(b.at(file) == bytes);
  }
  CHECK(a.contains("edges.bin"));
  CHECK(a.at("edges.csv").rfind("# tool=circuitlab version=0.1.0 command=trace provenance=", 0) == 0);
  CHECK(a.at("triplet_targets.jsonl").rfind("{\"meta\":", 0) == 0);
  fs::remove_all(root);
}

TEST_CASE("outputs are protected unless forced") {
  const auto root = scratch("force");
  const auto cfg = circuitlab::testing::write_tiny_config(root);
  const auto out = root / "nested" / "run";
  auto ctx = make_context("generate", options(cfg, out, 1));
  ctx.quiet = true;
  const auto first = cmd_generate(ctx);
  CHECK(fs::exists(out / "world.bin"));
  CHECK_THROWS_AS(cmd_generate(ctx), ConfigError);
  ctx.force = true;
  const auto second = cmd_generate(ctx);
  REQUIRE(first.size() == second.size());
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(first[i].checksum == second[i].checksum);
  for (const auto& e : fs::directory_iterator(out)) CHECK(e.path().extension() != ".tmp");
  fs::remove_all(root);
}

TEST_CASE("missing inputs are data errors") {
  const auto root = scratch("missing");
  const auto cfg = circuitlab::testing::write_tiny_config(root);
  auto ctx = make_context("trace", options(cfg, root / "empty", 1));
  ctx.quiet = true;
  CHECK_THROWS_AS(cmd_trace(ctx), DataError);
  fs::remove_all(root);
}

TEST_CASE("seed overrides and derived sub-seeds") {
  RunOptions o;
  o.seed = 9;
  o.overrides = {{"train.seed", "100"}};
  const auto ctx = make_context("generate", o);
  CHECK(ctx.seed == 9);
  CHECK(ctx.config.get_u64("world.seed", 0) == 9);
  CHECK(ctx.config.get_u64("model.seed", 0) == 10);
  CHECK(ctx.config.get_u64("generate.cell_seed", 0) == 11);
  CHECK(ctx.config.get_u64("train.seed", 0) == 100);
  o.workers = 0;
  CHECK_THROWS_AS(make_context("generate", o), ConfigError);
}

TEST_CASE("command-line exit codes") {
  const auto root = scratch("cli");
  const auto cfg = circuitlab::testing::write_tiny_config(root);
  const auto out = (root / "out").string();
  CHECK(run_cli("generate --config " + cfg.string() + " --out-dir " + out + " --quiet") == 0);
  CHECK(run_cli("generate --config " + cfg.string() + " --out-dir " + out + " --quiet") == 2);
  CHECK(run_cli("generate --config " + (root / "absent.ini").string() + " --out-dir " + out) == 2);
  CHECK(run_cli("generate --bogus-flag") == 2);
  CHECK(run_cli("trace --config " + cfg.string() + " --out-dir " + (root / "none").string()) == 3);
  CHECK(run_cli("generate --config " + cfg.string() + " --out-dir " + out + " --force --set model.d_model=4") == 2);
  fs::remove_all(root);
}
