#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "circuitlab/errors.hpp"
#include "circuitlab/pipeline.hpp"

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::size_t workers = 0;
  std::string out_dir = "out";
  bool force = false;
  bool quiet = false;
  std::vector<std::string> sets;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "Key-value config file")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "Run seed (sub-seeds derive from it)");
  sub->add_option("--workers", c.workers, "Worker threads (default: available parallelism)")->check(CLI::PositiveNumber);
  sub->add_option("--out-dir", c.out_dir, "Run directory for inputs and outputs");
  sub->add_flag("--force", c.force, "Overwrite existing outputs");
  sub->add_flag("--quiet", c.quiet, "Suppress progress on stderr");
  sub->add_option("--set", c.sets, "Override a config key, section.key=value (repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
  using namespace circuitlab;
  CLI::App app{"circuitlab: causal circuit tracing, combinatorial ablation and feature steering on a toy model"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  Common common;
  struct Cmd {
    const char* name;
    const char* help;
    std::vector<Artifact> (*fn)(const RunContext&);
  };
  const Cmd cmds[] = {
      {"generate", "Build the synthetic world, toy model and cells", cmd_generate},
      {"train-sae", "Train one TopK autoencoder per layer and write the feature catalog", cmd_train_sae},
      {"trace", "Exhaustive single-feature ablation tracing from one source layer", cmd_trace},
      {"triplets", "Seven-condition combinatorial ablation of feature triplets", cmd_triplets},
      {"steer", "Amplify features in early-pseudotime cells and measure state shift", cmd_steer},
      {"analyze", "Edge-count, hub, attenuation and annotation statistics", cmd_analyze},
  };
  for (const auto& c : cmds) add_common(app.add_subcommand(c.name, c.help), common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }

  try {
    for (const auto& c : cmds) {
      auto* sub = app.get_subcommand(c.name);
      if (!sub->parsed()) continue;
      RunOptions o;
      if (!common.config.empty()) o.config_path = common.config;
      if (sub->count("--seed")) o.seed = common.seed;
      if (sub->count("--workers")) o.workers = common.workers;
      o.out_dir = common.out_dir;
      o.force = common.force;
      for (const auto& s : common.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects section.key=value, got '" + s + "'");
        o.overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
      }
      auto ctx = make_context(c.name, o);
      ctx.quiet = common.quiet;
      for (const auto& a : c.fn(ctx)) std::cout << hex64(a.checksum) << "  " << a.path.string() << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kData);
  } catch (const std::bad_alloc&) {
    std::cerr << "error: out of memory\n";
    return static_cast<int>(ExitCode::kNumeric);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kData);
  }
  return 0;
}
