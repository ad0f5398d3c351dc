#include "circuitlab/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <thread>

#include <json.hpp>

#include "circuitlab/binary_io.hpp"
#include "circuitlab/combinatorics.hpp"
#include "circuitlab/errors.hpp"
#include "circuitlab/graph_analysis.hpp"
#include "circuitlab/steering.hpp"
#include "circuitlab/tracing.hpp"

namespace circuitlab {
namespace fs = std::filesystem;

namespace {

// Keys that change how a run executes but never what it computes.
bool excluded_from_provenance(const std::string& key) {
  return key == "run.workers" || key == "run.force" || key == "run.out_dir";
}

std::vector<std::size_t> to_sizes(const std::vector<std::int64_t>& v, const std::string& key) {
  std::vector<std::size_t> out;
  for (auto x : v) {
    if (x < 0) throw ConfigError(key + " must be non-negative");
    out.push_back(static_cast<std::size_t>(x));
  }
  return out;
}

std::uint64_t file_hash(const fs::path& p) {
  const auto bytes = io::read_file(p);
  return fnv1a(bytes);
}

class Run {
 public:
  Run(const RunContext& ctx, std::vector<std::string> outputs) : ctx_(ctx), outputs_(std::move(outputs)) {
    fs::create_directories(ctx.out_dir);
    std::vector<std::string> clashes;
    for (const auto& name : outputs_)
      if (fs::exists(ctx.out_dir / name)) clashes.push_back(name);
    if (!clashes.empty() && !ctx.force)
      throw ConfigError("refusing to overwrite existing " + clashes.front() + " in " + ctx.out_dir.string() +
                        " (pass --force)");
  }

  fs::path input(const std::string& name) {
    const auto p = ctx_.out_dir / name;
    if (!fs::exists(p)) throw DataError("missing input " + p.string() + "; run the earlier subcommand first");
    inputs_.emplace_back(name, file_hash(p));
    return p;
  }

  /// Records an effective setting that the config file may not spell out.
  void note(const std::string& key, const std::string& value) { notes_[key] = value; }

  std::map<std::string, std::string> resolved() const {
    std::map<std::string, std::string> out;
    for (const auto& [k, v] : ctx_.config.values())
      if (!excluded_from_provenance(k)) out[k] = v;
    for (const auto& [k, v] : notes_) out[k] = v;
    return out;
  }

  /// Call once every input and note has been registered.
  void seal() {
    std::string text = "command=" + ctx_.command + "\nversion=" + kToolVersion + "\n";
    for (const auto& [k, v] : resolved()) text += k + "=" + v + "\n";
    for (const auto& [name, h] : inputs_) text += "input " + name + "=" + hex64(h) + "\n";
    hash_ = fnv1a(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }

  std::string tag() const {
    return std::string("tool=circuitlab version=") + kToolVersion + " command=" + ctx_.command +
           " provenance=" + hex64(hash_);
  }
  std::uint64_t hash() const { return hash_; }

  void text(const std::string& name, std::string body) { pending_.push_back({name, std::move(body), {}, {}}); }
  void csv(const std::string& name, const std::string& body) { text(name, "# " + tag() + "\n" + body); }
  void jsonl(const std::string& name, const std::string& body) {
    nlohmann::ordered_json meta;
    meta["meta"] = {{"tool", "circuitlab"}, {"version", kToolVersion}, {"command", ctx_.command},
                    {"provenance", hex64(hash_)}};
    text(name, meta.dump() + "\n" + body);
  }
  void bytes(const std::string& name, std::vector<std::uint8_t> body) {
    pending_.push_back({name, {}, std::move(body), {}});
  }
  void writer(const std::string& name, std::function<void(const fs::path&)> fn) {
    pending_.push_back({name, {}, {}, std::move(fn)});
  }

  std::vector<Artifact> commit() {
    std::vector<Artifact> out;
    for (auto& p : pending_) {
      if (std::find(outputs_.begin(), outputs_.end(), p.name) == outputs_.end())
        throw std::logic_error("undeclared output " + p.name);
      const auto path = ctx_.out_dir / p.name;
      if (p.fn) p.fn(path);
      else if (!p.raw.empty()) io::write_file_atomic(path, p.raw);
      else io::write_file_atomic(path, std::string_view(p.body));
      out.push_back({path, file_hash(path)});
    }
    nlohmann::ordered_json m;
    m["tool"] = "circuitlab";
    m["version"] = kToolVersion;
    m["command"] = ctx_.command;
    m["provenance"] = hex64(hash_);
    nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
    for (const auto& [k, v] : resolved()) cfg[k] = v;
    m["config"] = cfg;
    auto& in = m["inputs"] = nlohmann::ordered_json::object();
    for (const auto& [name, h] : inputs_) in[name] = hex64(h);
    auto& arts = m["artifacts"] = nlohmann::ordered_json::object();
    for (const auto& a : out) arts[a.path.filename().string()] = hex64(a.checksum);
    const auto manifest = ctx_.out_dir / (manifest_name(ctx_.command));
    io::write_file_atomic(manifest, std::string_view(m.dump(2) + "\n"));
    out.push_back({manifest, file_hash(manifest)});
    return out;
  }

  static std::string manifest_name(const std::string& command) { return command + "_manifest.json"; }

 private:
  struct Pending {
    std::string name;
    std::string body;
    std::vector<std::uint8_t> raw;
    std::function<void(const fs::path&)> fn;
  };
  const RunContext& ctx_;
  std::vector<std::string> outputs_;
  std::vector<std::pair<std::string, std::uint64_t>> inputs_;
  std::map<std::string, std::string> notes_;
  std::vector<Pending> pending_;
  std::uint64_t hash_ = 0;
};

std::vector<std::string> with_manifest(const std::string& command, std::vector<std::string> names) {
  names.push_back(Run::manifest_name(command));
  return names;
}

void progress_line(const RunContext& ctx, const std::string& msg) {
  if (!ctx.quiet) std::cerr << "[" << ctx.command << "] " << msg << "\n";
}

std::vector<SaeParams> load_saes(Run& run, const Model& model) {
  std::vector<SaeParams> saes;
  for (std::size_t l = 0; l < model.config.n_layers; ++l) {
    saes.push_back(load_sae(run.input(sae_filename(l))));
    if (saes.back().layer != l) throw DataError(sae_filename(l) + " holds an autoencoder for another layer");
    if (saes.back().d_model() != model.config.d_model) throw DataError(sae_filename(l) + " has the wrong d_model");
  }
  return saes;
}

Matrix stack_layer(const std::vector<ResidualTrace>& traces, std::size_t layer) {
  if (traces.empty()) return {};
  const auto& first = traces.front().hidden[layer];
  Matrix out(traces.size() * first.rows(), first.cols());
  std::size_t r = 0;
  for (const auto& t : traces)
    for (std::size_t p = 0; p < t.hidden[layer].rows(); ++p, ++r) {
      const auto src = t.hidden[layer].row(p);
      std::copy(src.begin(), src.end(), out.row(r).begin());
    }
  return out;
}

std::string triplets_csv(const std::vector<Triplet>& ts) {
  std::string out = "pathway_tag,type,layerA,featA,layerB,featB,layerC,featC\n";
  for (const auto& t : ts) {
    out += t.pathway_tag + ',' + (t.type == TripletType::kSamePathway ? "same-pathway" : "cross-pathway");
    for (const auto& m : t.members) out += ',' + std::to_string(m.layer) + ',' + std::to_string(m.feature);
    out += '\n';
  }
  return out;
}

std::string steer_specs_csv(const std::vector<SteerSpec>& specs) {
  std::string out = "layer,feature,label,switch_d\n";
  for (const auto& s : specs)
    out += std::to_string(s.layer) + ',' + std::to_string(s.feature) + ',' + s.label + ',' + s.switch_d + '\n';
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string read_text(const fs::path& p) {
  const auto b = io::read_file(p);
  return std::string(b.begin(), b.end());
}

}  // namespace

std::string sae_filename(std::size_t layer) { return "sae_layer" + std::to_string(layer) + ".bin"; }

RunContext make_context(const std::string& command, const RunOptions& o) {
  RunContext ctx;
  ctx.command = command;
  if (o.config_path) ctx.config = KeyValueConfig::load(*o.config_path);
  for (const auto& [k, v] : o.overrides) ctx.config.set(k, v);
  if (o.seed) ctx.config.set("run.seed", std::to_string(*o.seed));
  ctx.seed = ctx.config.get_u64("run.seed", 1);
  ctx.config.set("run.seed", std::to_string(ctx.seed));
  // Sub-seeds derive from the run seed unless pinned in the file.
  const std::pair<const char*, std::uint64_t> derived[] = {
      {"world.seed", 0}, {"model.seed", 1}, {"generate.cell_seed", 2}, {"train.seed", 3}};
  for (const auto& [key, offset] : derived)
    if (!ctx.config.contains(key)) ctx.config.set(key, std::to_string(ctx.seed + offset));
  const auto hw = std::max(1u, std::thread::hardware_concurrency());
  ctx.workers = o.workers ? *o.workers : static_cast<std::size_t>(ctx.config.get_u64("run.workers", hw));
  if (ctx.workers == 0) throw ConfigError("--workers must be at least 1");
  ctx.out_dir = o.out_dir;
  ctx.force = o.force;
  return ctx;
}

FeatureMatch dominant_feature(const SaeParams& sae, std::span<const double> direction) {
  FeatureMatch best{0, -2.0};
  for (std::size_t f = 0; f < sae.d_sae(); ++f) {
    const double c = cosine(sae.direction(f), direction);
    if (c > best.cosine) best = {static_cast<std::uint32_t>(f), c};
  }
  return best;
}

void annotate_catalog(FeatureCatalog& catalog, const SaeParams& sae, const SyntheticWorld& world, double min_cosine) {
  for (auto& info : catalog.features) {
    double best = 0.0;
    std::size_t best_dir = 0;
    for (std::size_t dir = 0; dir < world.d_model; ++dir) {
      const double c = std::fabs(cosine(sae.direction(info.feature), world.direction(dir)));
      if (c > best) {
        best = c;
        best_dir = dir;
      }
    }
    info.annotation.reset();
    if (best > min_cosine) {
      const auto it = world.annotations.find(best_dir);
      if (it != world.annotations.end()) info.annotation = it->second;
    }
  }
}

std::vector<Artifact> cmd_generate(const RunContext& ctx) {
  Run run(ctx, with_manifest(ctx.command, {"world.bin", "model.bin", "cells.bin"}));
  run.seal();
  auto mc = model_config_from(ctx.config);
  const auto wc = world_config_from(ctx.config);
  const auto n_cells = ctx.config.get_u64("generate.n_cells", 500);
  const auto cell_seed = ctx.config.get_u64("generate.cell_seed", ctx.seed + 2);
  const auto world = generate_world(mc, wc);
  const auto model = build_toy_model(mc, world);
  const auto cells = generate_cells(world, mc.seq_len, n_cells, cell_seed);
  progress_line(ctx, "world: " + std::to_string(world.planted_edges.size()) + " planted edges, " +
                         std::to_string(world.pathway_groups.size()) + " pathway groups; " +
                         std::to_string(cells.size()) + " cells");
  const auto tag = run.tag();
  run.writer("world.bin", [&](const fs::path& p) { save_world(world, p, tag); });
  run.writer("model.bin", [&](const fs::path& p) { save_model(model, p, tag); });
  run.writer("cells.bin", [&](const fs::path& p) { save_cells(cells, p, tag); });
  return run.commit();
}

std::vector<Artifact> cmd_train_sae(const RunContext& ctx) {
  const auto model_in = ctx.out_dir / "model.bin";
  if (!fs::exists(model_in)) throw DataError("missing input " + model_in.string() + "; run generate first");
  const auto n_layers = load_model(model_in).config.n_layers;
  std::vector<std::string> names;
  for (std::size_t l = 0; l < n_layers; ++l) names.push_back(sae_filename(l));
  names.insert(names.end(), {"catalog.csv", "sae_loss.csv"});
  Run run(ctx, with_manifest(ctx.command, names));
  const auto model = load_model(run.input("model.bin"));
  const auto world = load_world(run.input("world.bin"));
  const auto all_cells = load_cells(run.input("cells.bin"));
  run.seal();

  const auto& c = ctx.config;
  SaeTrainConfig base;
  base.expansion = c.get_u64("train.expansion", base.expansion);
  base.k = c.get_u64("train.k", base.k);
  base.learning_rate = c.get_double("train.learning_rate", base.learning_rate);
  base.batch_size = c.get_u64("train.batch_size", base.batch_size);
  base.epochs = c.get_u64("train.epochs", base.epochs);
  base.holdout_fraction = c.get_double("train.holdout_fraction", base.holdout_fraction);
  base.seed = c.get_u64("train.seed", ctx.seed + 3);
  base.log_every = c.get_u64("train.log_every", base.log_every);
  const auto n_cells = std::min<std::size_t>(c.get_u64("train.n_cells", 128), all_cells.size());
  const double annotate_cos = c.get_double("train.annotation_cosine", 0.7);
  const auto cells = all_cells.slice(0, n_cells);
  const auto traces = forward_full(model, cells);

  std::vector<SaeParams> saes(n_layers);
  std::vector<FeatureCatalog> catalogs(n_layers);
  std::vector<SaeTrainResult> results(n_layers);
  std::vector<Matrix> data(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) data[l] = stack_layer(traces, l);
  auto train_layer = [&](std::size_t l) {
    auto cfg = base;
    cfg.layer = l;
    cfg.seed = base.seed + l;
    results[l] = train_sae(data[l], cfg);
    catalogs[l] = build_catalog(results[l].params, data[l]);
    annotate_catalog(catalogs[l], results[l].params, world, annotate_cos);
  };
  // Layers are independent; each is trained deterministically from its own seed.
  const auto workers = std::min(ctx.workers, n_layers);
  if (workers <= 1) {
    for (std::size_t l = 0; l < n_layers; ++l) train_layer(l);
  } else {
    std::vector<std::exception_ptr> errors(n_layers);
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
          for (std::size_t l = w; l < n_layers; l += workers) {
            try {
              train_layer(l);
            } catch (...) {
              errors[l] = std::current_exception();
            }
          }
        });
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  std::string loss = "layer,step,train_loss\n";
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& r = results[l];
    progress_line(ctx, "layer " + std::to_string(l) + ": loss " + std::to_string(r.initial_train_loss) + " -> " +
                           std::to_string(r.final_train_loss) + " (holdout " + std::to_string(r.final_holdout_loss) +
                           ")");
    for (const auto& rec : r.log) {
      loss += std::to_string(l) + ',' + std::to_string(rec.step) + ',' + num(rec.loss) + '\n';
    }
  }
  const auto tag = run.tag();
  for (std::size_t l = 0; l < n_layers; ++l) {
    saes[l] = results[l].params;
    run.writer(sae_filename(l), [&, l](const fs::path& p) { save_sae(saes[l], p, tag); });
  }
  run.csv("catalog.csv", catalog_csv(catalogs));
  run.csv("sae_loss.csv", loss);
  return run.commit();
}

std::vector<Artifact> cmd_trace(const RunContext& ctx) {
  Run run(ctx, with_manifest(ctx.command, {"edges.csv", "edges.bin", "trace_summary.json"}));
  const auto model = load_model(run.input("model.bin"));
  const auto all_cells = load_cells(run.input("cells.bin"));
  const auto saes = load_saes(run, model);
  const auto catalogs = parse_catalog_csv(read_text(run.input("catalog.csv")));
  const auto& c = ctx.config;
  TraceOptions opt;
  opt.thresholds.d_threshold = c.get_double("trace.d_threshold", opt.thresholds.d_threshold);
  opt.thresholds.consistency_threshold = c.get_double("trace.consistency_threshold", opt.thresholds.consistency_threshold);
  opt.thresholds.frequency_gate = c.get_double("trace.frequency_gate", opt.thresholds.frequency_gate);
  // Effective thresholds land in provenance whether overridden or defaulted.
  run.note("trace.d_threshold", num(opt.thresholds.d_threshold));
  run.note("trace.consistency_threshold", num(opt.thresholds.consistency_threshold));
  run.note("trace.frequency_gate", num(opt.thresholds.frequency_gate));
  run.seal();

  const auto source = c.get_u64("trace.source_layer", 2);
  std::vector<std::size_t> downstream = to_sizes(c.get_ints("trace.downstream_layers", {3, 4, 5}), "trace.downstream_layers");
  const auto offset = c.get_u64("trace.cell_offset", 0);
  const auto n_cells = c.get_u64("trace.n_cells", 20);
  if (offset + n_cells > all_cells.size()) throw DataError("trace needs more cells than cells.bin holds");
  if (source >= saes.size()) throw ConfigError("trace.source_layer has no autoencoder");
  for (auto l : downstream)
    if (l <= source || l >= saes.size()) throw ConfigError("trace.downstream_layers must lie above the source layer");
  const auto cat = std::find_if(catalogs.begin(), catalogs.end(), [&](const auto& k) { return k.layer == source; });
  if (cat == catalogs.end()) throw DataError("catalog has no entries for the source layer");

  opt.workers = ctx.workers;
  opt.config_hash = run.hash();
  opt.seed = ctx.seed;
  if (!ctx.quiet)
    opt.progress = [&](const TraceProgress& p) {
      std::cerr << "[trace] " << p.done << "/" << p.total << " features\n";
    };
  opt.progress_every = c.get_u64("trace.progress_every", 64);
  const auto graph = trace_exhaustive(model, saes, all_cells.slice(offset, offset + n_cells), source, downstream, *cat, opt);
  progress_line(ctx, std::to_string(graph.traced_features.size()) + " features traced, " +
                         std::to_string(graph.edges.size()) + " edges");
  run.csv("edges.csv", edges_csv(graph));
  run.bytes("edges.bin", edges_binary(graph));
  auto summary = nlohmann::ordered_json::parse(trace_summary_json(graph));
  summary["tool"] = "circuitlab";
  summary["version"] = kToolVersion;
  summary["provenance"] = hex64(run.hash());
  run.text("trace_summary.json", summary.dump(2) + "\n");
  return run.commit();
}

std::vector<Artifact> cmd_triplets(const RunContext& ctx) {
  Run run(ctx, with_manifest(ctx.command, {"triplets_input.csv", "triplet_report.csv", "triplet_targets.jsonl"}));
  const auto model = load_model(run.input("model.bin"));
  const auto all_cells = load_cells(run.input("cells.bin"));
  const auto saes = load_saes(run, model);
  const auto& c = ctx.config;
  std::vector<Triplet> triplets;
  if (const auto file = c.get("triplets.file")) {
    const auto bytes = io::read_file(*file);
    triplets = parse_triplets_csv(std::string(bytes.begin(), bytes.end()));
    run.note("triplets.file_hash", hex64(fnv1a(bytes)));
  } else {
    const auto world = load_world(run.input("world.bin"));
    const auto& groups = world.pathway_groups;
    if (groups.empty()) throw DataError("world has no pathway groups and no triplets.file was given");
    auto member = [&](const PathwayGroup& g, std::size_t m) {
      return FeatureRef{g.layers[m], dominant_feature(saes[g.layers[m]], world.direction(g.directions[m])).feature};
    };
    for (const auto& g : groups)
      triplets.push_back({{member(g, 0), member(g, 1), member(g, 2)}, g.tag, TripletType::kSamePathway});
    if (groups.size() >= 3)
      for (std::size_t i = 0; i < groups.size(); ++i) {
        const auto& a = groups[i];
        const auto& b = groups[(i + 1) % groups.size()];
        const auto& d = groups[(i + 2) % groups.size()];
        triplets.push_back({{member(a, 0), member(b, 1), member(d, 2)}, "cross_" + std::to_string(i),
                            TripletType::kCrossPathway});
      }
  }
  run.seal();
  const auto n_cells = std::min<std::size_t>(c.get_u64("triplets.n_cells", 200), all_cells.size());
  const auto measurement = c.get_u64("triplets.measurement_layer", model.config.n_layers - 1);
  const double eps = c.get_double("triplets.epsilon", 0.05);
  const double sig = c.get_double("triplets.significance", 0.5);
  const auto semantics = c.get_string("triplets.coefficients", "sequential");
  if (semantics != "sequential" && semantics != "clean")
    throw ConfigError("triplets.coefficients must be sequential or clean");
  const auto source = semantics == "clean" ? CoefficientSource::kClean : CoefficientSource::kSequential;
  const auto cells = all_cells.slice(0, n_cells);
  std::vector<TripletReport> reports;
  std::string detail;
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    const auto effects = run_conditions(model, saes, triplets[i], cells, measurement, ctx.workers, source);
    reports.push_back(triplet_report(effects, sig, eps));
    detail += triplet_targets_jsonl(i, triplets[i], effects, eps);
    progress_line(ctx, triplets[i].pathway_tag + ": " + std::to_string(reports.back().n_targets) + " significant targets");
  }
  run.csv("triplets_input.csv", triplets_csv(triplets));
  run.csv("triplet_report.csv", triplet_report_csv(triplets, reports));
  run.jsonl("triplet_targets.jsonl", detail);
  return run.commit();
}

std::vector<Artifact> cmd_steer(const RunContext& ctx) {
  Run run(ctx, with_manifest(ctx.command, {"steer_specs_input.csv", "steering.csv", "steering_cells.jsonl", "gene_deltas.csv"}));
  const auto model = load_model(run.input("model.bin"));
  const auto all_cells = load_cells(run.input("cells.bin"));
  const auto saes = load_saes(run, model);
  const auto& c = ctx.config;
  std::vector<SteerSpec> specs;
  if (const auto file = c.get("steer.file")) {
    const auto bytes = io::read_file(*file);
    specs = parse_steer_specs_csv(std::string(bytes.begin(), bytes.end()));
    run.note("steer.file_hash", hex64(fnv1a(bytes)));
  } else {
    const auto world = load_world(run.input("world.bin"));
    for (const auto& p : world.steer_plants) {
      SteerSpec s;
      s.layer = p.layer;
      s.feature = dominant_feature(saes[p.layer], world.direction(p.direction)).feature;
      s.label = p.label;
      s.switch_d = p.sign > 0 ? "+" : "-";
      specs.push_back(s);
    }
  }
  run.seal();
  const auto alphas = c.get_doubles("steer.alphas", {2.0, 5.0});
  const double early = c.get_double("steer.early_fraction", 0.30);
  const double decile = c.get_double("steer.decile", 0.10);
  const auto top_n = c.get_u64("steer.top_genes", 10);
  const auto n_cells = std::min<std::size_t>(c.get_u64("steer.n_cells", all_cells.size()), all_cells.size());
  const auto cells = all_cells.slice(0, n_cells);
  const auto traces = forward_full(model, cells);
  std::vector<std::vector<double>> logits;
  for (const auto& t : traces) logits.push_back(t.logits);
  const auto sig = compute_signatures(cells.pseudotime, logits, decile);
  std::vector<SteeringOutcome> outcomes;
  for (auto s : specs) {
    s.alphas = alphas;
    s.early_fraction = early;
    s.decile = decile;
    if (s.layer >= saes.size()) throw ConfigError("steer spec layer has no autoencoder");
    outcomes.push_back(steering_report(model, saes[s.layer], s, cells, traces, sig, top_n, ctx.workers));
    progress_line(ctx, s.label + ": " + std::to_string(outcomes.back().cell_ids.size()) + " early cells steered");
  }
  run.csv("steer_specs_input.csv", steer_specs_csv(specs));
  run.csv("steering.csv", steering_table_csv(outcomes));
  run.jsonl("steering_cells.jsonl", steering_cells_jsonl(outcomes));
  run.csv("gene_deltas.csv", gene_deltas_csv(outcomes));
  return run.commit();
}

std::vector<Artifact> cmd_analyze(const RunContext& ctx) {
  Run run(ctx, with_manifest(ctx.command, {"hubs.csv", "edge_histogram.csv", "analysis.json"}));
  const auto graph = parse_edges_binary(io::read_file(run.input("edges.bin")));
  const auto catalogs = parse_catalog_csv(read_text(run.input("catalog.csv")));
  run.seal();
  const auto& c = ctx.config;
  const auto top_n = c.get_u64("analyze.top_n", 20);
  std::vector<std::uint64_t> tails;
  for (auto v : c.get_ints("analyze.tail_thresholds", {1000, 500})) {
    if (v < 0) throw ConfigError("analyze.tail_thresholds must be non-negative");
    tails.push_back(static_cast<std::uint64_t>(v));
  }
  const auto cuts = to_sizes(c.get_ints("analyze.enrichment_cuts", {100, 20}), "analyze.enrichment_cuts");
  const auto cat = std::find_if(catalogs.begin(), catalogs.end(),
                                [&](const auto& k) { return k.layer == graph.provenance.source_layer; });
  if (cat == catalogs.end()) throw DataError("catalog has no entries for the graph's source layer");
  const auto counts = edge_counts(graph);
  const auto hubs = hub_table(counts, &*cat, top_n);
  const auto tail_rows = tail_stats(counts, tails);
  const auto att = attenuation(graph);
  const auto enrich = annotation_enrichment(counts, *cat, cuts);
  run.csv("hubs.csv", hub_table_csv(hubs));
  run.csv("edge_histogram.csv", edge_histogram_csv(counts));
  auto j = nlohmann::ordered_json::parse(analysis_json(counts, tail_rows, att, enrich));
  j["tool"] = "circuitlab";
  j["version"] = kToolVersion;
  j["provenance"] = hex64(run.hash());
  run.text("analysis.json", j.dump(2) + "\n");
  return run.commit();
}

}  // namespace circuitlab
