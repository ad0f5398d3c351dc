#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "circuitlab/binary_io.hpp"
#include "circuitlab/config.hpp"
#include "circuitlab/errors.hpp"
#include "circuitlab/model.hpp"

namespace circuitlab {
namespace {

Matrix random_orthonormal(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix q(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    auto row = q.row(i);
    for (;;) {
      for (double& x : row) x = normal(rng);
      // Two Gram-Schmidt passes keep rows orthogonal to ~1e-15.
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t j = 0; j < i; ++j) {
          auto prev = q.row(j);
          double proj = 0.0;
          for (std::size_t k = 0; k < d; ++k) proj += row[k] * prev[k];
          for (std::size_t k = 0; k < d; ++k) row[k] -= proj * prev[k];
        }
      }
      double n = 0.0;
      for (double x : row) n += x * x;
      n = std::sqrt(n);
      if (n > 1e-6) {
        for (double& x : row) x /= n;
        break;
      }
    }
  }
  return q;
}

std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& weights) {
  std::vector<std::size_t> counts(weights.size(), 0);
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (weights.empty() || sum <= 0.0) return counts;
  std::size_t assigned = 0;
  std::vector<std::pair<double, std::size_t>> rema;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * weights[i] / sum;
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[i];
    rema.emplace_back(-(exact - std::floor(exact)), i);
  }
  std::sort(rema.begin(), rema.end());
  for (std::size_t r = 0; assigned < total; ++r, ++assigned) ++counts[rema[r % rema.size()].second];
  return counts;
}

}  // namespace

void SyntheticWorld::validate() const {
  if (basis.rows() != d_model || basis.cols() != d_model)
    throw ConfigError("world basis does not match d_model");
  for (const auto& e : planted_edges) {
    if (e.source_direction >= d_model || e.target_direction >= d_model)
      throw ConfigError("planted edge direction index exceeds d_model");
    if (e.source_layer >= e.target_layer)
      throw ConfigError("planted edge must point to a later layer");
    if (e.strength == 0.0) throw ConfigError("planted edge strength must be nonzero");
  }
  for (const auto& g : pathway_groups) {
    if (g.directions.size() < 3) throw ConfigError("pathway group '" + g.tag + "' needs at least 3 members");
    if (g.layers.size() != g.directions.size()) throw ConfigError("pathway group layer list mismatch");
  }
  if (gene_concepts.size() != n_genes || maturity_axis.size() != n_genes)
    throw ConfigError("world gene tables do not match n_genes");
  for (const auto& gc : gene_concepts)
    for (const auto& c : gc)
      if (c.direction >= d_model) throw ConfigError("gene concept direction exceeds d_model");
}

SyntheticWorld generate_world(const ModelConfig& model, const WorldConfig& cfg) {
  model.validate();
  const std::size_t d = model.d_model;
  const std::size_t last = model.n_layers - 1;  // deepest layer with an autoencoder
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  SyntheticWorld w;
  w.d_model = d;
  w.n_genes = model.n_genes;
  w.n_layers = model.n_layers;
  w.maturity_strength = cfg.maturity_strength;
  w.basis = random_orthonormal(d, rng);

  if (cfg.n_input_concepts == 0 || cfg.n_input_concepts + 2 > d)
    throw ConfigError("n_input_concepts must be in [1, d_model - 2]");
  for (std::size_t i = 0; i < cfg.n_input_concepts; ++i) w.input_directions.push_back(2 + i);
  std::vector<std::size_t> free_dirs;
  for (std::size_t i = 2 + cfg.n_input_concepts; i < d; ++i) free_dirs.push_back(i);
  std::shuffle(free_dirs.begin(), free_dirs.end(), rng);
  std::size_t next_free = 0;
  auto take_free = [&]() {
    if (next_free >= free_dirs.size())
      throw ConfigError("world needs more free directions than d_model provides");
    return free_dirs[next_free++];
  };

  // Genes: one primary input concept each (balanced), an optional secondary, and a maturity loading.
  std::vector<bool> rank_scaled(d, false);
  for (auto dir : w.input_directions) rank_scaled[dir] = unit(rng) < 0.5;
  std::vector<std::size_t> primary(model.n_genes);
  for (std::size_t g = 0; g < model.n_genes; ++g) primary[g] = w.input_directions[g % cfg.n_input_concepts];
  std::shuffle(primary.begin(), primary.end(), rng);
  w.gene_concepts.resize(model.n_genes);
  w.gene_base_rate.resize(model.n_genes);
  w.gene_maturity.resize(model.n_genes);
  for (std::size_t g = 0; g < model.n_genes; ++g) {
    auto& gc = w.gene_concepts[g];
    gc.push_back({primary[g], 0.8 + 0.4 * unit(rng), rank_scaled[primary[g]]});
    if (cfg.n_input_concepts > 1 && unit(rng) < cfg.secondary_concept_prob) {
      std::size_t second = primary[g];
      while (second == primary[g]) second = w.input_directions[rng() % cfg.n_input_concepts];
      gc.push_back({second, 0.3 + 0.3 * unit(rng), rank_scaled[second]});
    }
    const double m = 2.0 * unit(rng) - 1.0;
    w.gene_maturity[g] = m;
    if (m > 0.25) gc.push_back({w.maturity_direction, m, false});
    if (m < -0.25) gc.push_back({w.immaturity_direction, -m, false});
    w.gene_base_rate[g] = 0.5 * normal(rng);
  }
  const double mean_m =
      std::accumulate(w.gene_maturity.begin(), w.gene_maturity.end(), 0.0) / static_cast<double>(model.n_genes);
  w.maturity_axis.resize(model.n_genes);
  for (std::size_t g = 0; g < model.n_genes; ++g) w.maturity_axis[g] = w.gene_maturity[g] - mean_m;
  normalize(w.maturity_axis);

  std::vector<std::size_t> sources = w.input_directions;
  std::shuffle(sources.begin(), sources.end(), rng);
  std::size_t next_source = 0;
  auto take_source = [&]() { return sources[next_source++ % sources.size()]; };
  auto strength = [&]() { return cfg.strength_min + (cfg.strength_max - cfg.strength_min) * unit(rng); };

  if (cfg.n_planted_edges > 0 || cfg.n_hubs > 0) {
    if (cfg.source_layer >= last) throw ConfigError("world source_layer must be below the last layer");
    for (auto t : cfg.target_layers)
      if (t <= cfg.source_layer || t > last)
        throw ConfigError("world target layers must lie in (source_layer, n_layers - 1]");
  }
  if (cfg.n_planted_edges > 0) {
    std::vector<double> weights = cfg.target_layer_weights;
    weights.resize(cfg.target_layers.size(), 1.0);
    const auto counts = apportion(cfg.n_planted_edges, weights);
    for (std::size_t li = 0; li < cfg.target_layers.size(); ++li) {
      for (std::size_t e = 0; e < counts[li]; ++e) {
        w.planted_edges.push_back({cfg.source_layer, take_source(), cfg.target_layers[li], take_free(), strength()});
      }
    }
  }
  for (std::size_t h = 0; h < cfg.n_hubs; ++h) {
    const auto src = take_source();
    for (std::size_t e = 0; e < cfg.hub_fanout; ++e) {
      const auto layer = cfg.target_layers[rng() % cfg.target_layers.size()];
      std::size_t tgt = src;
      while (tgt == src || tgt < 2) tgt = rng() % d;
      w.planted_edges.push_back({cfg.source_layer, src, layer, tgt, strength()});
    }
  }
  for (std::size_t p = 0; p < cfg.n_pathway_groups; ++p) {
    if (cfg.pathway_layers.size() < 3) throw ConfigError("pathway_layers needs at least 3 entries");
    for (std::size_t i = 1; i < cfg.pathway_layers.size(); ++i)
      if (cfg.pathway_layers[i] <= cfg.pathway_layers[i - 1])
        throw ConfigError("pathway_layers must be strictly increasing");
    if (cfg.pathway_layers.back() >= last) throw ConfigError("pathway layers must lie below the last layer");
    PathwayGroup g;
    g.tag = "pathway_" + std::to_string(p);
    g.layers = cfg.pathway_layers;
    g.directions.push_back(take_source());
    for (std::size_t m = 1; m < g.layers.size(); ++m) g.directions.push_back(take_free());
    g.target_direction = take_free();
    // Each member copies its predecessor, so all members carry one upstream signal.
    for (std::size_t m = 1; m < g.layers.size(); ++m) {
      w.planted_edges.push_back(
          {g.layers[m - 1], g.directions[m - 1], g.layers[m], g.directions[m], cfg.pathway_copy_strength});
    }
    for (std::size_t m = 0; m < g.layers.size(); ++m) {
      w.planted_edges.push_back({g.layers[m], g.directions[m], last, g.target_direction, cfg.pathway_target_strength});
    }
    for (auto dir : g.directions) w.annotations[dir] = g.tag;
    w.annotations[g.target_direction] = g.tag + "_target";
    w.pathway_groups.push_back(std::move(g));
  }

  w.steer_plants = {
      {last, w.maturity_direction, +1, "maturity_late"},
      {0, w.immaturity_direction, -1, "immaturity_early"},
      {0, w.maturity_direction, +1, "maturity_early"},
      {last, w.immaturity_direction, -1, "immaturity_late"},
  };

  w.annotations[w.maturity_direction] = "maturation";
  w.annotations[w.immaturity_direction] = "progenitor";
  for (std::size_t dir = 2; dir < d; ++dir) {
    if (w.annotations.contains(dir)) continue;
    if (unit(rng) < cfg.annotation_rate) w.annotations[dir] = "program_" + std::to_string(dir);
  }
  w.validate();
  return w;
}

CellBatch CellBatch::slice(std::size_t begin, std::size_t end) const {
  CellBatch out;
  end = std::min(end, size());
  for (std::size_t i = begin; i < end; ++i) {
    out.tokens.push_back(tokens[i]);
    out.pseudotime.push_back(pseudotime[i]);
  }
  return out;
}

CellBatch generate_cells(const SyntheticWorld& world, std::size_t seq_len, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ConfigError("generate_cells needs n >= 1");
  if (seq_len == 0 || seq_len > world.n_genes) throw ConfigError("seq_len must be in [1, n_genes]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  CellBatch batch;
  batch.tokens.reserve(n);
  std::vector<std::pair<double, std::uint32_t>> scores(world.n_genes);
  for (std::size_t c = 0; c < n; ++c) {
    const double tau = unit(rng);
    for (std::size_t g = 0; g < world.n_genes; ++g) {
      const double u = std::max(unit(rng), 1e-300);
      const double gumbel = -std::log(-std::log(u));
      const double s = world.gene_base_rate[g] + world.maturity_strength * world.gene_maturity[g] * (2.0 * tau - 1.0);
      scores[g] = {-(s + gumbel), static_cast<std::uint32_t>(g)};
    }
    // Rank-value encoding: highest-scoring genes first.
    std::partial_sort(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(seq_len), scores.end());
    std::vector<std::uint32_t> toks(seq_len);
    for (std::size_t p = 0; p < seq_len; ++p) toks[p] = scores[p].second;
    batch.tokens.push_back(std::move(toks));
    batch.pseudotime.push_back(tau);
  }
  return batch;
}

void save_world(const SyntheticWorld& w, const std::filesystem::path& path, const std::string& provenance) {
  io::ContainerWriter out(io::Kind::kWorld);
  out.add_scalar("d_model", w.d_model);
  out.add_scalar("n_genes", w.n_genes);
  out.add_scalar("n_layers", w.n_layers);
  out.add_f64("basis", w.basis.flat());
  std::vector<std::uint64_t> edge_idx;
  std::vector<double> edge_strength;
  for (const auto& e : w.planted_edges) {
    edge_idx.insert(edge_idx.end(), {e.source_layer, e.source_direction, e.target_layer, e.target_direction});
    edge_strength.push_back(e.strength);
  }
  out.add_u64("edges.index", edge_idx);
  out.add_f64("edges.strength", edge_strength);
  std::ostringstream groups;
  for (const auto& g : w.pathway_groups) {
    groups << g.tag << '\t' << g.target_direction;
    for (std::size_t m = 0; m < g.directions.size(); ++m) groups << '\t' << g.layers[m] << ':' << g.directions[m];
    groups << '\n';
  }
  out.add_string("pathways", groups.str());
  std::ostringstream steer;
  for (const auto& s : w.steer_plants) steer << s.layer << '\t' << s.direction << '\t' << s.sign << '\t' << s.label << '\n';
  out.add_string("steer_plants", steer.str());
  std::vector<std::uint64_t> gc_index;  // gene, direction, rank_scaled
  std::vector<double> gc_coef;
  for (std::size_t g = 0; g < w.gene_concepts.size(); ++g)
    for (const auto& c : w.gene_concepts[g]) {
      gc_index.insert(gc_index.end(), {g, c.direction, c.rank_scaled ? 1u : 0u});
      gc_coef.push_back(c.coefficient);
    }
  out.add_u64("genes.concept_index", gc_index);
  out.add_f64("genes.concept_coef", gc_coef);
  out.add_f64("genes.base_rate", w.gene_base_rate);
  out.add_f64("genes.maturity", w.gene_maturity);
  out.add_f64("maturity_axis", w.maturity_axis);
  out.add_u64("maturity_dirs", std::vector<std::uint64_t>{w.maturity_direction, w.immaturity_direction});
  std::vector<std::uint64_t> inputs(w.input_directions.begin(), w.input_directions.end());
  out.add_u64("input_directions", inputs);
  std::ostringstream ann;
  for (const auto& [dir, label] : w.annotations) ann << dir << '\t' << label << '\n';
  out.add_string("annotations", ann.str());
  out.add_f64("maturity_strength", std::vector<double>{w.maturity_strength});
  if (!provenance.empty()) out.add_string("provenance", provenance);
  out.write(path);
}

SyntheticWorld load_world(const std::filesystem::path& path) {
  const auto c = io::Container::read(path, io::Kind::kWorld);
  SyntheticWorld w;
  w.d_model = c.scalar("d_model");
  w.n_genes = c.scalar("n_genes");
  w.n_layers = c.scalar("n_layers");
  const auto& basis = c.f64("basis");
  if (basis.size() != w.d_model * w.d_model) throw DataError("world basis has wrong size");
  w.basis = Matrix(w.d_model, w.d_model);
  std::copy(basis.begin(), basis.end(), w.basis.data());
  const auto& ei = c.u64("edges.index");
  const auto& es = c.f64("edges.strength");
  if (ei.size() != 4 * es.size()) throw DataError("world edge tables disagree");
  for (std::size_t i = 0; i < es.size(); ++i)
    w.planted_edges.push_back({ei[4 * i], ei[4 * i + 1], ei[4 * i + 2], ei[4 * i + 3], es[i]});
  {
    std::istringstream in(c.text("pathways"));
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      PathwayGroup g;
      std::string field;
      std::getline(ls, g.tag, '\t');
      std::getline(ls, field, '\t');
      g.target_direction = std::stoull(field);
      while (std::getline(ls, field, '\t')) {
        const auto colon = field.find(':');
        g.layers.push_back(std::stoull(field.substr(0, colon)));
        g.directions.push_back(std::stoull(field.substr(colon + 1)));
      }
      w.pathway_groups.push_back(std::move(g));
    }
  }
  {
    std::istringstream in(c.text("steer_plants"));
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      SteerPlant s;
      ls >> s.layer >> s.direction >> s.sign;
      ls.ignore(1);
      std::getline(ls, s.label);
      w.steer_plants.push_back(s);
    }
  }
  const auto& gi = c.u64("genes.concept_index");
  const auto& gcoef = c.f64("genes.concept_coef");
  if (gi.size() != 3 * gcoef.size()) throw DataError("world gene concept tables disagree");
  w.gene_concepts.resize(w.n_genes);
  for (std::size_t i = 0; i < gcoef.size(); ++i) {
    if (gi[3 * i] >= w.n_genes) throw DataError("gene concept index out of range");
    w.gene_concepts[gi[3 * i]].push_back({gi[3 * i + 1], gcoef[i], gi[3 * i + 2] != 0});
  }
  w.gene_base_rate = c.f64("genes.base_rate");
  w.gene_maturity = c.f64("genes.maturity");
  w.maturity_axis = c.f64("maturity_axis");
  const auto& md = c.u64("maturity_dirs");
  w.maturity_direction = md.at(0);
  w.immaturity_direction = md.at(1);
  for (auto v : c.u64("input_directions")) w.input_directions.push_back(v);
  {
    std::istringstream in(c.text("annotations"));
    std::string line;
    while (std::getline(in, line)) {
      const auto tab = line.find('\t');
      w.annotations[std::stoull(line.substr(0, tab))] = line.substr(tab + 1);
    }
  }
  w.maturity_strength = c.f64("maturity_strength").at(0);
  w.validate();
  return w;
}

void save_cells(const CellBatch& cells, const std::filesystem::path& path, const std::string& provenance) {
  io::ContainerWriter out(io::Kind::kCells);
  const std::size_t seq = cells.size() ? cells.tokens[0].size() : 0;
  std::vector<std::uint64_t> toks;
  toks.reserve(cells.size() * seq);
  for (const auto& t : cells.tokens) {
    if (t.size() != seq) throw DataError("cells have unequal sequence lengths");
    toks.insert(toks.end(), t.begin(), t.end());
  }
  out.add_scalar("n_cells", cells.size());
  out.add_scalar("seq_len", seq);
  out.add_u64("tokens", toks);
  out.add_f64("pseudotime", cells.pseudotime);
  if (!provenance.empty()) out.add_string("provenance", provenance);
  out.write(path);
}

CellBatch load_cells(const std::filesystem::path& path) {
  const auto c = io::Container::read(path, io::Kind::kCells);
  const auto n = c.scalar("n_cells");
  const auto seq = c.scalar("seq_len");
  const auto& toks = c.u64("tokens");
  if (toks.size() != n * seq) throw DataError("cell token table has wrong size");
  CellBatch b;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::uint32_t> t(seq);
    for (std::size_t p = 0; p < seq; ++p) t[p] = static_cast<std::uint32_t>(toks[i * seq + p]);
    b.tokens.push_back(std::move(t));
  }
  b.pseudotime = c.f64("pseudotime");
  if (b.pseudotime.size() != n) throw DataError("pseudotime table has wrong size");
  return b;
}

WorldConfig world_config_from(const KeyValueConfig& cfg, const std::string& s) {
  WorldConfig w;
  auto to_sizes = [](const std::vector<std::int64_t>& v) {
    std::vector<std::size_t> out;
    for (auto x : v) {
      if (x < 0) throw ConfigError("layer indices must be non-negative");
      out.push_back(static_cast<std::size_t>(x));
    }
    return out;
  };
  auto ints = [](const std::vector<std::size_t>& v) { return std::vector<std::int64_t>(v.begin(), v.end()); };
  w.seed = cfg.get_u64(s + ".seed", w.seed);
  w.n_input_concepts = cfg.get_u64(s + ".n_input_concepts", w.n_input_concepts);
  w.secondary_concept_prob = cfg.get_double(s + ".secondary_concept_prob", w.secondary_concept_prob);
  w.n_planted_edges = cfg.get_u64(s + ".n_planted_edges", w.n_planted_edges);
  w.source_layer = cfg.get_u64(s + ".source_layer", w.source_layer);
  w.target_layers = to_sizes(cfg.get_ints(s + ".target_layers", ints(w.target_layers)));
  w.target_layer_weights = cfg.get_doubles(s + ".target_layer_weights", w.target_layer_weights);
  w.strength_min = cfg.get_double(s + ".strength_min", w.strength_min);
  w.strength_max = cfg.get_double(s + ".strength_max", w.strength_max);
  w.n_hubs = cfg.get_u64(s + ".n_hubs", w.n_hubs);
  w.hub_fanout = cfg.get_u64(s + ".hub_fanout", w.hub_fanout);
  w.n_pathway_groups = cfg.get_u64(s + ".n_pathway_groups", w.n_pathway_groups);
  w.pathway_layers = to_sizes(cfg.get_ints(s + ".pathway_layers", ints(w.pathway_layers)));
  w.pathway_copy_strength = cfg.get_double(s + ".pathway_copy_strength", w.pathway_copy_strength);
  w.pathway_target_strength = cfg.get_double(s + ".pathway_target_strength", w.pathway_target_strength);
  w.maturity_strength = cfg.get_double(s + ".maturity_strength", w.maturity_strength);
  w.annotation_rate = cfg.get_double(s + ".annotation_rate", w.annotation_rate);
  return w;
}

}  // namespace circuitlab
