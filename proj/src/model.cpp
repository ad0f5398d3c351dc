#include "circuitlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "circuitlab/binary_io.hpp"
#include "circuitlab/config.hpp"
#include "circuitlab/errors.hpp"
#include "circuitlab/kernels.hpp"

namespace circuitlab {

void ModelConfig::validate() const {
  if (n_layers < 2) throw ConfigError("n_layers must be >= 2");
  if (d_model < 8) throw ConfigError("d_model must be >= 8");
  if (n_genes < d_model) throw ConfigError("n_genes must be >= d_model");
  if (seq_len < 1 || seq_len > n_genes) throw ConfigError("seq_len must be in [1, n_genes]");
  if (!(mixing_scale >= 0.0) || !(decay >= 0.0) || decay >= 1.0)
    throw ConfigError("mixing_scale must be >= 0 and decay in [0, 1)");
}

double Model::rank_weight(std::size_t position) const {
  if (config.seq_len <= 1) return 1.0;
  return 1.0 - 0.5 * static_cast<double>(position) / static_cast<double>(config.seq_len - 1);
}

std::uint64_t Model::checksum() const {
  auto h = fnv1a(embed_const.flat());
  h = fnv1a(embed_rank.flat(), h);
  for (const auto& b : blocks) {
    h = fnv1a(b.w_in.flat(), h);
    h = fnv1a(b.b_in, h);
    h = fnv1a(b.w_out.flat(), h);
  }
  h = fnv1a(unembed.flat(), h);
  return fnv1a(unembed_bias, h);
}

Model build_toy_model(const ModelConfig& config, const SyntheticWorld& world) {
  config.validate();
  if (world.d_model != config.d_model || world.n_genes != config.n_genes)
    throw ConfigError("world dimensions (d_model=" + std::to_string(world.d_model) + ", n_genes=" +
                      std::to_string(world.n_genes) + ") do not match the model config");
  world.validate();
  for (const auto& e : world.planted_edges)
    if (e.target_layer > config.n_layers) throw ConfigError("planted edge targets a layer past the last block");

  const std::size_t d = config.d_model;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Model m;
  m.config = config;
  m.embed_const = Matrix(config.n_genes, d);
  m.embed_rank = Matrix(config.n_genes, d);
  for (std::size_t g = 0; g < config.n_genes; ++g) {
    for (const auto& c : world.gene_concepts[g]) {
      auto dst = c.rank_scaled ? m.embed_rank.row(g) : m.embed_const.row(g);
      kernels::scalar_table().axpy(c.coefficient, world.direction(c.direction).data(), dst.data(), d);
    }
  }

  // Decay erodes every direction except the maturity pair and the input concepts
  // that no planted edge reads: written signals and traced sources fade while
  // the rest of the cell's content persists.
  std::vector<std::size_t> decaying;
  if (config.decay > 0.0) {
    std::vector<bool> keep(d, false);
    for (auto dir : world.input_directions) keep[dir] = true;
    for (const auto& e : world.planted_edges) keep[e.source_direction] = false;
    keep[world.maturity_direction] = keep[world.immaturity_direction] = true;
    for (std::size_t dir = 0; dir < d; ++dir)
      if (!keep[dir]) decaying.push_back(dir);
  }
  const std::size_t mix_width = config.mixing_scale > 0.0 ? d : 0;
  const std::size_t units_per_decay = config.linear ? 1 : 2;
  m.blocks.resize(config.n_layers);
  for (std::size_t layer = 1; layer <= config.n_layers; ++layer) {
    const std::size_t decay_width = layer > config.decay_start ? units_per_decay * decaying.size() : 0;
    std::vector<const PlantedEdge*> edges;
    for (const auto& e : world.planted_edges)
      if (e.target_layer == layer) edges.push_back(&e);
    const std::size_t width = mix_width + edges.size() + decay_width;
    Block& b = m.blocks[layer - 1];
    b.w_in = Matrix(width, d);
    b.b_in.assign(width, 0.0);
    b.w_out = Matrix(d, width);
    std::size_t unit = 0;
    const double in_scale = 1.0 / std::sqrt(static_cast<double>(d));
    const double out_scale = mix_width ? config.mixing_scale / std::sqrt(static_cast<double>(mix_width)) : 0.0;
    for (; unit < mix_width; ++unit) {
      for (std::size_t k = 0; k < d; ++k) b.w_in(unit, k) = in_scale * normal(rng);
      for (std::size_t k = 0; k < d; ++k) b.w_out(k, unit) = out_scale * normal(rng);
    }
    // Rank-1 planted paths: one unit reads the source direction and writes the target direction.
    for (const auto* e : edges) {
      const auto src = world.direction(e->source_direction);
      const auto dst = world.direction(e->target_direction);
      for (std::size_t k = 0; k < d; ++k) {
        b.w_in(unit, k) = src[k];
        b.w_out(k, unit) = e->strength * dst[k];
      }
      ++unit;
    }
    // relu(x) - relu(-x) = x, so each pair removes decay * <h, q> q; the identity
    // activation needs only one unit.
    for (std::size_t i = 0; decay_width > 0 && i < decaying.size(); ++i) {
      const auto q = world.direction(decaying[i]);
      for (std::size_t k = 0; k < d; ++k) {
        b.w_in(unit, k) = q[k];
        b.w_out(k, unit) = -config.decay * q[k];
      }
      ++unit;
      if (config.linear) continue;
      for (std::size_t k = 0; k < d; ++k) {
        b.w_in(unit, k) = -q[k];
        b.w_out(k, unit) = config.decay * q[k];
      }
      ++unit;
    }
  }

  m.unembed = Matrix(config.n_genes, d);
  for (std::size_t g = 0; g < config.n_genes; ++g)
    for (std::size_t k = 0; k < d; ++k) m.unembed(g, k) = m.embed_const(g, k) + m.embed_rank(g, k);
  m.unembed_bias.assign(config.n_genes, 0.0);
  return m;
}

void embed_token(const Model& model, std::uint32_t token, std::size_t position, std::span<double> h) {
  if (token >= model.config.n_genes)
    throw DataError("token id " + std::to_string(token) + " out of range (n_genes=" +
                    std::to_string(model.config.n_genes) + ")");
  const auto c = model.embed_const.row(token);
  std::copy(c.begin(), c.end(), h.begin());
  kernels::axpy(model.rank_weight(position), model.embed_rank.row(token), h);
}

void apply_block(const Model& model, std::size_t layer, std::span<double> h, BlockScratch& s) {
  const Block& b = model.blocks[layer - 1];
  const std::size_t width = b.w_in.rows();
  s.pre.resize(width);
  s.out.resize(h.size());
  gemv(b.w_in, h, b.b_in, s.pre);
  if (!model.config.linear) {
    for (double& v : s.pre) v = v > 0.0 ? v : 0.0;
  }
  gemv(b.w_out, s.pre, {}, s.out);
  for (std::size_t k = 0; k < h.size(); ++k) h[k] += s.out[k];
}

std::vector<double> pooled_logits(const Model& model, const Matrix& final_hidden) {
  const std::size_t d = model.config.d_model;
  std::vector<double> pooled(d, 0.0);
  for (std::size_t p = 0; p < final_hidden.rows(); ++p) {
    const auto row = final_hidden.row(p);
    for (std::size_t k = 0; k < d; ++k) pooled[k] += row[k];
  }
  const double inv = 1.0 / static_cast<double>(final_hidden.rows());
  for (double& v : pooled) v *= inv;
  std::vector<double> logits(model.config.n_genes);
  gemv(model.unembed, pooled, model.unembed_bias, logits);
  return logits;
}

ResidualTrace forward_cell(const Model& model, std::span<const std::uint32_t> tokens, std::size_t cell_id) {
  const auto& cfg = model.config;
  if (tokens.size() != cfg.seq_len)
    throw DataError("cell has " + std::to_string(tokens.size()) + " tokens, expected " + std::to_string(cfg.seq_len));
  ResidualTrace t;
  t.cell_id = cell_id;
  t.hidden.assign(cfg.n_layers + 1, Matrix(cfg.seq_len, cfg.d_model));
  BlockScratch scratch;
  std::vector<double> h(cfg.d_model);
  for (std::size_t p = 0; p < cfg.seq_len; ++p) {
    embed_token(model, tokens[p], p, h);
    std::copy(h.begin(), h.end(), t.hidden[0].row(p).begin());
    for (std::size_t layer = 1; layer <= cfg.n_layers; ++layer) {
      apply_block(model, layer, h, scratch);
      std::copy(h.begin(), h.end(), t.hidden[layer].row(p).begin());
    }
  }
  t.logits = pooled_logits(model, t.hidden[cfg.n_layers]);
  return t;
}

std::vector<ResidualTrace> forward_full(const Model& model, const CellBatch& cells) {
  std::vector<ResidualTrace> out;
  out.reserve(cells.size());
  for (std::size_t c = 0; c < cells.size(); ++c) out.push_back(forward_cell(model, cells.tokens[c], c));
  return out;
}

PartialTrace forward_from_layer(const Model& model, std::size_t layer, const Matrix& modified_hidden) {
  const auto& cfg = model.config;
  if (layer >= cfg.n_layers)
    throw DataError("forward_from_layer: layer " + std::to_string(layer) + " out of range [0, " +
                    std::to_string(cfg.n_layers) + ")");
  if (modified_hidden.rows() != cfg.seq_len || modified_hidden.cols() != cfg.d_model)
    throw DataError("forward_from_layer: hidden state has the wrong shape");
  PartialTrace t;
  t.from_layer = layer;
  t.hidden.assign(cfg.n_layers - layer, Matrix(cfg.seq_len, cfg.d_model));
  BlockScratch scratch;
  std::vector<double> h(cfg.d_model);
  for (std::size_t p = 0; p < cfg.seq_len; ++p) {
    const auto src = modified_hidden.row(p);
    std::copy(src.begin(), src.end(), h.begin());
    for (std::size_t l = layer + 1; l <= cfg.n_layers; ++l) {
      apply_block(model, l, h, scratch);
      std::copy(h.begin(), h.end(), t.hidden[l - layer - 1].row(p).begin());
    }
  }
  t.logits = pooled_logits(model, t.hidden.back());
  return t;
}

void save_model(const Model& m, const std::filesystem::path& path, const std::string& provenance) {
  io::ContainerWriter out(io::Kind::kModel);
  const auto& c = m.config;
  out.add_u64("config", std::vector<std::uint64_t>{c.n_layers, c.d_model, c.n_genes, c.seq_len, c.seed,
                                                   c.linear ? 1u : 0u, c.decay_start});
  out.add_f64("config.real", std::vector<double>{c.mixing_scale, c.decay});
  out.add_f64("embed_const", m.embed_const.flat());
  out.add_f64("embed_rank", m.embed_rank.flat());
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    const auto& b = m.blocks[l];
    const auto p = "block" + std::to_string(l + 1) + ".";
    out.add_scalar(p + "width", b.w_in.rows());
    out.add_f64(p + "w_in", b.w_in.flat());
    out.add_f64(p + "b_in", b.b_in);
    out.add_f64(p + "w_out", b.w_out.flat());
  }
  out.add_f64("unembed", m.unembed.flat());
  out.add_f64("unembed_bias", m.unembed_bias);
  if (!provenance.empty()) out.add_string("provenance", provenance);
  out.write(path);
}

namespace {
Matrix matrix_from(const std::vector<double>& v, std::size_t rows, std::size_t cols, const std::string& name) {
  if (v.size() != rows * cols) throw DataError("section '" + name + "' has the wrong size");
  Matrix m(rows, cols);
  std::copy(v.begin(), v.end(), m.data());
  return m;
}
}  // namespace

Model load_model(const std::filesystem::path& path) {
  const auto c = io::Container::read(path, io::Kind::kModel);
  const auto& ci = c.u64("config");
  const auto& cr = c.f64("config.real");
  if (ci.size() != 7 || cr.size() != 2) throw DataError("model config section has the wrong size");
  Model m;
  m.config = {ci[0], ci[1], ci[2], ci[3], ci[4], cr[0], cr[1], ci[6], ci[5] != 0};
  m.config.validate();
  const auto d = m.config.d_model, g = m.config.n_genes;
  m.embed_const = matrix_from(c.f64("embed_const"), g, d, "embed_const");
  m.embed_rank = matrix_from(c.f64("embed_rank"), g, d, "embed_rank");
  for (std::size_t l = 1; l <= m.config.n_layers; ++l) {
    const auto p = "block" + std::to_string(l) + ".";
    const auto width = c.scalar(p + "width");
    Block b;
    b.w_in = matrix_from(c.f64(p + "w_in"), width, d, p + "w_in");
    b.b_in = c.f64(p + "b_in");
    if (b.b_in.size() != width) throw DataError(p + "b_in has the wrong size");
    b.w_out = matrix_from(c.f64(p + "w_out"), d, width, p + "w_out");
    m.blocks.push_back(std::move(b));
  }
  m.unembed = matrix_from(c.f64("unembed"), g, d, "unembed");
  m.unembed_bias = c.f64("unembed_bias");
  if (m.unembed_bias.size() != g) throw DataError("unembed_bias has the wrong size");
  return m;
}

ModelConfig model_config_from(const KeyValueConfig& cfg, const std::string& s) {
  ModelConfig m;
  m.n_layers = cfg.get_u64(s + ".n_layers", m.n_layers);
  m.d_model = cfg.get_u64(s + ".d_model", m.d_model);
  m.n_genes = cfg.get_u64(s + ".n_genes", m.n_genes);
  m.seq_len = cfg.get_u64(s + ".seq_len", m.seq_len);
  m.seed = cfg.get_u64(s + ".seed", m.seed);
  m.mixing_scale = cfg.get_double(s + ".mixing_scale", m.mixing_scale);
  m.decay = cfg.get_double(s + ".decay", m.decay);
  m.decay_start = cfg.get_u64(s + ".decay_start", m.decay_start);
  m.linear = cfg.get_bool(s + ".linear", m.linear);
  m.validate();
  return m;
}

}  // namespace circuitlab
