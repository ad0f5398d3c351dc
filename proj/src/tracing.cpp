#include "circuitlab/tracing.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <sstream>
#include <thread>

#include "circuitlab/binary_io.hpp"
#include "circuitlab/errors.hpp"

namespace circuitlab {
namespace {

constexpr char kEdgeMagic[8] = {'C', 'L', 'E', 'D', 'G', 'E', 'S', '\0'};
constexpr std::uint32_t kEdgeFormatVersion = 1;

void check_saes(SaeSet saes, std::size_t layer, std::size_t d_model) {
  if (layer >= saes.size()) throw ConfigError("no autoencoder for layer " + std::to_string(layer));
  if (saes[layer].layer != layer) throw ConfigError("autoencoder set is not indexed by layer");
  if (saes[layer].d_model() != d_model) throw ConfigError("autoencoder width does not match the model");
}

}  // namespace

std::vector<double> cell_feature_means(std::span<const SparseCode> codes, std::size_t d_sae) {
  std::vector<double> sums(d_sae, 0.0);
  for (const auto& code : codes)
    for (std::size_t i = 0; i < code.size(); ++i) sums[code.index[i]] += code.value[i];
  const double inv = 1.0 / static_cast<double>(codes.size());
  for (double& s : sums) s *= inv;
  return sums;
}

void subtract_scaled(std::span<double> h, double coefficient, std::span<const double> direction) {
  for (std::size_t k = 0; k < h.size(); ++k) h[k] -= coefficient * direction[k];
}

CleanCache build_clean_cache(const Model& model, SaeSet saes, const CellBatch& cells, std::size_t source_layer,
                             std::vector<std::size_t> downstream_layers) {
  const auto& cfg = model.config;
  if (source_layer >= cfg.n_layers) throw ConfigError("source layer out of range");
  for (std::size_t i = 0; i < downstream_layers.size(); ++i) {
    if (downstream_layers[i] <= source_layer)
      throw ConfigError("downstream layers must all lie after the source layer");
    if (i > 0 && downstream_layers[i] <= downstream_layers[i - 1])
      throw ConfigError("downstream layers must be strictly increasing");
    check_saes(saes, downstream_layers[i], cfg.d_model);
  }
  check_saes(saes, source_layer, cfg.d_model);

  CleanCache cache;
  cache.source_layer = source_layer;
  cache.downstream_layers = std::move(downstream_layers);
  cache.cells.reserve(cells.size());
  EncodeScratch scratch;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto trace = forward_cell(model, cells.tokens[c], c);
    ++cache.forward_passes;
    CachedCell cell;
    cell.source_hidden = trace.hidden[source_layer];
    cell.source_codes.resize(cfg.seq_len);
    for (std::size_t p = 0; p < cfg.seq_len; ++p)
      encode_topk(saes[source_layer], cell.source_hidden.row(p), cell.source_codes[p], scratch);
    for (auto layer : cache.downstream_layers) {
      std::vector<SparseCode> codes(cfg.seq_len);
      for (std::size_t p = 0; p < cfg.seq_len; ++p) encode_topk(saes[layer], trace.hidden[layer].row(p), codes[p], scratch);
      cell.downstream_means.push_back(cell_feature_means(codes, saes[layer].d_sae()));
      cell.downstream_codes.push_back(std::move(codes));
    }
    cache.cells.push_back(std::move(cell));
  }
  return cache;
}

Matrix ablate_feature(const Matrix& hidden, const SaeParams& sae, std::uint32_t feature,
                      std::span<const SparseCode> codes) {
  if (feature >= sae.d_sae()) throw DataError("feature id exceeds d_sae");
  Matrix out = hidden;
  for (std::size_t p = 0; p < hidden.rows(); ++p) {
    const double a = codes[p].coefficient(feature);
    if (a != 0.0) subtract_scaled(out.row(p), a, sae.direction(feature));
  }
  return out;
}

Matrix ablate_feature(const Matrix& hidden, const SaeParams& sae, std::uint32_t feature) {
  return ablate_feature(hidden, sae, feature, encode_rows(sae, hidden));
}

FeatureTrace trace_feature(const Model& model, const CleanCache& cache, SaeSet saes, std::size_t source_layer,
                           std::uint32_t feature) {
  if (source_layer != cache.source_layer)
    throw ConfigError("feature at layer " + std::to_string(source_layer) + " traced against a cache built for layer " +
                      std::to_string(cache.source_layer));
  const auto& src_sae = saes[source_layer];
  if (feature >= src_sae.d_sae()) throw DataError("feature id " + std::to_string(feature) + " exceeds d_sae");
  const std::size_t n_down = cache.downstream_layers.size();
  const std::size_t d_sae = n_down ? saes[cache.downstream_layers[0]].d_sae() : src_sae.d_sae();
  for (auto l : cache.downstream_layers)
    if (saes[l].d_sae() != d_sae) throw ConfigError("downstream autoencoders must share d_sae");

  FeatureTrace out;
  out.feature = feature;
  out.d_sae = d_sae;
  out.downstream_layers = cache.downstream_layers;
  out.stats.resize(n_down * d_sae);
  const std::size_t seq = model.config.seq_len;
  const std::size_t last_layer = n_down ? cache.downstream_layers.back() : source_layer;

  BlockScratch block_scratch;
  EncodeScratch enc_scratch;
  std::vector<double> h(model.config.d_model);
  std::vector<std::size_t> positions;
  std::vector<std::vector<SparseCode>> codes(n_down);
  for (const auto& cell : cache.cells) {
    positions.clear();
    for (std::size_t p = 0; p < seq; ++p)
      if (cell.source_codes[p].coefficient(feature) != 0.0) positions.push_back(p);

    for (std::size_t li = 0; li < n_down; ++li) codes[li] = cell.downstream_codes[li];
    for (auto p : positions) {
      const auto src = cell.source_hidden.row(p);
      std::copy(src.begin(), src.end(), h.begin());
      subtract_scaled(h, cell.source_codes[p].coefficient(feature), src_sae.direction(feature));
      std::size_t li = 0;
      for (std::size_t layer = source_layer + 1; layer <= last_layer; ++layer) {
        apply_block(model, layer, h, block_scratch);
        if (li < n_down && cache.downstream_layers[li] == layer) {
          encode_topk(saes[layer], h, codes[li][p], enc_scratch);
          ++li;
        }
      }
    }
    for (std::size_t li = 0; li < n_down; ++li) {
      const auto& clean = cell.downstream_means[li];
      const auto ablated = positions.empty() ? clean : cell_feature_means(codes[li], d_sae);
      for (std::size_t t = 0; t < d_sae; ++t) {
        auto& s = out.stats[li * d_sae + t];
        s.clean.add(clean[t]);
        s.ablated.add(ablated[t]);
        const double delta = ablated[t] - clean[t];
        if (delta > 0.0) ++s.n_positive;
        else if (delta < 0.0) ++s.n_negative;
      }
    }
  }
  return out;
}

bool edge_order(const Edge& a, const Edge& b) {
  if (a.source_feature != b.source_feature) return a.source_feature < b.source_feature;
  if (a.target_layer != b.target_layer) return a.target_layer < b.target_layer;
  return a.target_feature < b.target_feature;
}

std::vector<Edge> significant_edges(const FeatureTrace& trace, const Thresholds& th) {
  std::vector<Edge> out;
  for (std::size_t li = 0; li < trace.downstream_layers.size(); ++li) {
    for (std::size_t t = 0; t < trace.d_sae; ++t) {
      const auto& s = trace.at(li, t);
      const double d = cohens_d(s.clean, s.ablated);
      if (!(std::fabs(d) > th.d_threshold)) continue;
      const double c = consistency_from_counts(s.n_positive, s.n_negative, s.clean.count());
      if (!(c > th.consistency_threshold)) continue;
      out.push_back({trace.feature, static_cast<std::uint32_t>(trace.downstream_layers[li]), static_cast<std::uint32_t>(t), d,
                     c, static_cast<std::uint32_t>(s.clean.count())});
    }
  }
  return out;
}

EdgeGraph trace_features(const Model& model, const CleanCache& cache, SaeSet saes,
                         std::span<const std::uint32_t> features, const TraceOptions& options) {
  if (cache.cells.size() < 2) throw InsufficientDataError("tracing needs at least two cells");
  const std::size_t n = features.size();
  const std::size_t workers = std::max<std::size_t>(1, std::min(options.workers, std::max<std::size_t>(n, 1)));

  // Worker-local buffers; merged by a canonical sort after all workers finish.
  std::vector<std::vector<Edge>> buffers(workers);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::atomic<bool> failed{false};
  std::mutex mu;
  std::size_t failed_index = n;
  std::string failure;

  auto work = [&](std::size_t w) {
    for (;;) {
      if (failed.load()) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        auto edges = significant_edges(trace_feature(model, cache, saes, cache.source_layer, features[i]), options.thresholds);
        buffers[w].insert(buffers[w].end(), edges.begin(), edges.end());
      } catch (const std::exception& e) {
        std::lock_guard lock(mu);
        if (i < failed_index) {
          failed_index = i;
          failure = e.what();
        }
        failed.store(true);
        return;
      }
      const auto d = done.fetch_add(1) + 1;
      if (options.progress && (d % std::max<std::size_t>(1, options.progress_every) == 0 || d == n)) {
        std::lock_guard lock(mu);
        options.progress({d, n});
      }
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
  }
  if (failed.load())
    throw Error(ExitCode::kNumeric, "tracing feature " + std::to_string(features[failed_index]) + " failed: " + failure);

  EdgeGraph g;
  for (auto& b : buffers) g.edges.insert(g.edges.end(), b.begin(), b.end());
  std::sort(g.edges.begin(), g.edges.end(), edge_order);
  g.traced_features.assign(features.begin(), features.end());
  std::sort(g.traced_features.begin(), g.traced_features.end());
  auto& p = g.provenance;
  p.config_hash = options.config_hash;
  p.seed = options.seed;
  p.d_threshold = options.thresholds.d_threshold;
  p.consistency_threshold = options.thresholds.consistency_threshold;
  p.frequency_gate = options.thresholds.frequency_gate;
  p.source_layer = static_cast<std::uint32_t>(cache.source_layer);
  for (auto l : cache.downstream_layers) p.downstream_layers.push_back(static_cast<std::uint32_t>(l));
  p.n_cells = static_cast<std::uint32_t>(cache.cells.size());
  return g;
}

EdgeGraph trace_exhaustive(const Model& model, SaeSet saes, const CellBatch& cells, std::size_t source_layer,
                           std::vector<std::size_t> downstream_layers, const FeatureCatalog& source_catalog,
                           const TraceOptions& options) {
  if (source_catalog.layer != source_layer) throw ConfigError("feature catalog is for a different layer");
  const auto features = active_features(source_catalog, options.thresholds.frequency_gate);
  const auto cache = build_clean_cache(model, saes, cells, source_layer, std::move(downstream_layers));
  return trace_features(model, cache, saes, features, options);
}

namespace {
std::string fmt_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace

std::string edges_csv(const EdgeGraph& graph) {
  std::string out = "source_feature,target_layer,target_feature,cohens_d,consistency,n_cells\n";
  for (const auto& e : graph.edges) {
    out += std::to_string(e.source_feature) + ',' + std::to_string(e.target_layer) + ',' +
           std::to_string(e.target_feature) + ',' + fmt_double(e.cohens_d) + ',' + fmt_double(e.consistency) + ',' +
           std::to_string(e.n_cells) + '\n';
  }
  return out;
}

std::vector<std::uint8_t> edges_binary(const EdgeGraph& graph) {
  io::ByteWriter w;
  w.raw({reinterpret_cast<const std::uint8_t*>(kEdgeMagic), sizeof(kEdgeMagic)});
  w.u32(kEdgeFormatVersion);
  const auto& p = graph.provenance;
  w.f64(p.d_threshold);
  w.f64(p.consistency_threshold);
  w.f64(p.frequency_gate);
  w.u64(p.config_hash);
  w.u64(p.seed);
  w.u32(p.source_layer);
  w.u32(p.n_cells);
  w.u32(static_cast<std::uint32_t>(p.downstream_layers.size()));
  for (auto l : p.downstream_layers) w.u32(l);
  w.u64(graph.traced_features.size());
  for (auto f : graph.traced_features) w.u32(f);
  w.u64(graph.edges.size());
  for (const auto& e : graph.edges) {
    w.u32(e.source_feature);
    w.u32(e.target_layer);
    w.u32(e.target_feature);
    w.f64(e.cohens_d);
    w.f64(e.consistency);
    w.u32(e.n_cells);
  }
  auto body = w.take();
  io::ByteWriter tail;
  tail.u64(fnv1a(body));
  const auto sum = tail.take();
  body.insert(body.end(), sum.begin(), sum.end());
  return body;
}

EdgeGraph parse_edges_binary(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kEdgeMagic) + 8) throw DataError("truncated edge graph");
  const auto body = bytes.first(bytes.size() - 8);
  io::ByteReader tail(bytes.last(8));
  if (tail.u64() != fnv1a(body)) throw DataError("edge graph checksum mismatch");
  io::ByteReader r(body);
  const auto magic = r.raw(sizeof(kEdgeMagic));
  if (!std::equal(magic.begin(), magic.end(), reinterpret_cast<const std::uint8_t*>(kEdgeMagic)))
    throw DataError("not an edge graph file (bad magic)");
  if (r.u32() != kEdgeFormatVersion) throw DataError("unsupported edge graph version");
  EdgeGraph g;
  auto& p = g.provenance;
  p.d_threshold = r.f64();
  p.consistency_threshold = r.f64();
  p.frequency_gate = r.f64();
  p.config_hash = r.u64();
  p.seed = r.u64();
  p.source_layer = r.u32();
  p.n_cells = r.u32();
  const auto n_down = r.u32();
  for (std::uint32_t i = 0; i < n_down; ++i) p.downstream_layers.push_back(r.u32());
  const auto n_traced = r.u64();
  if (n_traced > r.remaining() / 4) throw DataError("truncated edge graph");
  for (std::uint64_t i = 0; i < n_traced; ++i) g.traced_features.push_back(r.u32());
  const auto n_edges = r.u64();
  if (n_edges > r.remaining() / 32) throw DataError("truncated edge graph");
  g.edges.resize(n_edges);
  for (auto& e : g.edges) {
    e.source_feature = r.u32();
    e.target_layer = r.u32();
    e.target_feature = r.u32();
    e.cohens_d = r.f64();
    e.consistency = r.f64();
    e.n_cells = r.u32();
  }
  if (r.remaining() != 0) throw DataError("trailing bytes after edge graph");
  return g;
}

}  // namespace circuitlab
