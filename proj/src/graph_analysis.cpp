#include "circuitlab/graph_analysis.hpp"

#include <algorithm>
#include <map>

#include <json.hpp>

#include "circuitlab/combinatorics.hpp"
#include "circuitlab/errors.hpp"

namespace circuitlab {

std::vector<FeatureCount> edge_counts(const EdgeGraph& graph) {
  std::map<std::uint32_t, std::uint64_t> totals;
  for (auto f : graph.traced_features) totals[f];
  for (const auto& e : graph.edges) ++totals[e.source_feature];
  std::vector<FeatureCount> out;
  out.reserve(totals.size());
  for (const auto& [f, n] : totals) out.push_back({f, n});
  return out;
}

CountSummary summarize_counts(std::span<const FeatureCount> counts) {
  CountSummary s;
  s.n_features = counts.size();
  if (counts.empty()) return s;
  std::vector<double> values;
  for (const auto& c : counts) {
    s.total_edges += c.edges;
    s.max = std::max(s.max, c.edges);
    if (c.edges == 0) ++s.zero_edge_features;
    values.push_back(static_cast<double>(c.edges));
  }
  s.mean = static_cast<double>(s.total_edges) / static_cast<double>(counts.size());
  s.median = median(values);
  return s;
}

std::vector<TailRow> tail_stats(std::span<const FeatureCount> counts, std::span<const std::uint64_t> thresholds) {
  static constexpr std::uint64_t kDefault[] = {1000, 500};
  if (thresholds.empty()) thresholds = kDefault;
  std::vector<TailRow> out;
  for (auto t : thresholds) {
    TailRow r{t, 0, 0.0};
    for (const auto& c : counts)
      if (c.edges > t) ++r.above;
    r.fraction = counts.empty() ? 0.0 : static_cast<double>(r.above) / static_cast<double>(counts.size());
    out.push_back(r);
  }
  return out;
}

std::optional<double> top_to_median_ratio(std::span<const FeatureCount> counts, double top_fraction) {
  if (counts.empty()) return std::nullopt;
  std::vector<double> v;
  for (const auto& c : counts) v.push_back(static_cast<double>(c.edges));
  const double med = median(v);
  if (!(med > 0.0)) return std::nullopt;
  std::sort(v.begin(), v.end(), std::greater<>());
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(top_fraction * static_cast<double>(v.size())));
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) sum += v[i];
  return sum / static_cast<double>(k) / med;
}

namespace {
std::vector<FeatureCount> ranked(std::span<const FeatureCount> counts) {
  std::vector<FeatureCount> v(counts.begin(), counts.end());
  std::sort(v.begin(), v.end(), [](const FeatureCount& a, const FeatureCount& b) {
    return a.edges != b.edges ? a.edges > b.edges : a.feature < b.feature;
  });
  return v;
}

const std::string* annotation_of(const FeatureCatalog& catalog, std::uint32_t f) {
  if (f >= catalog.features.size()) return nullptr;
  const auto& a = catalog.features[f].annotation;
  return a ? &*a : nullptr;
}
}  // namespace

std::vector<HubRow> hub_table(std::span<const FeatureCount> counts, const FeatureCatalog* catalog, std::size_t top_n) {
  const auto v = ranked(counts);
  std::vector<HubRow> out;
  for (std::size_t i = 0; i < std::min(top_n, v.size()); ++i) {
    const std::string* a = catalog ? annotation_of(*catalog, v[i].feature) : nullptr;
    out.push_back({i + 1, v[i].feature, v[i].edges, a ? *a : "unannotated"});
  }
  return out;
}

std::vector<AttenuationRow> attenuation(const EdgeGraph& graph) {
  std::vector<AttenuationRow> out;
  for (auto l : graph.provenance.downstream_layers) out.push_back({l, 0, 0.0});
  for (const auto& e : graph.edges) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& r) { return r.layer == e.target_layer; });
    if (it == out.end()) {
      out.push_back({e.target_layer, 0, 0.0});
      it = out.end() - 1;
    }
    ++it->edges;
  }
  const auto total = static_cast<double>(graph.edges.size());
  if (total > 0)
    for (auto& r : out) r.fraction = static_cast<double>(r.edges) / total;
  return out;
}

std::vector<EnrichmentRow> annotation_enrichment(std::span<const FeatureCount> counts, const FeatureCatalog& catalog,
                                                 std::span<const std::size_t> top_sizes) {
  const auto v = ranked(counts);
  auto row = [&](std::string cut, std::size_t n) {
    if (n > v.size()) throw ConfigError("enrichment cut " + cut + " exceeds the number of features");
    EnrichmentRow r{std::move(cut), n, 0, 0.0};
    for (std::size_t i = 0; i < n; ++i)
      if (annotation_of(catalog, v[i].feature)) ++r.annotated;
    r.fraction = n ? static_cast<double>(r.annotated) / static_cast<double>(n) : 0.0;
    return r;
  };
  std::vector<EnrichmentRow> out;
  out.push_back(row("all", v.size()));
  for (auto k : top_sizes) out.push_back(row("top" + std::to_string(k), k));
  return out;
}

std::string hub_table_csv(std::span<const HubRow> rows) {
  std::string out = "rank,feature,total_edges,annotation\n";
  for (const auto& r : rows)
    out += std::to_string(r.rank) + ',' + std::to_string(r.feature) + ',' + std::to_string(r.edges) + ',' +
           r.annotation + '\n';
  return out;
}

std::string edge_histogram_csv(std::span<const FeatureCount> counts) {
  std::map<std::uint64_t, std::size_t> hist;
  for (const auto& c : counts) ++hist[c.edges];
  std::string out = "edge_count,n_features\n";
  for (const auto& [k, n] : hist) out += std::to_string(k) + ',' + std::to_string(n) + '\n';
  return out;
}

namespace {
nlohmann::ordered_json summary_json(const CountSummary& s) {
  nlohmann::ordered_json j;
  j["features_traced"] = s.n_features;
  j["total_edges"] = s.total_edges;
  j["mean_edges_per_feature"] = s.mean;
  j["median_edges_per_feature"] = s.median;
  j["max_edges_per_feature"] = s.max;
  j["zero_edge_features"] = s.zero_edge_features;
  return j;
}
}  // namespace

std::string analysis_json(std::span<const FeatureCount> counts, std::span<const TailRow> tails,
                          std::span<const AttenuationRow> att, std::span<const EnrichmentRow> enrichment) {
  nlohmann::ordered_json j = summary_json(summarize_counts(counts));
  auto& t = j["tail"] = nlohmann::ordered_json::array();
  for (const auto& r : tails) t.push_back({{"threshold", r.threshold}, {"above", r.above}, {"fraction", r.fraction}});
  auto& a = j["attenuation"] = nlohmann::ordered_json::array();
  for (const auto& r : att) a.push_back({{"layer", r.layer}, {"edges", r.edges}, {"fraction", r.fraction}});
  auto& e = j["annotation_enrichment"] = nlohmann::ordered_json::array();
  for (const auto& r : enrichment)
    e.push_back({{"cut", r.cut}, {"n", r.n}, {"annotated", r.annotated}, {"fraction", r.fraction}});
  return j.dump(2) + '\n';
}

std::string trace_summary_json(const EdgeGraph& graph) {
  const auto counts = edge_counts(graph);
  nlohmann::ordered_json j = summary_json(summarize_counts(counts));
  auto& layers = j["per_layer"] = nlohmann::ordered_json::array();
  for (const auto& r : attenuation(graph)) layers.push_back({{"layer", r.layer}, {"edges", r.edges}, {"fraction", r.fraction}});
  const auto& p = graph.provenance;
  j["source_layer"] = p.source_layer;
  j["n_cells"] = p.n_cells;
  j["d_threshold"] = p.d_threshold;
  j["consistency_threshold"] = p.consistency_threshold;
  j["frequency_gate"] = p.frequency_gate;
  return j.dump(2) + '\n';
}

}  // namespace circuitlab
