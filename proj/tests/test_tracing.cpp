#include <limits>

#include <doctest.h>

#include "circuitlab/errors.hpp"
#include "circuitlab/tracing.hpp"
#include "fixture.hpp"

using namespace circuitlab;
using circuitlab::testing::shared_fixture;

namespace {

const std::vector<std::size_t> kDownstream = {3, 4, 5};

std::vector<std::uint32_t> all_features(const SaeParams& sae) {
  std::vector<std::uint32_t> out(sae.d_sae());
  for (std::uint32_t f = 0; f < out.size(); ++f) out[f] = f;
  return out;
}

}  // namespace

TEST_CASE("clean cache is sound") {
  const auto& fx = shared_fixture();
  const auto cache = build_clean_cache(fx.model, fx.saes, fx.cells, 2, kDownstream);
  REQUIRE(cache.cells.size() == fx.cells.size());
  CHECK(cache.forward_passes == fx.cells.size());
  for (const auto& cell : cache.cells) {
    const auto part = forward_from_layer(fx.model, 2, cell.source_hidden);
    for (std::size_t li = 0; li < kDownstream.size(); ++li) {
      const auto& h = part.hidden[kDownstream[li] - 3];
      const auto codes = encode_rows(fx.saes[kDownstream[li]], h);
      CHECK(codes == cell.downstream_codes[li]);
      CHECK(cell_feature_means(codes, fx.saes[kDownstream[li]].d_sae()) == cell.downstream_means[li]);
    }
  }
}

TEST_CASE("feature ablation subtracts exactly the retained contribution") {
  const auto& fx = shared_fixture();
  const auto& sae = fx.saes[2];
  const auto& h = fx.traces[0].hidden[2];
  const auto codes = encode_rows(sae, h);
  const auto f = codes[0].index[0];
  const auto out = ablate_feature(h, sae, f);
  for (std::size_t p = 0; p < h.rows(); ++p) {
    const double a = codes[p].coefficient(f);
    for (std::size_t k = 0; k < h.cols(); ++k) CHECK(out(p, k) == h(p, k) - a * sae.decoder(f, k));
  }
  CHECK(ablate_feature(h, sae, f, codes) == out);
}

TEST_CASE("partial recomputation equals a full resume") {
  const auto& fx = shared_fixture();
  const auto cache = build_clean_cache(fx.model, fx.saes, fx.cells, 2, kDownstream);
  for (std::uint32_t f : {0u, 5u, 17u, 40u}) {
    const auto tr = trace_feature(fx.model, cache, fx.saes, 2, f);
    const auto d_sae = fx.saes[3].d_sae();
    std::vector<TargetStats> ref(kDownstream.size() * d_sae);
    for (const auto& cell : cache.cells) {
      const auto part = forward_from_layer(fx.model, 2, ablate_feature(cell.source_hidden, fx.saes[2], f));
      for (std::size_t li = 0; li < kDownstream.size(); ++li) {
        const auto means = cell_feature_means(encode_rows(fx.saes[kDownstream[li]], part.hidden[kDownstream[li] - 3]), d_sae);
        for (std::size_t t = 0; t < d_sae; ++t) {
          auto& s = ref[li * d_sae + t];
          s.clean.add(cell.downstream_means[li][t]);
          s.ablated.add(means[t]);
          const double delta = means[t] - cell.downstream_means[li][t];
          s.n_positive += delta > 0.0;
          s.n_negative += delta < 0.0;
        }
      }
    }
    for (std::size_t i = 0; i < ref.size(); ++i) {
      CHECK(tr.stats[i].ablated.mean() == ref[i].ablated.mean());
      CHECK(tr.stats[i].ablated.m2() == ref[i].ablated.m2());
      CHECK(tr.stats[i].n_positive == ref[i].n_positive);
      CHECK(tr.stats[i].n_negative == ref[i].n_negative);
    }
  }
}

TEST_CASE("a never-active feature produces no edges") {
  const auto& fx = shared_fixture();
  const auto cache = build_clean_cache(fx.model, fx.saes, fx.cells, 2, kDownstream);
  const auto counts = activation_counts(fx.saes[2], circuitlab::testing::stack_layer(fx.traces, 2));
  for (std::uint32_t f = 0; f < counts.size(); ++f) {
    if (counts[f] != 0) continue;
    const auto tr = trace_feature(fx.model, cache, fx.saes, 2, f);
    for (const auto& s : tr.stats) {
      CHECK(s.n_positive == 0);
      CHECK(s.n_negative == 0);
    }
    CHECK(significant_edges(tr, Thresholds{}).empty());
    break;
  }
}

TEST_CASE("infinite thresholds give an empty graph") {
  const auto& fx = shared_fixture();
  const auto cache = build_clean_cache(fx.model, fx.saes, fx.cells, 2, kDownstream);
  TraceOptions opt;
  opt.thresholds.d_threshold = std::numeric_limits<double>::infinity();
  const auto features = all_features(fx.saes[2]);
  const auto g = trace_features(fx.model, cache, fx.saes, features, opt);
  CHECK(g.edges.empty());
  CHECK(g.traced_features == features);
}

TEST_CASE("edge graphs are independent of the worker count") {
  const auto& fx = shared_fixture();
  const auto cache = build_clean_cache(fx.model, fx.saes, fx.cells, 2, kDownstream);
  const auto features = all_features(fx.saes[2]);
  TraceOptions opt;
  opt.thresholds.d_threshold = 0.3;
  opt.thresholds.consistency_threshold = 0.5;
  std::vector<std::vector<std::uint8_t>> bins;
  std::size_t progress_calls = 0;
  for (std::size_t w : {1, 2, 8}) {
    opt.workers = w;
    opt.progress = [&](const TraceProgress& p) {
      ++progress_calls;
      CHECK(p.done <= p.total);
    };
    bins.push_back(edges_binary(trace_features(fx.model, cache, fx.saes, features, opt)));
  }
  CHECK(bins[0] == bins[1]);
  CHECK(bins[0] == bins[2]);
  CHECK(progress_calls > 0);
  const auto g = parse_edges_binary(bins[0]);
  CHECK(!g.edges.empty());
  CHECK(std::is_sorted(g.edges.begin(), g.edges.end(), edge_order));
}

TEST_CASE("edge binary round trip and corruption") {
  EdgeGraph g;
  g.edges = {{1, 3, 7, 0.9, 0.8, 20}, {2, 4, 1, -1.5, 1.0, 20}};
  g.traced_features = {1, 2, 3};
  g.provenance = {42, 7, 0.5, 0.7, 0.001, 2, {3, 4}, 20};
  auto bytes = edges_binary(g);
  CHECK(parse_edges_binary(bytes) == g);
  bytes[bytes.size() / 2] ^= 0x40;
  CHECK_THROWS_AS(parse_edges_binary(bytes), DataError);
  const auto csv = edges_csv(g);
  CHECK(csv.find("3,7") != std::string::npos);
}

TEST_CASE("significant edges apply both strict thresholds") {
  FeatureTrace tr;
  tr.feature = 9;
  tr.d_sae = 2;
  tr.downstream_layers = {4};
  tr.stats.resize(2);
  // Target 0: every cell drops by one with unit spread, so |d| = 1 and consistency = 1.
  for (double v : {1.0, 2.0, 3.0}) {
    tr.stats[0].clean.add(v);
    tr.stats[0].ablated.add(v - 1.0);
    tr.stats[0].n_negative++;
    tr.stats[1].clean.add(v);
    tr.stats[1].ablated.add(v);
  }
  auto edges = significant_edges(tr, Thresholds{0.5, 0.7, 0.0});
  REQUIRE(edges.size() == 1);
  CHECK(edges[0].target_feature == 0);
  CHECK(edges[0].target_layer == 4);
  CHECK(edges[0].cohens_d == doctest::Approx(-1.0));
  CHECK(edges[0].consistency == 1.0);
  CHECK(significant_edges(tr, Thresholds{1.0, 0.7, 0.0}).empty());
  CHECK(significant_edges(tr, Thresholds{0.5, 1.0, 0.0}).empty());
}

TEST_CASE("tracing needs at least two cells") {
  const auto& fx = shared_fixture();
  const auto cache = build_clean_cache(fx.model, fx.saes, fx.cells.slice(0, 1), 2, kDownstream);
  const std::vector<std::uint32_t> one = {0};
  CHECK_THROWS_AS(trace_features(fx.model, cache, fx.saes, one, TraceOptions{}), InsufficientDataError);
}

TEST_CASE("summary JSON reports totals") {
  EdgeGraph g;
  g.edges = {{1, 3, 7, 0.9, 0.8, 20}, {1, 4, 1, -1.5, 1.0, 20}, {2, 4, 2, 0.7, 0.9, 20}};
  g.traced_features = {1, 2, 3};
  g.provenance.downstream_layers = {3, 4};
  const auto j = trace_summary_json(g);
  CHECK(j.find("\"features_traced\": 3") != std::string::npos);
  CHECK(j.find("\"total_edges\": 3") != std::string::npos);
  CHECK(j.find("\"zero_edge_features\": 1") != std::string::npos);
}
