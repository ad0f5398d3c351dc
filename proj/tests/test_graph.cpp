#include <doctest.h>

#include "circuitlab/errors.hpp"
#include "circuitlab/graph_analysis.hpp"
#include "graph_fixture.hpp"

using namespace circuitlab;
using circuitlab::testing::thirty_edge_catalog;
using circuitlab::testing::thirty_edge_graph;

TEST_CASE("edge counts include edgeless features") {
  const auto counts = edge_counts(thirty_edge_graph());
  const std::vector<FeatureCount> expected = {{0, 10}, {1, 7}, {2, 5}, {3, 4}, {4, 2}, {5, 1}, {6, 1}, {7, 0}};
  CHECK(counts == expected);
  const auto s = summarize_counts(counts);
  CHECK(s.n_features == 8);
  CHECK(s.total_edges == 30);
  CHECK(s.mean == 3.75);
  CHECK(s.median == 3.0);
  CHECK(s.max == 10);
  CHECK(s.zero_edge_features == 1);
}

TEST_CASE("tail thresholds are strict") {
  const auto counts = edge_counts(thirty_edge_graph());
  const std::vector<std::uint64_t> th = {4, 1, 10};
  const auto rows = tail_stats(counts, th);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].above == 3);
  CHECK(rows[0].fraction == 3.0 / 8.0);
  CHECK(rows[1].above == 5);
  CHECK(rows[1].fraction == 5.0 / 8.0);
  CHECK(rows[2].above == 0);
  CHECK(rows[2].fraction == 0.0);
  CHECK(*top_to_median_ratio(counts) == 10.0 / 3.0);
}

TEST_CASE("hub table ranks by edges then feature id") {
  const auto counts = edge_counts(thirty_edge_graph());
  const auto cat = thirty_edge_catalog();
  const auto hubs = hub_table(counts, &cat, 7);
  REQUIRE(hubs.size() == 7);
  CHECK(hubs[0].feature == 0);
  CHECK(hubs[0].annotation == "hub");
  CHECK(hubs[1].annotation == "unannotated");
  CHECK(hubs[5].feature == 5);
  CHECK(hubs[6].feature == 6);
  CHECK(hubs[6].rank == 7);
  CHECK(hub_table(counts, nullptr, 100).size() == 8);
  CHECK(hub_table_csv(hubs).rfind("rank,feature,total_edges,annotation\n1,0,10,hub\n", 0) == 0);
}

TEST_CASE("attenuation follows downstream-layer order") {
  const auto rows = attenuation(thirty_edge_graph());
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].layer == 3);
  CHECK(rows[0].edges == 15);
  CHECK(rows[1].edges == 9);
  CHECK(rows[2].edges == 6);
  CHECK(rows[0].fraction == 0.5);
  CHECK(rows[1].fraction == 0.3);
  CHECK(rows[2].fraction == 0.2);

  EdgeGraph paper;
  paper.provenance.downstream_layers = {6, 7, 8};
  for (std::uint32_t i = 0; i < 1000; ++i) paper.edges.push_back({0, i < 498 ? 6u : i < 816 ? 7u : 8u, i, 1.0, 1.0, 2});
  const auto p = attenuation(paper);
  CHECK(p[0].fraction == 0.498);
  CHECK(p[1].fraction == 0.318);
  CHECK(p[2].fraction == 0.184);

  EdgeGraph single;
  single.provenance.downstream_layers = {4};
  single.edges = {{0, 4, 1, 1.0, 1.0, 2}};
  CHECK(attenuation(single)[0].fraction == 1.0);
  EdgeGraph empty;
  empty.provenance.downstream_layers = {3, 4};
  for (const auto& r : attenuation(empty)) CHECK(r.fraction == 0.0);
}

TEST_CASE("annotation enrichment over ranked cuts") {
  const auto counts = edge_counts(thirty_edge_graph());
  const auto cat = thirty_edge_catalog();
  const std::vector<std::size_t> cuts = {3, 2};
  const auto rows = annotation_enrichment(counts, cat, cuts);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].cut == "all");
  CHECK(rows[0].annotated == 3);
  CHECK(rows[0].fraction == 3.0 / 8.0);
  CHECK(rows[1].cut == "top3");
  CHECK(rows[1].annotated == 2);
  CHECK(rows[1].fraction == 2.0 / 3.0);
  CHECK(rows[2].fraction == 0.5);
  const std::vector<std::size_t> too_big = {9};
  CHECK_THROWS_AS(annotation_enrichment(counts, cat, too_big), ConfigError);
}

TEST_CASE("histogram and analysis outputs") {
  const auto counts = edge_counts(thirty_edge_graph());
  CHECK(edge_histogram_csv(counts) == "edge_count,n_features\n0,1\n1,2\n2,1\n4,1\n5,1\n7,1\n10,1\n");
  const auto j = analysis_json(counts, tail_stats(counts), attenuation(thirty_edge_graph()), {});
  CHECK(j.find("\"total_edges\": 30") != std::string::npos);
}
