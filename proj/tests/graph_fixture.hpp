#pragma once

// Hand-built 30-edge graph with known statistics.
//
// Per-feature totals: f0 10, f1 7, f2 5, f3 4, f4 2, f5 1, f6 1, f7 0.
// Per-layer totals: L3 15, L4 9, L5 6. Annotated features: f0, f2, f5.

#include <algorithm>
#include <string>

#include "circuitlab/sae.hpp"
#include "circuitlab/tracing.hpp"

namespace circuitlab::testing {

inline EdgeGraph thirty_edge_graph() {
  const std::uint32_t totals[8] = {10, 7, 5, 4, 2, 1, 1, 0};
  EdgeGraph g;
  g.provenance.source_layer = 2;
  g.provenance.downstream_layers = {3, 4, 5};
  g.provenance.n_cells = 20;
  std::size_t emitted = 0;
  for (std::uint32_t f = 0; f < 8; ++f) {
    g.traced_features.push_back(f);
    for (std::uint32_t i = 0; i < totals[f]; ++i, ++emitted) {
      const std::uint32_t layer = emitted < 15 ? 3 : emitted < 24 ? 4 : 5;
      g.edges.push_back({f, layer, i, 1.0, 1.0, 20});
    }
  }
  std::sort(g.edges.begin(), g.edges.end(), edge_order);
  return g;
}

inline FeatureCatalog thirty_edge_catalog() {
  FeatureCatalog c;
  c.layer = 2;
  for (std::size_t f = 0; f < 8; ++f) c.features.push_back({f, 2, 0.1, std::nullopt});
  c.features[0].annotation = "hub";
  c.features[2].annotation = "program_2";
  c.features[5].annotation = "program_5";
  return c;
}

}  // namespace circuitlab::testing
