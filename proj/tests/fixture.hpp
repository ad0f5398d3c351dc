#pragma once

// Small trained world shared by the tracing, combinatorics and steering tests.

#include <vector>

#include "circuitlab/model.hpp"
#include "circuitlab/sae.hpp"

namespace circuitlab::testing {

struct Fixture {
  SyntheticWorld world;
  Model model;
  CellBatch cells;
  std::vector<ResidualTrace> traces;
  std::vector<SaeParams> saes;
};

inline Matrix stack_layer(const std::vector<ResidualTrace>& traces, std::size_t layer) {
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

inline Fixture make_fixture(bool linear = false, std::size_t n_cells = 12) {
  ModelConfig mc;
  mc.d_model = 16;
  mc.n_genes = 64;
  mc.seq_len = 8;
  mc.seed = 2;
  mc.linear = linear;
  if (linear) mc.mixing_scale = 0.0;
  WorldConfig wc;
  wc.seed = 1;
  wc.n_input_concepts = 6;
  wc.n_planted_edges = 3;
  wc.n_pathway_groups = 1;
  Fixture f;
  f.world = generate_world(mc, wc);
  f.model = build_toy_model(mc, f.world);
  f.cells = generate_cells(f.world, mc.seq_len, n_cells, 3);
  f.traces = forward_full(f.model, f.cells);
  for (std::size_t l = 0; l < mc.n_layers; ++l) {
    SaeTrainConfig tc;
    tc.layer = l;
    tc.expansion = 4;
    tc.k = 4;
    tc.epochs = 8;
    tc.seed = 10 + l;
    tc.log_every = 0;
    f.saes.push_back(train_sae(stack_layer(f.traces, l), tc).params);
  }
  return f;
}

inline const Fixture& shared_fixture() {
  static const Fixture f = make_fixture();
  return f;
}

}  // namespace circuitlab::testing
