#include <cmath>
#include <random>

#include <doctest.h>

#include "circuitlab/errors.hpp"
#include "circuitlab/steering.hpp"
#include "circuitlab/tensor.hpp"
#include "circuitlab/tracing.hpp"
#include "fixture.hpp"

using namespace circuitlab;
using circuitlab::testing::shared_fixture;

namespace {

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = normal(rng);
  return v;
}

SignaturePair random_signatures(std::mt19937_64& rng, std::size_t n) {
  SignaturePair s;
  s.g_late = random_vec(rng, n);
  s.g_early = random_vec(rng, n);
  normalize(s.g_late);
  normalize(s.g_early);
  return s;
}

std::vector<std::vector<double>> all_logits(const std::vector<ResidualTrace>& traces) {
  std::vector<std::vector<double>> out;
  for (const auto& t : traces) out.push_back(t.logits);
  return out;
}

}  // namespace

TEST_CASE("pseudotime extremes use floor and cell-id tie breaks") {
  std::vector<double> pt(481);
  for (std::size_t i = 0; i < pt.size(); ++i) pt[i] = static_cast<double>(i) / 480.0;
  const auto late = pseudotime_extreme(pt, 0.1, true);
  const auto early = pseudotime_extreme(pt, 0.1, false);
  CHECK(late.size() == 48);
  CHECK(early.size() == 48);
  CHECK(early.front() == 0);
  CHECK(early.back() == 47);
  CHECK(late.front() == 433);

  const std::vector<double> ties = {0.5, 0.1, 0.5, 0.1, 0.9};
  CHECK(pseudotime_extreme(ties, 0.4, false) == std::vector<std::size_t>{1, 3});
  CHECK(pseudotime_extreme(ties, 0.2, false) == std::vector<std::size_t>{1});
  CHECK(pseudotime_extreme(ties, 0.4, true) == std::vector<std::size_t>{0, 4});
  CHECK(pseudotime_extreme(ties, 0.1, true).empty());
}

TEST_CASE("signatures need populated deciles") {
  const std::vector<double> pt = {0.1, 0.9, 0.5};
  const std::vector<std::vector<double>> logits = {{1.0, 0.0}, {0.0, 2.0}, {1.0, 1.0}};
  CHECK_THROWS_AS(compute_signatures(pt, logits, 0.1), DataError);
  const auto s = compute_signatures(pt, logits, 0.34);
  CHECK(s.g_late == std::vector<double>{0.0, 1.0});
  CHECK(s.g_early == std::vector<double>{1.0, 0.0});
  const std::vector<std::vector<double>> zero = {{0.0, 0.0}, {0.0, 2.0}, {1.0, 1.0}};
  CHECK_THROWS_AS(compute_signatures(pt, zero, 0.34), NumericError);
}

TEST_CASE("early cell selection keeps active cells among the earliest") {
  const std::vector<double> pt = {0.9, 0.1, 0.2, 0.3, 0.05};
  CHECK(select_early_cells(pt, {true, true, false, true, true}, 0.5) == std::vector<std::size_t>{1, 4});
  CHECK(select_early_cells(pt, {true, false, false, false, false}, 0.5).empty());
  CHECK_THROWS_AS(select_early_cells(pt, {true}, 0.5), DataError);
}

TEST_CASE("state shift identities") {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 100; ++i) {
    const auto z = random_vec(rng, 12);
    const auto zs = random_vec(rng, 12);
    const auto sig = random_signatures(rng, 12);
    CHECK(state_shift(z, z, sig) == 0.0);
    // Antisymmetry under swapping clean and steered logits.
    CHECK(state_shift(z, zs, sig) == doctest::Approx(-state_shift(zs, z, sig)).epsilon(1e-12));
    // Invariance to positive rescaling of either logit vector.
    auto scaled = zs;
    for (auto& v : scaled) v *= 7.5;
    CHECK(state_shift(z, scaled, sig) == doctest::Approx(state_shift(z, zs, sig)).epsilon(1e-12));
  }
  SignaturePair sig;
  sig.g_late = {1.0, 0.0};
  sig.g_early = {0.0, 1.0};
  // From fully early to fully late is the extremal shift of 2.
  CHECK(state_shift(std::vector<double>{0.0, 1.0}, std::vector<double>{1.0, 0.0}, sig) == doctest::Approx(2.0));
  CHECK_THROWS_AS(state_shift(std::vector<double>{0.0, 0.0}, std::vector<double>{1.0, 0.0}, sig), NumericError);
}

TEST_CASE("amplification with alpha 1 is the identity and alpha 0 is ablation") {
  const auto& fx = shared_fixture();
  const auto& sae = fx.saes[2];
  const auto& t = fx.traces[0];
  const auto codes = encode_rows(sae, t.hidden[2]);
  const auto f = codes[0].index[0];
  CHECK(amplify_feature(t.hidden[2], sae, f, 1.0, codes) == t.hidden[2]);
  CHECK(steer_feature(fx.model, sae, f, 1.0, t) == t.logits);
  CHECK(amplify_feature(t.hidden[2], sae, f, 0.0, codes) == ablate_feature(t.hidden[2], sae, f, codes));
  CHECK_THROWS_AS(steer_feature(fx.model, sae, static_cast<std::uint32_t>(sae.d_sae()), 2.0, t), DataError);
}

TEST_CASE("steering report shapes and alpha-one shifts") {
  const auto& fx = shared_fixture();
  const auto sig = compute_signatures(fx.cells.pseudotime, all_logits(fx.traces), 0.2);
  const auto& sae = fx.saes[5];
  SteerSpec spec;
  spec.layer = 5;
  spec.feature = encode_topk(sae, fx.traces[0].hidden[5].row(0)).index[0];
  spec.alphas = {1.0, 3.0};
  spec.early_fraction = 0.5;
  const auto one = steering_report(fx.model, sae, spec, fx.cells, fx.traces, sig, 5, 1);
  const auto two = steering_report(fx.model, sae, spec, fx.cells, fx.traces, sig, 5, 2);
  REQUIRE(one.per_alpha.size() == 2);
  for (double s : one.per_alpha[0].shifts) CHECK(s == 0.0);
  CHECK(one.per_alpha[1].shifts == two.per_alpha[1].shifts);
  CHECK(one.gene_deltas == two.gene_deltas);
  CHECK(one.top_up.size() <= 5);
  for (std::size_t i = 1; i < one.top_up.size(); ++i) CHECK(one.top_up[i - 1].mean_delta >= one.top_up[i].mean_delta);
  for (std::size_t i = 1; i < one.top_down.size(); ++i)
    CHECK(one.top_down[i - 1].mean_delta <= one.top_down[i].mean_delta);

  spec.layer = 4;
  CHECK_THROWS_AS(steering_report(fx.model, sae, spec, fx.cells, fx.traces, sig), ConfigError);
  spec.layer = 5;
  spec.alphas = {};
  CHECK_THROWS_AS(steering_report(fx.model, sae, spec, fx.cells, fx.traces, sig), ConfigError);
}

TEST_CASE("an empty early selection yields undefined summaries") {
  const auto& fx = shared_fixture();
  const auto sig = compute_signatures(fx.cells.pseudotime, all_logits(fx.traces), 0.2);
  const auto& sae = fx.saes[5];
  const auto counts = activation_counts(sae, circuitlab::testing::stack_layer(fx.traces, 5));
  std::uint32_t idle = 0;
  while (idle < counts.size() && counts[idle] != 0) ++idle;
  if (idle == counts.size()) return;
  SteerSpec spec;
  spec.layer = 5;
  spec.feature = idle;
  const auto out = steering_report(fx.model, sae, spec, fx.cells, fx.traces, sig);
  CHECK(out.cell_ids.empty());
  CHECK(!out.per_alpha[0].mean_shift);
  CHECK(!out.per_alpha[0].fraction_positive);
  CHECK(out.gene_deltas.empty());
  CHECK(steering_table_csv(std::span(&out, 1)).find(",0,,,,") != std::string::npos);
}

TEST_CASE("steer spec CSV parsing") {
  const auto specs = parse_steer_specs_csv("layer,feature,label,switch_d\n5,12,maturity,+1.4\n0,3,progenitor,-\n");
  REQUIRE(specs.size() == 2);
  CHECK(specs[0].layer == 5);
  CHECK(specs[0].feature == 12);
  CHECK(specs[1].label == "progenitor");
  CHECK(specs[0].switch_d == "+1.4");
  CHECK_THROWS_AS(parse_steer_specs_csv("bad\n"), DataError);
}
