#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include <doctest.h>

#include "circuitlab/errors.hpp"
#include "circuitlab/sae.hpp"
#include "circuitlab/tensor.hpp"

using namespace circuitlab;

namespace {

// Rows are sparse combinations of a few fixed unit atoms plus small noise.
Matrix sparse_data(std::size_t rows, std::size_t d, std::size_t n_atoms, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Matrix atoms(n_atoms, d);
  for (std::size_t a = 0; a < n_atoms; ++a) {
    for (auto& v : atoms.row(a)) v = normal(rng);
    normalize(atoms.row(a));
  }
  Matrix out(rows, d);
  for (std::size_t r = 0; r < rows; ++r) {
    for (int j = 0; j < 3; ++j) {
      const auto a = rng() % n_atoms;
      const double c = 1.0 + 2.0 * unit(rng);
      for (std::size_t k = 0; k < d; ++k) out(r, k) += c * atoms(a, k);
    }
    for (auto& v : out.row(r)) v += 0.01 * normal(rng);
  }
  return out;
}

SaeParams random_sae(std::size_t d, std::size_t n, std::size_t k, std::uint64_t seed) {
  const auto data = sparse_data(32, d, 8, seed);
  SaeTrainConfig cfg;
  cfg.expansion = n / d;
  cfg.k = k;
  cfg.seed = seed;
  auto sae = init_sae(data, cfg);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> normal(0.0, 0.1);
  for (auto& v : sae.encoder_bias) v = normal(rng);
  return sae;
}

}  // namespace

TEST_CASE("topk keeps exactly k entries with ties to the lower index") {
  std::vector<std::uint32_t> order;
  SparseCode code;
  const std::vector<double> pre = {1.0, 3.0, 3.0, -5.0, 3.0, 0.5};
  topk_select(pre, 2, order, code);
  CHECK(code.index == std::vector<std::uint32_t>{1, 2});
  CHECK(code.value == std::vector<double>{3.0, 3.0});
  topk_select(pre, 4, order, code);
  CHECK(code.index == std::vector<std::uint32_t>{0, 1, 2, 4});
  // No ReLU: negative values are retained when k demands them.
  topk_select(pre, 6, order, code);
  CHECK(code.size() == 6);
  CHECK(code.coefficient(3) == -5.0);
  CHECK(code.contains(5));
  const std::vector<double> zeros(10, 0.0);
  topk_select(zeros, 3, order, code);
  CHECK(code.index == std::vector<std::uint32_t>{0, 1, 2});
}

TEST_CASE("encoding is exactly k-sparse on random inputs") {
  const auto sae = random_sae(16, 64, 5, 3);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> normal(0.0, 2.0);
  std::vector<double> h(16);
  EncodeScratch s;
  SparseCode code;
  std::size_t bad = 0;
  for (int i = 0; i < 2000; ++i) {
    for (auto& v : h) v = normal(rng);
    encode_topk(sae, h, code, s);
    bool ok = code.size() == 5 && std::is_sorted(code.index.begin(), code.index.end());
    for (std::size_t j = 1; ok && j < code.size(); ++j) ok = code.index[j] != code.index[j - 1];
    if (!ok) ++bad;
  }
  CHECK(bad == 0);
}

TEST_CASE("decode of encode reconstructs the retained combination") {
  const auto sae = random_sae(8, 32, 4, 5);
  std::vector<double> h(8, 0.3);
  const auto code = encode_topk(sae, h);
  const auto recon = decode(sae, code);
  for (std::size_t k = 0; k < 8; ++k) {
    double expected = sae.decoder_bias[k];
    for (std::size_t j = 0; j < code.size(); ++j) expected += code.value[j] * sae.decoder(code.index[j], k);
    CHECK(recon[k] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("analytic gradients match finite differences") {
  const auto data = sparse_data(24, 8, 6, 11);
  auto sae = random_sae(8, 32, 4, 11);
  std::vector<std::size_t> rows(data.rows());
  std::iota(rows.begin(), rows.end(), 0);
  const auto g = loss_gradients(sae, data, rows);
  CHECK(g.loss == doctest::Approx(reconstruction_loss(sae, data)).epsilon(1e-12));

  const double h = 1e-6;
  double worst = 0.0;
  auto check = [&](double& param, double analytic) {
    const double saved = param;
    param = saved + h;
    const double up = reconstruction_loss(sae, data);
    param = saved - h;
    const double down = reconstruction_loss(sae, data);
    param = saved;
    const double fd = (up - down) / (2.0 * h);
    const double rel = std::fabs(fd - analytic) / std::max(1e-6, std::fabs(fd) + std::fabs(analytic));
    worst = std::max(worst, rel);
  };
  auto& p = sae;
  std::mt19937_64 rng(2);
  for (int i = 0; i < 40; ++i) {
    const auto f = rng() % p.d_sae(), k = rng() % p.d_model();
    check(p.encoder(f, k), g.encoder(f, k));
    check(p.decoder(f, k), g.decoder(f, k));
    check(p.encoder_bias[f], g.encoder_bias[f]);
    check(p.decoder_bias[k], g.decoder_bias[k]);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("training reduces loss, keeps unit decoder norms and is deterministic") {
  const auto data = sparse_data(400, 16, 12, 21);
  SaeTrainConfig cfg;
  cfg.expansion = 4;
  cfg.k = 4;
  cfg.epochs = 40;
  cfg.seed = 3;
  const auto r = train_sae(data, cfg);
  CHECK(r.final_train_loss * 5.0 <= r.initial_train_loss);
  CHECK(r.final_holdout_loss < r.initial_holdout_loss);
  for (std::size_t f = 0; f < r.params.d_sae(); ++f) CHECK(norm2(r.params.direction(f)) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(!r.log.empty());
  CHECK(train_sae(data, cfg).params.checksum() == r.params.checksum());
}

TEST_CASE("training rejects unusable inputs") {
  SaeTrainConfig cfg;
  cfg.k = 100;
  CHECK_THROWS_AS(train_sae(sparse_data(40, 8, 4, 1), cfg), ConfigError);
  Matrix bad = sparse_data(40, 8, 4, 1);
  bad(3, 2) = std::nan("");
  cfg.k = 4;
  CHECK_THROWS(train_sae(bad, cfg));
}

TEST_CASE("activation counts use TopK membership") {
  const auto sae = random_sae(8, 16, 3, 4);
  const auto data = sparse_data(50, 8, 5, 4);
  const auto counts = activation_counts(sae, data);
  CHECK(std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}) == 150);
  const auto freq = activation_frequency(sae, data);
  for (std::size_t f = 0; f < freq.size(); ++f) CHECK(freq[f] == static_cast<double>(counts[f]) / 50.0);
  const auto cat = build_catalog(sae, data);
  CHECK(cat.features.size() == 16);
  for (auto f : active_features(cat, 0.1)) CHECK(freq[f] >= 0.1);
}

TEST_CASE("catalog CSV round trip") {
  FeatureCatalog a{1, {{0, 1, 0.25, std::string("hub, \"quoted\"")}, {1, 1, 0.0, std::nullopt}}};
  FeatureCatalog b{2, {{0, 2, 1.0 / 3.0, std::string("x")}}};
  const std::vector<FeatureCatalog> cats = {a, b};
  const auto parsed = parse_catalog_csv(catalog_csv(cats));
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[0].features[0].annotation == a.features[0].annotation);
  CHECK(!parsed[0].features[1].annotation);
  CHECK(parsed[1].features[0].activation_frequency == 1.0 / 3.0);
  CHECK_THROWS_AS(parse_catalog_csv("nope\n1,2\n"), DataError);
}

TEST_CASE("SAE persistence round trip") {
  const auto sae = random_sae(8, 16, 3, 6);
  const auto path = std::filesystem::temp_directory_path() / "circuitlab_sae_test.bin";
  save_sae(sae, path, "abc");
  const auto back = load_sae(path);
  CHECK(back.checksum() == sae.checksum());
  CHECK(back.k == sae.k);
  std::filesystem::remove(path);
}
