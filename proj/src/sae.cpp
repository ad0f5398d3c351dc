#include "circuitlab/sae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "circuitlab/binary_io.hpp"
#include "circuitlab/errors.hpp"
#include "circuitlab/kernels.hpp"

namespace circuitlab {

double SparseCode::coefficient(std::uint32_t feature) const {
  auto it = std::lower_bound(index.begin(), index.end(), feature);
  if (it == index.end() || *it != feature) return 0.0;
  return value[static_cast<std::size_t>(it - index.begin())];
}

bool SparseCode::contains(std::uint32_t feature) const {
  return std::binary_search(index.begin(), index.end(), feature);
}

void SaeParams::validate() const {
  const auto d = d_model(), n = d_sae();
  if (d == 0 || n == 0) throw ConfigError("autoencoder has empty dimensions");
  if (decoder.rows() != n || decoder.cols() != d || encoder_bias.size() != n || decoder_bias.size() != d)
    throw ConfigError("autoencoder parameter shapes disagree");
  if (k == 0 || k > n) throw ConfigError("autoencoder k must be in [1, d_sae]");
}

std::uint64_t SaeParams::checksum() const {
  auto h = fnv1a(encoder.flat());
  h = fnv1a(encoder_bias, h);
  h = fnv1a(decoder.flat(), h);
  return fnv1a(decoder_bias, h);
}

void topk_select(std::span<const double> pre, std::size_t k, std::vector<std::uint32_t>& order, SparseCode& out) {
  const std::size_t n = pre.size();
  order.resize(n);
  std::iota(order.begin(), order.end(), 0u);
  auto better = [&](std::uint32_t a, std::uint32_t b) { return pre[a] > pre[b] || (pre[a] == pre[b] && a < b); };
  if (k < n) std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
  std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  out.index.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  out.value.resize(k);
  for (std::size_t i = 0; i < k; ++i) out.value[i] = pre[out.index[i]];
}

void encode_preactivations(const SaeParams& sae, std::span<const double> h, EncodeScratch& s) {
  const std::size_t d = sae.d_model();
  s.centered.resize(d);
  for (std::size_t i = 0; i < d; ++i) s.centered[i] = h[i] - sae.decoder_bias[i];
  s.pre.resize(sae.d_sae());
  gemv(sae.encoder, s.centered, sae.encoder_bias, s.pre);
}

void encode_topk(const SaeParams& sae, std::span<const double> h, SparseCode& out, EncodeScratch& s) {
  encode_preactivations(sae, h, s);
  topk_select(s.pre, sae.k, s.order, out);
}

SparseCode encode_topk(const SaeParams& sae, std::span<const double> h) {
  EncodeScratch s;
  SparseCode out;
  encode_topk(sae, h, out, s);
  return out;
}

std::vector<SparseCode> encode_rows(const SaeParams& sae, const Matrix& rows) {
  std::vector<SparseCode> out(rows.rows());
  EncodeScratch s;
  for (std::size_t r = 0; r < rows.rows(); ++r) encode_topk(sae, rows.row(r), out[r], s);
  return out;
}

std::vector<double> decode(const SaeParams& sae, const SparseCode& code) {
  std::vector<double> out = sae.decoder_bias;
  for (std::size_t i = 0; i < code.size(); ++i) {
    if (code.index[i] >= sae.d_sae()) throw DataError("sparse code index exceeds d_sae");
    kernels::axpy(code.value[i], sae.direction(code.index[i]), out);
  }
  return out;
}

void renormalize_decoder(SaeParams& sae) {
  for (std::size_t f = 0; f < sae.decoder.rows(); ++f) {
    auto row = sae.decoder.row(f);
    double n = 0.0;
    for (double v : row) n += v * v;
    n = std::sqrt(n);
    if (n > 0.0 && n != 1.0)
      for (double& v : row) v /= n;
  }
}

SaeParams init_sae(const Matrix& data, const SaeTrainConfig& cfg) {
  if (data.rows() == 0) throw DataError("autoencoder training needs a nonempty dataset");
  const std::size_t d = data.cols();
  const std::size_t n = cfg.expansion * d;
  if (cfg.expansion == 0 || cfg.k == 0 || cfg.k > n) throw ConfigError("invalid expansion or k for autoencoder");
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  SaeParams sae;
  sae.layer = cfg.layer;
  sae.k = cfg.k;
  sae.decoder = Matrix(n, d);
  for (double& v : sae.decoder.flat()) v = normal(rng);
  renormalize_decoder(sae);
  sae.encoder = sae.decoder;
  sae.encoder_bias.assign(n, 0.0);
  sae.decoder_bias.assign(d, 0.0);
  for (std::size_t r = 0; r < data.rows(); ++r)
    for (std::size_t c = 0; c < d; ++c) sae.decoder_bias[c] += data(r, c);
  for (double& v : sae.decoder_bias) v /= static_cast<double>(data.rows());
  return sae;
}

double reconstruction_loss(const SaeParams& sae, const Matrix& data) {
  EncodeScratch s;
  SparseCode code;
  double total = 0.0;
  for (std::size_t r = 0; r < data.rows(); ++r) {
    encode_topk(sae, data.row(r), code, s);
    const auto recon = decode(sae, code);
    double e = 0.0;
    for (std::size_t c = 0; c < data.cols(); ++c) {
      const double diff = recon[c] - data(r, c);
      e += diff * diff;
    }
    total += e;
  }
  return total / static_cast<double>(data.rows());
}

SaeGradients loss_gradients(const SaeParams& sae, const Matrix& data, std::span<const std::size_t> rows) {
  const std::size_t d = sae.d_model(), n = sae.d_sae();
  SaeGradients g;
  g.encoder = Matrix(n, d);
  g.encoder_bias.assign(n, 0.0);
  g.decoder = Matrix(n, d);
  g.decoder_bias.assign(d, 0.0);
  EncodeScratch s;
  SparseCode code;
  std::vector<double> err(d);
  const double scale = 2.0 / static_cast<double>(rows.size());
  for (auto r : rows) {
    const auto x = data.row(r);
    encode_topk(sae, x, code, s);
    const auto recon = decode(sae, code);
    double e2 = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double diff = recon[c] - x[c];
      e2 += diff * diff;
      err[c] = scale * diff;
    }
    g.loss += e2;
    for (std::size_t c = 0; c < d; ++c) g.decoder_bias[c] += err[c];
    for (std::size_t i = 0; i < code.size(); ++i) {
      const auto f = code.index[i];
      const double a = code.value[i];
      kernels::axpy(a, err, g.decoder.row(f));
      const double ga = kernels::dot(err, sae.direction(f));
      kernels::axpy(ga, s.centered, g.encoder.row(f));
      g.encoder_bias[f] += ga;
      // b_dec also enters through the centering h - b_dec.
      kernels::axpy(-ga, sae.encoder.row(f), g.decoder_bias);
    }
  }
  g.loss /= static_cast<double>(rows.size());
  return g;
}

SaeTrainResult train_sae(const Matrix& activations, const SaeTrainConfig& cfg) {
  if (activations.rows() == 0) throw DataError("autoencoder training needs a nonempty dataset");
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be positive");
  const std::size_t n_rows = activations.rows();
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(n_rows);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_hold = static_cast<std::size_t>(std::floor(cfg.holdout_fraction * static_cast<double>(n_rows)));
  if (n_hold >= n_rows) n_hold = n_rows - 1;
  std::vector<std::size_t> train(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_hold));
  std::vector<std::size_t> hold(order.end() - static_cast<std::ptrdiff_t>(n_hold), order.end());
  auto subset = [&](const std::vector<std::size_t>& idx) {
    Matrix m(idx.size(), activations.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(activations.row(idx[i]).begin(), activations.cols(), m.row(i).begin());
    return m;
  };
  const Matrix train_set = subset(train);
  const Matrix hold_set = hold.empty() ? train_set : subset(hold);

  SaeTrainResult result;
  result.params = init_sae(train_set, cfg);
  SaeParams& sae = result.params;
  result.initial_train_loss = reconstruction_loss(sae, train_set);
  result.initial_holdout_loss = reconstruction_loss(sae, hold_set);

  std::vector<std::size_t> idx(train_set.rows());
  std::iota(idx.begin(), idx.end(), 0);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t b = 0; b < idx.size(); b += cfg.batch_size) {
      const auto e = std::min(idx.size(), b + cfg.batch_size);
      const auto g = loss_gradients(sae, train_set, std::span<const std::size_t>(idx).subspan(b, e - b));
      if (!std::isfinite(g.loss)) throw TrainingDivergenceError(step, "autoencoder loss became non-finite");
      if (cfg.log_every && step % cfg.log_every == 0) result.log.push_back({step, g.loss});
      const double lr = cfg.learning_rate;
      if (lr != 0.0) {
        kernels::axpy(-lr, g.encoder.flat(), sae.encoder.flat());
        kernels::axpy(-lr, g.encoder_bias, sae.encoder_bias);
        kernels::axpy(-lr, g.decoder.flat(), sae.decoder.flat());
        kernels::axpy(-lr, g.decoder_bias, sae.decoder_bias);
        renormalize_decoder(sae);
      }
      ++step;
    }
  }
  result.final_train_loss = reconstruction_loss(sae, train_set);
  result.final_holdout_loss = reconstruction_loss(sae, hold_set);
  if (!std::isfinite(result.final_train_loss))
    throw TrainingDivergenceError(step, "autoencoder loss became non-finite");
  return result;
}

std::vector<std::uint64_t> activation_counts(const SaeParams& sae, const Matrix& activations) {
  if (activations.rows() == 0) throw DataError("activation frequency needs a nonempty dataset");
  std::vector<std::uint64_t> counts(sae.d_sae(), 0);
  EncodeScratch s;
  SparseCode code;
  for (std::size_t r = 0; r < activations.rows(); ++r) {
    encode_topk(sae, activations.row(r), code, s);
    for (auto f : code.index) ++counts[f];
  }
  return counts;
}

std::vector<double> activation_frequency(const SaeParams& sae, const Matrix& activations) {
  const auto counts = activation_counts(sae, activations);
  std::vector<double> freq(counts.size());
  const double n = static_cast<double>(activations.rows());
  for (std::size_t f = 0; f < counts.size(); ++f) freq[f] = static_cast<double>(counts[f]) / n;
  return freq;
}

FeatureCatalog build_catalog(const SaeParams& sae, const Matrix& activations) {
  FeatureCatalog cat;
  cat.layer = sae.layer;
  const auto freq = activation_frequency(sae, activations);
  for (std::size_t f = 0; f < freq.size(); ++f) cat.features.push_back({f, sae.layer, freq[f], std::nullopt});
  return cat;
}

std::vector<std::uint32_t> active_features(const FeatureCatalog& catalog, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("activation threshold must be in [0, 1]");
  std::vector<std::uint32_t> out;
  for (const auto& f : catalog.features)
    if (f.activation_frequency >= threshold) out.push_back(static_cast<std::uint32_t>(f.feature));
  std::sort(out.begin(), out.end());
  return out;
}

namespace {
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}
}  // namespace

std::string catalog_csv(std::span<const FeatureCatalog> catalogs) {
  std::ostringstream out;
  out << "feature_id,layer,activation_frequency,annotation\n";
  char buf[64];
  for (const auto& cat : catalogs)
    for (const auto& f : cat.features) {
      std::snprintf(buf, sizeof(buf), "%.17g", f.activation_frequency);
      out << f.feature << ',' << f.layer << ',' << buf << ',' << (f.annotation ? csv_field(*f.annotation) : "") << '\n';
    }
  return out.str();
}

std::vector<FeatureCatalog> parse_catalog_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<FeatureCatalog> out;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line.rfind("feature_id,layer,activation_frequency,annotation", 0) != 0)
        throw DataError("catalog CSV has an unexpected header");
      header = true;
      continue;
    }
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quoted) {
        if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else if (c == '"') {
          quoted = false;
        } else {
          cur += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        fields.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    fields.push_back(cur);
    if (fields.size() != 4) throw DataError("catalog CSV row has " + std::to_string(fields.size()) + " fields");
    FeatureInfo fi;
    try {
      fi.feature = std::stoull(fields[0]);
      fi.layer = std::stoull(fields[1]);
      fi.activation_frequency = std::stod(fields[2]);
    } catch (const std::exception&) {
      throw DataError("catalog CSV row is malformed: " + line);
    }
    if (!fields[3].empty()) fi.annotation = fields[3];
    auto it = std::find_if(out.begin(), out.end(), [&](const FeatureCatalog& c) { return c.layer == fi.layer; });
    if (it == out.end()) {
      out.push_back({fi.layer, {}});
      it = out.end() - 1;
    }
    it->features.push_back(std::move(fi));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.layer < b.layer; });
  return out;
}

void save_sae(const SaeParams& sae, const std::filesystem::path& path, const std::string& provenance) {
  io::ContainerWriter out(io::Kind::kSae);
  out.add_u64("shape", std::vector<std::uint64_t>{sae.layer, sae.k, sae.d_sae(), sae.d_model()});
  out.add_f64("encoder", sae.encoder.flat());
  out.add_f64("encoder_bias", sae.encoder_bias);
  out.add_f64("decoder", sae.decoder.flat());
  out.add_f64("decoder_bias", sae.decoder_bias);
  if (!provenance.empty()) out.add_string("provenance", provenance);
  out.write(path);
}

SaeParams load_sae(const std::filesystem::path& path) {
  const auto c = io::Container::read(path, io::Kind::kSae);
  const auto& shape = c.u64("shape");
  if (shape.size() != 4) throw DataError("autoencoder shape section is malformed");
  SaeParams sae;
  sae.layer = shape[0];
  sae.k = shape[1];
  const auto n = shape[2], d = shape[3];
  auto mat = [&](const std::string& name) {
    const auto& v = c.f64(name);
    if (v.size() != n * d) throw DataError("autoencoder section '" + name + "' has the wrong size");
    Matrix m(n, d);
    std::copy(v.begin(), v.end(), m.data());
    return m;
  };
  sae.encoder = mat("encoder");
  sae.decoder = mat("decoder");
  sae.encoder_bias = c.f64("encoder_bias");
  sae.decoder_bias = c.f64("decoder_bias");
  sae.validate();
  return sae;
}

}  // namespace circuitlab
