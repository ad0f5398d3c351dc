#include "circuitlab/steering.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "circuitlab/errors.hpp"
#include "circuitlab/tensor.hpp"

namespace circuitlab {

void SteerSpec::validate() const {
  if (alphas.empty()) throw ConfigError("steering needs at least one alpha");
  for (double a : alphas)
    if (!(a > 0.0) || !std::isfinite(a)) throw ConfigError("steering alphas must be positive");
  if (!(early_fraction > 0.0 && early_fraction <= 0.5)) throw ConfigError("early_fraction must be in (0, 0.5]");
  if (!(decile > 0.0 && decile <= 0.5)) throw ConfigError("decile must be in (0, 0.5]");
}

std::vector<std::size_t> pseudotime_extreme(std::span<const double> pseudotime, double fraction, bool late) {
  std::vector<std::size_t> ids(pseudotime.size());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  std::stable_sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) {
    return late ? pseudotime[a] > pseudotime[b] : pseudotime[a] < pseudotime[b];
  });
  const auto n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(pseudotime.size())));
  ids.resize(std::min(n, ids.size()));
  std::sort(ids.begin(), ids.end());
  return ids;
}

namespace {
std::vector<double> mean_unit(std::span<const std::vector<double>> logits, std::span<const std::size_t> ids) {
  std::vector<double> m(logits[ids.front()].size(), 0.0);
  for (auto c : ids)
    for (std::size_t g = 0; g < m.size(); ++g) m[g] += logits[c][g];
  for (auto& v : m) v /= static_cast<double>(ids.size());
  if (normalize(m) == 0.0) throw NumericError("signature has zero norm");
  return m;
}
}  // namespace

SignaturePair compute_signatures(std::span<const double> pseudotime, std::span<const std::vector<double>> logits,
                                 double decile) {
  if (pseudotime.size() != logits.size()) throw DataError("pseudotime and logits cover different cells");
  SignaturePair s;
  s.late_cells = pseudotime_extreme(pseudotime, decile, true);
  s.early_cells = pseudotime_extreme(pseudotime, decile, false);
  if (s.late_cells.empty() || s.early_cells.empty()) throw DataError("a pseudotime decile holds no cells");
  s.g_late = mean_unit(logits, s.late_cells);
  s.g_early = mean_unit(logits, s.early_cells);
  return s;
}

std::vector<std::size_t> select_early_cells(std::span<const double> pseudotime, const std::vector<bool>& active,
                                            double early_fraction) {
  if (active.size() != pseudotime.size()) throw DataError("activity flags cover different cells");
  std::vector<std::size_t> out;
  for (auto c : pseudotime_extreme(pseudotime, early_fraction, false))
    if (active[c]) out.push_back(c);
  return out;
}

Matrix amplify_feature(const Matrix& hidden, const SaeParams& sae, std::uint32_t feature, double alpha,
                       std::span<const SparseCode> codes) {
  Matrix out = hidden;
  const auto d = sae.direction(feature);
  for (std::size_t p = 0; p < hidden.rows(); ++p) {
    const double a = codes[p].coefficient(feature);
    if (a == 0.0) continue;
    const double scale = (alpha - 1.0) * a;
    auto row = out.row(p);
    for (std::size_t i = 0; i < row.size(); ++i) row[i] += scale * d[i];
  }
  return out;
}

std::vector<double> steer_feature(const Model& model, const SaeParams& sae, std::uint32_t feature, double alpha,
                                  const ResidualTrace& clean) {
  if (feature >= sae.d_sae()) throw DataError("steered feature id exceeds d_sae");
  const auto& h = clean.hidden[sae.layer];
  const auto codes = encode_rows(sae, h);
  return forward_from_layer(model, sae.layer, amplify_feature(h, sae, feature, alpha, codes)).logits;
}

double state_shift(std::span<const double> z, std::span<const double> zs, const SignaturePair& sig) {
  if (norm2(z) == 0.0 || norm2(zs) == 0.0) throw NumericError("state shift of a zero logit vector");
  return cosine(zs, sig.g_late) - cosine(zs, sig.g_early) - (cosine(z, sig.g_late) - cosine(z, sig.g_early));
}

SteeringOutcome steering_report(const Model& model, const SaeParams& sae, const SteerSpec& spec,
                                const CellBatch& cells, std::span<const ResidualTrace> traces,
                                const SignaturePair& signatures, std::size_t top_n, std::size_t workers) {
  spec.validate();
  if (spec.layer != sae.layer) throw ConfigError("steer spec layer does not match the autoencoder layer");
  if (spec.feature >= sae.d_sae()) throw DataError("steered feature id exceeds d_sae");
  if (traces.size() != cells.size()) throw DataError("one clean trace per cell is required");

  std::vector<bool> active(cells.size(), false);
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto codes = encode_rows(sae, traces[c].hidden[spec.layer]);
    active[c] = std::any_of(codes.begin(), codes.end(), [&](const SparseCode& s) { return s.contains(spec.feature); });
  }

  SteeringOutcome out;
  out.spec = spec;
  out.cell_ids = select_early_cells(cells.pseudotime, active, spec.early_fraction);
  const std::size_t n = out.cell_ids.size();
  const std::size_t n_alpha = spec.alphas.size();
  const std::size_t largest =
      static_cast<std::size_t>(std::max_element(spec.alphas.begin(), spec.alphas.end()) - spec.alphas.begin());

  // steered[i][a] logits for selected cell i at alpha a.
  std::vector<std::vector<std::vector<double>>> steered(n, std::vector<std::vector<double>>(n_alpha));
  auto run = [&](std::size_t i) {
    const auto& tr = traces[out.cell_ids[i]];
    for (std::size_t a = 0; a < n_alpha; ++a) steered[i][a] = steer_feature(model, sae, spec.feature, spec.alphas[a], tr);
  };
  workers = std::max<std::size_t>(1, std::min(workers, std::max<std::size_t>(n, 1)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) run(i);
      });
  }

  for (std::size_t a = 0; a < n_alpha; ++a) {
    AlphaOutcome ao;
    ao.alpha = spec.alphas[a];
    std::size_t positive = 0;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = state_shift(traces[out.cell_ids[i]].logits, steered[i][a], signatures);
      ao.shifts.push_back(s);
      sum += s;
      if (s > 0.0) ++positive;
    }
    if (n > 0) {
      ao.mean_shift = sum / static_cast<double>(n);
      ao.fraction_positive = static_cast<double>(positive) / static_cast<double>(n);
    }
    out.per_alpha.push_back(std::move(ao));
  }

  if (n > 0) {
    const std::size_t n_genes = traces[out.cell_ids[0]].logits.size();
    out.gene_deltas.assign(n_genes, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& z = traces[out.cell_ids[i]].logits;
      for (std::size_t g = 0; g < n_genes; ++g) out.gene_deltas[g] += steered[i][largest][g] - z[g];
    }
    for (auto& v : out.gene_deltas) v /= static_cast<double>(n);
    std::vector<std::uint32_t> order(n_genes);
    std::iota(order.begin(), order.end(), 0u);
    auto by_desc = [&](std::uint32_t x, std::uint32_t y) {
      return out.gene_deltas[x] != out.gene_deltas[y] ? out.gene_deltas[x] > out.gene_deltas[y] : x < y;
    };
    std::sort(order.begin(), order.end(), by_desc);
    const std::size_t k = std::min(top_n, n_genes);
    for (std::size_t i = 0; i < k; ++i) out.top_up.push_back({order[i], out.gene_deltas[order[i]]});
    auto by_asc = [&](std::uint32_t x, std::uint32_t y) {
      return out.gene_deltas[x] != out.gene_deltas[y] ? out.gene_deltas[x] < out.gene_deltas[y] : x < y;
    };
    std::sort(order.begin(), order.end(), by_asc);
    for (std::size_t i = 0; i < k; ++i) out.top_down.push_back({order[i], out.gene_deltas[order[i]]});
  }
  return out;
}

std::vector<SteerSpec> parse_steer_specs_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<SteerSpec> out;
  bool header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "layer,feature,label,switch_d") throw DataError("steer spec CSV has an unexpected header");
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string item;
    while (std::getline(ls, item, ',')) f.push_back(item);
    if (f.size() == 3) f.emplace_back();
    if (f.size() != 4) throw DataError("steer spec CSV line " + std::to_string(line_no) + " needs 4 fields");
    SteerSpec s;
    try {
      s.layer = std::stoull(f[0]);
      s.feature = static_cast<std::uint32_t>(std::stoul(f[1]));
    } catch (const std::exception&) {
      throw DataError("steer spec CSV line " + std::to_string(line_no) + " has a malformed layer or feature");
    }
    s.label = f[2];
    s.switch_d = f[3];
    out.push_back(std::move(s));
  }
  if (!header) throw DataError("steer spec CSV is empty");
  return out;
}

namespace {
std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : ""; }
}  // namespace

std::string steering_table_csv(std::span<const SteeringOutcome> outcomes) {
  std::string out = "layer,feature,label,switch_d,alpha,n_cells,mean_shift,fraction_positive,top_gene_up,top_gene_down\n";
  for (const auto& o : outcomes) {
    for (const auto& a : o.per_alpha) {
      out += std::to_string(o.spec.layer) + ',' + std::to_string(o.spec.feature) + ',' + o.spec.label + ',' +
             o.spec.switch_d + ',' + num(a.alpha) + ',' + std::to_string(o.cell_ids.size()) + ',' +
             opt_num(a.mean_shift) + ',' + opt_num(a.fraction_positive) + ',' +
             (o.top_up.empty() ? "" : std::to_string(o.top_up.front().gene)) + ',' +
             (o.top_down.empty() ? "" : std::to_string(o.top_down.front().gene)) + '\n';
    }
  }
  return out;
}

std::string steering_cells_jsonl(std::span<const SteeringOutcome> outcomes) {
  std::string out;
  for (const auto& o : outcomes)
    for (const auto& a : o.per_alpha)
      for (std::size_t i = 0; i < o.cell_ids.size(); ++i) {
        nlohmann::ordered_json j;
        j["layer"] = o.spec.layer;
        j["feature"] = o.spec.feature;
        j["label"] = o.spec.label;
        j["alpha"] = a.alpha;
        j["cell_id"] = o.cell_ids[i];
        j["delta_s"] = a.shifts[i];
        out += j.dump() + '\n';
      }
  return out;
}

std::string gene_deltas_csv(std::span<const SteeringOutcome> outcomes) {
  std::string out = "layer,feature,label,gene,mean_delta,rank_up,rank_down\n";
  for (const auto& o : outcomes) {
    for (std::size_t g = 0; g < o.gene_deltas.size(); ++g) {
      std::string up, down;
      for (std::size_t r = 0; r < o.top_up.size(); ++r)
        if (o.top_up[r].gene == g) up = std::to_string(r + 1);
      for (std::size_t r = 0; r < o.top_down.size(); ++r)
        if (o.top_down[r].gene == g) down = std::to_string(r + 1);
      out += std::to_string(o.spec.layer) + ',' + std::to_string(o.spec.feature) + ',' + o.spec.label + ',' +
             std::to_string(g) + ',' + num(o.gene_deltas[g]) + ',' + up + ',' + down + '\n';
    }
  }
  return out;
}

}  // namespace circuitlab
