#include "circuitlab/combinatorics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "circuitlab/errors.hpp"

namespace circuitlab {

double median(std::vector<double> v) {
  if (v.empty()) throw InsufficientDataError("median of an empty set");
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<SparseCode> ablate_set(const Model& model, SaeSet saes, const ResidualTrace& clean,
                                   std::span<const FeatureRef> members, std::size_t measurement_layer,
                                   CoefficientSource source) {
  const auto& cfg = model.config;
  if (measurement_layer >= cfg.n_layers || measurement_layer >= saes.size())
    throw ConfigError("measurement layer has no autoencoder");
  std::vector<FeatureRef> ordered(members.begin(), members.end());
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.layer < b.layer; });
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    const auto& m = ordered[i];
    if (m.layer >= measurement_layer)
      throw ConfigError("ablated member at layer " + std::to_string(m.layer) + " is not below the measurement layer " +
                        std::to_string(measurement_layer));
    if (m.feature >= saes[m.layer].d_sae()) throw DataError("member feature id exceeds d_sae");
    for (std::size_t j = 0; j < i; ++j)
      if (ordered[j] == m) throw ConfigError("duplicate member in ablation set");
  }
  const std::size_t start = ordered.empty() ? measurement_layer : ordered.front().layer;
  const auto& meas_sae = saes[measurement_layer];

  std::vector<SparseCode> out(cfg.seq_len);
  std::vector<double> h(cfg.d_model);
  BlockScratch block_scratch;
  EncodeScratch enc;
  SparseCode code;
  for (std::size_t p = 0; p < cfg.seq_len; ++p) {
    const auto src = clean.hidden[start].row(p);
    std::copy(src.begin(), src.end(), h.begin());
    std::size_t next = 0;
    for (std::size_t layer = start;; ++layer) {
      for (; next < ordered.size() && ordered[next].layer == layer; ++next) {
        const auto& m = ordered[next];
        const auto& sae = saes[m.layer];
        const auto read_from = source == CoefficientSource::kClean ? clean.hidden[layer].row(p) : std::span<const double>(h);
        encode_topk(sae, read_from, code, enc);
        const double a = code.coefficient(m.feature);
        if (a != 0.0) subtract_scaled(h, a, sae.direction(m.feature));
      }
      if (layer == measurement_layer) break;
      apply_block(model, layer + 1, h, block_scratch);
    }
    encode_topk(meas_sae, h, out[p], enc);
  }
  return out;
}

ConditionEffects run_conditions(const Model& model, SaeSet saes, const Triplet& triplet, const CellBatch& cells,
                                std::size_t measurement_layer, std::size_t workers, CoefficientSource source) {
  if (cells.size() == 0) throw DataError("run_conditions needs at least one cell");
  const std::size_t d_sae = saes[measurement_layer].d_sae();
  const std::size_t n = cells.size();
  // means[cell][0 = clean, 1 + condition][target]
  std::vector<std::array<std::vector<double>, kNumConditions + 1>> means(n);
  auto run_cell = [&](std::size_t c) {
    const auto clean = forward_cell(model, cells.tokens[c], c);
    std::vector<SparseCode> clean_codes(model.config.seq_len);
    EncodeScratch enc;
    for (std::size_t p = 0; p < model.config.seq_len; ++p)
      encode_topk(saes[measurement_layer], clean.hidden[measurement_layer].row(p), clean_codes[p], enc);
    means[c][0] = cell_feature_means(clean_codes, d_sae);
    for (std::size_t k = 0; k < kNumConditions; ++k) {
      std::vector<FeatureRef> members;
      for (std::size_t m = 0; m < 3; ++m)
        if (kConditionMasks[k] & (1u << m)) members.push_back(triplet.members[m]);
      means[c][k + 1] = cell_feature_means(ablate_set(model, saes, clean, members, measurement_layer, source), d_sae);
    }
  };
  // Validate member layers once, up front, so worker threads never throw for configuration reasons.
  for (const auto& m : triplet.members) {
    if (m.layer >= measurement_layer) throw ConfigError("triplet member layer must be below the measurement layer");
    if (m.layer >= saes.size() || m.feature >= saes[m.layer].d_sae()) throw DataError("triplet member out of range");
  }
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t c = 0; c < n; ++c) run_cell(c);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t c = w; c < n; c += workers) run_cell(c);
      });
  }

  ConditionEffects out;
  out.n_cells = n;
  out.measurement_layer = measurement_layer;
  out.d.resize(d_sae);
  out.mean_shift.resize(d_sae);
  for (std::size_t t = 0; t < d_sae; ++t) {
    WelfordAccumulator clean;
    std::array<WelfordAccumulator, kNumConditions> cond;
    for (std::size_t c = 0; c < n; ++c) {
      clean.add(means[c][0][t]);
      for (std::size_t k = 0; k < kNumConditions; ++k) cond[k].add(means[c][k + 1][t]);
    }
    for (std::size_t k = 0; k < kNumConditions; ++k) {
      out.d[t][k] = cohens_d(clean, cond[k]);
      out.mean_shift[t][k] = cond[k].mean() - clean.mean();
      out.counts[k] = cond[k].count();
    }
  }
  return out;
}

namespace {
double at(const ConditionValues& d, Condition c) { return d[static_cast<std::size_t>(c)]; }

std::optional<double> safe_ratio(double num, double den) {
  if (!(den > 0.0) || !std::isfinite(den) || !std::isfinite(num)) return std::nullopt;
  return num / den;
}
}  // namespace

std::optional<double> redundancy_ratio(const ConditionValues& d) {
  return safe_ratio(std::fabs(at(d, Condition::kABC)),
                    std::fabs(at(d, Condition::kA)) + std::fabs(at(d, Condition::kB)) + std::fabs(at(d, Condition::kC)));
}

std::optional<double> pairwise_ratio(const ConditionValues& d, Condition pair) {
  switch (pair) {
    case Condition::kAB:
      return safe_ratio(std::fabs(at(d, pair)), std::fabs(at(d, Condition::kA)) + std::fabs(at(d, Condition::kB)));
    case Condition::kAC:
      return safe_ratio(std::fabs(at(d, pair)), std::fabs(at(d, Condition::kA)) + std::fabs(at(d, Condition::kC)));
    case Condition::kBC:
      return safe_ratio(std::fabs(at(d, pair)), std::fabs(at(d, Condition::kB)) + std::fabs(at(d, Condition::kC)));
    default:
      throw ConfigError("pairwise_ratio needs a pair condition");
  }
}

double interaction_term(const ConditionValues& d) {
  for (double v : d)
    if (!std::isfinite(v)) throw DataError("interaction term needs all seven finite condition effects");
  return at(d, Condition::kABC) - at(d, Condition::kAB) - at(d, Condition::kAC) - at(d, Condition::kBC) +
         at(d, Condition::kA) + at(d, Condition::kB) + at(d, Condition::kC);
}

double marginal_contribution(const ConditionValues& d) {
  return std::fabs(at(d, Condition::kABC)) - std::fabs(at(d, Condition::kAB));
}

std::string_view additivity_name(Additivity a) {
  switch (a) {
    case Additivity::kSubadditive: return "subadditive";
    case Additivity::kAdditive: return "additive";
    case Additivity::kSuperadditive: return "superadditive";
  }
  return "";
}

Additivity classify_ratio(double r, double eps) {
  if (r > 1.0 + eps) return Additivity::kSuperadditive;
  if (r < 1.0 - eps) return Additivity::kSubadditive;
  return Additivity::kAdditive;
}

std::optional<Additivity> classify_target(const ConditionValues& d, double eps) {
  const auto r = redundancy_ratio(d);
  if (!r) return std::nullopt;
  return classify_ratio(*r, eps);
}

bool target_is_significant(const ConditionValues& d, double threshold) {
  return std::any_of(d.begin(), d.end(), [&](double v) { return std::fabs(v) > threshold; });
}

TripletReport triplet_report(const ConditionEffects& effects, double significance, double eps) {
  TripletReport r;
  std::vector<double> pair_means, threeway, marginals;
  for (const auto& d : effects.d) {
    if (!target_is_significant(d, significance)) continue;
    ++r.n_targets;
    std::vector<double> pairs;
    for (auto c : {Condition::kAB, Condition::kAC, Condition::kBC})
      if (auto v = pairwise_ratio(d, c)) pairs.push_back(*v);
    if (!pairs.empty())
      pair_means.push_back(std::accumulate(pairs.begin(), pairs.end(), 0.0) / static_cast<double>(pairs.size()));
    if (auto R = redundancy_ratio(d)) {
      threeway.push_back(*R);
      ++r.n_classified;
      switch (classify_ratio(*R, eps)) {
        case Additivity::kSubadditive: ++r.subadditive_count; break;
        case Additivity::kAdditive: ++r.additive_count; break;
        case Additivity::kSuperadditive: ++r.superadditive_count; break;
      }
    }
    const double m = marginal_contribution(d);
    if (std::isfinite(m)) marginals.push_back(m);
  }
  if (!pair_means.empty()) {
    r.pairwise_ratio_mean = std::accumulate(pair_means.begin(), pair_means.end(), 0.0) / static_cast<double>(pair_means.size());
    r.pairwise_ratio_median = median(pair_means);
  }
  if (!threeway.empty()) r.threeway_ratio_median = median(threeway);
  if (!marginals.empty()) r.marginal_c_given_ab_median = median(marginals);
  if (r.n_classified > 0) {
    const double n = static_cast<double>(r.n_classified);
    r.subadditive_fraction = static_cast<double>(r.subadditive_count) / n;
    r.additive_fraction = static_cast<double>(r.additive_count) / n;
    r.superadditive_fraction = static_cast<double>(r.superadditive_count) / n;
  }
  return r;
}

std::vector<Triplet> parse_triplets_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<Triplet> out;
  bool header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "pathway_tag,type,layerA,featA,layerB,featB,layerC,featC")
        throw DataError("triplet CSV has an unexpected header");
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string item;
    while (std::getline(ls, item, ',')) f.push_back(item);
    if (f.size() != 8) throw DataError("triplet CSV line " + std::to_string(line_no) + " needs 8 fields");
    Triplet t;
    t.pathway_tag = f[0];
    if (f[1] == "same-pathway") t.type = TripletType::kSamePathway;
    else if (f[1] == "cross-pathway") t.type = TripletType::kCrossPathway;
    else throw DataError("triplet type must be same-pathway or cross-pathway");
    try {
      for (std::size_t m = 0; m < 3; ++m)
        t.members[m] = {std::stoull(f[2 + 2 * m]), static_cast<std::uint32_t>(std::stoul(f[3 + 2 * m]))};
    } catch (const std::exception&) {
      throw DataError("triplet CSV line " + std::to_string(line_no) + " has a malformed layer or feature");
    }
    out.push_back(std::move(t));
  }
  if (!header) throw DataError("triplet CSV is empty");
  return out;
}

namespace {
std::string opt_num(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", *v);
  return buf;
}
nlohmann::json json_num(double v) {
  if (std::isfinite(v)) return v;
  return v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
}
}  // namespace

std::string triplet_report_csv(std::span<const Triplet> triplets, std::span<const TripletReport> reports) {
  std::string out =
      "pathway_tag,type,pairwise_ratio,threeway_ratio,superadditive_count,marginal_c_given_ab,n_targets,"
      "subadditive_fraction,additive_fraction,superadditive_fraction\n";
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    const auto& t = triplets[i];
    const auto& r = reports[i];
    out += t.pathway_tag + ',' + (t.type == TripletType::kSamePathway ? "same-pathway" : "cross-pathway") + ',' +
           opt_num(r.pairwise_ratio_mean) + ',' + opt_num(r.threeway_ratio_median) + ',' +
           std::to_string(r.superadditive_count) + ',' + opt_num(r.marginal_c_given_ab_median) + ',' +
           std::to_string(r.n_targets) + ',' + opt_num(r.subadditive_fraction) + ',' + opt_num(r.additive_fraction) +
           ',' + opt_num(r.superadditive_fraction) + '\n';
  }
  return out;
}

std::string triplet_targets_jsonl(std::size_t index, const Triplet& triplet, const ConditionEffects& effects,
                                  double eps) {
  std::string out;
  for (std::size_t t = 0; t < effects.d.size(); ++t) {
    const auto& d = effects.d[t];
    nlohmann::ordered_json j;
    j["triplet"] = index;
    j["pathway_tag"] = triplet.pathway_tag;
    j["target_layer"] = effects.measurement_layer;
    j["target_feature"] = t;
    nlohmann::ordered_json dj;
    for (std::size_t k = 0; k < kNumConditions; ++k) dj[kConditionNames[k]] = json_num(d[k]);
    j["d"] = dj;
    const auto R = redundancy_ratio(d);
    j["threeway_ratio"] = R ? nlohmann::json(*R) : nlohmann::json(nullptr);
    bool finite = std::all_of(d.begin(), d.end(), [](double v) { return std::isfinite(v); });
    j["interaction"] = finite ? nlohmann::json(interaction_term(d)) : nlohmann::json(nullptr);
    j["class"] = R ? nlohmann::json(std::string(additivity_name(classify_ratio(*R, eps)))) : nlohmann::json(nullptr);
    j["marginal_c_given_ab"] = json_num(marginal_contribution(d));
    j["n_cells"] = effects.n_cells;
    out += j.dump() + '\n';
  }
  return out;
}

}  // namespace circuitlab
