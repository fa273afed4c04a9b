#pragma once

// Path-dependent TreeSHAP attributions, importance profiles and figure data
// (beeswarm records, LOESS dependence curves).

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coverbias/boosting.hpp"
#include "coverbias/error.hpp"
#include "coverbias/util/parallel.hpp"

namespace coverbias::explain {

using boosting::Dataset;
using boosting::Tree;
using boosting::TreeEnsemble;
using json = nlohmann::json;

struct ShapMatrix {
  std::vector<std::string> ids;
  std::vector<std::string> feature_names;
  std::vector<double> values;  // row-major, rows x features
  std::vector<double> predictions;
  double expected_value = 0.0;

  std::size_t rows() const noexcept { return ids.size(); }
  std::size_t n_features() const noexcept { return feature_names.size(); }
  double at(std::size_t r, std::size_t f) const { return values[r * n_features() + f]; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * n_features(), n_features()}; }
};

namespace detail {

struct PathElement {
  int feature = -1;
  double zero_fraction = 0.0;
  double one_fraction = 0.0;
  double pweight = 0.0;
};

// Path bookkeeping of the polynomial-time TreeSHAP recursion: each element
// tracks the fraction of "feature absent" (zero) and "feature present" (one)
// paths, and pweight the permutation weight of subsets of each size.
inline void extend_path(std::vector<PathElement>& path, int depth, double zero_fraction, double one_fraction,
                        int feature) {
  path[static_cast<std::size_t>(depth)] = {feature, zero_fraction, one_fraction, depth == 0 ? 1.0 : 0.0};
  for (int i = depth - 1; i >= 0; --i) {
    auto& cur = path[static_cast<std::size_t>(i)];
    path[static_cast<std::size_t>(i + 1)].pweight += one_fraction * cur.pweight * (i + 1) / (depth + 1.0);
    cur.pweight = zero_fraction * cur.pweight * (depth - i) / (depth + 1.0);
  }
}

inline void unwind_path(std::vector<PathElement>& path, int depth, int index) {
  const double one = path[static_cast<std::size_t>(index)].one_fraction;
  const double zero = path[static_cast<std::size_t>(index)].zero_fraction;
  double next_one = path[static_cast<std::size_t>(depth)].pweight;
  for (int i = depth - 1; i >= 0; --i) {
    auto& cur = path[static_cast<std::size_t>(i)];
    if (one != 0.0) {
      double tmp = cur.pweight;
      cur.pweight = next_one * (depth + 1.0) / ((i + 1.0) * one);
      next_one = tmp - cur.pweight * zero * (depth - i) / (depth + 1.0);
    } else {
      cur.pweight = cur.pweight * (depth + 1.0) / (zero * (depth - i));
    }
  }
  for (int i = index; i < depth; ++i) {
    auto& dst = path[static_cast<std::size_t>(i)];
    const auto& src = path[static_cast<std::size_t>(i + 1)];
    dst.feature = src.feature;
    dst.zero_fraction = src.zero_fraction;
    dst.one_fraction = src.one_fraction;
  }
}

inline double unwound_path_sum(const std::vector<PathElement>& path, int depth, int index) {
  const double one = path[static_cast<std::size_t>(index)].one_fraction;
  const double zero = path[static_cast<std::size_t>(index)].zero_fraction;
  double next_one = path[static_cast<std::size_t>(depth)].pweight;
  double total = 0.0;
  for (int i = depth - 1; i >= 0; --i) {
    const auto& cur = path[static_cast<std::size_t>(i)];
    if (one != 0.0) {
      double tmp = next_one * (depth + 1.0) / ((i + 1.0) * one);
      total += tmp;
      next_one = cur.pweight - tmp * zero * (depth - i) / (depth + 1.0);
    } else {
      total += (cur.pweight / zero) / ((depth - i) / (depth + 1.0));
    }
  }
  return total;
}

inline void recurse(const Tree& tree, std::span<const double> x, std::span<double> phi, int node,
                    std::vector<PathElement> path, int depth, double zero_fraction, double one_fraction,
                    int feature) {
  extend_path(path, depth, zero_fraction, one_fraction, feature);
  const auto& n = tree.nodes[static_cast<std::size_t>(node)];
  if (n.is_leaf()) {
    for (int i = 1; i <= depth; ++i) {
      const auto& el = path[static_cast<std::size_t>(i)];
      double w = unwound_path_sum(path, depth, i);
      phi[static_cast<std::size_t>(el.feature)] += w * (el.one_fraction - el.zero_fraction) * n.value;
    }
    return;
  }

  double v = x[static_cast<std::size_t>(n.feature)];
  bool go_left = std::isnan(v) ? n.default_left : v < n.threshold;
  int hot = go_left ? n.left : n.right;
  int cold = go_left ? n.right : n.left;
  double hot_zero = tree.nodes[static_cast<std::size_t>(hot)].cover / n.cover;
  double cold_zero = tree.nodes[static_cast<std::size_t>(cold)].cover / n.cover;
  double incoming_zero = 1.0, incoming_one = 1.0;

  // A feature already on the path is unwound and re-extended at this split.
  int k = 0;
  for (; k <= depth; ++k)
    if (path[static_cast<std::size_t>(k)].feature == n.feature) break;
  if (k != depth + 1) {
    incoming_zero = path[static_cast<std::size_t>(k)].zero_fraction;
    incoming_one = path[static_cast<std::size_t>(k)].one_fraction;
    unwind_path(path, depth, k);
    --depth;
  }
  recurse(tree, x, phi, hot, path, depth + 1, hot_zero * incoming_zero, incoming_one, n.feature);
  recurse(tree, x, phi, cold, path, depth + 1, cold_zero * incoming_zero, 0.0, n.feature);
}

}  // namespace detail

// Exact Shapley values of one tree under its cover distribution, added to phi.
inline void tree_shap_single(const Tree& tree, std::span<const double> x, std::span<double> phi) {
  if (!tree.has_cover()) throw SchemaError("tree is missing cover metadata");
  int max_depth = tree.depth();
  std::vector<detail::PathElement> path(static_cast<std::size_t>(max_depth + 2));
  detail::recurse(tree, x, phi, 0, std::move(path), 0, 1.0, 1.0, -1);
}

inline double expected_value(const TreeEnsemble& model) {
  double s = 0.0;
  for (const auto& t : model.trees) {
    if (!t.has_cover()) throw SchemaError("tree is missing cover metadata");
    s += t.expected_value();
  }
  return model.base_prediction + model.params.learning_rate * s;
}

inline std::vector<double> tree_shap(const TreeEnsemble& model, std::span<const double> x) {
  if (x.size() != model.n_features()) throw SchemaError("feature count mismatch");
  std::vector<double> phi(model.n_features(), 0.0);
  for (const auto& t : model.trees) tree_shap_single(t, x, phi);
  for (double& v : phi) v *= model.params.learning_rate;
  return phi;
}

inline ShapMatrix tree_shap(const TreeEnsemble& model, const Dataset& rows) {
  if (rows.n_features() != model.n_features()) throw SchemaError("feature count mismatch");
  ShapMatrix m;
  m.ids = rows.ids;
  m.feature_names = model.feature_names;
  m.expected_value = expected_value(model);
  m.values.assign(rows.size() * model.n_features(), 0.0);
  m.predictions.assign(rows.size(), 0.0);
  parallel_for(rows.size(), [&](std::size_t r) {
    auto phi = tree_shap(model, rows.row(r));
    std::copy(phi.begin(), phi.end(), m.values.begin() + static_cast<std::ptrdiff_t>(r * model.n_features()));
    m.predictions[r] = model.predict(rows.row(r));
  });
  return m;
}

// ---------------------------------------------------------------------------
// Importance

struct FeatureImportance {
  std::string feature;
  std::size_t index = 0;
  double mean_abs = 0.0;
  double normalized = 0.0;
  std::size_t rank = 0;  // 1 = most important
  bool highlight = false;  // normalized > 0.5
};

struct ImportanceProfile {
  std::vector<FeatureImportance> features;  // original feature order
  bool degenerate = false;                  // single feature or all raw scores equal

  std::vector<std::size_t> ranking() const {
    std::vector<std::size_t> order(features.size());
    for (const auto& f : features) order[f.rank - 1] = f.index;
    return order;
  }
};

// Mean |SHAP| per feature, min-max normalised to [0, 1].
inline ImportanceProfile importance_profile(const ShapMatrix& shap) {
  if (shap.n_features() == 0) throw DomainError("importance needs at least one feature");
  ImportanceProfile p;
  for (std::size_t f = 0; f < shap.n_features(); ++f) {
    double s = 0.0;
    for (std::size_t r = 0; r < shap.rows(); ++r) s += std::abs(shap.at(r, f));
    p.features.push_back({shap.feature_names[f], f, shap.rows() ? s / static_cast<double>(shap.rows()) : 0.0});
  }
  auto [lo, hi] = std::minmax_element(p.features.begin(), p.features.end(),
                                      [](const auto& a, const auto& b) { return a.mean_abs < b.mean_abs; });
  double min = lo->mean_abs, max = hi->mean_abs;
  p.degenerate = !(max > min);
  for (auto& f : p.features) {
    f.normalized = p.degenerate ? 1.0 : (f.mean_abs - min) / (max - min);
    f.highlight = f.normalized > 0.5;
  }
  std::vector<std::size_t> order(p.features.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p.features[a].mean_abs > p.features[b].mean_abs; });
  for (std::size_t k = 0; k < order.size(); ++k) p.features[order[k]].rank = k + 1;
  return p;
}

// ---------------------------------------------------------------------------
// Beeswarm

struct BeeswarmRecord {
  std::string feature;
  std::size_t rank = 0;
  std::string area_id;
  double shap = 0.0;
  double value = 0.0;
  double percentile = 0.0;  // 0..100, ties share their mean rank
};

// 0..100 percentile of each value by (tie-averaged) rank.
inline std::vector<double> rank_percentiles(std::span<const double> v) {
  std::size_t n = v.size();
  std::vector<double> out(n, 50.0);
  if (n < 2) return out;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    double mean_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) out[order[k]] = 100.0 * mean_rank / static_cast<double>(n - 1);
    i = j + 1;
  }
  return out;
}

inline std::vector<BeeswarmRecord> beeswarm_export(const ShapMatrix& shap, const Dataset& covariates,
                                                   std::size_t top = 20) {
  if (covariates.size() != shap.rows() || covariates.n_features() != shap.n_features())
    throw SchemaError("beeswarm: SHAP matrix and covariates are not aligned");
  for (std::size_t r = 0; r < shap.rows(); ++r)
    if (covariates.ids[r] != shap.ids[r]) throw SchemaError("beeswarm: row order differs");
  auto profile = importance_profile(shap);
  auto ranking = profile.ranking();
  std::vector<BeeswarmRecord> out;
  for (std::size_t k = 0; k < std::min(top, ranking.size()); ++k) {
    std::size_t f = ranking[k];
    std::vector<double> column(shap.rows());
    for (std::size_t r = 0; r < shap.rows(); ++r) column[r] = covariates.at(r, f);
    auto pct = rank_percentiles(column);
    for (std::size_t r = 0; r < shap.rows(); ++r)
      out.push_back({shap.feature_names[f], k + 1, shap.ids[r], shap.at(r, f), column[r], pct[r]});
  }
  return out;
}

// ---------------------------------------------------------------------------
// LOESS dependence curves

struct LoessCurve {
  std::vector<double> x;
  std::vector<double> fit;
  std::vector<double> se;
  std::vector<double> lower;  // fit - 1.96 se
  std::vector<double> upper;  // fit + 1.96 se
  double residual_sd = 0.0;
};

namespace detail {

inline double tricube(double u) {
  if (u >= 1.0) return 0.0;
  double t = 1.0 - u * u * u;
  return t * t * t;
}

// Local-linear smoothing weights l_i(x0) so that fit(x0) = sum_i l_i y_i.
inline std::vector<double> loess_weights(std::span<const double> xs, double x0, std::size_t q, double frac) {
  std::size_t n = xs.size();
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) dist[i] = std::abs(xs[i] - x0);
  std::vector<double> sorted = dist;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(q - 1), sorted.end());
  double h = sorted[q - 1];
  if (frac > 1.0) h *= frac;
  if (!(h > 0.0)) {
    double next = std::numeric_limits<double>::infinity();
    for (double d : dist)
      if (d > 0.0) next = std::min(next, d);
    h = std::isfinite(next) ? next : 1.0;
  }
  std::vector<double> w(n);
  double s0 = 0, s1 = 0, s2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = tricube(dist[i] / h);
    double d = xs[i] - x0;
    s0 += w[i];
    s1 += w[i] * d;
    s2 += w[i] * d * d;
  }
  std::vector<double> l(n, 0.0);
  double det = s0 * s2 - s1 * s1;
  if (det > 1e-12 * std::max(1.0, s0 * s2)) {
    for (std::size_t i = 0; i < n; ++i) l[i] = w[i] * (s2 - s1 * (xs[i] - x0)) / det;
  } else if (s0 > 0) {
    for (std::size_t i = 0; i < n; ++i) l[i] = w[i] / s0;  // local constant fallback
  }
  return l;
}

}  // namespace detail

// Degree-1 LOESS with tricube weights over the nearest ceil(frac * n) points,
// evaluated on `grid_points` equally spaced values across the x range.
inline LoessCurve loess(std::span<const double> xs, std::span<const double> ys, double frac = 0.75,
                        std::size_t grid_points = 100) {
  if (xs.size() != ys.size()) throw SchemaError("loess: length mismatch");
  if (xs.size() < 10) throw DomainError("loess needs at least 10 points");
  if (!(frac > 0.0)) throw DomainError("loess span must be > 0");
  if (grid_points < 2) throw DomainError("loess needs at least 2 grid points");
  auto [lo_it, hi_it] = std::minmax_element(xs.begin(), xs.end());
  double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) throw DegenerateInput("loess: constant feature");

  const std::size_t n = xs.size();
  std::size_t q = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(std::min(frac, 1.0) * static_cast<double>(n) - 1e-9)), 2, n);

  double rss = 0.0, trace = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto l = detail::loess_weights(xs, xs[i], q, frac);
    double fit = 0.0;
    for (std::size_t k = 0; k < n; ++k) fit += l[k] * ys[k];
    rss += (ys[i] - fit) * (ys[i] - fit);
    trace += l[i];
  }
  double dof = static_cast<double>(n) - trace;
  if (!(dof > 0.0)) dof = static_cast<double>(n);
  double sigma = std::sqrt(rss / dof);

  LoessCurve c;
  c.residual_sd = sigma;
  for (std::size_t g = 0; g < grid_points; ++g) {
    double x0 = g + 1 == grid_points ? hi : lo + (hi - lo) * static_cast<double>(g) / (grid_points - 1.0);
    auto l = detail::loess_weights(xs, x0, q, frac);
    double fit = 0.0, norm = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      fit += l[k] * ys[k];
      norm += l[k] * l[k];
    }
    double se = sigma * std::sqrt(norm);
    c.x.push_back(x0);
    c.fit.push_back(fit);
    c.se.push_back(se);
    c.lower.push_back(fit - 1.96 * se);
    c.upper.push_back(fit + 1.96 * se);
  }
  return c;
}

struct DependenceSeries {
  std::string feature;
  std::vector<std::string> ids;
  std::vector<double> feature_values;
  std::vector<double> shap_values;
  std::vector<double> target_values;  // empty when no target was supplied
  LoessCurve shap_curve;
  std::optional<LoessCurve> target_curve;
};

// SHAP-vs-feature scatter with its LOESS trend; when `target` is given the
// target-vs-feature trend is exported alongside.
inline DependenceSeries dependence_export(const ShapMatrix& shap, const Dataset& covariates,
                                          std::size_t feature, double frac = 0.75,
                                          const std::vector<double>* target = nullptr) {
  if (covariates.size() != shap.rows() || covariates.n_features() != shap.n_features())
    throw SchemaError("dependence: SHAP matrix and covariates are not aligned");
  if (feature >= shap.n_features()) throw DomainError("dependence: feature index out of range");
  if (shap.rows() < 10) throw DomainError("dependence plots need at least 10 areas");
  DependenceSeries d;
  d.feature = shap.feature_names[feature];
  d.ids = shap.ids;
  for (std::size_t r = 0; r < shap.rows(); ++r) {
    d.feature_values.push_back(covariates.at(r, feature));
    d.shap_values.push_back(shap.at(r, feature));
  }
  d.shap_curve = loess(d.feature_values, d.shap_values, frac);
  if (target) {
    if (target->size() != shap.rows()) throw SchemaError("dependence: target length mismatch");
    d.target_values = *target;
    d.target_curve = loess(d.feature_values, d.target_values, frac);
  }
  return d;
}

// ---------------------------------------------------------------------------
// JSON

inline json to_json(const LoessCurve& c) {
  return {{"x", c.x}, {"fit", c.fit}, {"se", c.se}, {"lower", c.lower}, {"upper", c.upper},
          {"residual_sd", c.residual_sd}};
}

inline json to_json(const ImportanceProfile& p, const std::string& source_id,
                    const std::vector<std::string>& groups = {}) {
  json out = json::array();
  for (const auto& f : p.features) {
    json j = {{"source_id", source_id}, {"feature", f.feature},      {"mean_abs_shap", f.mean_abs},
              {"normalized", f.normalized}, {"rank", f.rank},          {"highlight", f.highlight},
              {"degenerate", p.degenerate}};
    if (f.index < groups.size() && !groups[f.index].empty()) j["group"] = groups[f.index];
    out.push_back(std::move(j));
  }
  return out;
}

inline json to_json(const std::vector<BeeswarmRecord>& records, const std::string& source_id) {
  json out = json::array();
  for (const auto& r : records)
    out.push_back({{"source_id", source_id}, {"feature", r.feature},       {"rank", r.rank},
                   {"area_id", r.area_id},     {"shap", r.shap},             {"value", r.value},
                   {"percentile", r.percentile}});
  return out;
}

inline json to_json(const DependenceSeries& d, const std::string& source_id) {
  json j = {{"source_id", source_id},
            {"feature", d.feature},
            {"area_id", d.ids},
            {"feature_value", d.feature_values},
            {"shap", d.shap_values},
            {"shap_curve", to_json(d.shap_curve)}};
  if (d.target_curve) {
    j["target"] = d.target_values;
    j["target_curve"] = to_json(*d.target_curve);
  }
  return j;
}

inline std::string format_shap_matrix(const ShapMatrix& m) {
  std::vector<std::string> header{"area_id"};
  for (const auto& f : m.feature_names) header.push_back(f);
  header.push_back("expected_value");
  header.push_back("prediction");
  csv::Writer w(header);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    std::vector<std::string> fields{m.ids[r]};
    for (double v : m.row(r)) fields.push_back(csv::format_real(v));
    fields.push_back(csv::format_real(m.expected_value));
    fields.push_back(csv::format_real(m.predictions[r]));
    w.row(fields);
  }
  return w.str();
}

}  // namespace coverbias::explain
