#pragma once

// Spatial weights, global Moran's I with permutation inference, and Pearson
// correlation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <boost/math/special_functions/beta.hpp>
#include <nlohmann/json.hpp>

#include "coverbias/error.hpp"
#include "coverbias/geometry.hpp"
#include "coverbias/ingest.hpp"
#include "coverbias/util/parallel.hpp"
#include "coverbias/util/random.hpp"

namespace coverbias::spatial {

// ---------------------------------------------------------------------------
// Weighting schemes

struct Scheme {
  enum class Kind { queen, knn, distance_band };

  Kind kind = Kind::queen;
  int k = 8;                         // knn
  std::optional<double> radius_km;   // distance band; unset = smallest radius with no isolates

  static Scheme queen() { return {Kind::queen, 8, std::nullopt}; }
  static Scheme knn(int k = 8) { return {Kind::knn, k, std::nullopt}; }
  static Scheme distance_band(std::optional<double> km = std::nullopt) { return {Kind::distance_band, 8, km}; }

  // "queen", "knn", "knn:5", "distance_band", "distance_band:120" (km)
  static Scheme parse(std::string_view text) {
    std::string t = csv::trim(text);
    auto colon = t.find(':');
    std::string name = t.substr(0, colon);
    std::string arg = colon == std::string::npos ? "" : t.substr(colon + 1);
    try {
      if (name == "queen" && arg.empty()) return queen();
      if (name == "knn") return knn(arg.empty() ? 8 : static_cast<int>(csv::to_integer(arg, "scheme", 0)));
      if (name == "distance_band" || name == "distance")
        return distance_band(arg.empty() ? std::nullopt : std::optional<double>(csv::to_real(arg, "scheme", 0)));
    } catch (const ParseError&) {
    }
    throw SchemaError("unknown weighting scheme '" + t + "'");
  }

  std::string label() const {
    switch (kind) {
      case Kind::queen: return "queen";
      case Kind::knn: return "knn:" + std::to_string(k);
      case Kind::distance_band: return radius_km ? "distance_band:" + csv::format_real(*radius_km) : "distance_band";
    }
    return "";
  }
};

struct Neighbor {
  std::size_t index = 0;
  double weight = 0.0;
};

struct SpatialWeights {
  Scheme scheme;
  std::vector<std::string> ids;
  std::vector<std::vector<Neighbor>> neighbors;
  bool row_standardized = false;
  double radius_km = 0.0;  // resolved radius for distance bands
  std::vector<std::string> warnings;

  std::size_t size() const noexcept { return ids.size(); }
  bool is_isolate(std::size_t i) const { return neighbors[i].empty(); }
  std::size_t n_isolates() const {
    return static_cast<std::size_t>(std::count_if(neighbors.begin(), neighbors.end(),
                                                  [](const auto& row) { return row.empty(); }));
  }
  double s0() const {
    double s = 0.0;
    for (std::size_t i = 0; i < neighbors.size(); ++i)
      for (const auto& nb : neighbors[i])
        if (!is_isolate(nb.index)) s += nb.weight;
    return s;
  }
  double weight(std::size_t i, std::size_t j) const {
    for (const auto& nb : neighbors[i])
      if (nb.index == j) return nb.weight;
    return 0.0;
  }
};

inline void row_standardize(SpatialWeights& w) {
  for (auto& row : w.neighbors) {
    double s = 0.0;
    for (const auto& nb : row) s += nb.weight;
    if (s > 0)
      for (auto& nb : row) nb.weight /= s;
  }
  w.row_standardized = true;
}

// Binary weights from an explicit neighbor list (index pairs are directed).
inline SpatialWeights weights_from_neighbors(std::vector<std::string> ids,
                                             const std::vector<std::vector<std::size_t>>& adjacency,
                                             bool standardize = false) {
  SpatialWeights w;
  w.ids = std::move(ids);
  w.neighbors.resize(w.ids.size());
  for (std::size_t i = 0; i < adjacency.size(); ++i)
    for (std::size_t j : adjacency[i]) {
      if (j == i) throw DomainError("self-neighbor in adjacency");
      w.neighbors[i].push_back({j, 1.0});
    }
  if (standardize) row_standardize(w);
  return w;
}

inline std::vector<std::vector<double>> centroid_distances(const AreaSet& areas) {
  std::size_t n = areas.size();
  std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) d[i][j] = d[j][i] = geo::haversine_km(areas[i].centroid, areas[j].centroid);
  return d;
}

// Smallest band radius (km) leaving no isolate: the largest nearest-neighbour distance.
inline double min_connecting_radius(const std::vector<std::vector<double>>& d) {
  double r = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < d.size(); ++j)
      if (j != i) best = std::min(best, d[i][j]);
    r = std::max(r, best);
  }
  return r;
}

inline SpatialWeights build_weights(const AreaSet& areas, const Scheme& scheme, bool standardize = true) {
  const std::size_t n = areas.size();
  if (n < 2) throw DomainError("spatial weights need at least 2 areas");

  SpatialWeights w;
  w.scheme = scheme;
  w.ids = areas.ids();
  w.neighbors.resize(n);

  switch (scheme.kind) {
    case Scheme::Kind::queen: {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
          if (!areas[i].bbox.intersects(areas[j].bbox, 1e-9)) continue;
          if (geo::touches(areas[i].geometry, areas[j].geometry)) {
            w.neighbors[i].push_back({j, 1.0});
            w.neighbors[j].push_back({i, 1.0});
          }
        }
      for (auto& row : w.neighbors)
        std::sort(row.begin(), row.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
      break;
    }
    case Scheme::Kind::knn: {
      if (scheme.k < 1) throw DomainError("knn requires k >= 1");
      if (static_cast<std::size_t>(scheme.k) >= n)
        throw DomainError("knn requires k < n (k=" + std::to_string(scheme.k) + ", n=" + std::to_string(n) + ")");
      auto d = centroid_distances(areas);
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> order;
        for (std::size_t j = 0; j < n; ++j)
          if (j != i) order.push_back(j);
        std::partial_sort(order.begin(), order.begin() + scheme.k, order.end(), [&](std::size_t a, std::size_t b) {
          return d[i][a] != d[i][b] ? d[i][a] < d[i][b] : a < b;
        });
        for (int m = 0; m < scheme.k; ++m) w.neighbors[i].push_back({order[static_cast<std::size_t>(m)], 1.0});
      }
      break;
    }
    case Scheme::Kind::distance_band: {
      auto d = centroid_distances(areas);
      double radius = scheme.radius_km ? *scheme.radius_km : min_connecting_radius(d);
      if (!(radius > 0)) throw DomainError("distance band radius must be > 0");
      w.radius_km = radius;
      double limit = radius * (1.0 + 1e-12);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          if (j != i && d[i][j] <= limit) w.neighbors[i].push_back({j, 1.0});
      break;
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    if (w.neighbors[i].empty()) w.warnings.push_back("area '" + w.ids[i] + "' is an isolate under " + scheme.label());
  if (standardize) row_standardize(w);
  return w;
}

// ---------------------------------------------------------------------------
// Moran's I

namespace detail {

struct Centered {
  std::vector<std::size_t> active;  // non-isolate indices
  std::vector<double> z;            // indexed like the weights; 0 for isolates
  double sum_sq = 0.0;
  double s0 = 0.0;
};

inline Centered center(std::span<const double> values, const SpatialWeights& w) {
  if (values.size() != w.size())
    throw SchemaError("values (" + std::to_string(values.size()) + ") do not match weights (" +
                      std::to_string(w.size()) + ")");
  Centered c;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!std::isfinite(values[i])) throw DomainError("non-finite value for area '" + w.ids[i] + "'");
    if (!w.is_isolate(i)) c.active.push_back(i);
  }
  if (c.active.empty()) throw DomainError("every area is an isolate");
  if (c.active.size() < 2) throw DomainError("Moran's I needs at least 2 non-isolate areas");

  double lo = values[c.active[0]], hi = lo, mean = 0.0;
  for (auto i : c.active) {
    lo = std::min(lo, values[i]);
    hi = std::max(hi, values[i]);
    mean += values[i];
  }
  if (lo == hi) throw DegenerateInput("values have zero variance");
  mean /= static_cast<double>(c.active.size());
  c.z.assign(w.size(), 0.0);
  for (auto i : c.active) {
    c.z[i] = values[i] - mean;
    c.sum_sq += c.z[i] * c.z[i];
  }
  c.s0 = w.s0();
  if (!(c.s0 > 0)) throw DomainError("weights sum to zero");
  return c;
}

inline double cross_product(std::span<const double> z, const SpatialWeights& w, std::span<const std::size_t> active) {
  double s = 0.0;
  for (auto i : active) {
    double row = 0.0;
    for (const auto& nb : w.neighbors[i])
      if (!w.is_isolate(nb.index)) row += nb.weight * z[nb.index];
    s += z[i] * row;
  }
  return s;
}

}  // namespace detail

// I = (n / S0) * sum_ij w_ij z_i z_j / sum_i z_i^2 over non-isolate areas.
inline double morans_i(std::span<const double> values, const SpatialWeights& w) {
  auto c = detail::center(values, w);
  double n = static_cast<double>(c.active.size());
  return (n / c.s0) * detail::cross_product(c.z, w, c.active) / c.sum_sq;
}

inline std::vector<double> align_values(const std::unordered_map<std::string, double>& values,
                                        const SpatialWeights& w) {
  std::vector<double> out;
  out.reserve(w.size());
  for (const auto& id : w.ids) {
    auto it = values.find(id);
    if (it == values.end()) throw SchemaError("no value for area '" + id + "'");
    out.push_back(it->second);
  }
  return out;
}

inline double morans_i(const std::unordered_map<std::string, double>& values, const SpatialWeights& w) {
  auto v = align_values(values, w);
  return morans_i(v, w);
}

enum class Alternative { greater, two_sided };

struct MoranResult {
  double I = 0.0;
  double p_value = 1.0;
  std::size_t n_permutations = 0;
  std::string scheme;
  std::uint64_t seed = 0;
  double expected = 0.0;  // -1 / (n - 1)
  Alternative alternative = Alternative::greater;
};

// Pseudo p-value (1 + #{I* >= I}) / (1 + n_permutations); permutation k draws
// from its own substream derive_seed(seed, k), so parallel runs reproduce the
// sequential result.
inline MoranResult permutation_test(std::span<const double> values, const SpatialWeights& w,
                                    std::size_t n_permutations = 999, std::uint64_t seed = 0,
                                    Alternative alternative = Alternative::greater) {
  auto c = detail::center(values, w);
  double n = static_cast<double>(c.active.size());
  double scale = (n / c.s0) / c.sum_sq;
  double observed = scale * detail::cross_product(c.z, w, c.active);
  double expected = -1.0 / (n - 1.0);

  std::vector<char> extreme(n_permutations, 0);
  parallel_for(n_permutations, [&](std::size_t k) {
    Rng rng(derive_seed(seed, k));
    std::vector<double> pool;
    pool.reserve(c.active.size());
    for (auto i : c.active) pool.push_back(c.z[i]);
    rng.shuffle(std::span<double>(pool));
    std::vector<double> z(w.size(), 0.0);
    for (std::size_t m = 0; m < c.active.size(); ++m) z[c.active[m]] = pool[m];
    double stat = scale * detail::cross_product(z, w, c.active);
    extreme[k] = alternative == Alternative::greater
                     ? stat >= observed
                     : std::abs(stat - expected) >= std::abs(observed - expected);
  });
  std::size_t hits = 0;
  for (char e : extreme) hits += static_cast<std::size_t>(e);

  MoranResult r;
  r.I = observed;
  r.p_value = (1.0 + static_cast<double>(hits)) / (1.0 + static_cast<double>(n_permutations));
  r.n_permutations = n_permutations;
  r.scheme = w.scheme.label();
  r.seed = seed;
  r.expected = expected;
  r.alternative = alternative;
  return r;
}

struct SchemeRange {
  std::vector<std::pair<std::string, double>> per_scheme;
  double range = 0.0;
};

// Max minus min of Moran's I across weighting schemes.
inline SchemeRange scheme_range(std::span<const double> values, const AreaSet& areas,
                                std::span<const Scheme> schemes, bool standardize = true) {
  if (schemes.size() < 2) throw DomainError("scheme range needs at least 2 schemes");
  SchemeRange out;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : schemes) {
    double I = morans_i(values, build_weights(areas, s, standardize));
    out.per_scheme.emplace_back(s.label(), I);
    lo = std::min(lo, I);
    hi = std::max(hi, I);
  }
  out.range = hi - lo;
  return out;
}

inline SchemeRange range_of(const std::vector<MoranResult>& results) {
  SchemeRange out;
  if (results.empty()) return out;
  double lo = results.front().I, hi = lo;
  for (const auto& r : results) {
    out.per_scheme.emplace_back(r.scheme, r.I);
    lo = std::min(lo, r.I);
    hi = std::max(hi, r.I);
  }
  out.range = hi - lo;
  return out;
}

// ---------------------------------------------------------------------------
// Pearson correlation

struct Correlation {
  double r = 0.0;
  double p_value = 1.0;  // two-sided
  std::size_t n = 0;
};

// Two-sided p from the t-distribution with n - 2 degrees of freedom:
// P(|T| >= t) = I_{df/(df+t^2)}(df/2, 1/2).
inline double t_two_sided_p(double t, double df) {
  if (!std::isfinite(t)) return 0.0;
  double x = df / (df + t * t);
  return boost::math::ibeta(df / 2.0, 0.5, x);
}

inline Correlation pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw SchemaError("pearson: length mismatch");
  if (x.size() < 3) throw DomainError("pearson: need at least 3 observations");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw DegenerateInput("pearson: zero variance");
  Correlation c;
  c.n = x.size();
  c.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  double df = n - 2.0;
  if (std::abs(c.r) >= 1.0) {
    c.p_value = 0.0;
  } else {
    double t = c.r * std::sqrt(df / (1.0 - c.r * c.r));
    c.p_value = t_two_sided_p(t, df);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Histogram

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> counts;
};

inline Histogram histogram(std::span<const double> values, std::size_t bins = 20) {
  if (bins == 0) throw DomainError("histogram needs at least one bin");
  Histogram h;
  h.counts.assign(bins, 0);
  if (values.empty()) {
    h.edges.assign(bins + 1, 0.0);
    return h;
  }
  auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  double lo = *lo_it, hi = *hi_it;
  double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(b == bins ? hi : lo + width * static_cast<double>(b));
  for (double v : values) {
    std::size_t b = width > 0 ? static_cast<std::size_t>((v - lo) / width) : 0;
    h.counts[std::min(b, bins - 1)]++;
  }
  return h;
}

inline nlohmann::json to_json(const MoranResult& r) {
  return {{"scheme", r.scheme},
          {"I", r.I},
          {"p", r.p_value},
          {"n_perm", r.n_permutations},
          {"seed", r.seed},
          {"expected_I", r.expected},
          {"alternative", r.alternative == Alternative::greater ? "greater" : "two_sided"}};
}

}  // namespace coverbias::spatial
