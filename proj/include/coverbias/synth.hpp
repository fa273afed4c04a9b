#pragma once

// Synthetic worlds with planted bias drivers, and brute-force reference
// implementations (dense Moran's I, subset-enumeration Shapley values) used to
// audit the production code paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coverbias/boosting.hpp"
#include "coverbias/error.hpp"
#include "coverbias/ingest.hpp"
#include "coverbias/spatial.hpp"
#include "coverbias/util/random.hpp"

namespace coverbias::synth {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Scenario

enum class Distribution { normal, uniform, lognormal };

struct CovariateGenerator {
  std::string name;
  FeatureGroup group = FeatureGroup::demographic;
  Distribution distribution = Distribution::normal;
  double a = 0.0;  // mean (normal, lognormal log-scale) or lower bound (uniform)
  double b = 1.0;  // sd or upper bound
  double smoothing = 0.0;  // neighbour-averaging strength in [0, 1]
  int smoothing_passes = 3;
};

enum class PenetrationForm { linear, logistic, u_shape, threshold };

struct PenetrationTerm {
  std::string covariate;
  double coef = 0.0;
  double center = 0.0;  // u_shape: coef * (x - center)^2
  double cut = 0.0;     // threshold: coef * [x > cut]
};

struct Penetration {
  PenetrationForm form = PenetrationForm::linear;
  double intercept = 0.1;
  double scale = 1.0;  // logistic upper asymptote
  std::vector<PenetrationTerm> terms;
};

struct ScenarioSpec {
  int rows = 10;
  int cols = 10;
  double cell_size = 1.0;  // degrees
  double origin_lon = 0.0;
  double origin_lat = 0.0;
  double census_log_mean = 11.9;  // exp(11.9) ~ 147k residents
  double census_log_sd = 0.5;
  std::vector<CovariateGenerator> covariates;
  Penetration penetration;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  std::optional<double> small_count_drop;  // counts below this become 0
  std::string source_id = "synthetic";

  std::size_t n_areas() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }

  void validate() const {
    if (rows < 1 || cols < 1) throw DomainError("scenario grid must have at least one row and column");
    if (!(cell_size > 0)) throw DomainError("cell_size must be > 0");
    if (!(census_log_sd >= 0)) throw DomainError("census_log_sd must be >= 0");
    if (!(noise_sigma >= 0)) throw DomainError("noise_sigma must be >= 0");
    for (const auto& c : covariates)
      if (!(c.smoothing >= 0 && c.smoothing <= 1)) throw DomainError("smoothing must be in [0, 1]");
    for (const auto& t : penetration.terms)
      if (std::none_of(covariates.begin(), covariates.end(), [&](const auto& c) { return c.name == t.covariate; }))
        throw SchemaError("penetration references undeclared covariate '" + t.covariate + "'");
  }
};

namespace detail {

template <typename E>
E parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> table, const char* what) {
  for (const auto& [name, value] : table)
    if (s == name) return value;
  throw SchemaError(std::string("unknown ") + what + " '" + s + "'");
}

}  // namespace detail

inline ScenarioSpec scenario_from_json(const json& j) {
  try {
    ScenarioSpec s;
    s.rows = j.value("rows", s.rows);
    s.cols = j.value("cols", s.cols);
    if (j.contains("n_areas") && j["n_areas"].get<std::size_t>() != s.n_areas())
      throw SchemaError("n_areas does not equal rows * cols");
    s.cell_size = j.value("cell_size", s.cell_size);
    s.origin_lon = j.value("origin_lon", s.origin_lon);
    s.origin_lat = j.value("origin_lat", s.origin_lat);
    if (j.contains("census")) {
      s.census_log_mean = j["census"].value("log_mean", s.census_log_mean);
      s.census_log_sd = j["census"].value("log_sd", s.census_log_sd);
    }
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.seed = j.value("seed", s.seed);
    s.source_id = j.value("source_id", s.source_id);
    if (j.contains("small_count_drop") && !j["small_count_drop"].is_null())
      s.small_count_drop = j["small_count_drop"].get<double>();
    for (const auto& c : j.value("covariates", json::array())) {
      CovariateGenerator g;
      g.name = c.at("name").get<std::string>();
      g.group = parse_feature_group(c.value("group", "demographic"));
      g.distribution = detail::parse_enum<Distribution>(
          c.value("distribution", "normal"),
          {{"normal", Distribution::normal}, {"uniform", Distribution::uniform}, {"lognormal", Distribution::lognormal}},
          "distribution");
      if (g.distribution == Distribution::uniform) {
        g.a = c.value("low", 0.0);
        g.b = c.value("high", 1.0);
      } else {
        g.a = c.value("mean", 0.0);
        g.b = c.value("sd", 1.0);
      }
      g.smoothing = c.value("smoothing", 0.0);
      g.smoothing_passes = c.value("smoothing_passes", g.smoothing_passes);
      s.covariates.push_back(std::move(g));
    }
    if (j.contains("penetration")) {
      const auto& p = j["penetration"];
      s.penetration.form = detail::parse_enum<PenetrationForm>(
          p.value("form", "linear"),
          {{"linear", PenetrationForm::linear}, {"logistic", PenetrationForm::logistic},
           {"u_shape", PenetrationForm::u_shape}, {"threshold", PenetrationForm::threshold}},
          "penetration form");
      s.penetration.intercept = p.value("intercept", s.penetration.intercept);
      s.penetration.scale = p.value("scale", s.penetration.scale);
      for (const auto& t : p.value("terms", json::array()))
        s.penetration.terms.push_back({t.at("covariate").get<std::string>(), t.value("coef", 0.0),
                                       t.value("center", 0.0), t.value("cut", 0.0)});
    }
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("scenario: ") + e.what());
  }
}

inline ScenarioSpec load_scenario(const std::string& path) {
  json j;
  try {
    j = json::parse(csv::read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  return scenario_from_json(j);
}

// ---------------------------------------------------------------------------
// World generation

struct World {
  AreaSet areas;
  CountTable census;
  CovariateTable covariates;
  int rows = 0;
  int cols = 0;
};

inline std::string cell_id(int r, int c, int cols) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "G%04d", r * cols + c);
  return buf;
}

// Queen neighbours of each grid cell by index arithmetic.
inline std::vector<std::vector<std::size_t>> grid_queen_neighbors(int rows, int cols) {
  std::vector<std::vector<std::size_t>> nb(static_cast<std::size_t>(rows * cols));
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          if (!dr && !dc) continue;
          int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= rows || cc < 0 || cc >= cols) continue;
          nb[static_cast<std::size_t>(r * cols + c)].push_back(static_cast<std::size_t>(rr * cols + cc));
        }
  return nb;
}

inline World generate_world(const ScenarioSpec& spec) {
  spec.validate();
  World w;
  w.rows = spec.rows;
  w.cols = spec.cols;

  std::vector<Area> areas;
  for (int r = 0; r < spec.rows; ++r)
    for (int c = 0; c < spec.cols; ++c) {
      double x0 = spec.origin_lon + c * spec.cell_size, y0 = spec.origin_lat + r * spec.cell_size;
      std::string id = cell_id(r, c, spec.cols);
      areas.push_back(AreaSet::make_area(id, id, geo::rectangle(x0, y0, x0 + spec.cell_size, y0 + spec.cell_size)));
    }
  w.areas = AreaSet(std::move(areas));

  const std::size_t n = spec.n_areas();
  Rng census_rng(derive_seed(spec.seed, 1));
  w.census = CountTable("census");
  for (std::size_t i = 0; i < n; ++i) {
    double p = std::round(std::exp(census_rng.normal(spec.census_log_mean, spec.census_log_sd)));
    w.census.add(w.areas[i].id, std::max(1.0, p));
  }

  auto nb = grid_queen_neighbors(spec.rows, spec.cols);
  std::vector<FeatureSpec> features;
  std::vector<std::vector<double>> columns;
  for (std::size_t k = 0; k < spec.covariates.size(); ++k) {
    const auto& g = spec.covariates[k];
    features.push_back({g.name, g.group, {}});
    Rng rng(derive_seed(spec.seed, 100 + k));
    std::vector<double> v(n);
    for (auto& x : v) {
      switch (g.distribution) {
        case Distribution::normal: x = rng.normal(g.a, g.b); break;
        case Distribution::uniform: x = g.a + (g.b - g.a) * rng.uniform(); break;
        case Distribution::lognormal: x = std::exp(rng.normal(g.a, g.b)); break;
      }
    }
    if (g.smoothing > 0)
      for (int pass = 0; pass < g.smoothing_passes; ++pass) {
        std::vector<double> next(n);
        for (std::size_t i = 0; i < n; ++i) {
          double m = 0.0;
          for (auto j : nb[i]) m += v[j];
          m = nb[i].empty() ? v[i] : m / static_cast<double>(nb[i].size());
          next[i] = (1.0 - g.smoothing) * v[i] + g.smoothing * m;
        }
        v = std::move(next);
      }
    columns.push_back(std::move(v));
  }
  w.covariates = CovariateTable(std::move(features));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row;
    for (const auto& col : columns) row.push_back(col[i]);
    w.covariates.add(w.areas[i].id, std::move(row));
  }
  return w;
}

inline double penetration(const Penetration& p, const CovariateTable& cov, std::size_t row) {
  auto x = cov.row(row);
  double s = p.intercept;
  for (const auto& t : p.terms) {
    auto f = cov.feature_index(t.covariate);
    if (!f) throw SchemaError("penetration references undeclared covariate '" + t.covariate + "'");
    double v = x[*f];
    switch (p.form) {
      case PenetrationForm::linear:
      case PenetrationForm::logistic: s += t.coef * v; break;
      case PenetrationForm::u_shape: s += t.coef * (v - t.center) * (v - t.center); break;
      case PenetrationForm::threshold: s += v > t.cut ? t.coef : 0.0; break;
    }
  }
  if (p.form == PenetrationForm::logistic) return p.scale / (1.0 + std::exp(-s));
  return s;
}

// count_i = census_i * penetration_i * exp(eps_i), eps ~ N(0, sigma^2).
inline CountTable generate_counts(const World& world, const ScenarioSpec& spec) {
  Rng rng(derive_seed(spec.seed, 2));
  CountTable out(spec.source_id);
  for (std::size_t i = 0; i < world.areas.size(); ++i) {
    const auto& id = world.areas[i].id;
    double pen = penetration(spec.penetration, world.covariates, i);
    if (!(pen >= 0.0 && pen <= 1.5))
      throw DomainError("penetration " + std::to_string(pen) + " outside [0, 1.5] for area '" + id + "'");
    double eps = spec.noise_sigma > 0 ? rng.normal(0.0, spec.noise_sigma) : 0.0;
    double count = std::max(0.0, world.census.at(id) * pen * std::exp(eps));
    if (spec.small_count_drop && count < *spec.small_count_drop) count = 0.0;
    out.add(id, count);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reference implementations

// Direct double loop over the dense weight matrix.
inline double morans_naive(std::span<const double> values, const spatial::SpatialWeights& w) {
  const std::size_t n = w.size();
  if (values.size() != n) throw SchemaError("values do not match weights");
  std::vector<std::vector<double>> dense(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& nb : w.neighbors[i]) dense[i][nb.index] = nb.weight;

  std::vector<bool> active(n);
  std::size_t m = 0;
  for (std::size_t i = 0; i < n; ++i) {
    active[i] = std::any_of(dense[i].begin(), dense[i].end(), [](double v) { return v != 0.0; });
    if (active[i]) ++m;
  }
  if (m == 0) throw DomainError("every area is an isolate");
  if (m < 2) throw DomainError("Moran's I needs at least 2 non-isolate areas");

  double mean = 0.0;
  bool constant = true;
  double first = 0.0;
  bool seen = false;
  for (std::size_t i = 0; i < n; ++i)
    if (active[i]) {
      mean += values[i];
      if (seen && values[i] != first) constant = false;
      if (!seen) first = values[i], seen = true;
    }
  if (constant) throw DegenerateInput("values have zero variance");
  mean /= static_cast<double>(m);

  double num = 0.0, den = 0.0, s0 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!active[i]) continue;
    den += (values[i] - mean) * (values[i] - mean);
    for (std::size_t j = 0; j < n; ++j) {
      if (!active[j]) continue;
      num += dense[i][j] * (values[i] - mean) * (values[j] - mean);
      s0 += dense[i][j];
    }
  }
  return static_cast<double>(m) / s0 * num / den;
}

namespace detail {

// E[f(x) | x_S] under the tree's cover distribution.
inline double conditional_expectation(const boosting::Tree& t, std::span<const double> x, std::uint32_t subset,
                                      int node = 0) {
  const auto& n = t.nodes[static_cast<std::size_t>(node)];
  if (n.is_leaf()) return n.value;
  if (subset & (1u << n.feature)) {
    double v = x[static_cast<std::size_t>(n.feature)];
    bool left = std::isnan(v) ? n.default_left : v < n.threshold;
    return conditional_expectation(t, x, subset, left ? n.left : n.right);
  }
  const auto& l = t.nodes[static_cast<std::size_t>(n.left)];
  const auto& r = t.nodes[static_cast<std::size_t>(n.right)];
  return (l.cover * conditional_expectation(t, x, subset, n.left) +
          r.cover * conditional_expectation(t, x, subset, n.right)) /
         n.cover;
}

}  // namespace detail

struct ShapleyResult {
  std::vector<double> values;
  double expected_value = 0.0;  // v(empty set)
};

// Exact Shapley values by enumerating all 2^F coalitions.
inline ShapleyResult shapley_bruteforce(const boosting::TreeEnsemble& model, std::span<const double> x) {
  const std::size_t F = model.n_features();
  if (F > 12) throw DomainError("brute-force Shapley supports at most 12 features");
  if (x.size() != F) throw SchemaError("feature count mismatch");
  for (const auto& t : model.trees)
    if (!t.has_cover()) throw SchemaError("tree is missing cover metadata");

  const std::uint32_t full = 1u << F;
  std::vector<double> v(full, 0.0);
  for (std::uint32_t s = 0; s < full; ++s) {
    double sum = 0.0;
    for (const auto& t : model.trees) sum += detail::conditional_expectation(t, x, s);
    v[s] = model.base_prediction + model.params.learning_rate * sum;
  }
  std::vector<double> fact(F + 1, 1.0);
  for (std::size_t k = 1; k <= F; ++k) fact[k] = fact[k - 1] * static_cast<double>(k);

  ShapleyResult out;
  out.values.assign(F, 0.0);
  out.expected_value = v[0];
  for (std::size_t i = 0; i < F; ++i) {
    std::uint32_t bit = 1u << i;
    for (std::uint32_t s = 0; s < full; ++s) {
      if (s & bit) continue;
      auto size = static_cast<std::size_t>(__builtin_popcount(s));
      double weight = fact[size] * fact[F - size - 1] / fact[F];
      out.values[i] += weight * (v[s | bit] - v[s]);
    }
  }
  return out;
}

}  // namespace coverbias::synth
