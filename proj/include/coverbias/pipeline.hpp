#pragma once

// End-to-end audit: coverage bias -> survey comparison -> spatial structure ->
// boosted model -> SHAP explanation, written as one report bundle.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coverbias/bias.hpp"
#include "coverbias/boosting.hpp"
#include "coverbias/error.hpp"
#include "coverbias/explain.hpp"
#include "coverbias/homeloc.hpp"
#include "coverbias/ingest.hpp"
#include "coverbias/spatial.hpp"
#include "coverbias/synth.hpp"
#include "coverbias/util/random.hpp"

namespace coverbias::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Configuration

enum class SourceKind { counts, pings, tiles };

struct SourceSpec {
  std::string id;
  std::string path;
  SourceKind kind = SourceKind::counts;
  homeloc::TimeWindow window = homeloc::TimeWindow::w1;
};

struct RunConfig {
  std::string areas;
  std::string census;
  std::vector<SourceSpec> sources;
  std::optional<std::string> covariates;
  std::optional<std::string> covariate_schema;
  std::optional<std::string> surveys;
  ReferencePeriod period;

  homeloc::HomeRule home_rule;

  std::vector<spatial::Scheme> schemes{spatial::Scheme::queen(), spatial::Scheme::knn(8),
                                       spatial::Scheme::distance_band()};
  std::size_t permutations = 999;
  spatial::Alternative alternative = spatial::Alternative::greater;
  bool row_standardize = true;
  std::size_t histogram_bins = 20;

  boosting::BoostParams base_params;
  std::optional<std::vector<boosting::BoostParams>> grid;
  std::size_t folds = 10;
  double train_fraction = 0.8;

  std::size_t top_beeswarm = 20;
  std::size_t top_dependence = 6;
  double loess_frac = 0.75;

  std::uint64_t seed = 0;
  std::string out_dir = "out";
  bool allow_partial = false;

  // Checks that referenced files exist; SchemaError otherwise.
  void validate() const {
    auto need = [](const std::string& what, const std::string& p) {
      if (p.empty()) throw SchemaError("config: missing '" + what + "' path");
      if (!fs::exists(p)) throw SchemaError("config: " + what + " file not found: '" + p + "'");
    };
    need("areas", areas);
    need("census", census);
    if (sources.empty()) throw SchemaError("config: no sources");
    for (const auto& s : sources) {
      if (s.id.empty()) throw SchemaError("config: source without id");
      need("source '" + s.id + "'", s.path);
    }
    if (covariates) need("covariates", *covariates);
    if (covariate_schema) need("covariate_schema", *covariate_schema);
    if (surveys) need("surveys", *surveys);
    if (schemes.empty()) throw SchemaError("config: no weighting schemes");
    if (folds < 2) throw DomainError("config: folds must be >= 2");
    home_rule.validate();
    base_params.validate();
  }
};

// Child seed for a pipeline stage and source.
inline std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t stage, std::uint64_t source) {
  return derive_seed(derive_seed(seed, stage), source);
}

enum Stage : std::uint64_t { kSpatialStage = 1, kSplitStage = 2, kCvStage = 3, kFitStage = 4 };

inline RunConfig config_from_json(const json& j, const fs::path& base_dir = {}) {
  auto resolve = [&](const std::string& p) {
    if (p.empty()) return p;
    fs::path path(p);
    return path.is_absolute() || base_dir.empty() ? path.string() : (base_dir / path).lexically_normal().string();
  };
  try {
    RunConfig c;
    c.areas = resolve(j.value("areas", ""));
    c.census = resolve(j.value("census", ""));
    for (const auto& s : j.value("sources", json::array())) {
      SourceSpec spec;
      spec.id = s.at("id").get<std::string>();
      spec.path = resolve(s.at("path").get<std::string>());
      std::string kind = s.value("kind", "counts");
      if (kind == "counts") spec.kind = SourceKind::counts;
      else if (kind == "pings") spec.kind = SourceKind::pings;
      else if (kind == "tiles") spec.kind = SourceKind::tiles;
      else throw SchemaError("config: unknown source kind '" + kind + "'");
      if (s.contains("window")) spec.window = homeloc::parse_window(s["window"].get<std::string>());
      c.sources.push_back(std::move(spec));
    }
    if (j.contains("covariates")) c.covariates = resolve(j["covariates"].get<std::string>());
    if (j.contains("covariate_schema")) c.covariate_schema = resolve(j["covariate_schema"].get<std::string>());
    if (j.contains("surveys")) c.surveys = resolve(j["surveys"].get<std::string>());
    c.period = parse_period(j.value("reference_period", ""));

    if (j.contains("home_rule")) {
      const auto& h = j["home_rule"];
      if (h.contains("night_window")) {
        auto [a, b] = homeloc::parse_night_window(h["night_window"].get<std::string>());
        c.home_rule.night_start_minute = a;
        c.home_rule.night_end_minute = b;
      }
      c.home_rule.min_night_pings = h.value("min_night_pings", c.home_rule.min_night_pings);
      c.home_rule.modal_share_threshold = h.value("modal_share_threshold", c.home_rule.modal_share_threshold);
      c.home_rule.utc_offset_minutes = h.value("utc_offset_minutes", c.home_rule.utc_offset_minutes);
    }
    if (j.contains("schemes")) {
      c.schemes.clear();
      for (const auto& s : j["schemes"]) c.schemes.push_back(spatial::Scheme::parse(s.get<std::string>()));
    }
    c.permutations = j.value("permutations", c.permutations);
    std::string alt = j.value("alternative", "greater");
    if (alt == "greater") c.alternative = spatial::Alternative::greater;
    else if (alt == "two_sided") c.alternative = spatial::Alternative::two_sided;
    else throw SchemaError("config: alternative must be 'greater' or 'two_sided'");
    c.row_standardize = j.value("row_standardize", c.row_standardize);
    c.histogram_bins = j.value("histogram_bins", c.histogram_bins);

    if (j.contains("model")) {
      const auto& m = j["model"];
      if (m.contains("base_params")) c.base_params = boosting::params_from_json(m["base_params"]);
      if (m.contains("grid")) {
        std::vector<boosting::BoostParams> grid;
        for (const auto& g : m["grid"]) grid.push_back(boosting::params_from_json(g, c.base_params));
        c.grid = std::move(grid);
      }
      c.folds = m.value("folds", c.folds);
      c.train_fraction = m.value("train_fraction", c.train_fraction);
    }
    if (j.contains("explain")) {
      const auto& e = j["explain"];
      c.top_beeswarm = e.value("top_beeswarm", c.top_beeswarm);
      c.top_dependence = e.value("top_dependence", c.top_dependence);
      c.loess_frac = e.value("loess_frac", c.loess_frac);
    }
    c.seed = j.value("seed", c.seed);
    c.out_dir = resolve(j.value("out", c.out_dir));
    c.allow_partial = j.value("allow_partial", c.allow_partial);
    return c;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("config: ") + e.what());
  }
}

inline RunConfig load_run_config(const std::string& path) {
  json j;
  try {
    j = json::parse(csv::read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  return config_from_json(j, fs::path(path).parent_path());
}

inline std::string format_clock(int minute) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%02d:%02d", minute / 60, minute % 60);
  return buf;
}

// Normalised echo of the effective configuration (paths omitted).
inline json config_summary(const RunConfig& c) {
  json schemes = json::array();
  for (const auto& s : c.schemes) schemes.push_back(s.label());
  json sources = json::array();
  for (const auto& s : c.sources) {
    const char* kind = s.kind == SourceKind::counts ? "counts" : s.kind == SourceKind::pings ? "pings" : "tiles";
    sources.push_back({{"id", s.id}, {"kind", kind}, {"window", homeloc::to_string(s.window)}});
  }
  return {{"seed", c.seed},
          {"sources", sources},
          {"reference_period", c.period.to_string()},
          {"home_rule",
           {{"night_window", format_clock(c.home_rule.night_start_minute) + "-" +
                                 format_clock(c.home_rule.night_end_minute)},
            {"min_night_pings", c.home_rule.min_night_pings},
            {"modal_share_threshold", c.home_rule.modal_share_threshold},
            {"utc_offset_minutes", c.home_rule.utc_offset_minutes}}},
          {"schemes", schemes},
          {"permutations", c.permutations},
          {"alternative", c.alternative == spatial::Alternative::greater ? "greater" : "two_sided"},
          {"row_standardize", c.row_standardize},
          {"folds", c.folds},
          {"train_fraction", c.train_fraction},
          {"base_params", boosting::to_json(c.base_params)},
          {"custom_grid", c.grid.has_value()},
          {"loess_frac", c.loess_frac},
          {"allow_partial", c.allow_partial}};
}

// ---------------------------------------------------------------------------
// Stages

inline CountTable load_source(const SourceSpec& s, const AreaSet& areas, const RunConfig& c, json* notes = nullptr) {
  switch (s.kind) {
    case SourceKind::counts:
      return load_count_table(s.path, s.id, c.period);
    case SourceKind::pings: {
      auto pings = load_pings(s.path, c.period);
      auto homes = homeloc::detect_homes(pings, areas, c.home_rule);
      if (notes)
        (*notes)[s.id] = {{"devices", homes.devices},
                          {"homed_devices", homes.homes.size()},
                          {"unmapped_night_pings", homes.unmapped_pings}};
      return homeloc::aggregate_homes(homes.homes, areas, s.id, c.period);
    }
    case SourceKind::tiles: {
      auto records = homeloc::load_tile_counts(s.path);
      auto avg = homeloc::window_average_counts(records, s.window, areas, s.id, c.period);
      if (notes)
        (*notes)[s.id] = {{"dates", avg.dates}, {"unassigned_tiles", avg.unassigned},
                          {"window", homeloc::to_string(s.window)}};
      return std::move(avg.table);
    }
  }
  throw SchemaError("unknown source kind");
}

struct SpatialStage {
  std::vector<spatial::MoranResult> moran;
  spatial::SchemeRange range;
  json weights_info = json::array();
};

inline SpatialStage run_spatial(std::span<const double> values, const AreaSet& areas,
                                std::span<const spatial::Scheme> schemes, std::size_t permutations,
                                std::uint64_t seed, spatial::Alternative alternative, bool standardize) {
  SpatialStage out;
  for (std::size_t k = 0; k < schemes.size(); ++k) {
    auto w = spatial::build_weights(areas, schemes[k], standardize);
    out.moran.push_back(spatial::permutation_test(values, w, permutations, derive_seed(seed, k), alternative));
    json info = {{"scheme", w.scheme.label()}, {"n_isolates", w.n_isolates()}, {"warnings", w.warnings}};
    if (schemes[k].kind == spatial::Scheme::Kind::distance_band) info["radius_km"] = w.radius_km;
    out.weights_info.push_back(std::move(info));
  }
  out.range = spatial::range_of(out.moran);
  return out;
}

inline json to_json(const SpatialStage& s) {
  json moran = json::array();
  for (const auto& m : s.moran) moran.push_back(spatial::to_json(m));
  return {{"moran", moran}, {"range", s.range.range}, {"weights", s.weights_info}};
}

struct ModelStage {
  boosting::TreeEnsemble model;
  boosting::CvResult cv;
  boosting::FitTrace trace;
  boosting::Evaluation test;
  boosting::Dataset train_set;
  boosting::Dataset test_set;
  std::uint64_t split_seed = 0;
  std::uint64_t cv_seed = 0;
};

// 80/20 split, k-fold grid search on the training part, refit with the best
// parameters and evaluation on the held-out part.
inline ModelStage run_model(const boosting::Dataset& data, const RunConfig& c, std::uint64_t split_seed,
                            std::uint64_t cv_seed, std::uint64_t fit_seed) {
  ModelStage out;
  out.split_seed = split_seed;
  out.cv_seed = cv_seed;
  auto [train, test] = boosting::split_train_test(data, c.train_fraction, split_seed);
  auto base = c.base_params;
  base.seed = fit_seed;
  auto grid = c.grid ? *c.grid : boosting::default_grid(base);
  for (auto& g : grid) g.seed = fit_seed;
  out.cv = boosting::grid_search_cv(train, grid, std::min(c.folds, train.size()), cv_seed);
  out.model = boosting::fit(train, out.cv.best_params, &out.trace, &test);
  out.test = boosting::evaluate(out.model, test);
  out.train_set = std::move(train);
  out.test_set = std::move(test);
  return out;
}

inline json to_json(const ModelStage& m) {
  json cv = json::array();
  for (const auto& s : m.cv.scores)
    cv.push_back({{"params", boosting::to_json(s.params)}, {"fold_rmse", s.fold_rmse}, {"mean_rmse", s.mean_rmse}});
  json pairs = json::array();
  for (std::size_t i = 0; i < m.test_set.size(); ++i)
    pairs.push_back({{"area_id", m.test_set.ids[i]}, {"observed", m.test.observed[i]},
                     {"predicted", m.test.predicted[i]}});
  auto train_eval = boosting::evaluate(m.model, m.train_set);
  return {{"best_params", boosting::to_json(m.cv.best_params)},
          {"best_index", m.cv.best_index},
          {"cv", cv},
          {"split_seed", m.split_seed},
          {"cv_seed", m.cv_seed},
          {"n_train", m.train_set.size()},
          {"n_test", m.test_set.size()},
          {"train_rmse_per_round", m.trace.train_rmse},
          {"test_rmse_per_round", m.trace.monitor_rmse},
          {"train_rmse", train_eval.rmse},
          {"test_rmse", m.test.rmse},
          {"test_r2", m.test.r_squared},
          {"observed_predicted", pairs}};
}

struct ExplainStage {
  explain::ShapMatrix shap;
  explain::ImportanceProfile importance;
  std::vector<explain::BeeswarmRecord> beeswarm;
  std::vector<explain::DependenceSeries> dependence;
  std::vector<std::string> skipped;
};

inline ExplainStage run_explain(const boosting::TreeEnsemble& model, const boosting::Dataset& data,
                                const RunConfig& c) {
  ExplainStage out;
  out.shap = explain::tree_shap(model, data);
  out.importance = explain::importance_profile(out.shap);
  out.beeswarm = explain::beeswarm_export(out.shap, data, c.top_beeswarm);
  auto ranking = out.importance.ranking();
  for (std::size_t k = 0; k < std::min(c.top_dependence, ranking.size()); ++k) {
    try {
      out.dependence.push_back(explain::dependence_export(out.shap, data, ranking[k], c.loess_frac, &data.y));
    } catch (const DegenerateInput& e) {
      out.skipped.push_back(data.feature_names[ranking[k]] + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report bundle

inline std::string utc_timestamp() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << j.dump(2) << '\n';
}

inline std::string safe_name(const std::string& id) {
  std::string s = id;
  for (char& ch : s)
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
  return s;
}

namespace detail {

inline json bias_block(const bias::BiasTable& t, std::size_t bins) {
  auto values = t.bias_values();
  auto h = spatial::histogram(values, bins);
  double lo = *std::min_element(values.begin(), values.end());
  double hi = *std::max_element(values.begin(), values.end());
  double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  json areas = json::array();
  for (const auto& r : t.rows) areas.push_back({{"area_id", r.area_id}, {"coverage", r.coverage}, {"bias", r.bias}});
  return {{"min", lo},
          {"max", hi},
          {"mean", mean},
          {"negative_bias_areas", t.negative_bias_areas()},
          {"histogram", {{"edges", h.edges}, {"counts", h.counts}}},
          {"areas", areas}};
}

inline void run_pipeline_impl(const RunConfig& c, const fs::path& out, json& report) {
  auto areas_all = load_area_geometries(c.areas);
  auto census = load_count_table(c.census, "census", c.period);
  std::optional<CovariateTable> covariates;
  if (c.covariates) covariates = load_covariate_table(*c.covariates, c.covariate_schema);

  json ingest_notes = json::object();
  std::vector<CountTable> sources;
  for (const auto& s : c.sources) sources.push_back(load_source(s, areas_all, c, &ingest_notes));

  std::vector<KeyedSource> keyed{keys_of(census)};
  for (const auto& s : sources) keyed.push_back(keys_of(s));
  if (covariates) keyed.push_back(keys_of(*covariates));
  auto alignment = validate_alignment(areas_all, keyed);
  report["alignment"] = to_json(alignment);
  report["ingest"] = ingest_notes;
  if (!alignment.aligned() && !c.allow_partial)
    throw SchemaError("inputs are not aligned (use --allow-partial to restrict to the intersection)");
  if (alignment.intersection.size() < 2) throw EmptySelection("fewer than 2 areas shared by every input");
  const auto& keep = alignment.intersection;
  AreaSet areas = alignment.aligned() ? areas_all : areas_all.subset(keep);

  std::vector<bias::CoverageSummary> summaries;
  if (c.surveys)
    for (const auto& e : bias::load_surveys(*c.surveys)) summaries.push_back(bias::survey_summary(e));

  std::vector<std::string> groups;
  if (covariates)
    for (const auto& f : covariates->features()) groups.push_back(f.group ? to_string(*f.group) : "");

  json source_blocks = json::array();
  json importance = json::array(), beeswarm = json::array(), dependence = json::array();

  for (std::size_t si = 0; si < sources.size(); ++si) {
    const auto& src = sources[si];
    const std::string name = safe_name(src.source_id());
    json block = {{"source_id", src.source_id()}};

    auto table = bias::coverage_bias(src, census, &keep);
    write_text((out / ("bias_" + name + ".csv")).string(), bias::format_bias_table(table));
    auto summary = bias::national_summary(src, census, &keep);
    summaries.push_back(summary);
    block["summary"] = bias::to_json(summary);
    block["bias"] = bias_block(table, c.histogram_bins);

    auto values = table.bias_values();
    auto sp = run_spatial(values, areas, c.schemes, c.permutations, stage_seed(c.seed, kSpatialStage, si),
                          c.alternative, c.row_standardize);
    block["spatial"] = to_json(sp);

    std::vector<double> pop, captured;
    for (const auto& id : keep) {
      pop.push_back(census.at(id));
      captured.push_back(src.at(id));
    }
    json assoc = {{"n", keep.size()}, {"area_id", keep}, {"census", pop}, {"source", captured}};
    try {
      auto corr = spatial::pearson(captured, pop);
      assoc["r"] = corr.r;
      assoc["p"] = corr.p_value;
    } catch (const DegenerateInput& e) {
      assoc["r"] = nullptr;
      assoc["p"] = nullptr;
      assoc["note"] = e.what();
    }
    block["population_association"] = std::move(assoc);

    if (covariates) {
      auto data = boosting::join(table, *covariates);
      auto model = run_model(data, c, stage_seed(c.seed, kSplitStage, si), stage_seed(c.seed, kCvStage, si),
                             stage_seed(c.seed, kFitStage, si));
      block["model"] = to_json(model);
      write_json(out / ("ensemble_" + name + ".json"), boosting::to_json(model.model));

      auto ex = run_explain(model.model, data, c);
      write_text((out / ("shap_" + name + ".csv")).string(), explain::format_shap_matrix(ex.shap));
      block["shap_expected_value"] = ex.shap.expected_value;
      block["dependence_skipped"] = ex.skipped;
      for (auto& j : explain::to_json(ex.importance, src.source_id(), groups)) importance.push_back(j);
      for (auto& j : explain::to_json(ex.beeswarm, src.source_id())) beeswarm.push_back(j);
      for (const auto& d : ex.dependence) dependence.push_back(explain::to_json(d, src.source_id()));
    }
    source_blocks.push_back(std::move(block));
  }

  json comparison = json::array();
  for (const auto& s : bias::survey_comparison(summaries)) comparison.push_back(bias::to_json(s));
  report["coverage_comparison"] = comparison;
  report["sources"] = source_blocks;
  report["importance"] = importance;
  report["beeswarm"] = beeswarm;
  report["dependence"] = dependence;
}

}  // namespace detail

// Runs every stage and writes `report.json` plus per-stage files into
// c.out_dir. On failure a `FAILED` marker and whatever was produced so far are
// kept and the error is rethrown.
inline fs::path run_pipeline(const RunConfig& c) {
  c.validate();
  fs::path out(c.out_dir);
  fs::create_directories(out);
  fs::remove(out / "FAILED");

  json report = {{"schema_version", kSchemaVersion},
                 {"generated_at", utc_timestamp()},
                 {"seed", c.seed},
                 {"config", config_summary(c)}};
  try {
    detail::run_pipeline_impl(c, out, report);
  } catch (const Error& e) {
    write_text((out / "FAILED").string(), std::string(to_string(e.kind())) + ": " + e.what() + "\n");
    report["failed"] = {{"error", to_string(e.kind())}, {"message", e.what()}};
    write_json(out / "report.partial.json", report);
    throw;
  }
  write_json(out / "report.json", report);
  return out / "report.json";
}

// ---------------------------------------------------------------------------
// Synthetic bundle

struct SynthPaths {
  fs::path areas, census, source, covariates, schema, config;
};

// Writes a generated world in the ingest formats plus a ready-to-run config.
inline SynthPaths write_synthetic_bundle(const synth::ScenarioSpec& spec, const fs::path& dir,
                                         std::size_t permutations = 999) {
  fs::create_directories(dir);
  auto world = synth::generate_world(spec);
  auto counts = synth::generate_counts(world, spec);
  SynthPaths p{dir / "areas.geojson", dir / "census.csv", dir / (safe_name(spec.source_id) + ".csv"),
               dir / "covariates.csv", dir / "covariate_schema.csv", dir / "config.json"};
  save_area_geometries(world.areas, p.areas.string());
  save_count_table(world.census, p.census.string());
  save_count_table(counts, p.source.string());
  write_text(p.covariates.string(), format_covariate_table(world.covariates));
  write_text(p.schema.string(), format_covariate_schema(world.covariates));
  json config = {{"areas", p.areas.filename().string()},
                 {"census", p.census.filename().string()},
                 {"sources", json::array({{{"id", spec.source_id}, {"path", p.source.filename().string()}}})},
                 {"covariates", p.covariates.filename().string()},
                 {"covariate_schema", p.schema.filename().string()},
                 {"permutations", permutations},
                 {"seed", spec.seed},
                 {"out", "out"}};
  write_json(p.config, config);
  return p;
}

}  // namespace coverbias::pipeline
