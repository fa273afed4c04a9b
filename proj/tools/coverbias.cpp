// coverbias: command-line front end for the coverage-bias audit pipeline.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "coverbias/coverbias.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace coverbias;

namespace {

std::vector<spatial::Scheme> parse_schemes(const std::string& list) {
  std::vector<spatial::Scheme> out;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    auto comma = list.find(',', pos);
    auto item = csv::trim(list.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
    if (!item.empty()) out.push_back(spatial::Scheme::parse(item));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (out.empty()) throw SchemaError("--schemes: empty list");
  return out;
}

// "id=path" -> (id, path)
std::pair<std::string, std::string> split_source(const std::string& s) {
  auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) throw SchemaError("--source expects id=path, got '" + s + "'");
  return {s.substr(0, eq), s.substr(eq + 1)};
}

void emit(const json& j, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << j.dump(2) << '\n';
  } else {
    pipeline::write_json(out, j);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coverage-bias audit for aggregated mobile-app population counts"};
  app.require_subcommand(1);

  // ingest-check ------------------------------------------------------------
  auto* ingest = app.add_subcommand("ingest-check", "Validate inputs and report area alignment");
  std::string areas_path, census_path, covariates_path, schema_path, config_path;
  std::vector<std::string> source_args;
  bool allow_partial = false;
  ingest->add_option("--config", config_path, "Run configuration (JSON)");
  ingest->add_option("--areas", areas_path, "Area geometries (GeoJSON)");
  ingest->add_option("--census", census_path, "Census counts (CSV area_id,count)");
  ingest->add_option("--source", source_args, "Source counts as id=path (repeatable)");
  ingest->add_option("--covariates", covariates_path, "Covariates CSV");
  ingest->add_option("--covariate-schema", schema_path, "Covariate schema CSV (feature,group,unit)");
  ingest->add_flag("--allow-partial", allow_partial, "Accept misaligned inputs (analysis uses the intersection)");

  // homes -----------------------------------------------------------------
  auto* homes = app.add_subcommand("homes", "Infer home areas from pings or average tile counts");
  std::string pings_path, tiles_path, window = "W1", night_window, out_path, source_id = "source", period;
  int min_pings = 2, utc_offset = 0;
  double share = 0.5;
  homes->add_option("--areas", areas_path, "Area geometries (GeoJSON)")->required();
  homes->add_option("--pings", pings_path, "GPS pings (CSV or NDJSON)");
  homes->add_option("--tiles", tiles_path, "Tile counts CSV date,window,quadkey,count");
  homes->add_option("--window", window, "Tile time window (W1, W2, W3)");
  homes->add_option("--night-window", night_window, "Nighttime window HH:MM-HH:MM (default 22:00-06:00)");
  homes->add_option("--min-night-pings", min_pings, "Minimum nighttime pings per device");
  homes->add_option("--share", share, "Modal share that must be exceeded");
  homes->add_option("--utc-offset", utc_offset, "Local time offset from UTC in minutes");
  homes->add_option("--period", period, "Reference period YYYY-MM-DD/YYYY-MM-DD");
  homes->add_option("--source-id", source_id, "Identifier for the produced count table");
  homes->add_option("--out", out_path, "Output counts CSV")->required();

  // coverage --------------------------------------------------------------
  auto* coverage = app.add_subcommand("coverage", "Coverage and bias per area plus national summary");
  std::string source_path, surveys_path;
  coverage->add_option("--source", source_path, "Source counts CSV")->required();
  coverage->add_option("--source-id", source_id, "Source identifier");
  coverage->add_option("--census", census_path, "Census counts CSV")->required();
  coverage->add_option("--surveys", surveys_path, "Survey CSV name,respondents,reference_population");
  coverage->add_option("--out", out_path, "Output bias CSV")->required();

  // spatial ---------------------------------------------------------------
  auto* spatial_cmd = app.add_subcommand("spatial", "Moran's I across weighting schemes");
  std::string bias_path, schemes_arg = "queen,knn:8,distance_band";
  std::size_t permutations = 999;
  std::uint64_t seed = 0;
  bool two_sided = false, no_standardize = false;
  spatial_cmd->add_option("--areas", areas_path, "Area geometries (GeoJSON)")->required();
  spatial_cmd->add_option("--bias", bias_path, "Bias CSV area_id,coverage,bias")->required();
  spatial_cmd->add_option("--schemes", schemes_arg, "Comma-separated schemes, e.g. queen,knn:8,distance_band:150");
  spatial_cmd->add_option("--permutations", permutations, "Permutations for the pseudo p-value");
  spatial_cmd->add_option("--seed", seed, "Seed");
  spatial_cmd->add_flag("--two-sided", two_sided, "Two-sided pseudo p-value");
  spatial_cmd->add_flag("--no-standardize", no_standardize, "Keep binary weights");
  spatial_cmd->add_option("--out", out_path, "Output JSON (stdout when omitted)");

  // model -----------------------------------------------------------------
  auto* model_cmd = app.add_subcommand("model", "Fit the boosted bias model with CV grid search");
  std::string out_dir;
  std::size_t folds = 10;
  model_cmd->add_option("--bias", bias_path, "Bias CSV")->required();
  model_cmd->add_option("--covariates", covariates_path, "Covariates CSV")->required();
  model_cmd->add_option("--covariate-schema", schema_path, "Covariate schema CSV");
  model_cmd->add_option("--config", config_path, "Run configuration supplying model settings");
  model_cmd->add_option("--seed", seed, "Seed");
  model_cmd->add_option("--folds", folds, "Cross-validation folds");
  model_cmd->add_option("--out", out_dir, "Output directory")->required();

  // explain ---------------------------------------------------------------
  auto* explain_cmd = app.add_subcommand("explain", "SHAP attributions and figure data for a fitted model");
  std::string ensemble_path;
  explain_cmd->add_option("--ensemble", ensemble_path, "Ensemble JSON from `model`")->required();
  explain_cmd->add_option("--covariates", covariates_path, "Covariates CSV")->required();
  explain_cmd->add_option("--bias", bias_path, "Bias CSV (rows to explain and dependence targets)")->required();
  explain_cmd->add_option("--config", config_path, "Run configuration supplying explain settings");
  explain_cmd->add_option("--out", out_dir, "Output directory")->required();

  // synth -----------------------------------------------------------------
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic world with a planted bias driver");
  std::string spec_path;
  synth_cmd->add_option("--spec", spec_path, "Scenario spec (JSON)")->required();
  synth_cmd->add_option("--out", out_dir, "Output directory")->required();
  synth_cmd->add_option("--permutations", permutations, "Permutations written into the generated config");

  // run -------------------------------------------------------------------
  auto* run = app.add_subcommand("run", "Run the full audit pipeline");
  std::optional<std::uint64_t> seed_override;
  std::optional<std::size_t> perm_override;
  std::string schemes_override;
  run->add_option("--config", config_path, "Run configuration (JSON)")->required();
  run->add_option("--seed", seed_override, "Global seed");
  run->add_option("--out", out_dir, "Output directory");
  run->add_flag("--allow-partial", allow_partial, "Restrict analysis to areas shared by all inputs");
  run->add_option("--schemes", schemes_override, "Comma-separated weighting schemes");
  run->add_option("--permutations", perm_override, "Permutations for the pseudo p-value");
  run->add_option("--night-window", night_window, "Nighttime window HH:MM-HH:MM");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*ingest) {
      AreaSet areas;
      std::vector<KeyedSource> keyed;
      if (!config_path.empty()) {
        auto c = pipeline::load_run_config(config_path);
        c.validate();
        areas = load_area_geometries(c.areas);
        keyed.push_back(keys_of(load_count_table(c.census, "census", c.period)));
        for (const auto& s : c.sources) keyed.push_back(keys_of(pipeline::load_source(s, areas, c)));
        if (c.covariates) keyed.push_back(keys_of(load_covariate_table(*c.covariates, c.covariate_schema)));
        allow_partial = allow_partial || c.allow_partial;
      } else {
        if (areas_path.empty()) throw SchemaError("ingest-check needs --areas or --config");
        areas = load_area_geometries(areas_path);
        if (!census_path.empty()) keyed.push_back(keys_of(load_count_table(census_path, "census")));
        for (const auto& s : source_args) {
          auto [id, path] = split_source(s);
          keyed.push_back(keys_of(load_count_table(path, id)));
        }
        if (!covariates_path.empty())
          keyed.push_back(keys_of(load_covariate_table(
              covariates_path, schema_path.empty() ? std::nullopt : std::optional<std::string>(schema_path))));
      }
      auto report = validate_alignment(areas, keyed);
      auto j = to_json(report);
      j["n_areas"] = areas.size();
      std::cout << j.dump(2) << '\n';
      if (!report.aligned() && !allow_partial) return exit_code(ErrorKind::schema);
      return 0;
    }

    if (*homes) {
      auto areas = load_area_geometries(areas_path);
      auto ref = parse_period(period);
      CountTable table;
      json info;
      if (!pings_path.empty() == !tiles_path.empty()) throw SchemaError("homes needs exactly one of --pings, --tiles");
      if (!pings_path.empty()) {
        homeloc::HomeRule rule;
        if (!night_window.empty()) {
          auto [a, b] = homeloc::parse_night_window(night_window);
          rule.night_start_minute = a;
          rule.night_end_minute = b;
        }
        rule.min_night_pings = min_pings;
        rule.modal_share_threshold = share;
        rule.utc_offset_minutes = utc_offset;
        auto result = homeloc::detect_homes(load_pings(pings_path, ref), areas, rule);
        table = homeloc::aggregate_homes(result.homes, areas, source_id, ref);
        info = {{"devices", result.devices}, {"homed_devices", result.homes.size()},
                {"unmapped_night_pings", result.unmapped_pings}};
      } else {
        auto avg = homeloc::window_average_counts(homeloc::load_tile_counts(tiles_path), homeloc::parse_window(window),
                                                  areas, source_id, ref);
        info = {{"dates", avg.dates}, {"unassigned_tiles", avg.unassigned}};
        table = std::move(avg.table);
      }
      save_count_table(table, out_path);
      info["total"] = table.total();
      std::cout << info.dump(2) << '\n';
      return 0;
    }

    if (*coverage) {
      auto src = load_count_table(source_path, source_id);
      auto census = load_count_table(census_path, "census");
      auto table = bias::coverage_bias(src, census);
      write_text(out_path, bias::format_bias_table(table));
      std::vector<bias::CoverageSummary> summaries{bias::national_summary(src, census)};
      if (!surveys_path.empty())
        for (const auto& e : bias::load_surveys(surveys_path)) summaries.push_back(bias::survey_summary(e));
      json ranked = json::array();
      for (const auto& s : bias::survey_comparison(summaries)) ranked.push_back(bias::to_json(s));
      json out = {{"summary", bias::to_json(summaries.front())},
                  {"coverage_comparison", ranked},
                  {"negative_bias_areas", table.negative_bias_areas()}};
      std::cout << out.dump(2) << '\n';
      return 0;
    }

    if (*spatial_cmd) {
      auto areas_all = load_area_geometries(areas_path);
      auto table = bias::parse_bias_table(csv::read_file(bias_path), "source", bias_path);
      auto areas = areas_all.subset(table.ids());
      if (areas.size() != table.rows.size()) throw SchemaError("bias table references unknown areas");
      std::unordered_map<std::string, double> by_id;
      for (const auto& r : table.rows) by_id[r.area_id] = r.bias;
      std::vector<double> values;
      for (const auto& a : areas) values.push_back(by_id.at(a.id));
      auto schemes = parse_schemes(schemes_arg);
      auto stage = pipeline::run_spatial(values, areas, schemes, permutations,
                                         pipeline::stage_seed(seed, pipeline::kSpatialStage, 0),
                                         two_sided ? spatial::Alternative::two_sided : spatial::Alternative::greater,
                                         !no_standardize);
      auto j = pipeline::to_json(stage);
      auto h = spatial::histogram(values, 20);
      j["histogram"] = {{"edges", h.edges}, {"counts", h.counts}};
      emit(j, out_path);
      return 0;
    }

    if (*model_cmd) {
      pipeline::RunConfig c;
      if (!config_path.empty()) c = pipeline::load_run_config(config_path);
      if (model_cmd->count("--folds")) c.folds = folds;
      auto table = bias::parse_bias_table(csv::read_file(bias_path), "source", bias_path);
      auto cov = load_covariate_table(covariates_path,
                                      schema_path.empty() ? std::nullopt : std::optional<std::string>(schema_path));
      auto data = boosting::join(table, cov);
      auto m = pipeline::run_model(data, c, pipeline::stage_seed(seed, pipeline::kSplitStage, 0),
                                   pipeline::stage_seed(seed, pipeline::kCvStage, 0),
                                   pipeline::stage_seed(seed, pipeline::kFitStage, 0));
      fs::create_directories(out_dir);
      pipeline::write_json(fs::path(out_dir) / "ensemble.json", boosting::to_json(m.model));
      pipeline::write_json(fs::path(out_dir) / "fit_report.json", pipeline::to_json(m));
      std::cout << json{{"test_rmse", m.test.rmse}, {"best_params", boosting::to_json(m.cv.best_params)}}.dump(2)
                << '\n';
      return 0;
    }

    if (*explain_cmd) {
      pipeline::RunConfig c;
      if (!config_path.empty()) c = pipeline::load_run_config(config_path);
      json ej;
      try {
        ej = json::parse(csv::read_file(ensemble_path));
      } catch (const json::parse_error& e) {
        throw ParseError(ensemble_path + ": " + e.what());
      }
      auto model = boosting::ensemble_from_json(ej);
      auto table = bias::parse_bias_table(csv::read_file(bias_path), "source", bias_path);
      auto cov = load_covariate_table(covariates_path);
      auto data = boosting::join(table, cov);
      auto ex = pipeline::run_explain(model, data, c);
      fs::create_directories(out_dir);
      write_text((fs::path(out_dir) / "shap.csv").string(), explain::format_shap_matrix(ex.shap));
      json dep = json::array();
      for (const auto& d : ex.dependence) dep.push_back(explain::to_json(d, table.source_id));
      pipeline::write_json(fs::path(out_dir) / "explain.json",
                           {{"expected_value", ex.shap.expected_value},
                            {"importance", explain::to_json(ex.importance, table.source_id)},
                            {"beeswarm", explain::to_json(ex.beeswarm, table.source_id)},
                            {"dependence", dep}});
      return 0;
    }

    if (*synth_cmd) {
      auto spec = synth::load_scenario(spec_path);
      auto paths = pipeline::write_synthetic_bundle(spec, out_dir, permutations);
      std::cout << json{{"config", paths.config.string()}, {"areas", spec.n_areas()}}.dump(2) << '\n';
      return 0;
    }

    if (*run) {
      auto c = pipeline::load_run_config(config_path);
      if (seed_override) c.seed = *seed_override;
      if (!out_dir.empty()) c.out_dir = out_dir;
      if (allow_partial) c.allow_partial = true;
      if (!schemes_override.empty()) c.schemes = parse_schemes(schemes_override);
      if (perm_override) c.permutations = *perm_override;
      if (!night_window.empty()) {
        auto [a, b] = homeloc::parse_night_window(night_window);
        c.home_rule.night_start_minute = a;
        c.home_rule.night_end_minute = b;
      }
      auto report = pipeline::run_pipeline(c);
      std::cout << report.string() << '\n';
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "coverbias: " << to_string(e.kind()) << ": " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "coverbias: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
