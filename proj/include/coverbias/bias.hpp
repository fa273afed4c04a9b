#pragma once

// Coverage c_i = 100 * P_i^D / P_i and bias size e_i = 100 - c_i.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coverbias/error.hpp"
#include "coverbias/ingest.hpp"
#include "coverbias/util/csv.hpp"

namespace coverbias::bias {

struct BiasRow {
  std::string area_id;
  double coverage = 0.0;  // percent
  double bias = 0.0;      // percent, 100 - coverage

  bool exceeds_full_coverage() const { return coverage > 100.0; }
};

struct BiasTable {
  std::string source_id;
  std::vector<BiasRow> rows;

  std::vector<double> bias_values() const {
    std::vector<double> v;
    v.reserve(rows.size());
    for (const auto& r : rows) v.push_back(r.bias);
    return v;
  }
  std::vector<std::string> ids() const {
    std::vector<std::string> v;
    for (const auto& r : rows) v.push_back(r.area_id);
    return v;
  }
  // Areas with c_i > 100 (negative bias).
  std::vector<std::string> negative_bias_areas() const {
    std::vector<std::string> v;
    for (const auto& r : rows)
      if (r.exceeds_full_coverage()) v.push_back(r.area_id);
    return v;
  }
};

inline BiasRow coverage_of(std::string area_id, double source_count, double census_count) {
  if (!(census_count > 0.0))
    throw DegenerateDenominator("census population is zero for area '" + area_id + "'");
  double c = 100.0 * source_count / census_count;
  return {std::move(area_id), c, 100.0 - c};
}

// Rows follow the census table order restricted to `areas` when given,
// otherwise to the ids present in both tables.
inline BiasTable coverage_bias(const CountTable& source, const CountTable& census,
                               const std::vector<std::string>* areas = nullptr) {
  BiasTable out{source.source_id(), {}};
  auto emit = [&](const std::string& id) {
    auto s = source.find(id);
    auto p = census.find(id);
    if (!s || !p) throw SchemaError(source.source_id() + ": area '" + id + "' not present in both tables");
    out.rows.push_back(coverage_of(id, *s, *p));
  };
  if (areas) {
    for (const auto& id : *areas) emit(id);
  } else {
    for (const auto& [id, _] : census.rows())
      if (source.contains(id)) emit(id);
  }
  return out;
}

struct CoverageSummary {
  std::string source_id;
  double national_coverage = 0.0;  // percent
  double national_coverage_per_1000 = 0.0;
  double national_bias = 0.0;  // percent
  double n_observations = 0.0;  // sum of source counts
  double reference_population = 0.0;
  std::size_t n_areas = 0;
  bool survey = false;
};

inline CoverageSummary summary_from_totals(std::string name, double captured, double population, bool survey) {
  if (!(population > 0.0)) throw DegenerateDenominator(name + ": reference population is zero");
  CoverageSummary s;
  s.source_id = std::move(name);
  s.n_observations = captured;
  s.reference_population = population;
  s.national_coverage = 100.0 * captured / population;
  s.national_coverage_per_1000 = 1000.0 * captured / population;
  s.national_bias = 100.0 - s.national_coverage;
  s.survey = survey;
  return s;
}

// National coverage from summed totals over the aligned areas.
inline CoverageSummary national_summary(const CountTable& source, const CountTable& census,
                                        const std::vector<std::string>* areas = nullptr) {
  double captured = 0.0, population = 0.0;
  std::size_t n = 0;
  auto add = [&](const std::string& id) {
    auto s = source.find(id);
    auto p = census.find(id);
    if (!s || !p) return;
    captured += *s;
    population += *p;
    ++n;
  };
  if (areas) {
    for (const auto& id : *areas) add(id);
  } else {
    for (const auto& [id, _] : census.rows()) add(id);
  }
  if (n == 0) throw EmptySelection(source.source_id() + ": no areas shared with census");
  auto s = summary_from_totals(source.source_id(), captured, population, false);
  s.n_areas = n;
  return s;
}

struct SurveyEntry {
  std::string name;
  double respondents = 0.0;
  double reference_population = 0.0;
};

// Survey CSV: `name,respondents,reference_population`.
inline std::vector<SurveyEntry> load_surveys(const std::string& path) {
  auto doc = csv::read(path);
  auto c_name = doc.column("name", path), c_resp = doc.column("respondents", path),
       c_pop = doc.column("reference_population", path);
  std::vector<SurveyEntry> out;
  for (const auto& r : doc.rows) {
    SurveyEntry e{csv::trim(r.fields[c_name]), csv::to_real(r.fields[c_resp], path, r.line),
                  csv::to_real(r.fields[c_pop], path, r.line)};
    if (e.respondents < 0 || e.reference_population <= 0)
      throw DomainError(path + ":" + std::to_string(r.line) + ": invalid survey totals");
    out.push_back(std::move(e));
  }
  return out;
}

inline CoverageSummary survey_summary(const SurveyEntry& e) {
  return summary_from_totals(e.name, e.respondents, e.reference_population, true);
}

// Sorted by coverage per 1,000 descending, ties by name ascending.
inline std::vector<CoverageSummary> survey_comparison(std::vector<CoverageSummary> summaries) {
  std::stable_sort(summaries.begin(), summaries.end(), [](const auto& a, const auto& b) {
    if (a.national_coverage_per_1000 != b.national_coverage_per_1000)
      return a.national_coverage_per_1000 > b.national_coverage_per_1000;
    return a.source_id < b.source_id;
  });
  return summaries;
}

inline std::string format_bias_table(const BiasTable& t) {
  csv::Writer w({"area_id", "coverage", "bias"});
  for (const auto& r : t.rows) w.row({r.area_id, csv::format_real(r.coverage), csv::format_real(r.bias)});
  return w.str();
}

inline BiasTable parse_bias_table(std::string_view text, std::string source_id, std::string_view origin = "bias") {
  auto doc = csv::parse(text, origin);
  auto c_id = doc.column("area_id", origin), c_cov = doc.column("coverage", origin),
       c_bias = doc.column("bias", origin);
  BiasTable t{std::move(source_id), {}};
  for (const auto& r : doc.rows)
    t.rows.push_back({csv::trim(r.fields[c_id]), csv::to_real(r.fields[c_cov], origin, r.line),
                      csv::to_real(r.fields[c_bias], origin, r.line)});
  return t;
}

inline nlohmann::json to_json(const CoverageSummary& s) {
  return {{"source_id", s.source_id},
          {"national_coverage", s.national_coverage},
          {"coverage_per_1000", s.national_coverage_per_1000},
          {"national_bias", s.national_bias},
          {"n_observations", s.n_observations},
          {"reference_population", s.reference_population},
          {"n_areas", s.n_areas},
          {"kind", s.survey ? "survey" : "digital"}};
}

}  // namespace coverbias::bias
