#pragma once

// Shared data model (areas, count tables, covariates, GPS pings) and the
// loaders that validate and align them.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "coverbias/error.hpp"
#include "coverbias/geometry.hpp"
#include "coverbias/util/csv.hpp"

namespace coverbias {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Areas

struct Area {
  std::string id;
  std::string name;
  geo::MultiPolygon geometry;
  geo::LonLat centroid;
  geo::BBox bbox;
};

class AreaSet {
 public:
  AreaSet() = default;

  explicit AreaSet(std::vector<Area> areas) : areas_(std::move(areas)) {
    for (std::size_t i = 0; i < areas_.size(); ++i) {
      auto& a = areas_[i];
      if (a.id.empty()) throw SchemaError("area #" + std::to_string(i) + ": empty area_id");
      geo::validate(a.geometry, "area '" + a.id + "'");
      a.bbox = geo::bounds(a.geometry);
      if (!a.bbox.contains(a.centroid, 1e-9))
        throw GeometryError("area '" + a.id + "': centroid outside bounding box");
      if (!index_.emplace(a.id, i).second) throw DuplicateKey("duplicate area_id '" + a.id + "'");
    }
  }

  // Builds an area with its centroid computed from the geometry.
  static Area make_area(std::string id, std::string name, geo::MultiPolygon geometry) {
    Area a{std::move(id), std::move(name), std::move(geometry), {}, {}};
    if (!a.geometry.empty()) a.centroid = geo::centroid(a.geometry);
    return a;
  }

  std::size_t size() const noexcept { return areas_.size(); }
  bool empty() const noexcept { return areas_.empty(); }
  const Area& operator[](std::size_t i) const { return areas_[i]; }
  auto begin() const { return areas_.begin(); }
  auto end() const { return areas_.end(); }

  std::optional<std::size_t> find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(areas_.size());
    for (const auto& a : areas_) out.push_back(a.id);
    return out;
  }

  // First area (in set order) whose geometry contains the point.
  std::optional<std::size_t> locate(const geo::LonLat& p) const {
    for (std::size_t i = 0; i < areas_.size(); ++i)
      if (areas_[i].bbox.contains(p, 1e-12) && geo::contains(areas_[i].geometry, p)) return i;
    return std::nullopt;
  }

  // Areas whose id is in `keep`, in this set's order.
  AreaSet subset(const std::vector<std::string>& keep) const {
    std::unordered_set<std::string> k(keep.begin(), keep.end());
    std::vector<Area> out;
    for (const auto& a : areas_)
      if (k.count(a.id)) out.push_back(a);
    return AreaSet(std::move(out));
  }

 private:
  std::vector<Area> areas_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Count tables

struct ReferencePeriod {
  std::string start;  // ISO-8601 date, inclusive
  std::string end;    // ISO-8601 date, inclusive

  bool empty() const noexcept { return start.empty() && end.empty(); }
  std::string to_string() const { return empty() ? std::string{} : start + "/" + end; }
};

namespace detail {

inline std::chrono::sys_days parse_date(std::string_view s) {
  auto bad = [&] { return SchemaError("invalid ISO-8601 date '" + std::string(s) + "'"); };
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') throw bad();
  try {
    int y = std::stoi(std::string(s.substr(0, 4)));
    unsigned m = static_cast<unsigned>(std::stoi(std::string(s.substr(5, 2))));
    unsigned d = static_cast<unsigned>(std::stoi(std::string(s.substr(8, 2))));
    std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) throw bad();
    return std::chrono::sys_days{ymd};
  } catch (const std::invalid_argument&) {
    throw bad();
  }
}

}  // namespace detail

// Parses "YYYY-MM-DD/YYYY-MM-DD".
inline ReferencePeriod parse_period(std::string_view text) {
  if (text.empty()) return {};
  auto slash = text.find('/');
  if (slash == std::string_view::npos) throw SchemaError("reference period must be 'start/end'");
  ReferencePeriod p{std::string(text.substr(0, slash)), std::string(text.substr(slash + 1))};
  if (detail::parse_date(p.start) > detail::parse_date(p.end))
    throw SchemaError("reference period start after end");
  return p;
}

// Half-open epoch-second range [start 00:00 UTC, end+1 00:00 UTC).
inline std::pair<std::int64_t, std::int64_t> epoch_range(const ReferencePeriod& p) {
  using namespace std::chrono;
  auto a = sys_seconds{detail::parse_date(p.start)}.time_since_epoch().count();
  auto b = sys_seconds{detail::parse_date(p.end) + days{1}}.time_since_epoch().count();
  return {a, b};
}

class CountTable {
 public:
  CountTable() = default;
  CountTable(std::string source_id, ReferencePeriod period = {})
      : source_id_(std::move(source_id)), period_(std::move(period)) {}

  void add(std::string area_id, double count) {
    if (area_id.empty()) throw SchemaError(source_id_ + ": empty area_id");
    if (!std::isfinite(count)) throw DomainError(source_id_ + ": non-finite count for '" + area_id + "'");
    if (count < 0) throw DomainError(source_id_ + ": negative count for '" + area_id + "'");
    if (!index_.emplace(area_id, rows_.size()).second)
      throw DuplicateKey(source_id_ + ": duplicate area_id '" + area_id + "'");
    rows_.emplace_back(std::move(area_id), count);
  }

  const std::string& source_id() const noexcept { return source_id_; }
  const ReferencePeriod& period() const noexcept { return period_; }
  std::size_t size() const noexcept { return rows_.size(); }
  const std::vector<std::pair<std::string, double>>& rows() const noexcept { return rows_; }

  std::optional<double> find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return rows_[it->second].second;
  }
  double at(std::string_view id) const {
    auto v = find(id);
    if (!v) throw SchemaError(source_id_ + ": no row for area '" + std::string(id) + "'");
    return *v;
  }
  bool contains(std::string_view id) const { return index_.count(std::string(id)) > 0; }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& r : rows_) out.push_back(r.first);
    return out;
  }

  double total() const {
    double s = 0.0;
    for (const auto& r : rows_) s += r.second;
    return s;
  }

 private:
  std::string source_id_;
  ReferencePeriod period_;
  std::vector<std::pair<std::string, double>> rows_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Covariates

enum class FeatureGroup { demographic, socioeconomic, resource_accessibility, mobility, geographic };

inline const char* to_string(FeatureGroup g) {
  switch (g) {
    case FeatureGroup::demographic: return "demographic";
    case FeatureGroup::socioeconomic: return "socioeconomic";
    case FeatureGroup::resource_accessibility: return "resource_accessibility";
    case FeatureGroup::mobility: return "mobility";
    case FeatureGroup::geographic: return "geographic";
  }
  return "";
}

inline FeatureGroup parse_feature_group(std::string_view s) {
  for (auto g : {FeatureGroup::demographic, FeatureGroup::socioeconomic, FeatureGroup::resource_accessibility,
                 FeatureGroup::mobility, FeatureGroup::geographic})
    if (s == to_string(g)) return g;
  throw SchemaError("unknown feature group '" + std::string(s) + "'");
}

struct FeatureSpec {
  std::string name;
  std::optional<FeatureGroup> group;  // unset when no schema was supplied
  std::string unit;
};

class CovariateTable {
 public:
  CovariateTable() = default;
  explicit CovariateTable(std::vector<FeatureSpec> features) : features_(std::move(features)) {
    std::unordered_set<std::string> seen;
    for (const auto& f : features_) {
      if (f.name.empty()) throw SchemaError("covariates: empty feature name");
      if (!seen.insert(f.name).second) throw DuplicateKey("covariates: duplicate feature '" + f.name + "'");
    }
  }

  void add(std::string area_id, std::vector<double> values) {
    if (area_id.empty()) throw SchemaError("covariates: empty area_id");
    if (values.size() != features_.size())
      throw SchemaError("covariates: row '" + area_id + "' has " + std::to_string(values.size()) +
                        " values, expected " + std::to_string(features_.size()));
    for (std::size_t j = 0; j < values.size(); ++j)
      if (!std::isfinite(values[j]))
        throw SchemaError("covariates: missing or non-finite value for '" + area_id + "', feature '" +
                          features_[j].name + "'");
    if (!index_.emplace(area_id, ids_.size()).second)
      throw DuplicateKey("covariates: duplicate area_id '" + area_id + "'");
    ids_.push_back(std::move(area_id));
    values_.insert(values_.end(), values.begin(), values.end());
  }

  const std::vector<FeatureSpec>& features() const noexcept { return features_; }
  std::size_t n_features() const noexcept { return features_.size(); }
  std::size_t size() const noexcept { return ids_.size(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }

  std::span<const double> row(std::size_t i) const {
    return {values_.data() + i * features_.size(), features_.size()};
  }
  std::optional<std::size_t> find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<std::size_t> feature_index(std::string_view name) const {
    for (std::size_t j = 0; j < features_.size(); ++j)
      if (features_[j].name == name) return j;
    return std::nullopt;
  }
  std::vector<std::string> feature_names() const {
    std::vector<std::string> out;
    for (const auto& f : features_) out.push_back(f.name);
    return out;
  }

 private:
  std::vector<FeatureSpec> features_;
  std::vector<std::string> ids_;
  std::vector<double> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// GPS pings

inline constexpr double kMercatorMaxLat = 85.05113;

struct Ping {
  std::string device_id;
  std::int64_t timestamp = 0;  // UTC epoch seconds
  double lon = 0.0;
  double lat = 0.0;
};

using PingStream = std::vector<Ping>;

// ---------------------------------------------------------------------------
// Loaders

namespace detail {

inline geo::Ring ring_from_json(const json& coords, const std::string& ctx) {
  if (!coords.is_array()) throw GeometryError(ctx + ": ring is not an array");
  geo::Ring ring;
  for (const auto& pos : coords) {
    if (!pos.is_array() || pos.size() < 2 || !pos[0].is_number() || !pos[1].is_number())
      throw GeometryError(ctx + ": invalid position");
    ring.push_back({pos[0].get<double>(), pos[1].get<double>()});
  }
  return ring;
}

inline geo::Polygon polygon_from_json(const json& rings, const std::string& ctx) {
  if (!rings.is_array() || rings.empty()) throw GeometryError(ctx + ": polygon has no rings");
  geo::Polygon poly;
  poly.outer = ring_from_json(rings[0], ctx);
  for (std::size_t i = 1; i < rings.size(); ++i) poly.holes.push_back(ring_from_json(rings[i], ctx));
  return poly;
}

inline json ring_to_json(const geo::Ring& ring) {
  json out = json::array();
  for (const auto& p : ring) out.push_back({p.lon, p.lat});
  return out;
}

inline std::string id_from_json(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  return {};
}

}  // namespace detail

inline AreaSet parse_area_geometries(const json& doc, const std::string& origin = "geojson") {
  if (!doc.is_object() || doc.value("type", "") != "FeatureCollection" || !doc.contains("features") ||
      !doc["features"].is_array())
    throw SchemaError(origin + ": expected a GeoJSON FeatureCollection");

  std::vector<Area> areas;
  std::size_t k = 0;
  for (const auto& feature : doc["features"]) {
    std::string ctx = origin + ": feature #" + std::to_string(k++);
    const json props = feature.value("properties", json::object());
    if (!props.is_object() || !props.contains("area_id")) throw SchemaError(ctx + ": missing 'area_id' property");
    std::string id = detail::id_from_json(props["area_id"]);
    if (id.empty()) throw SchemaError(ctx + ": 'area_id' must be a non-empty string");
    std::string name = props.contains("name") && props["name"].is_string() ? props["name"].get<std::string>() : id;

    if (!feature.contains("geometry") || !feature["geometry"].is_object())
      throw GeometryError(ctx + ": missing geometry");
    const auto& g = feature["geometry"];
    std::string type = g.value("type", "");
    geo::MultiPolygon shape;
    if (type == "Polygon") {
      shape.push_back(detail::polygon_from_json(g["coordinates"], ctx));
    } else if (type == "MultiPolygon") {
      if (!g["coordinates"].is_array()) throw GeometryError(ctx + ": invalid MultiPolygon");
      for (const auto& p : g["coordinates"]) shape.push_back(detail::polygon_from_json(p, ctx));
    } else {
      throw GeometryError(ctx + ": unsupported geometry type '" + type + "'");
    }
    geo::validate(shape, ctx + " ('" + id + "')");
    areas.push_back(AreaSet::make_area(std::move(id), std::move(name), std::move(shape)));
  }
  return AreaSet(std::move(areas));
}

inline AreaSet load_area_geometries(const std::string& path) {
  json doc;
  try {
    doc = json::parse(csv::read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  return parse_area_geometries(doc, path);
}

inline json to_geojson(const AreaSet& areas) {
  json features = json::array();
  for (const auto& a : areas) {
    json geometry;
    if (a.geometry.size() == 1) {
      json rings = json::array({detail::ring_to_json(a.geometry[0].outer)});
      for (const auto& h : a.geometry[0].holes) rings.push_back(detail::ring_to_json(h));
      geometry = {{"type", "Polygon"}, {"coordinates", rings}};
    } else {
      json polys = json::array();
      for (const auto& p : a.geometry) {
        json rings = json::array({detail::ring_to_json(p.outer)});
        for (const auto& h : p.holes) rings.push_back(detail::ring_to_json(h));
        polys.push_back(rings);
      }
      geometry = {{"type", "MultiPolygon"}, {"coordinates", polys}};
    }
    features.push_back({{"type", "Feature"},
                        {"properties", {{"area_id", a.id}, {"name", a.name}}},
                        {"geometry", geometry}});
  }
  return {{"type", "FeatureCollection"}, {"features", features}};
}

inline void save_area_geometries(const AreaSet& areas, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << to_geojson(areas).dump() << '\n';
}

inline CountTable parse_count_table(std::string_view text, std::string source_id, ReferencePeriod period = {},
                                    std::string_view origin = "csv") {
  auto doc = csv::parse(text, origin);
  std::size_t id_col = doc.column("area_id", origin);
  std::size_t count_col = doc.column("count", origin);
  CountTable table(std::move(source_id), std::move(period));
  for (const auto& row : doc.rows) {
    double v = csv::to_real(row.fields[count_col], origin, row.line);
    if (v < 0)
      throw DomainError(std::string(origin) + ":" + std::to_string(row.line) + ": negative count");
    table.add(csv::trim(row.fields[id_col]), v);
  }
  return table;
}

inline CountTable load_count_table(const std::string& path, std::string source_id, ReferencePeriod period = {}) {
  return parse_count_table(csv::read_file(path), std::move(source_id), std::move(period), path);
}

inline std::string format_count_table(const CountTable& table) {
  csv::Writer w({"area_id", "count"});
  for (const auto& [id, c] : table.rows()) w.row({id, csv::format_real(c)});
  return w.str();
}

inline void save_count_table(const CountTable& table, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << format_count_table(table);
}

// Covariate CSV: `area_id,<feature>...`. The optional schema CSV
// `feature,group,unit` tags every feature with its group.
inline CovariateTable parse_covariate_table(std::string_view text, std::string_view origin = "csv",
                                            std::optional<std::string_view> schema_text = std::nullopt) {
  auto doc = csv::parse(text, origin);
  std::size_t id_col = doc.column("area_id", origin);
  std::vector<FeatureSpec> features;
  std::vector<std::size_t> cols;
  for (std::size_t c = 0; c < doc.header.size(); ++c) {
    if (c == id_col) continue;
    features.push_back({csv::trim(doc.header[c]), std::nullopt, {}});
    cols.push_back(c);
  }
  if (features.empty()) throw SchemaError(std::string(origin) + ": no feature columns");

  if (schema_text) {
    auto schema = csv::parse(*schema_text, "covariate schema");
    std::size_t name_col = schema.column("feature", "covariate schema");
    std::size_t group_col = schema.column("group", "covariate schema");
    std::optional<std::size_t> unit_col;
    for (std::size_t c = 0; c < schema.header.size(); ++c)
      if (schema.header[c] == "unit") unit_col = c;
    std::unordered_map<std::string, std::pair<FeatureGroup, std::string>> tags;
    for (const auto& r : schema.rows)
      tags[csv::trim(r.fields[name_col])] = {parse_feature_group(csv::trim(r.fields[group_col])),
                                             unit_col ? r.fields[*unit_col] : std::string{}};
    for (auto& f : features) {
      auto it = tags.find(f.name);
      if (it == tags.end()) throw SchemaError("covariate schema: feature '" + f.name + "' has no group tag");
      f.group = it->second.first;
      f.unit = it->second.second;
    }
  }

  CovariateTable table(std::move(features));
  for (const auto& row : doc.rows) {
    std::vector<double> values;
    values.reserve(cols.size());
    for (std::size_t c : cols) {
      if (csv::trim(row.fields[c]).empty())
        throw SchemaError(std::string(origin) + ":" + std::to_string(row.line) + ": missing value in column '" +
                          doc.header[c] + "'");
      values.push_back(csv::to_real(row.fields[c], origin, row.line));
    }
    table.add(csv::trim(row.fields[id_col]), std::move(values));
  }
  return table;
}

inline CovariateTable load_covariate_table(const std::string& path,
                                           const std::optional<std::string>& schema_path = std::nullopt) {
  std::optional<std::string> schema;
  if (schema_path) schema = csv::read_file(*schema_path);
  return parse_covariate_table(csv::read_file(path), path,
                               schema ? std::optional<std::string_view>(*schema) : std::nullopt);
}

inline std::string format_covariate_table(const CovariateTable& table) {
  std::vector<std::string> header{"area_id"};
  for (const auto& f : table.features()) header.push_back(f.name);
  csv::Writer w(header);
  for (std::size_t i = 0; i < table.size(); ++i) {
    std::vector<std::string> fields{table.ids()[i]};
    for (double v : table.row(i)) fields.push_back(csv::format_real(v));
    w.row(fields);
  }
  return w.str();
}

inline std::string format_covariate_schema(const CovariateTable& table) {
  csv::Writer w({"feature", "group", "unit"});
  for (const auto& f : table.features()) w.row({f.name, f.group ? to_string(*f.group) : "", f.unit});
  return w.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << text;
}

namespace detail {

inline void check_ping(const Ping& p, const std::string& ctx,
                       const std::optional<std::pair<std::int64_t, std::int64_t>>& range) {
  if (p.device_id.empty()) throw SchemaError(ctx + ": empty device_id");
  if (!(p.lon >= -180.0 && p.lon <= 180.0)) throw DomainError(ctx + ": longitude out of range");
  if (!(p.lat >= -kMercatorMaxLat && p.lat <= kMercatorMaxLat)) throw DomainError(ctx + ": latitude out of range");
  if (range && (p.timestamp < range->first || p.timestamp >= range->second))
    throw DomainError(ctx + ": timestamp outside reference period");
}

}  // namespace detail

// Pings from CSV `device_id,timestamp,lon,lat` or newline-delimited JSON with the
// same keys (chosen by a leading '{').
inline PingStream parse_pings(std::string_view text, const ReferencePeriod& period = {},
                              std::string_view origin = "pings") {
  std::optional<std::pair<std::int64_t, std::int64_t>> range;
  if (!period.empty()) range = epoch_range(period);

  PingStream out;
  auto first = text.find_first_not_of(" \t\r\n\xEF\xBB\xBF");
  if (first != std::string_view::npos && text[first] == '{') {
    std::size_t line = 0, pos = 0;
    while (pos <= text.size()) {
      auto nl = text.find('\n', pos);
      auto chunk = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
      ++line;
      pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
      if (csv::trim(chunk).empty() || chunk == "\r") continue;
      std::string ctx = std::string(origin) + ":" + std::to_string(line);
      try {
        auto j = json::parse(chunk);
        Ping p{detail::id_from_json(j.at("device_id")), j.at("timestamp").get<std::int64_t>(),
               j.at("lon").get<double>(), j.at("lat").get<double>()};
        detail::check_ping(p, ctx, range);
        out.push_back(std::move(p));
      } catch (const json::exception& e) {
        throw ParseError(ctx + ": " + e.what());
      }
    }
    return out;
  }

  auto doc = csv::parse(text, origin);
  std::size_t c_dev = doc.column("device_id", origin), c_ts = doc.column("timestamp", origin),
              c_lon = doc.column("lon", origin), c_lat = doc.column("lat", origin);
  for (const auto& row : doc.rows) {
    Ping p{csv::trim(row.fields[c_dev]), csv::to_integer(row.fields[c_ts], origin, row.line),
           csv::to_real(row.fields[c_lon], origin, row.line), csv::to_real(row.fields[c_lat], origin, row.line)};
    detail::check_ping(p, std::string(origin) + ":" + std::to_string(row.line), range);
    out.push_back(std::move(p));
  }
  return out;
}

inline PingStream load_pings(const std::string& path, const ReferencePeriod& period = {}) {
  return parse_pings(csv::read_file(path), period, path);
}

// ---------------------------------------------------------------------------
// Alignment

struct KeyedSource {
  std::string name;
  std::vector<std::string> ids;
};

inline KeyedSource keys_of(const CountTable& t) { return {t.source_id(), t.ids()}; }
inline KeyedSource keys_of(const CovariateTable& t, std::string name = "covariates") {
  return {std::move(name), t.ids()};
}

struct TableAlignment {
  std::string name;
  std::size_t aligned = 0;
  std::vector<std::string> missing;  // in the area set, absent from the table
  std::vector<std::string> extra;    // in the table, absent from the area set
};

struct AlignmentReport {
  std::vector<TableAlignment> tables;
  std::vector<std::string> intersection;  // area order
  std::vector<std::string> notes;

  bool aligned() const {
    return std::all_of(tables.begin(), tables.end(),
                       [](const auto& t) { return t.missing.empty() && t.extra.empty(); });
  }
};

inline AlignmentReport validate_alignment(const AreaSet& areas, std::span<const KeyedSource> tables) {
  AlignmentReport report;
  std::vector<std::unordered_set<std::string>> sets;
  for (const auto& t : tables) {
    TableAlignment a{t.name, 0, {}, {}};
    std::unordered_set<std::string> keys(t.ids.begin(), t.ids.end());
    for (const auto& area : areas) {
      if (keys.count(area.id))
        ++a.aligned;
      else
        a.missing.push_back(area.id);
    }
    for (const auto& id : t.ids)
      if (!areas.find(id)) a.extra.push_back(id);
    report.tables.push_back(std::move(a));
    sets.push_back(std::move(keys));
  }
  for (const auto& area : areas)
    if (std::all_of(sets.begin(), sets.end(), [&](const auto& s) { return s.count(area.id) > 0; }))
      report.intersection.push_back(area.id);
  return report;
}

inline json to_json(const AlignmentReport& r) {
  json tables = json::array();
  for (const auto& t : r.tables)
    tables.push_back({{"name", t.name}, {"aligned", t.aligned}, {"missing", t.missing}, {"extra", t.extra}});
  return {{"aligned", r.aligned()},
          {"tables", tables},
          {"intersection_size", r.intersection.size()},
          {"notes", r.notes}};
}

}  // namespace coverbias
