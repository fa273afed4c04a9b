#include <gtest/gtest.h>

#include <algorithm>
#include <iterator>
#include <random>
#include <set>

#include "coverbias/ingest.hpp"
#include "test_support.hpp"

using namespace coverbias;
using coverbias::testing::TempDir;

namespace {

std::string square_feature(const std::string& id, double x0, double y0) {
  auto p = [&](double x, double y) { return "[" + std::to_string(x) + "," + std::to_string(y) + "]"; };
  return R"({"type":"Feature","properties":{"area_id":")" + id + R"(","name":"Area )" + id +
         R"("},"geometry":{"type":"Polygon","coordinates":[[)" + p(x0, y0) + "," + p(x0 + 1, y0) + "," +
         p(x0 + 1, y0 + 1) + "," + p(x0, y0 + 1) + "," + p(x0, y0) + "]]}}";
}

std::string collection(const std::vector<std::string>& features) {
  std::string s = R"({"type":"FeatureCollection","features":[)";
  for (std::size_t i = 0; i < features.size(); ++i) s += (i ? "," : "") + features[i];
  return s + "]}";
}

}  // namespace

TEST(LoadAreaGeometries, TwoValidSquares) {
  TempDir dir;
  auto path = dir.write("a.geojson", collection({square_feature("A", 0, 0), square_feature("B", 1, 0)}));
  auto areas = load_area_geometries(path);
  ASSERT_EQ(areas.size(), 2u);
  EXPECT_EQ(areas[0].id, "A");
  EXPECT_EQ(areas[1].id, "B");
  EXPECT_EQ(areas[0].name, "Area A");
  EXPECT_NEAR(areas[0].centroid.lon, 0.5, 1e-12);
  EXPECT_NEAR(areas[0].centroid.lat, 0.5, 1e-12);
}

TEST(LoadAreaGeometries, DuplicateIdRejected) {
  TempDir dir;
  auto path = dir.write("a.geojson", collection({square_feature("E0600001", 0, 0), square_feature("E0600001", 1, 0)}));
  EXPECT_THROW(load_area_geometries(path), DuplicateKey);
}

TEST(LoadAreaGeometries, MissingIdIsSchemaError) {
  TempDir dir;
  auto f = square_feature("A", 0, 0);
  f.replace(f.find("area_id"), 7, "code");
  auto path = dir.write("a.geojson", collection({f}));
  EXPECT_THROW(load_area_geometries(path), SchemaError);
}

TEST(LoadAreaGeometries, InvalidRings) {
  TempDir dir;
  auto open_ring = dir.write(
      "open.geojson",
      R"({"type":"FeatureCollection","features":[{"type":"Feature","properties":{"area_id":"A"},"geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,1]]]}}]})");
  EXPECT_THROW(load_area_geometries(open_ring), GeometryError);
  auto tiny = dir.write(
      "tiny.geojson",
      R"({"type":"FeatureCollection","features":[{"type":"Feature","properties":{"area_id":"A"},"geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[0,0]]]}}]})");
  EXPECT_THROW(load_area_geometries(tiny), GeometryError);
}

TEST(LoadAreaGeometries, MultiPolygonAndFeatureCountMatchesFileScan) {
  TempDir dir;
  std::vector<std::string> features;
  for (int i = 0; i < 37; ++i) features.push_back(square_feature("L" + std::to_string(i), i * 2.0, 0));
  features.push_back(
      R"({"type":"Feature","properties":{"area_id":"M"},"geometry":{"type":"MultiPolygon","coordinates":[[[[0,5],[1,5],[1,6],[0,6],[0,5]]],[[[3,5],[4,5],[4,6],[3,6],[3,5]]]]}})");
  auto text = collection(features);
  auto path = dir.write("lads.geojson", text);
  auto areas = load_area_geometries(path);

  // Independent scan: count occurrences of the feature type tag in the raw text.
  std::size_t scanned = 0;
  for (auto pos = text.find("\"type\":\"Feature\""); pos != std::string::npos;
       pos = text.find("\"type\":\"Feature\"", pos + 1))
    ++scanned;
  EXPECT_EQ(areas.size(), scanned);
  auto m = areas.find("M");
  ASSERT_TRUE(m);
  EXPECT_EQ(areas[*m].geometry.size(), 2u);
  EXPECT_NEAR(areas[*m].centroid.lon, 2.0, 1e-12);
}

TEST(LoadCountTable, ParsesRows) {
  auto t = parse_count_table("area_id,count\nA,10\nB,0\n", "src");
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t.at("A"), 10.0);
  EXPECT_EQ(t.at("B"), 0.0);
  EXPECT_EQ(t.source_id(), "src");
}

TEST(LoadCountTable, NegativeCountIsDomainError) {
  EXPECT_THROW(parse_count_table("area_id,count\nA,-1\n", "src"), DomainError);
}

TEST(LoadCountTable, UnparsableRowReportsLine) {
  try {
    parse_count_table("area_id,count\nA,1\nB,abc\n", "src", {}, "file.csv");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("file.csv:3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_count_table("area_id,count\nA,1,2\n", "src"), ParseError);
  EXPECT_THROW(parse_count_table("id,count\nA,1\n", "src"), SchemaError);
}

TEST(LoadCountTable, CensusSumMatchesColumnSum) {
  TempDir dir;
  std::mt19937_64 gen(7);
  std::uniform_int_distribution<int> pop(50000, 1200000);
  std::string text = "area_id,count\r\n";
  for (int i = 0; i < 374; ++i) text += "E" + std::to_string(6000000 + i) + "," + std::to_string(pop(gen)) + "\r\n";
  auto path = dir.write("census.csv", text);
  auto t = load_count_table(path, "census");
  EXPECT_EQ(t.size(), 374u);

  // Independent column sum straight from the text.
  double expected = 0.0;
  std::size_t pos = text.find('\n') + 1;
  while (pos < text.size()) {
    auto comma = text.find(',', pos);
    auto eol = text.find('\r', comma);
    expected += std::stod(text.substr(comma + 1, eol - comma - 1));
    pos = text.find('\n', eol) + 1;
  }
  EXPECT_EQ(t.total(), expected);
}

TEST(LoadCountTable, QuotedFieldsAndBom) {
  auto t = parse_count_table("\xEF\xBB\xBF" "area_id,count\n\"A,1\",\"2.5\"\n", "s");
  EXPECT_EQ(t.at("A,1"), 2.5);
}

TEST(CountTableRoundTrip, LosslessAtFullPrecision) {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u(0.0, 1e7);
  for (int trial = 0; trial < 20; ++trial) {
    CountTable t("s");
    for (int i = 0; i < 50; ++i) t.add("id\"" + std::to_string(i) + (i % 3 ? "" : ",x"), u(gen));
    auto back = parse_count_table(format_count_table(t), "s");
    ASSERT_EQ(back.rows(), t.rows());
  }
}

TEST(Covariates, ParseWithSchemaAndRoundTrip) {
  std::string text = "area_id,age_20_29,no_car\nA,0.1,0.3\nB,0.2,0.4\n";
  std::string schema = "feature,group,unit\nage_20_29,demographic,share\nno_car,socioeconomic,share\n";
  auto cov = parse_covariate_table(text, "cov", std::string_view(schema));
  ASSERT_EQ(cov.n_features(), 2u);
  EXPECT_EQ(cov.features()[1].group, FeatureGroup::socioeconomic);
  EXPECT_EQ(cov.row(*cov.find("B"))[0], 0.2);
  auto back = parse_covariate_table(format_covariate_table(cov), "cov",
                                    std::string_view(format_covariate_schema(cov)));
  EXPECT_EQ(back.ids(), cov.ids());
  for (std::size_t i = 0; i < cov.size(); ++i)
    for (std::size_t j = 0; j < cov.n_features(); ++j) EXPECT_EQ(back.row(i)[j], cov.row(i)[j]);
}

TEST(Covariates, MissingCellIsAnError) {
  EXPECT_THROW(parse_covariate_table("area_id,a,b\nA,1,\n", "cov"), SchemaError);
  EXPECT_THROW(parse_covariate_table("area_id,a\nA,1\n", "cov", std::string_view("feature,group\nb,mobility\n")),
               SchemaError);
  EXPECT_THROW(parse_covariate_table("area_id,a\nA,1\n", "cov", std::string_view("feature,group\na,weather\n")),
               SchemaError);
}

TEST(Pings, CsvAndNdjsonAgree) {
  std::string csv_text = "device_id,timestamp,lon,lat\nd1,1617235200,-0.1,51.5\nd2,1617238800,1.5,52\n";
  std::string nd = "{\"device_id\":\"d1\",\"timestamp\":1617235200,\"lon\":-0.1,\"lat\":51.5}\n"
                   "{\"device_id\":\"d2\",\"timestamp\":1617238800,\"lon\":1.5,\"lat\":52}\n";
  auto a = parse_pings(csv_text);
  auto b = parse_pings(nd);
  ASSERT_EQ(a.size(), 2u);
  ASSERT_EQ(b.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(a[i].device_id, b[i].device_id);
    EXPECT_EQ(a[i].timestamp, b[i].timestamp);
    EXPECT_EQ(a[i].lon, b[i].lon);
    EXPECT_EQ(a[i].lat, b[i].lat);
  }
}

TEST(Pings, RangeChecks) {
  EXPECT_THROW(parse_pings("device_id,timestamp,lon,lat\nd,0,0,86\n"), DomainError);
  EXPECT_THROW(parse_pings("device_id,timestamp,lon,lat\nd,0,181,0\n"), DomainError);
  auto period = parse_period("2021-04-01/2021-04-07");
  // 2021-04-01T00:00:00Z = 1617235200; 2021-04-08T00:00:00Z = 1617840000
  EXPECT_NO_THROW(parse_pings("device_id,timestamp,lon,lat\nd,1617235200,0,0\n", period));
  EXPECT_NO_THROW(parse_pings("device_id,timestamp,lon,lat\nd,1617839999,0,0\n", period));
  EXPECT_THROW(parse_pings("device_id,timestamp,lon,lat\nd,1617840000,0,0\n", period), DomainError);
  EXPECT_THROW(parse_pings("device_id,timestamp,lon,lat\nd,1617235199,0,0\n", period), DomainError);
}

TEST(ValidateAlignment, IdenticalKeysGiveEmptyReport) {
  auto areas = coverbias::testing::grid_areas(1, 3);
  CountTable t("s");
  for (const auto& a : areas) t.add(a.id, 1);
  std::vector<KeyedSource> keyed{keys_of(t)};
  auto r = validate_alignment(areas, keyed);
  EXPECT_TRUE(r.aligned());
  EXPECT_TRUE(r.tables[0].missing.empty());
  EXPECT_TRUE(r.tables[0].extra.empty());
  EXPECT_EQ(r.intersection.size(), 3u);
}

TEST(ValidateAlignment, MissingArea) {
  auto areas = coverbias::testing::grid_areas(1, 3);
  CountTable t("s");
  t.add("r0c0", 1);
  t.add("r0c1", 1);
  std::vector<KeyedSource> keyed{keys_of(t)};
  auto r = validate_alignment(areas, keyed);
  EXPECT_FALSE(r.aligned());
  EXPECT_EQ(r.tables[0].missing, std::vector<std::string>{"r0c2"});
}

TEST(ValidateAlignment, PartialIntersectionMatchesSetOracle) {
  std::vector<Area> v;
  for (int i = 0; i < 374; ++i)
    v.push_back(AreaSet::make_area("E" + std::to_string(i), "", geo::rectangle(i, 0, i + 1, 1)));
  AreaSet areas(std::move(v));
  CountTable census("census"), src("src");
  for (int i = 0; i < 374; ++i) census.add("E" + std::to_string(i), 100);
  for (int i = 0; i < 374; ++i)
    if (i != 5 && i != 77 && i != 300) src.add("E" + std::to_string(i), 10);
  src.add("X1", 3);  // extra id
  std::vector<KeyedSource> keyed{keys_of(census), keys_of(src)};
  auto r = validate_alignment(areas, keyed);

  std::set<std::string> a, b, c;
  for (const auto& x : areas) a.insert(x.id);
  for (const auto& [id, _] : census.rows()) b.insert(id);
  for (const auto& [id, _] : src.rows()) c.insert(id);
  std::set<std::string> ab, abc;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::inserter(ab, ab.end()));
  std::set_intersection(ab.begin(), ab.end(), c.begin(), c.end(), std::inserter(abc, abc.end()));
  EXPECT_EQ(abc.size(), 371u);
  EXPECT_EQ(std::set<std::string>(r.intersection.begin(), r.intersection.end()), abc);
  EXPECT_EQ(r.tables[1].extra, std::vector<std::string>{"X1"});

  // Every id lands in exactly one of aligned / missing / extra per table.
  for (std::size_t k = 0; k < keyed.size(); ++k) {
    std::set<std::string> universe(a);
    universe.insert(keyed[k].ids.begin(), keyed[k].ids.end());
    std::size_t total = r.tables[k].aligned + r.tables[k].missing.size() + r.tables[k].extra.size();
    EXPECT_EQ(total, universe.size());
  }
}

TEST(AreaSetRoundTrip, GeoJsonPreservesIdsAndGeometry) {
  TempDir dir;
  auto areas = coverbias::testing::grid_areas(3, 4, 0.37);
  save_area_geometries(areas, dir.file("g.geojson"));
  auto back = load_area_geometries(dir.file("g.geojson"));
  ASSERT_EQ(back.size(), areas.size());
  for (std::size_t i = 0; i < areas.size(); ++i) {
    EXPECT_EQ(back[i].id, areas[i].id);
    EXPECT_EQ(back[i].geometry[0].outer, areas[i].geometry[0].outer);
  }
}
