#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <unordered_map>

#include "coverbias/homeloc.hpp"
#include "test_support.hpp"

using namespace coverbias;
using namespace coverbias::homeloc;

namespace {

constexpr std::int64_t kMidnight = 1617235200;  // 2021-04-01T00:00:00Z

// Area A = [0,1]x[0,1], area B = [1,2]x[0,1].
AreaSet two_areas() {
  return AreaSet({AreaSet::make_area("A", "", geo::rectangle(0, 0, 1, 1)),
                  AreaSet::make_area("B", "", geo::rectangle(1, 0, 2, 1))});
}

Ping at(const char* area, std::int64_t t) {
  return {"d", t, area[0] == 'A' ? 0.5 : 1.5, 0.5};
}

std::vector<Ping> night(int in_a, int in_b) {
  std::vector<Ping> v;
  for (int i = 0; i < in_a; ++i) v.push_back(at("A", kMidnight + 3600 + i));
  for (int i = 0; i < in_b; ++i) v.push_back(at("B", kMidnight + 7200 + i));
  return v;
}

}  // namespace

TEST(DetectHome, RuleFixtures) {
  auto areas = two_areas();
  HomeRule rule;
  EXPECT_EQ(detect_home(night(3, 1), areas, rule).area_id, std::optional<std::string>("A"));
  EXPECT_FALSE(detect_home(night(1, 0), areas, rule).area_id);
  EXPECT_FALSE(detect_home(night(2, 2), areas, rule).area_id);
  EXPECT_FALSE(detect_home({}, areas, rule).area_id);
}

TEST(DetectHome, DaytimePingsIgnored) {
  auto areas = two_areas();
  auto pings = night(2, 1);
  for (int i = 0; i < 10; ++i) pings.push_back(at("B", kMidnight + 12 * 3600 + i));
  auto d = detect_home(pings, areas, HomeRule{});
  EXPECT_EQ(d.area_id, std::optional<std::string>("A"));
  EXPECT_EQ(d.night_pings, 3u);
}

TEST(DetectHome, NightWindowBoundaries) {
  HomeRule rule;  // 22:00-06:00
  EXPECT_TRUE(rule.is_night(kMidnight - 2 * 3600));       // 22:00 inclusive
  EXPECT_FALSE(rule.is_night(kMidnight - 2 * 3600 - 1));  // 21:59:59
  EXPECT_TRUE(rule.is_night(kMidnight + 6 * 3600 - 1));
  EXPECT_FALSE(rule.is_night(kMidnight + 6 * 3600));  // 06:00 exclusive
  rule.utc_offset_minutes = 60;
  EXPECT_FALSE(rule.is_night(kMidnight + 5 * 3600));  // 06:00 local
  auto w = parse_night_window("00:00-08:00");
  EXPECT_EQ(w.first, 0);
  EXPECT_EQ(w.second, 480);
  EXPECT_THROW(parse_night_window("25:00-01:00"), SchemaError);
  HomeRule empty;
  empty.night_start_minute = empty.night_end_minute = 60;
  EXPECT_THROW(empty.validate(), DomainError);
}

TEST(DetectHome, UnmappedPingsDroppedAndCounted) {
  auto areas = two_areas();
  auto pings = night(2, 0);
  pings.push_back({"d", kMidnight + 100, 50.0, 50.0});
  auto d = detect_home(pings, areas, HomeRule{});
  EXPECT_EQ(d.unmapped, 1u);
  EXPECT_EQ(d.area_id, std::optional<std::string>("A"));
}

TEST(DetectHome, OrderInvariance) {
  auto areas = two_areas();
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<int> k(0, 6);
    auto pings = night(k(gen), k(gen));
    auto ref = detect_home(pings, areas, HomeRule{}).area_id;
    std::shuffle(pings.begin(), pings.end(), gen);
    EXPECT_EQ(detect_home(pings, areas, HomeRule{}).area_id, ref);
  }
}

TEST(DetectHomes, ParallelMatchesSequential) {
  auto areas = coverbias::testing::grid_areas(3, 3);
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(-0.2, 3.2);
  std::uniform_int_distribution<std::int64_t> t(kMidnight, kMidnight + 3 * 86400);
  PingStream stream;
  for (int d = 0; d < 300; ++d)
    for (int i = 0; i < 8; ++i) stream.push_back({"dev" + std::to_string(d), t(gen), u(gen), u(gen)});
  auto result = detect_homes(stream, areas, HomeRule{});
  EXPECT_EQ(result.devices, 300u);

  std::map<std::string, std::vector<Ping>> groups;
  std::size_t homed = 0;
  for (const auto& p : stream) groups[p.device_id].push_back(p);
  for (const auto& [id, g] : groups) {
    auto d = detect_home(g, areas, HomeRule{});
    auto it = result.homes.find(id);
    if (d.area_id) {
      ++homed;
      ASSERT_NE(it, result.homes.end());
      EXPECT_EQ(it->second, *d.area_id);
    } else {
      EXPECT_EQ(it, result.homes.end());
    }
  }
  auto table = aggregate_homes(result.homes, areas, "gps");
  EXPECT_EQ(table.total(), static_cast<double>(homed));
}

TEST(AggregateHomes, SmallFixtures) {
  auto areas = two_areas();
  auto t = aggregate_homes({{"d1", "A"}, {"d2", "A"}, {"d3", "B"}}, areas, "gps");
  EXPECT_EQ(t.at("A"), 2.0);
  EXPECT_EQ(t.at("B"), 1.0);
  auto empty = aggregate_homes({}, areas, "gps");
  EXPECT_EQ(empty.size(), 2u);
  EXPECT_EQ(empty.total(), 0.0);
  EXPECT_THROW(aggregate_homes({{"d", "Z"}}, areas, "gps"), SchemaError);
}

TEST(AggregateHomes, TenThousandDevicesMatchGroupBy) {
  auto areas = coverbias::testing::grid_areas(5, 5);
  auto ids = areas.ids();
  std::mt19937_64 gen(9);
  std::uniform_int_distribution<std::size_t> pick(0, ids.size() - 1);
  std::map<std::string, std::string> homes;
  for (int d = 0; d < 10000; ++d) homes["d" + std::to_string(d)] = ids[pick(gen)];
  auto t = aggregate_homes(homes, areas, "gps");
  std::unordered_map<std::string, int> oracle;
  for (const auto& kv : homes) ++oracle[kv.second];
  for (const auto& id : ids) EXPECT_EQ(t.at(id), oracle[id]) << id;
  EXPECT_EQ(t.total(), 10000.0);
}

TEST(TileKey, QuadkeyBasics) {
  EXPECT_EQ((TileKey{1, 0, 0}).quadkey(), "0");
  EXPECT_EQ(TileKey::from_quadkey("0"), (TileKey{1, 0, 0}));
  EXPECT_EQ((TileKey{3, 3, 5}).quadkey(), "213");
  EXPECT_THROW(TileKey::from_quadkey("014"), DomainError);
  EXPECT_THROW(TileKey::from_quadkey(""), DomainError);
  EXPECT_FALSE((TileKey{2, 4, 0}).valid());
}

TEST(TileKey, RoundTripAtLevel13) {
  std::mt19937_64 gen(13);
  std::uniform_int_distribution<std::uint32_t> idx(0, (1u << 13) - 1);
  for (int i = 0; i < 1000; ++i) {
    TileKey k{13, idx(gen), idx(gen)};
    auto q = k.quadkey();
    EXPECT_EQ(q.size(), 13u);
    EXPECT_EQ(TileKey::from_quadkey(q), k);
    EXPECT_EQ(TileKey::from_quadkey(q).quadkey(), q);
  }
}

TEST(TileKey, BijectionAtEveryLevel) {
  std::mt19937_64 gen(17);
  for (int level = 1; level <= 23; ++level) {
    std::uniform_int_distribution<std::uint32_t> idx(0, static_cast<std::uint32_t>((std::uint64_t{1} << level) - 1));
    for (int i = 0; i < 50; ++i) {
      TileKey k{level, idx(gen), idx(gen)};
      EXPECT_EQ(TileKey::from_quadkey(k.quadkey()), k);
    }
  }
  // Level 2 is small enough to enumerate: 16 distinct keys.
  std::set<std::string> keys;
  for (std::uint32_t x = 0; x < 4; ++x)
    for (std::uint32_t y = 0; y < 4; ++y) keys.insert(TileKey{2, x, y}.quadkey());
  EXPECT_EQ(keys.size(), 16u);
}

TEST(TileCenter, HandEvaluated) {
  auto c = tile_center({1, 1, 1});
  EXPECT_NEAR(c.lon, 90.0, 1e-12);
  // Tile (1,1) spans lat [-85.0511, 0]; its centre row is at the mercator
  // midpoint y = -pi/2, i.e. lat = 2*atan(exp(-pi/2)) - pi/2.
  double expected_lat = (2.0 * std::atan(std::exp(-std::numbers::pi / 2)) - std::numbers::pi / 2) * 180.0 /
                        std::numbers::pi;
  EXPECT_NEAR(c.lat, expected_lat, 1e-12);
  EXPECT_LT(c.lat, 0.0);
  EXPECT_GT(c.lat, -85.06);
  EXPECT_THROW(tile_center({0, 0, 0}), DomainError);
  EXPECT_THROW(tile_center({24, 0, 0}), DomainError);
}

TEST(TileCenter, InverseOfTileFor) {
  std::mt19937_64 gen(21);
  std::uniform_real_distribution<double> lon(-179.9, 179.9), lat(-84.0, 84.0);
  for (int i = 0; i < 500; ++i) {
    geo::LonLat p{lon(gen), lat(gen)};
    auto k = tile_for(p, 13);
    EXPECT_EQ(tile_for(tile_center(k), 13), k);
  }
}

TEST(WindowAverage, SingleTileMean) {
  auto key = tile_for({0.5, 0.5}, 13);
  std::vector<TileCount> recs{{"2021-04-01", TimeWindow::w1, key, 10},
                              {"2021-04-02", TimeWindow::w1, key, 20},
                              {"2021-04-02", TimeWindow::w2, key, 999}};
  auto r = window_average_counts(recs, TimeWindow::w1, two_areas(), "meta");
  EXPECT_EQ(r.table.at("A"), 15.0);
  EXPECT_EQ(r.table.at("B"), 0.0);
  EXPECT_EQ(r.dates, 2u);
}

TEST(WindowAverage, UnassignedTileDropped) {
  auto outside = tile_for({40.0, 40.0}, 13);
  std::vector<TileCount> recs{{"2021-04-01", TimeWindow::w1, outside, 10},
                              {"2021-04-01", TimeWindow::w1, tile_for({1.5, 0.5}, 13), 4}};
  auto r = window_average_counts(recs, TimeWindow::w1, two_areas(), "meta");
  EXPECT_EQ(r.unassigned, std::vector<std::string>{outside.quadkey()});
  EXPECT_EQ(r.table.at("B"), 4.0);
  EXPECT_EQ(r.table.total(), 4.0);
}

TEST(WindowAverage, Errors) {
  auto key = tile_for({0.5, 0.5}, 13);
  std::vector<TileCount> recs{{"2021-04-01", TimeWindow::w2, key, 10}};
  EXPECT_THROW(window_average_counts(recs, TimeWindow::w1, two_areas(), "meta"), EmptySelection);
  recs.push_back({"2021-04-01", TimeWindow::w2, key, 11});
  EXPECT_THROW(window_average_counts(recs, TimeWindow::w2, two_areas(), "meta"), DuplicateKey);
}

TEST(WindowAverage, ThreeTilesSevenDatesMatchOracle) {
  auto areas = two_areas();
  std::vector<TileKey> tiles{tile_for({0.2, 0.3}, 13), tile_for({0.8, 0.7}, 13), tile_for({1.4, 0.6}, 13)};
  std::mt19937_64 gen(31);
  std::uniform_real_distribution<double> cnt(0, 500);
  std::bernoulli_distribution present(0.8);
  std::vector<TileCount> recs;
  for (int d = 1; d <= 7; ++d)
    for (const auto& t : tiles)
      for (auto w : {TimeWindow::w1, TimeWindow::w2, TimeWindow::w3})
        if (d == 1 || present(gen)) recs.push_back({"2021-04-0" + std::to_string(d), w, t, std::round(cnt(gen))});
  auto r = window_average_counts(recs, TimeWindow::w1, areas, "meta");

  // Brute force: for each tile, collect its W1 values, average, then find the
  // area by testing the centre against each rectangle directly.
  std::map<std::string, double> oracle{{"A", 0.0}, {"B", 0.0}};
  for (const auto& t : tiles) {
    double s = 0;
    int n = 0;
    for (const auto& rec : recs)
      if (rec.window == TimeWindow::w1 && rec.tile == t) {
        s += rec.count;
        ++n;
      }
    auto c = tile_center(t);
    oracle[c.lon < 1.0 ? "A" : "B"] += s / n;
  }
  EXPECT_NEAR(r.table.at("A"), oracle["A"], 1e-9);
  EXPECT_NEAR(r.table.at("B"), oracle["B"], 1e-9);
}

TEST(TileCounts, ParseCsv) {
  auto recs = parse_tile_counts("date,window,quadkey,count\n2021-04-01,W1,0313131,5\n2021-04-01,08:00-16:00,0313131,7\n");
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].tile.level, 7);
  EXPECT_EQ(recs[1].window, TimeWindow::w2);
  EXPECT_THROW(parse_tile_counts("date,window,quadkey,count\n2021-04-01,W4,0,5\n"), ParseError);
}

TEST(HomeRuleMonotonicity, RaisingThresholdsNeverAddsHomes) {
  auto areas = two_areas();
  std::mt19937_64 gen(41);
  std::uniform_int_distribution<int> k(0, 8);
  for (int trial = 0; trial < 300; ++trial) {
    auto pings = night(k(gen), k(gen));
    HomeRule lo, hi;
    lo.modal_share_threshold = 0.4 + 0.05 * (trial % 5);
    hi.modal_share_threshold = lo.modal_share_threshold + 0.1;
    lo.min_night_pings = 1 + trial % 3;
    hi.min_night_pings = lo.min_night_pings + trial % 2;
    bool a = detect_home(pings, areas, lo).area_id.has_value();
    bool b = detect_home(pings, areas, hi).area_id.has_value();
    EXPECT_TRUE(a || !b);
  }
}
