#pragma once

// Home-area inference from GPS pings and time-window tile-count averaging.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "coverbias/error.hpp"
#include "coverbias/ingest.hpp"
#include "coverbias/util/parallel.hpp"

namespace coverbias::homeloc {

// ---------------------------------------------------------------------------
// Nighttime home rule

struct HomeRule {
  int night_start_minute = 22 * 60;  // local clock, inclusive
  int night_end_minute = 6 * 60;     // local clock, exclusive; may wrap midnight
  int min_night_pings = 2;
  double modal_share_threshold = 0.5;  // modal share must be strictly greater
  int utc_offset_minutes = 0;          // local civil time = UTC + offset

  void validate() const {
    auto in_day = [](int m) { return m >= 0 && m < 24 * 60; };
    if (!in_day(night_start_minute) || !in_day(night_end_minute))
      throw DomainError("night window bounds must be within 00:00-23:59");
    if (night_start_minute == night_end_minute) throw DomainError("night window is empty");
    if (min_night_pings < 1) throw DomainError("min_night_pings must be >= 1");
    if (!(modal_share_threshold > 0.0 && modal_share_threshold <= 1.0))
      throw DomainError("modal_share_threshold must be in (0, 1]");
  }

  bool is_night(std::int64_t utc_seconds) const {
    constexpr std::int64_t day = 86400;
    std::int64_t local = utc_seconds + static_cast<std::int64_t>(utc_offset_minutes) * 60;
    std::int64_t sod = ((local % day) + day) % day;
    std::int64_t a = static_cast<std::int64_t>(night_start_minute) * 60;
    std::int64_t b = static_cast<std::int64_t>(night_end_minute) * 60;
    return a < b ? (sod >= a && sod < b) : (sod >= a || sod < b);
  }
};

inline int parse_clock(std::string_view s) {
  auto bad = [&] { return SchemaError("invalid clock time '" + std::string(s) + "', expected HH:MM"); };
  if (s.size() != 5 || s[2] != ':') throw bad();
  auto digit = [&](char c) {
    if (c < '0' || c > '9') throw bad();
    return c - '0';
  };
  int h = digit(s[0]) * 10 + digit(s[1]);
  int m = digit(s[3]) * 10 + digit(s[4]);
  if (h > 24 || m > 59 || (h == 24 && m != 0)) throw bad();
  return (h * 60 + m) % (24 * 60);
}

// "HH:MM-HH:MM" -> (start, end) minutes of day.
inline std::pair<int, int> parse_night_window(std::string_view s) {
  auto dash = s.find('-');
  if (dash == std::string_view::npos) throw SchemaError("night window must be 'HH:MM-HH:MM'");
  return {parse_clock(s.substr(0, dash)), parse_clock(s.substr(dash + 1))};
}

struct HomeDecision {
  std::optional<std::string> area_id;
  std::size_t night_pings = 0;  // mapped nighttime pings
  std::size_t unmapped = 0;     // nighttime pings outside every area
  double modal_share = 0.0;
};

// Home area for one device's pings: the area holding the most mapped nighttime
// pings, provided the device has at least `min_night_pings` such pings and the
// modal area's share strictly exceeds the threshold. A tie for the top area
// yields no home.
inline HomeDecision detect_home(std::span<const Ping> pings, const AreaSet& areas, const HomeRule& rule) {
  rule.validate();
  HomeDecision d;
  std::map<std::size_t, std::size_t> per_area;
  for (const auto& p : pings) {
    if (!rule.is_night(p.timestamp)) continue;
    auto idx = areas.locate({p.lon, p.lat});
    if (!idx) {
      ++d.unmapped;
      continue;
    }
    ++per_area[*idx];
    ++d.night_pings;
  }
  if (d.night_pings == 0) return d;

  std::size_t best = 0, best_count = 0;
  bool tie = false;
  for (const auto& [idx, count] : per_area) {
    if (count > best_count) {
      best = idx;
      best_count = count;
      tie = false;
    } else if (count == best_count) {
      tie = true;
    }
  }
  d.modal_share = static_cast<double>(best_count) / static_cast<double>(d.night_pings);
  if (tie) return d;
  if (d.night_pings < static_cast<std::size_t>(rule.min_night_pings)) return d;
  if (!(d.modal_share > rule.modal_share_threshold)) return d;
  d.area_id = areas[best].id;
  return d;
}

struct HomeDetectionResult {
  std::map<std::string, std::string> homes;  // device_id -> area_id
  std::size_t devices = 0;
  std::size_t unmapped_pings = 0;
};

inline HomeDetectionResult detect_homes(const PingStream& stream, const AreaSet& areas, const HomeRule& rule) {
  rule.validate();
  std::map<std::string, std::vector<Ping>> by_device;
  for (const auto& p : stream) by_device[p.device_id].push_back(p);

  std::vector<const std::string*> ids;
  std::vector<const std::vector<Ping>*> groups;
  for (const auto& [id, g] : by_device) {
    ids.push_back(&id);
    groups.push_back(&g);
  }
  std::vector<HomeDecision> decisions(groups.size());
  parallel_for(groups.size(), [&](std::size_t i) { decisions[i] = detect_home(*groups[i], areas, rule); });

  HomeDetectionResult out;
  out.devices = groups.size();
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    out.unmapped_pings += decisions[i].unmapped;
    if (decisions[i].area_id) out.homes.emplace(*ids[i], *decisions[i].area_id);
  }
  return out;
}

// Number of homed devices per area; every area appears, in area-set order.
inline CountTable aggregate_homes(const std::map<std::string, std::string>& homes, const AreaSet& areas,
                                  std::string source_id, ReferencePeriod period = {}) {
  std::vector<double> counts(areas.size(), 0.0);
  for (const auto& [device, area] : homes) {
    auto idx = areas.find(area);
    if (!idx) throw SchemaError("device '" + device + "' homed in unknown area '" + area + "'");
    counts[*idx] += 1.0;
  }
  CountTable table(std::move(source_id), std::move(period));
  for (std::size_t i = 0; i < areas.size(); ++i) table.add(areas[i].id, counts[i]);
  return table;
}

// ---------------------------------------------------------------------------
// Bing Maps tile system

struct TileKey {
  int level = 1;
  std::uint32_t x = 0;
  std::uint32_t y = 0;

  friend bool operator==(const TileKey&, const TileKey&) = default;

  bool valid() const {
    if (level < 1 || level > 23) return false;
    std::uint64_t n = std::uint64_t{1} << level;
    return x < n && y < n;
  }

  std::string quadkey() const {
    if (!valid()) throw DomainError("invalid tile key");
    std::string key;
    key.reserve(static_cast<std::size_t>(level));
    for (int i = level; i > 0; --i) {
      std::uint32_t mask = 1u << (i - 1);
      char digit = '0';
      if (x & mask) digit += 1;
      if (y & mask) digit += 2;
      key.push_back(digit);
    }
    return key;
  }

  static TileKey from_quadkey(std::string_view key) {
    if (key.empty() || key.size() > 23) throw DomainError("quadkey length must be in [1, 23]");
    TileKey t{static_cast<int>(key.size()), 0, 0};
    for (std::size_t i = 0; i < key.size(); ++i) {
      std::uint32_t mask = 1u << (key.size() - 1 - i);
      switch (key[i]) {
        case '0': break;
        case '1': t.x |= mask; break;
        case '2': t.y |= mask; break;
        case '3': t.x |= mask; t.y |= mask; break;
        default: throw DomainError("invalid quadkey digit in '" + std::string(key) + "'");
      }
    }
    return t;
  }
};

namespace detail {

inline double map_size(int level) { return 256.0 * std::ldexp(1.0, level); }

inline geo::LonLat pixel_to_lonlat(double px, double py, int level) {
  double size = map_size(level);
  double x = px / size - 0.5;
  double y = 0.5 - py / size;
  double lat = 90.0 - 360.0 * std::atan(std::exp(-y * 2.0 * std::numbers::pi)) / std::numbers::pi;
  return {360.0 * x, lat};
}

}  // namespace detail

// WGS84 centre of a tile.
inline geo::LonLat tile_center(const TileKey& key) {
  if (key.level < 1 || key.level > 23) throw DomainError("tile level must be in [1, 23]");
  if (!key.valid()) throw DomainError("tile index out of range for level");
  return detail::pixel_to_lonlat((key.x + 0.5) * 256.0, (key.y + 0.5) * 256.0, key.level);
}

// Tile containing a point at the given level.
inline TileKey tile_for(const geo::LonLat& p, int level) {
  if (level < 1 || level > 23) throw DomainError("tile level must be in [1, 23]");
  double lat = std::clamp(p.lat, -kMercatorMaxLat, kMercatorMaxLat);
  double lon = std::clamp(p.lon, -180.0, 180.0);
  double x = (lon + 180.0) / 360.0;
  double s = std::sin(lat * std::numbers::pi / 180.0);
  double y = 0.5 - std::log((1 + s) / (1 - s)) / (4 * std::numbers::pi);
  double tiles = std::ldexp(1.0, level);
  auto clip = [&](double v) { return static_cast<std::uint32_t>(std::clamp(std::floor(v * tiles), 0.0, tiles - 1)); };
  return {level, clip(x), clip(y)};
}

// ---------------------------------------------------------------------------
// Time-window tile counts

enum class TimeWindow { w1 = 1, w2 = 2, w3 = 3 };  // 00-08, 08-16, 16-24

inline TimeWindow parse_window(std::string_view s) {
  std::string t = csv::trim(s);
  if (t == "W1" || t == "w1" || t == "1" || t == "00:00-08:00") return TimeWindow::w1;
  if (t == "W2" || t == "w2" || t == "2" || t == "08:00-16:00") return TimeWindow::w2;
  if (t == "W3" || t == "w3" || t == "3" || t == "16:00-24:00" || t == "16:00-00:00") return TimeWindow::w3;
  throw ParseError("unknown time window '" + t + "'");
}

inline const char* to_string(TimeWindow w) {
  switch (w) {
    case TimeWindow::w1: return "W1";
    case TimeWindow::w2: return "W2";
    case TimeWindow::w3: return "W3";
  }
  return "";
}

struct TileCount {
  std::string date;
  TimeWindow window = TimeWindow::w1;
  TileKey tile;
  double count = 0.0;
};

inline std::vector<TileCount> parse_tile_counts(std::string_view text, std::string_view origin = "tiles") {
  auto doc = csv::parse(text, origin);
  std::size_t c_date = doc.column("date", origin), c_win = doc.column("window", origin),
              c_key = doc.column("quadkey", origin), c_count = doc.column("count", origin);
  std::vector<TileCount> out;
  for (const auto& row : doc.rows) {
    std::string ctx = std::string(origin) + ":" + std::to_string(row.line);
    TileCount r;
    r.date = csv::trim(row.fields[c_date]);
    coverbias::detail::parse_date(r.date);
    try {
      r.window = parse_window(row.fields[c_win]);
      r.tile = TileKey::from_quadkey(csv::trim(row.fields[c_key]));
    } catch (const Error& e) {
      throw ParseError(ctx + ": " + e.what());
    }
    r.count = csv::to_real(row.fields[c_count], origin, row.line);
    if (r.count < 0) throw DomainError(ctx + ": negative count");
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<TileCount> load_tile_counts(const std::string& path) {
  return parse_tile_counts(csv::read_file(path), path);
}

struct WindowAverage {
  CountTable table;
  std::vector<std::string> unassigned;  // quadkeys whose centre lies in no area
  std::size_t dates = 0;
};

// Temporal mean per tile within the selected window (over the dates on which
// the tile reports), then each tile mean is assigned to the area containing
// the tile centre and summed per area.
inline WindowAverage window_average_counts(std::span<const TileCount> records, TimeWindow window,
                                           const AreaSet& areas, std::string source_id,
                                           ReferencePeriod period = {}) {
  struct Acc {
    TileKey tile;
    double sum = 0.0;
    std::size_t n = 0;
  };
  std::map<std::string, Acc> tiles;
  std::map<std::pair<std::string, std::string>, bool> seen;
  std::map<std::string, bool> dates;
  for (const auto& r : records) {
    if (r.window != window) continue;
    std::string qk = r.tile.quadkey();
    if (!seen.emplace(std::make_pair(r.date, qk), true).second)
      throw DuplicateKey("tile " + qk + " repeated on " + r.date + " window " + to_string(window));
    auto& acc = tiles[qk];
    acc.tile = r.tile;
    acc.sum += r.count;
    ++acc.n;
    dates[r.date] = true;
  }
  if (tiles.empty()) throw EmptySelection(std::string("no tile counts for window ") + to_string(window));

  WindowAverage out{CountTable(std::move(source_id), std::move(period)), {}, dates.size()};
  std::vector<double> sums(areas.size(), 0.0);
  for (const auto& [qk, acc] : tiles) {
    double mean = acc.sum / static_cast<double>(acc.n);
    auto idx = areas.locate(tile_center(acc.tile));
    if (!idx) {
      out.unassigned.push_back(qk);
      continue;
    }
    sums[*idx] += mean;
  }
  for (std::size_t i = 0; i < areas.size(); ++i) out.table.add(areas[i].id, sums[i]);
  return out;
}

}  // namespace coverbias::homeloc
