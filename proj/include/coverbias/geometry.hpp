#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "coverbias/error.hpp"

namespace coverbias::geo {

struct LonLat {
  double lon = 0.0;
  double lat = 0.0;

  friend bool operator==(const LonLat&, const LonLat&) = default;
};

// Closed ring: first vertex repeated as last.
using Ring = std::vector<LonLat>;

struct Polygon {
  Ring outer;
  std::vector<Ring> holes;
};

using MultiPolygon = std::vector<Polygon>;

struct BBox {
  double min_lon = std::numeric_limits<double>::infinity();
  double min_lat = std::numeric_limits<double>::infinity();
  double max_lon = -std::numeric_limits<double>::infinity();
  double max_lat = -std::numeric_limits<double>::infinity();

  void expand(const LonLat& p) {
    min_lon = std::min(min_lon, p.lon);
    min_lat = std::min(min_lat, p.lat);
    max_lon = std::max(max_lon, p.lon);
    max_lat = std::max(max_lat, p.lat);
  }
  bool contains(const LonLat& p, double eps = 0.0) const {
    return p.lon >= min_lon - eps && p.lon <= max_lon + eps && p.lat >= min_lat - eps &&
           p.lat <= max_lat + eps;
  }
  bool intersects(const BBox& o, double eps = 0.0) const {
    return !(o.min_lon > max_lon + eps || o.max_lon < min_lon - eps || o.min_lat > max_lat + eps ||
             o.max_lat < min_lat - eps);
  }
};

inline constexpr double kEarthRadiusKm = 6371.0088;

inline double haversine_km(const LonLat& a, const LonLat& b) {
  constexpr double rad = std::numbers::pi / 180.0;
  double dlat = (b.lat - a.lat) * rad;
  double dlon = (b.lon - a.lon) * rad;
  double s = std::sin(dlat / 2) * std::sin(dlat / 2) +
             std::cos(a.lat * rad) * std::cos(b.lat * rad) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(s)));
}

inline BBox bounds(const MultiPolygon& shape) {
  BBox box;
  for (const auto& poly : shape)
    for (const auto& p : poly.outer) box.expand(p);
  return box;
}

inline void validate_ring(const Ring& ring, const std::string& context) {
  if (ring.size() < 4)
    throw GeometryError(context + ": ring has " + std::to_string(ring.size()) + " vertices, need >= 4");
  if (!(ring.front() == ring.back())) throw GeometryError(context + ": ring is not closed");
  for (const auto& p : ring)
    if (!std::isfinite(p.lon) || !std::isfinite(p.lat))
      throw GeometryError(context + ": non-finite coordinate");
}

inline void validate(const MultiPolygon& shape, const std::string& context) {
  if (shape.empty()) throw GeometryError(context + ": empty geometry");
  for (const auto& poly : shape) {
    validate_ring(poly.outer, context);
    for (const auto& h : poly.holes) validate_ring(h, context);
  }
}

namespace detail {

inline double ring_signed_area(const Ring& ring) {
  double a = 0.0;
  for (std::size_t i = 0; i + 1 < ring.size(); ++i)
    a += ring[i].lon * ring[i + 1].lat - ring[i + 1].lon * ring[i].lat;
  return a / 2.0;
}

inline bool on_segment(const LonLat& p, const LonLat& a, const LonLat& b, double eps) {
  double cross = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon);
  double len = std::hypot(b.lon - a.lon, b.lat - a.lat);
  if (std::abs(cross) > eps * std::max(len, 1.0)) return false;
  return p.lon >= std::min(a.lon, b.lon) - eps && p.lon <= std::max(a.lon, b.lon) + eps &&
         p.lat >= std::min(a.lat, b.lat) - eps && p.lat <= std::max(a.lat, b.lat) + eps;
}

inline bool on_ring(const LonLat& p, const Ring& ring, double eps) {
  for (std::size_t i = 0; i + 1 < ring.size(); ++i)
    if (on_segment(p, ring[i], ring[i + 1], eps)) return true;
  return false;
}

// Even-odd crossing test; boundary handled by the caller.
inline bool inside_ring(const LonLat& p, const Ring& ring) {
  bool in = false;
  for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
    const auto& a = ring[i];
    const auto& b = ring[j];
    if ((a.lat > p.lat) != (b.lat > p.lat)) {
      double x = (b.lon - a.lon) * (p.lat - a.lat) / (b.lat - a.lat) + a.lon;
      if (p.lon < x) in = !in;
    }
  }
  return in;
}

}  // namespace detail

// Point-in-polygon with the boundary counted as inside.
inline bool contains(const MultiPolygon& shape, const LonLat& p, double eps = 1e-12) {
  for (const auto& poly : shape) {
    if (detail::on_ring(p, poly.outer, eps)) return true;
    if (!detail::inside_ring(p, poly.outer)) continue;
    bool in_hole = false;
    for (const auto& h : poly.holes) {
      if (detail::on_ring(p, h, eps)) return true;
      if (detail::inside_ring(p, h)) {
        in_hole = true;
        break;
      }
    }
    if (!in_hole) return true;
  }
  return false;
}

// Area-weighted planar centroid; vertex mean when the area vanishes.
inline LonLat centroid(const MultiPolygon& shape) {
  double area = 0.0, cx = 0.0, cy = 0.0;
  auto accumulate = [&](const Ring& ring, double sign) {
    double a = detail::ring_signed_area(ring);
    double orient = a < 0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
      double f = ring[i].lon * ring[i + 1].lat - ring[i + 1].lon * ring[i].lat;
      cx += sign * orient * (ring[i].lon + ring[i + 1].lon) * f;
      cy += sign * orient * (ring[i].lat + ring[i + 1].lat) * f;
    }
    area += sign * std::abs(a);
  };
  for (const auto& poly : shape) {
    accumulate(poly.outer, 1.0);
    for (const auto& h : poly.holes) accumulate(h, -1.0);
  }
  if (area > 1e-15) return {cx / (6.0 * area), cy / (6.0 * area)};

  double sx = 0.0, sy = 0.0;
  std::size_t n = 0;
  for (const auto& poly : shape)
    for (std::size_t i = 0; i + 1 < poly.outer.size(); ++i) {
      sx += poly.outer[i].lon;
      sy += poly.outer[i].lat;
      ++n;
    }
  return {sx / static_cast<double>(n), sy / static_cast<double>(n)};
}

// True when two shapes share at least one boundary point: a common vertex or a
// vertex of one lying on an edge of the other.
inline bool touches(const MultiPolygon& a, const MultiPolygon& b, double eps = 1e-9) {
  auto vertex_on_boundary = [eps](const MultiPolygon& from, const MultiPolygon& to) {
    for (const auto& pf : from)
      for (const auto& v : pf.outer)
        for (const auto& pt : to) {
          if (detail::on_ring(v, pt.outer, eps)) return true;
          for (const auto& h : pt.holes)
            if (detail::on_ring(v, h, eps)) return true;
        }
    return false;
  };
  return vertex_on_boundary(a, b) || vertex_on_boundary(b, a);
}

inline MultiPolygon rectangle(double min_lon, double min_lat, double max_lon, double max_lat) {
  Ring r{{min_lon, min_lat}, {max_lon, min_lat}, {max_lon, max_lat}, {min_lon, max_lat}, {min_lon, min_lat}};
  return {Polygon{std::move(r), {}}};
}

}  // namespace coverbias::geo
