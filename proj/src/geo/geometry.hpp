#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace fds::geo {

struct Point {
  double x = 0, y = 0;
  bool operator==(const Point&) const = default;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Open ring (last vertex != first); closing duplicates are stripped on load.
using Ring = std::vector<Point>;

struct BBox {
  double min_x, min_y, max_x, max_y;

  /// Closed-interval overlap; touching edges count.
  bool intersects(const BBox& o) const {
    return max_x >= o.min_x && min_x <= o.max_x && max_y >= o.min_y && min_y <= o.max_y;
  }
};

struct Polygon {
  Ring outer;
  std::vector<Ring> holes;

  BBox bbox() const;
  /// Area of the outer ring minus the holes.
  double area() const;
  Point centroid() const;
  /// Even-odd crossing rule over all rings. Axis-aligned rectangles are
  /// half-open, [x0, x1) x [y0, y1), so abutting footprints never share a
  /// pixel center.
  bool contains(Point p) const;
};

/// Throws DataError unless every ring has >= 3 distinct vertices, no edge
/// crosses another, and the area is positive.
void validate(const Polygon& poly);

/// x where the edge (a, b) crosses the horizontal line at y, for edges with
/// (a.y > y) != (b.y > y). Shared by containment tests and scanlines so both
/// make identical decisions.
inline double edge_crossing_x(Point a, Point b, double y) { return a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y); }

/// Sorted crossings of the horizontal line at y with every ring of `poly`.
std::vector<double> scanline_crossings(const Polygon& poly, double y);

struct Footprint {
  std::int64_t id = 0;
  Polygon polygon;
  Point centroid;
};

Footprint make_footprint(std::int64_t id, Polygon polygon);
/// Axis-aligned rectangle footprint.
Footprint rectangle(std::int64_t id, double x0, double y0, double x1, double y1);

/// North-up raster grid: pixel (row, col) has its center at
/// (origin_x + (col + 0.5) * pixel, origin_y - (row + 0.5) * pixel).
struct GridSpec {
  std::size_t width = 0, height = 0;
  double origin_x = 0, origin_y = 0, pixel = 1;

  Point center(std::size_t row, std::size_t col) const;
  /// Area covered by the raster, from its north-west corner.
  BBox extent() const;
  void validate() const;
  bool operator==(const GridSpec&) const = default;
};

nlohmann::json grid_to_json(const GridSpec& g);
GridSpec grid_from_json(const nlohmann::json& j);

/// Flat indices (row * width + col) of pixels whose centers `poly` contains,
/// ascending. Enumerates candidate rows by scanline within the bounding box.
std::vector<std::size_t> pixels_in(const Polygon& poly, const GridSpec& grid);

/// Uniform bucket index over points; cell size should be about the query radius.
class GridIndex {
 public:
  GridIndex(std::span<const Point> pts, double cell);

  /// Indices of points within `radius` of q (inclusive), ascending.
  std::vector<std::size_t> within(Point q, double radius) const;

 private:
  static std::int64_t key(std::int64_t cx, std::int64_t cy) { return cx * 4294967296LL + (cy & 0xffffffffLL); }
  std::vector<Point> pts_;
  double cell_;
  std::unordered_map<std::int64_t, std::vector<std::size_t>> buckets_;
};

/// GeoJSON FeatureCollection of Polygons with an integer "id" property.
std::vector<Footprint> footprints_from_geojson(const nlohmann::json& j);
nlohmann::json polygon_to_geojson(const Polygon& p);
nlohmann::json footprints_to_geojson(std::span<const Footprint> fps);

nlohmann::json read_json(const std::filesystem::path& path);
/// Two-space indented, trailing newline; identical inputs give identical bytes.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace fds::geo
