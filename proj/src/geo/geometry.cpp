#include "geo/geometry.hpp"

#include <algorithm>
#include <fstream>
#include <string>

#include "common/errors.hpp"

namespace fds::geo {

namespace {

double signed_area(const Ring& r) {
  double a = 0.0;
  for (std::size_t i = 0, n = r.size(); i < n; ++i) {
    const Point& p = r[i];
    const Point& q = r[(i + 1) % n];
    a += p.x * q.y - q.x * p.y;
  }
  return 0.5 * a;
}

double cross(Point o, Point a, Point b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

bool on_segment(Point p, Point a, Point b) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

int sign(double v) { return (v > 0) - (v < 0); }

bool segments_touch(Point a, Point b, Point c, Point d) {
  const int d1 = sign(cross(c, d, a)), d2 = sign(cross(c, d, b));
  const int d3 = sign(cross(a, b, c)), d4 = sign(cross(a, b, d));
  if (d1 != d2 && d3 != d4 && d1 != 0 && d2 != 0 && d3 != 0 && d4 != 0) return true;
  return (d1 == 0 && on_segment(a, c, d)) || (d2 == 0 && on_segment(b, c, d)) ||
         (d3 == 0 && on_segment(c, a, b)) || (d4 == 0 && on_segment(d, a, b));
}

Ring ring_from_json(const nlohmann::json& coords, std::int64_t id) {
  if (!coords.is_array()) throw DataError("footprint " + std::to_string(id) + ": ring is not an array");
  Ring r;
  for (const auto& c : coords) {
    if (!c.is_array() || c.size() < 2 || !c[0].is_number() || !c[1].is_number())
      throw DataError("footprint " + std::to_string(id) + ": malformed coordinate");
    r.push_back({c[0].get<double>(), c[1].get<double>()});
  }
  if (r.size() > 1 && r.front() == r.back()) r.pop_back();
  return r;
}

nlohmann::json ring_to_json(const Ring& r) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& p : r) out.push_back({p.x, p.y});
  if (!r.empty()) out.push_back({r.front().x, r.front().y});
  return out;
}

}  // namespace

BBox Polygon::bbox() const {
  BBox b{outer.at(0).x, outer.at(0).y, outer.at(0).x, outer.at(0).y};
  for (const auto& p : outer) {
    b.min_x = std::min(b.min_x, p.x);
    b.max_x = std::max(b.max_x, p.x);
    b.min_y = std::min(b.min_y, p.y);
    b.max_y = std::max(b.max_y, p.y);
  }
  return b;
}

double Polygon::area() const {
  double a = std::abs(signed_area(outer));
  for (const auto& h : holes) a -= std::abs(signed_area(h));
  return a;
}

Point Polygon::centroid() const {
  double cx = 0, cy = 0, total = 0;
  auto accumulate = [&](const Ring& r, double sgn) {
    const double a = signed_area(r);
    const double s = a >= 0 ? sgn : -sgn;  // orientation-independent
    for (std::size_t i = 0, n = r.size(); i < n; ++i) {
      const Point& p = r[i];
      const Point& q = r[(i + 1) % n];
      const double c = p.x * q.y - q.x * p.y;
      cx += s * (p.x + q.x) * c;
      cy += s * (p.y + q.y) * c;
    }
    total += s * 2.0 * a;
  };
  accumulate(outer, 1.0);
  for (const auto& h : holes) accumulate(h, -1.0);
  return {cx / (3.0 * total), cy / (3.0 * total)};
}

bool Polygon::contains(Point p) const {
  bool inside = false;
  auto ring = [&](const Ring& r) {
    for (std::size_t i = 0, n = r.size(); i < n; ++i) {
      const Point& a = r[i];
      const Point& b = r[(i + 1) % n];
      if ((a.y > p.y) != (b.y > p.y) && p.x < edge_crossing_x(a, b, p.y)) inside = !inside;
    }
  };
  ring(outer);
  for (const auto& h : holes) ring(h);
  return inside;
}

std::vector<double> scanline_crossings(const Polygon& poly, double y) {
  std::vector<double> xs;
  auto ring = [&](const Ring& r) {
    for (std::size_t i = 0, n = r.size(); i < n; ++i) {
      const Point& a = r[i];
      const Point& b = r[(i + 1) % n];
      if ((a.y > y) != (b.y > y)) xs.push_back(edge_crossing_x(a, b, y));
    }
  };
  ring(poly.outer);
  for (const auto& h : poly.holes) ring(h);
  std::sort(xs.begin(), xs.end());
  return xs;
}

void validate(const Polygon& poly) {
  std::vector<const Ring*> rings{&poly.outer};
  for (const auto& h : poly.holes) rings.push_back(&h);
  for (const auto* r : rings) {
    if (r->size() < 3) throw DataError("polygon ring has fewer than 3 vertices");
    for (const auto& p : *r)
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw DataError("polygon has a non-finite coordinate");
  }
  struct Edge {
    Point a, b;
    std::size_t ring, index, ring_size;
  };
  std::vector<Edge> edges;
  for (std::size_t ri = 0; ri < rings.size(); ++ri)
    for (std::size_t i = 0, n = rings[ri]->size(); i < n; ++i)
      edges.push_back({(*rings[ri])[i], (*rings[ri])[(i + 1) % n], ri, i, n});
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (edges[i].a == edges[i].b) throw DataError("polygon has a repeated vertex");
    for (std::size_t j = i + 1; j < edges.size(); ++j) {
      const auto& e = edges[i];
      const auto& f = edges[j];
      if (e.ring == f.ring) {
        const std::size_t n = e.ring_size;
        const bool adjacent = (e.index + 1) % n == f.index || (f.index + 1) % n == e.index;
        if (adjacent) {
          // Adjacent edges may only share their common vertex.
          const Point shared = (e.index + 1) % n == f.index ? e.b : e.a;
          const Point e_far = shared == e.a ? e.b : e.a, f_far = shared == f.a ? f.b : f.a;
          if (cross(shared, e_far, f_far) == 0 &&
              (on_segment(f_far, shared, e_far) || on_segment(e_far, shared, f_far)))
            throw DataError("polygon ring folds back on itself");
          continue;
        }
      }
      if (segments_touch(e.a, e.b, f.a, f.b)) throw DataError("polygon edges intersect");
    }
  }
  if (!(poly.area() > 0)) throw DataError("polygon has zero area");
}

Footprint make_footprint(std::int64_t id, Polygon polygon) {
  try {
    validate(polygon);
  } catch (const DataError& e) {
    throw DataError("footprint " + std::to_string(id) + ": " + e.what());
  }
  const Point c = polygon.centroid();
  return {id, std::move(polygon), c};
}

Footprint rectangle(std::int64_t id, double x0, double y0, double x1, double y1) {
  return make_footprint(id, Polygon{{{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}, {}});
}

Point GridSpec::center(std::size_t row, std::size_t col) const {
  return {origin_x + (static_cast<double>(col) + 0.5) * pixel, origin_y - (static_cast<double>(row) + 0.5) * pixel};
}

BBox GridSpec::extent() const {
  return {origin_x, origin_y - static_cast<double>(height) * pixel, origin_x + static_cast<double>(width) * pixel,
          origin_y};
}

void GridSpec::validate() const {
  if (width == 0 || height == 0) throw DataError("grid must have positive width and height");
  if (!(pixel > 0) || !std::isfinite(pixel)) throw DataError("grid pixel size must be positive");
  if (!std::isfinite(origin_x) || !std::isfinite(origin_y)) throw DataError("grid origin must be finite");
}

nlohmann::json grid_to_json(const GridSpec& g) {
  return {{"width", g.width}, {"height", g.height}, {"origin_x", g.origin_x},
          {"origin_y", g.origin_y}, {"pixel_size", g.pixel}, {"nodata", 255}};
}

GridSpec grid_from_json(const nlohmann::json& j) {
  GridSpec g;
  try {
    g.width = j.at("width").get<std::size_t>();
    g.height = j.at("height").get<std::size_t>();
    g.origin_x = j.at("origin_x").get<double>();
    g.origin_y = j.at("origin_y").get<double>();
    g.pixel = j.at("pixel_size").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("grid header: ") + e.what());
  }
  g.validate();
  return g;
}

std::vector<std::size_t> pixels_in(const Polygon& poly, const GridSpec& grid) {
  const BBox b = poly.bbox();
  auto clamp_index = [](double v, std::size_t n) -> std::size_t {
    if (v < 0) return 0;
    if (v >= static_cast<double>(n)) return n;
    return static_cast<std::size_t>(v);
  };
  // Candidate rows/cols, padded by one so the containment rule decides edges.
  const std::size_t r0 = clamp_index(std::floor((grid.origin_y - b.max_y) / grid.pixel - 0.5) - 1, grid.height);
  const std::size_t r1 = clamp_index(std::ceil((grid.origin_y - b.min_y) / grid.pixel - 0.5) + 2, grid.height);
  const std::size_t c0 = clamp_index(std::floor((b.min_x - grid.origin_x) / grid.pixel - 0.5) - 1, grid.width);
  const std::size_t c1 = clamp_index(std::ceil((b.max_x - grid.origin_x) / grid.pixel - 0.5) + 2, grid.width);
  std::vector<std::size_t> out;
  for (std::size_t r = r0; r < r1; ++r) {
    const double y = grid.center(r, 0).y;
    const auto xs = scanline_crossings(poly, y);
    if (xs.empty()) continue;
    for (std::size_t c = c0; c < c1; ++c) {
      const double x = grid.center(r, c).x;
      // Inside iff an odd number of crossings lies strictly right of x.
      const auto right = static_cast<std::size_t>(xs.end() - std::upper_bound(xs.begin(), xs.end(), x));
      if (right % 2 == 1) out.push_back(r * grid.width + c);
    }
  }
  return out;
}

GridIndex::GridIndex(std::span<const Point> pts, double cell) : pts_(pts.begin(), pts.end()), cell_(cell) {
  if (!(cell > 0)) throw UsageError("spatial index cell size must be positive");
  for (std::size_t i = 0; i < pts_.size(); ++i)
    buckets_[key(static_cast<std::int64_t>(std::floor(pts_[i].x / cell_)),
                 static_cast<std::int64_t>(std::floor(pts_[i].y / cell_)))]
        .push_back(i);
}

std::vector<std::size_t> GridIndex::within(Point q, double radius) const {
  std::vector<std::size_t> out;
  const auto x0 = static_cast<std::int64_t>(std::floor((q.x - radius) / cell_));
  const auto x1 = static_cast<std::int64_t>(std::floor((q.x + radius) / cell_));
  const auto y0 = static_cast<std::int64_t>(std::floor((q.y - radius) / cell_));
  const auto y1 = static_cast<std::int64_t>(std::floor((q.y + radius) / cell_));
  for (auto cx = x0; cx <= x1; ++cx)
    for (auto cy = y0; cy <= y1; ++cy) {
      auto it = buckets_.find(key(cx, cy));
      if (it == buckets_.end()) continue;
      for (auto i : it->second)
        if (distance(q, pts_[i]) <= radius) out.push_back(i);
    }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Footprint> footprints_from_geojson(const nlohmann::json& j) {
  if (!j.is_object() || j.value("type", "") != "FeatureCollection" || !j.contains("features"))
    throw DataError("footprints: expected a GeoJSON FeatureCollection");
  std::vector<Footprint> out;
  for (const auto& f : j["features"]) {
    if (!f.contains("properties") || !f["properties"].contains("id") || !f["properties"]["id"].is_number_integer())
      throw DataError("footprints: feature without an integer 'id' property");
    const auto id = f["properties"]["id"].get<std::int64_t>();
    const auto& g = f.value("geometry", nlohmann::json{});
    if (!g.is_object() || g.value("type", "") != "Polygon" || !g.contains("coordinates") ||
        !g["coordinates"].is_array() || g["coordinates"].empty())
      throw DataError("footprint " + std::to_string(id) + ": geometry must be a Polygon");
    Polygon poly;
    poly.outer = ring_from_json(g["coordinates"][0], id);
    for (std::size_t i = 1; i < g["coordinates"].size(); ++i) poly.holes.push_back(ring_from_json(g["coordinates"][i], id));
    out.push_back(make_footprint(id, std::move(poly)));
  }
  return out;
}

nlohmann::json polygon_to_geojson(const Polygon& p) {
  nlohmann::json coords = nlohmann::json::array();
  coords.push_back(ring_to_json(p.outer));
  for (const auto& h : p.holes) coords.push_back(ring_to_json(h));
  return {{"type", "Polygon"}, {"coordinates", coords}};
}

nlohmann::json footprints_to_geojson(std::span<const Footprint> fps) {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& f : fps)
    features.push_back({{"type", "Feature"}, {"properties", {{"id", f.id}}}, {"geometry", polygon_to_geojson(f.polygon)}});
  return {{"type", "FeatureCollection"}, {"features", features}};
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace fds::geo
