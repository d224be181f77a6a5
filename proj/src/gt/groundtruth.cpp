#include "gt/groundtruth.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "common/errors.hpp"

namespace fds::gt {

const char* source_name(Source s) {
  switch (s) {
    case Source::Direct: return "direct";
    case Source::Nearest: return "nearest";
    case Source::Imputed: return "imputed";
    case Source::None: return "none";
  }
  return "?";
}

Source parse_source(const std::string& s) {
  for (auto v : {Source::Direct, Source::Nearest, Source::Imputed, Source::None})
    if (s == source_name(v)) return v;
  throw DataError("unknown assignment source '" + s + "'");
}

namespace {

// Footprints bucketed by every grid cell their bounding box touches.
class BBoxIndex {
 public:
  BBoxIndex(std::span<const geo::Footprint> fps, double cell) : cell_(cell) {
    for (std::size_t i = 0; i < fps.size(); ++i) {
      const auto b = fps[i].polygon.bbox();
      for (auto cx = cell_of(b.min_x); cx <= cell_of(b.max_x); ++cx)
        for (auto cy = cell_of(b.min_y); cy <= cell_of(b.max_y); ++cy) buckets_[{cx, cy}].push_back(i);
    }
  }
  const std::vector<std::size_t>* at(geo::Point p) const {
    auto it = buckets_.find({cell_of(p.x), cell_of(p.y)});
    return it == buckets_.end() ? nullptr : &it->second;
  }

 private:
  std::int64_t cell_of(double v) const { return static_cast<std::int64_t>(std::floor(v / cell_)); }
  double cell_;
  std::map<std::pair<std::int64_t, std::int64_t>, std::vector<std::size_t>> buckets_;
};

void check_point(const PdePoint& p) {
  if (!std::isfinite(p.x) || !std::isfinite(p.y))
    throw DataError("PDE point " + std::to_string(p.id) + " has a non-finite coordinate");
  if (!(p.pde >= 0.0 && p.pde <= 1.0))
    throw DataError("PDE point " + std::to_string(p.id) + " has pde " + std::to_string(p.pde) + " outside [0, 1]");
}

}  // namespace

std::vector<DamageAssignment> spatial_join(std::span<const PdePoint> points, std::span<const geo::Footprint> fps) {
  std::vector<DamageAssignment> out(fps.size());
  std::vector<double> sum(fps.size(), 0.0);
  std::vector<std::size_t> count(fps.size(), 0);
  const BBoxIndex index(fps, 50.0);
  for (const auto& p : points) {
    check_point(p);
    const auto* cand = index.at({p.x, p.y});
    if (!cand) continue;
    for (auto i : *cand)
      if (fps[i].polygon.contains({p.x, p.y})) {
        sum[i] += p.pde;
        ++count[i];
      }
  }
  for (std::size_t i = 0; i < fps.size(); ++i) {
    out[i].footprint_id = fps[i].id;
    if (count[i] > 0) {
      out[i].pde = sum[i] / static_cast<double>(count[i]);
      out[i].source = Source::Direct;
    }
  }
  return out;
}

void nearest_assign(std::vector<DamageAssignment>& a, std::span<const geo::Footprint> fps,
                    std::span<const PdePoint> points, double d_max) {
  if (a.size() != fps.size()) throw ShapeError("nearest_assign: one assignment per footprint expected");
  if (points.empty()) return;
  std::vector<geo::Point> pts;
  for (const auto& p : points) pts.push_back({p.x, p.y});
  const geo::GridIndex index(pts, d_max > 0 ? d_max : 1.0);
  for (std::size_t i = 0; i < fps.size(); ++i) {
    if (a[i].source != Source::None) continue;
    std::size_t best = points.size();
    double best_d = std::numeric_limits<double>::infinity();
    for (auto j : index.within(fps[i].centroid, d_max)) {
      const double dj = geo::distance(fps[i].centroid, pts[j]);
      if (dj < best_d) {
        best_d = dj;
        best = j;
      }
    }
    if (best == points.size()) continue;
    a[i].pde = points[best].pde;
    a[i].source = Source::Nearest;
  }
}

void knn_impute(std::vector<DamageAssignment>& a, std::span<const geo::Footprint> fps, std::size_t k, double d,
                std::size_t k_min) {
  if (a.size() != fps.size()) throw ShapeError("knn_impute: one assignment per footprint expected");
  if (k == 0 || k_min == 0 || !(d > 0)) throw UsageError("knn_impute: k, k_min and d must be positive");
  std::vector<std::size_t> donors;
  std::vector<geo::Point> anchors;
  for (std::size_t i = 0; i < fps.size(); ++i)
    if (a[i].source == Source::Direct || a[i].source == Source::Nearest) {
      donors.push_back(i);
      anchors.push_back(fps[i].centroid);
    }
  if (donors.empty()) return;
  const geo::GridIndex index(anchors, d);
  std::vector<DamageAssignment> next = a;
  for (std::size_t i = 0; i < fps.size(); ++i) {
    if (a[i].source != Source::None) continue;
    const auto near = index.within(fps[i].centroid, d);
    if (near.size() < k_min) continue;
    std::vector<std::pair<double, std::size_t>> ranked;
    for (auto j : near) ranked.push_back({geo::distance(fps[i].centroid, anchors[j]), j});
    std::sort(ranked.begin(), ranked.end());
    double num = 0.0, den = 0.0;
    for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
      const double w = 1.0 / std::max(ranked[r].first, 1.0);
      num += w * *a[donors[ranked[r].second]].pde;
      den += w;
    }
    next[i].pde = num / den;
    next[i].source = Source::Imputed;
  }
  a = std::move(next);
}

std::uint8_t KMeans1d::classify(double v) const {
  for (std::size_t c = 0; c < upper_bounds.size(); ++c)
    if (v <= upper_bounds[c]) return static_cast<std::uint8_t>(c + 1);
  return static_cast<std::uint8_t>(centroids.size());
}

namespace {

struct Distinct {
  std::vector<double> value, count;
};

Distinct distinct_sorted(std::span<const double> values) {
  std::vector<double> v(values.begin(), values.end());
  for (double x : v)
    if (!std::isfinite(x)) throw DataError("k-means: non-finite value");
  std::sort(v.begin(), v.end());
  Distinct d;
  for (double x : v) {
    if (d.value.empty() || d.value.back() != x) {
      d.value.push_back(x);
      d.count.push_back(0);
    }
    ++d.count.back();
  }
  return d;
}

// Optimal partition of the distinct values into K contiguous runs; returns
// the start index of each run.
std::vector<std::size_t> optimal_runs(const Distinct& d, std::size_t K) {
  const std::size_t m = d.value.size();
  std::vector<double> c(m + 1, 0), s(m + 1, 0), q(m + 1, 0);
  for (std::size_t i = 0; i < m; ++i) {
    c[i + 1] = c[i] + d.count[i];
    s[i + 1] = s[i] + d.count[i] * d.value[i];
    q[i + 1] = q[i] + d.count[i] * d.value[i] * d.value[i];
  }
  // Weighted SSE of distinct values [i, j).
  auto cost = [&](std::size_t i, std::size_t j) {
    const double n = c[j] - c[i], sum = s[j] - s[i];
    return std::max(0.0, (q[j] - q[i]) - sum * sum / n);
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> D(K + 1, std::vector<double>(m + 1, inf));
  std::vector<std::vector<std::size_t>> arg(K + 1, std::vector<std::size_t>(m + 1, 0));
  D[0][0] = 0.0;
  for (std::size_t k = 1; k <= K; ++k)
    for (std::size_t j = k; j <= m; ++j)
      for (std::size_t i = k - 1; i < j; ++i) {
        const double v = D[k - 1][i] + cost(i, j);
        if (v < D[k][j]) {
          D[k][j] = v;
          arg[k][j] = i;
        }
      }
  std::vector<std::size_t> starts(K);
  std::size_t j = m;
  for (std::size_t k = K; k >= 1; --k) {
    starts[k - 1] = arg[k][j];
    j = arg[k][j];
  }
  return starts;
}

KMeans1d summarize(const Distinct& d, const std::vector<std::size_t>& starts) {
  KMeans1d km;
  const std::size_t K = starts.size(), m = d.value.size();
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t end = k + 1 < K ? starts[k + 1] : m;
    double n = 0, sum = 0;
    for (std::size_t i = starts[k]; i < end; ++i) {
      n += d.count[i];
      sum += d.count[i] * d.value[i];
    }
    const double mu = sum / n;
    km.centroids.push_back(mu);
    for (std::size_t i = starts[k]; i < end; ++i) km.wcss += d.count[i] * (d.value[i] - mu) * (d.value[i] - mu);
    if (k + 1 < K) km.upper_bounds.push_back(d.value[end - 1]);
  }
  return km;
}

}  // namespace

KMeans1d kmeans_1d(std::span<const double> values, std::size_t K) {
  if (K == 0) throw UsageError("k-means: K must be positive");
  const auto d = distinct_sorted(values);
  if (d.value.size() < K)
    throw DataError("k-means: " + std::to_string(d.value.size()) + " distinct values for K = " + std::to_string(K));
  return summarize(d, optimal_runs(d, K));
}

std::vector<double> elbow_curve(std::span<const double> values, std::size_t max_k) {
  const auto d = distinct_sorted(values);
  std::vector<double> out;
  for (std::size_t K = 1; K <= std::min(max_k, d.value.size()); ++K) out.push_back(summarize(d, optimal_runs(d, K)).wcss);
  return out;
}

void apply_classes(std::vector<DamageAssignment>& a, const KMeans1d& km) {
  for (auto& x : a) x.damage_class = x.pde ? km.classify(*x.pde) : 0;
}

PipelineResult run_pipeline(std::span<const PdePoint> points, std::span<const geo::Footprint> fps,
                            const ImputeConfig& cfg) {
  PipelineResult r;
  r.assignments = spatial_join(points, fps);
  nearest_assign(r.assignments, fps, points, cfg.d_max);
  knn_impute(r.assignments, fps, cfg.k, cfg.d, cfg.k_min);
  std::vector<double> pdes;
  for (const auto& x : r.assignments)
    if (x.pde) pdes.push_back(*x.pde);
  if (!pdes.empty()) {
    r.bins = kmeans_1d(pdes, cfg.classes);
    apply_classes(r.assignments, *r.bins);
  }
  return r;
}

std::vector<std::uint8_t> rasterize_labels(std::span<const DamageAssignment> a, std::span<const geo::Footprint> fps,
                                           const geo::GridSpec& grid, RasterTask task) {
  grid.validate();
  if (a.size() != fps.size()) throw ShapeError("rasterize_labels: one assignment per footprint expected");
  std::vector<std::uint8_t> out(grid.width * grid.height, task == RasterTask::Bda ? 255 : 0);
  std::vector<bool> set(out.size(), false);
  for (std::size_t i = 0; i < fps.size(); ++i)
    for (auto px : geo::pixels_in(fps[i].polygon, grid)) {
      if (task == RasterTask::Loc) {
        out[px] = 1;
      } else if (!set[px] || a[i].damage_class > out[px]) {
        out[px] = a[i].damage_class;
      }
      set[px] = true;
    }
  return out;
}

std::vector<PdePoint> read_points_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "id,x,y,pde") throw DataError(path.string() + ": header must be 'id,x,y,pde'");
  std::vector<PdePoint> out;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    auto where = [&] { return path.string() + ":" + std::to_string(lineno); };
    if (f.size() != 4) throw DataError(where() + ": expected 4 fields");
    PdePoint p;
    try {
      std::size_t used = 0;
      p.id = std::stoll(f[0], &used);
      if (used != f[0].size()) throw std::invalid_argument("id");
      p.x = std::stod(f[1]);
      p.y = std::stod(f[2]);
      p.pde = std::stod(f[3]);
    } catch (const std::exception&) {
      throw DataError(where() + ": malformed number");
    }
    try {
      check_point(p);
    } catch (const DataError& e) {
      throw DataError(where() + ": " + e.what());
    }
    out.push_back(p);
  }
  return out;
}

void write_points_csv(const std::filesystem::path& path, std::span<const PdePoint> points) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "id,x,y,pde\n";
  char buf[64];
  auto num = [&](double v) {
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  };
  for (const auto& p : points) out << p.id << ',' << num(p.x) << ',' << num(p.y) << ',' << num(p.pde) << '\n';
}

nlohmann::json assignments_to_geojson(std::span<const DamageAssignment> a, std::span<const geo::Footprint> fps) {
  if (a.size() != fps.size()) throw ShapeError("assignments_to_geojson: one assignment per footprint expected");
  nlohmann::json features = nlohmann::json::array();
  for (std::size_t i = 0; i < a.size(); ++i) {
    nlohmann::json props = {{"id", a[i].footprint_id},
                            {"pde", a[i].pde ? nlohmann::json(*a[i].pde) : nlohmann::json(nullptr)},
                            {"source", source_name(a[i].source)},
                            {"damage_class", a[i].damage_class}};
    features.push_back({{"type", "Feature"}, {"properties", props}, {"geometry", geo::polygon_to_geojson(fps[i].polygon)}});
  }
  return {{"type", "FeatureCollection"}, {"features", features}};
}

std::vector<DamageAssignment> assignments_from_geojson(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("features")) throw DataError("assignments: expected a FeatureCollection");
  std::vector<DamageAssignment> out;
  for (const auto& f : j["features"]) {
    try {
      const auto& p = f.at("properties");
      DamageAssignment a;
      a.footprint_id = p.at("id").get<std::int64_t>();
      if (!p.at("pde").is_null()) a.pde = p["pde"].get<double>();
      a.source = parse_source(p.at("source").get<std::string>());
      a.damage_class = p.at("damage_class").get<std::uint8_t>();
      if (a.damage_class > 3) throw DataError("damage_class above 3");
      out.push_back(a);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("assignments: ") + e.what());
    }
  }
  return out;
}

nlohmann::json class_layer_to_geojson(std::span<const geo::Footprint> fps, std::span<const std::uint8_t> classes) {
  if (fps.size() != classes.size()) throw ShapeError("class layer: one class per footprint expected");
  nlohmann::json features = nlohmann::json::array();
  for (std::size_t i = 0; i < fps.size(); ++i)
    features.push_back({{"type", "Feature"},
                        {"properties", {{"id", fps[i].id}, {"damage_class", classes[i]}}},
                        {"geometry", geo::polygon_to_geojson(fps[i].polygon)}});
  return {{"type", "FeatureCollection"}, {"features", features}};
}

std::map<std::int64_t, std::uint8_t> classes_from_geojson(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("features")) throw DataError("class layer: expected a FeatureCollection");
  std::map<std::int64_t, std::uint8_t> out;
  for (const auto& f : j["features"]) {
    try {
      const auto& p = f.at("properties");
      const auto& cls = p.at("damage_class");
      if (cls.is_null()) continue;
      const auto v = cls.get<int>();
      if (v < 0 || v > 3) throw DataError("class layer: damage_class " + std::to_string(v) + " outside 0..3");
      out[p.at("id").get<std::int64_t>()] = static_cast<std::uint8_t>(v);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("class layer: ") + e.what());
    }
  }
  return out;
}

}  // namespace fds::gt
