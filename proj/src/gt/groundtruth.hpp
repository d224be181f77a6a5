#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "geo/geometry.hpp"

namespace fds::gt {

struct PdePoint {
  std::int64_t id = 0;
  double x = 0, y = 0;
  double pde = 0;  // in [0, 1]
};

enum class Source { Direct, Nearest, Imputed, None };
const char* source_name(Source s);
Source parse_source(const std::string& s);

/// One per footprint, in footprint order.
struct DamageAssignment {
  std::int64_t footprint_id = 0;
  std::optional<double> pde;
  Source source = Source::None;
  std::uint8_t damage_class = 0;  // 0 none, 1 minor, 2 moderate, 3 major

  bool operator==(const DamageAssignment&) const = default;
};

struct ImputeConfig {
  std::size_t k = 5;
  double d = 100.0;      // meters
  std::size_t k_min = 5;
  double d_max = 100.0;  // nearest-point cap, meters
  std::size_t classes = 3;
};

/// Points inside a footprint are averaged; footprints without one stay None.
std::vector<DamageAssignment> spatial_join(std::span<const PdePoint> points, std::span<const geo::Footprint> fps);

/// Unassigned footprints take the PDE of the point nearest their centroid
/// within d_max; equidistant points resolve to the lower index. Points may
/// serve several footprints.
void nearest_assign(std::vector<DamageAssignment>& a, std::span<const geo::Footprint> fps,
                    std::span<const PdePoint> points, double d_max);

/// Single pass: each None footprint with at least k_min Direct/Nearest
/// centroids within d gets the 1/max(dist, 1 m)-weighted mean of the k
/// nearest (ties by lower footprint index). Imputed values never seed others.
void knn_impute(std::vector<DamageAssignment>& a, std::span<const geo::Footprint> fps, std::size_t k, double d,
                std::size_t k_min);

struct KMeans1d {
  std::vector<double> centroids;    // ascending
  std::vector<double> upper_bounds; // largest member of clusters 0..K-2
  double wcss = 0;

  /// 1-based class: the first cluster whose upper bound is >= v.
  std::uint8_t classify(double v) const;
};

/// Exact 1-D k-means by dynamic programming over the sorted distinct values.
/// Throws DataError with fewer than K distinct values.
KMeans1d kmeans_1d(std::span<const double> values, std::size_t K);
/// Within-cluster sum of squares for K = 1..max_k (capped at the distinct count).
std::vector<double> elbow_curve(std::span<const double> values, std::size_t max_k = 8);

/// Assigns classes 1..K to footprints with a PDE and 0 to the rest.
void apply_classes(std::vector<DamageAssignment>& a, const KMeans1d& km);

struct PipelineResult {
  std::vector<DamageAssignment> assignments;
  std::optional<KMeans1d> bins;  // absent when there were no PDE values
};

/// Join, nearest, impute, then bin every PDE (imputed included).
PipelineResult run_pipeline(std::span<const PdePoint> points, std::span<const geo::Footprint> fps,
                            const ImputeConfig& cfg);

enum class RasterTask { Bda, Loc };

/// BDA: building pixels carry the class, others 255 (overlaps keep the
/// highest class). LOC: building 1, background 0.
std::vector<std::uint8_t> rasterize_labels(std::span<const DamageAssignment> a, std::span<const geo::Footprint> fps,
                                           const geo::GridSpec& grid, RasterTask task);

// I/O. Points are CSV with header id,x,y,pde.
std::vector<PdePoint> read_points_csv(const std::filesystem::path& path);
void write_points_csv(const std::filesystem::path& path, std::span<const PdePoint> points);
nlohmann::json assignments_to_geojson(std::span<const DamageAssignment> a, std::span<const geo::Footprint> fps);
std::vector<DamageAssignment> assignments_from_geojson(const nlohmann::json& j);
/// Footprints with a bare {id, damage_class} property set.
nlohmann::json class_layer_to_geojson(std::span<const geo::Footprint> fps, std::span<const std::uint8_t> classes);
/// Reads id -> damage_class from any FeatureCollection carrying both properties.
std::map<std::int64_t, std::uint8_t> classes_from_geojson(const nlohmann::json& j);

}  // namespace fds::gt
