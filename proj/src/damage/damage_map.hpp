#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "geo/geometry.hpp"
#include "geo/raster.hpp"

namespace fds::damage {

enum class Stat { Median, Mean, Mode, Max };
const char* stat_name(Stat s);
Stat parse_stat(const std::string& s);

struct QualityConfig {
  std::size_t min_pixels = 4;
  double var_threshold = 0.5;
};

struct Flags {
  bool low_coverage = false;
  bool high_disagreement = false;
  bool operator==(const Flags&) const = default;
};

struct BuildingDamageRecord {
  std::int64_t footprint_id = 0;
  std::optional<std::uint8_t> damage_class;  // absent when no valid pixel
  std::size_t pixel_count = 0;
  double label_variance = 0;  // population variance of the pixel labels
  Flags flags;
  bool operator==(const BuildingDamageRecord&) const = default;
};

/// Collapses a non-empty label multiset. Median takes the upper middle on
/// even counts, mean rounds half up, mode breaks ties toward the higher class.
std::uint8_t summarize(std::span<const std::uint8_t> labels, Stat stat);

Flags quality_flags(std::size_t pixel_count, double label_variance, const QualityConfig& q);

/// One record per footprint, in footprint order, from the valid (non-255)
/// pixels whose centers fall inside it. Throws DataError when no footprint
/// reaches the raster extent, the usual sign of mismatched georeferencing.
std::vector<BuildingDamageRecord> aggregate(const geo::LabelRaster& pred, std::span<const geo::Footprint> fps,
                                            Stat stat = Stat::Median, const QualityConfig& q = {},
                                            unsigned threads = 1);
/// Same over a set of rasters (tiles of one scene): each footprint pools its
/// valid pixels from every raster before summarizing. Throws DataError when
/// no footprint reaches any raster.
std::vector<BuildingDamageRecord> aggregate(std::span<const geo::LabelRaster> preds, std::span<const geo::Footprint> fps,
                                            Stat stat = Stat::Median, const QualityConfig& q = {},
                                            unsigned threads = 1);

/// Fill colour for a damage class.
const char* class_fill(std::uint8_t cls);

/// FeatureCollection ordered by ascending id. With `style`, each feature
/// carries its fill colour and the collection embeds the class-to-colour rule.
nlohmann::json export_geojson(std::span<const BuildingDamageRecord> records, std::span<const geo::Footprint> fps,
                              bool style = true);
std::vector<BuildingDamageRecord> records_from_geojson(const nlohmann::json& j);

}  // namespace fds::damage
