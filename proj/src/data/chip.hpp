#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "geo/geometry.hpp"
#include "geo/raster.hpp"

namespace fds::data {

/// Channel-planar raster: value (c, r, col) at data[(c * height + r) * width + col].
template <typename T>
struct Planar {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<T> data;

  Planar() = default;
  Planar(std::size_t c, std::size_t h, std::size_t w, T fill = T{}) : channels(c), height(h), width(w), data(c * h * w, fill) {}

  T& at(std::size_t c, std::size_t r, std::size_t col) { return data[(c * height + r) * width + col]; }
  const T& at(std::size_t c, std::size_t r, std::size_t col) const { return data[(c * height + r) * width + col]; }
  std::size_t plane() const { return height * width; }
  bool operator==(const Planar&) const = default;
};

// Continuous rasters are held in double precision and stored as float32.
using FloatRaster = Planar<double>;
using ByteRaster = Planar<std::uint8_t>;

inline constexpr double kNoDataValue = 255.0;
inline constexpr std::size_t kSarChannels = 4, kVhrChannels = 3;

/// SAR stack channel names, in storage order.
inline const std::vector<std::string> kSarChannelNames{"vv_intensity", "vh_intensity", "vv_coherence", "vh_coherence"};
inline const std::vector<std::string> kVhrChannelNames{"red", "green", "blue"};

/// One co-registered multimodal training unit. An absent VHR image is kept as
/// a 3-channel raster filled with 255.
struct ChipSample {
  std::string id;
  geo::GridSpec grid;
  FloatRaster pre_sar, post_sar, vhr;
  ByteRaster risk;           // ordinal 0..4
  ByteRaster bda, fm, loc;   // 4-, 3- and 2-class labels

  bool vhr_present() const;
  /// Throws ShapeError if any raster disagrees with the grid or its channel
  /// count, DataError if a label or risk value is outside its class set.
  void validate() const;
  bool operator==(const ChipSample&) const = default;
};

/// Label raster of one layer, carrying the chip's georeference.
geo::LabelRaster label_raster(const ChipSample& s, const ByteRaster& layer);

/// Chip directory: manifest.json plus one little-endian raw file per raster.
void write_chip(const std::filesystem::path& dir, const ChipSample& s);
ChipSample read_chip(const std::filesystem::path& dir);

}  // namespace fds::data
