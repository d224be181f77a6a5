#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "geo/geometry.hpp"

namespace fds::geo {

inline constexpr std::uint8_t kNoData = 255;

/// Single-band u8 raster on a georeferenced grid, row-major.
struct LabelRaster {
  GridSpec grid;
  std::vector<std::uint8_t> values;

  std::uint8_t at(std::size_t row, std::size_t col) const { return values[row * grid.width + col]; }
  bool operator==(const LabelRaster&) const = default;
};

/// Standalone raster file: `path` is a JSON header (grid fields, nodata,
/// payload file name) next to a raw row-major u8 payload `<stem>.u8`.
void write_raster(const std::filesystem::path& path, const LabelRaster& r);
LabelRaster read_raster(const std::filesystem::path& path);

}  // namespace fds::geo
