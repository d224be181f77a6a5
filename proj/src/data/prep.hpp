#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "common/rng.hpp"
#include "data/chip.hpp"
#include "loss/losses.hpp"
#include "model/network.hpp"

namespace fds::data {

/// Row-major tiles of edge `tile`; ids gain an "_r<i>_c<j>" suffix and grids
/// their own origin. Throws ShapeError unless tile divides both extents.
std::vector<ChipSample> grid_partition(const ChipSample& s, std::size_t tile = 64);
/// Inverse of grid_partition for a complete rows x cols tile set.
ChipSample assemble_tiles(std::span<const ChipSample> tiles, std::size_t rows, std::size_t cols, std::string id);

/// Resamples every raster to target x target. Labels and risk use nearest
/// neighbour; continuous rasters are bilinear except where a contributing
/// neighbour is no-data, which falls back to nearest.
ChipSample upsample_to_common(const ChipSample& s, std::size_t target = 1280);

/// Same window for every raster. Throws UsageError if size exceeds the chip.
ChipSample crop(const ChipSample& s, std::size_t row, std::size_t col, std::size_t size);
ChipSample random_crop(const ChipSample& s, std::size_t size, Rng& rng);

struct Transform {
  int quarter_turns = 0;  // counter-clockwise
  bool flip_h = false, flip_v = false;
};
Transform draw_transform(Rng& rng);
/// Rotation first, then the flips, identically on every raster.
ChipSample apply_transform(const ChipSample& s, const Transform& t);
ChipSample augment(const ChipSample& s, Rng& rng);

struct SplitSpec {
  std::array<double, 3> ratios{0.6, 0.2, 0.2};
  std::uint64_t seed = 0;
};
struct Split {
  std::vector<std::string> train, val, test;
};
/// Seeded Fisher-Yates shuffle, then rounded prefix sizes for train and val.
Split split(std::vector<std::string> ids, const SplitSpec& spec);

/// Per-channel mean and standard deviation over valid cells of the SAR and
/// VHR stacks. Risk is ordinal and scaled separately (see to_batch).
struct NormStats {
  std::array<double, kSarChannels> pre_mean{}, pre_std{}, post_mean{}, post_std{};
  std::array<double, kVhrChannels> vhr_mean{}, vhr_std{};
};
/// Channels without a valid cell get mean 0, std 1. Accumulates in a fixed
/// order over sorted sample values, so chip order does not matter.
NormStats compute_stats(std::span<const ChipSample> samples);
ChipSample normalize(const ChipSample& s, const NormStats& stats);
nlohmann::json stats_to_json(const NormStats& s);
NormStats stats_from_json(const nlohmann::json& j);

struct Batch {
  model::ModalityBundle inputs;
  loss::TaskLabels labels;
};
/// Stacks chips into [B, H, W, C] tensors; risk level r enters as r / 4.
Batch to_batch(std::span<const ChipSample* const> chips);
Batch to_batch(std::span<const ChipSample> chips);

}  // namespace fds::data
