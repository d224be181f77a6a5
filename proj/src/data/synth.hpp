#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "data/chip.hpp"
#include "gt/groundtruth.hpp"

namespace fds::data {

struct SynthConfig {
  std::size_t size = 512;      // chip edge in pixels, a multiple of 64
  double pixel = 5.0;          // meters
  double vhr_fraction = 0.3;   // chips with an optical image
  double water_min = 0.15, water_max = 0.35;  // post-event water fraction band
  double claim_rate = 0.85;    // damaged buildings reporting a PDE point
  double building_density = 1.0 / 180.0;  // placement attempts per pixel
};

nlohmann::json synth_config_to_json(const SynthConfig& c);
SynthConfig synth_config_from_json(const nlohmann::json& j, SynthConfig base = {});

struct SynthEvent {
  std::vector<ChipSample> chips;
  std::vector<geo::Footprint> footprints;
  std::vector<std::uint8_t> true_class;  // generator damage class per footprint
  std::vector<gt::PdePoint> points;
  std::vector<double> water_fraction;    // post-event, per chip
};

/// Procedural flood event. Chip i has its own RNG stream derived from
/// (seed, i) and sits at its own offset on a square world layout, so the
/// result does not depend on generation order. Throws UsageError if size is
/// not a positive multiple of 64.
SynthEvent synth_event(std::uint64_t seed, std::size_t n_chips, const SynthConfig& cfg = {});

/// Event directory: chips/<id>/, footprints.geojson, points.csv, truth.geojson
/// (generator classes as assignments) and event.json.
void write_event(const std::filesystem::path& dir, const SynthEvent& ev, std::uint64_t seed, const SynthConfig& cfg);
/// Chips listed in event.json, in order.
std::vector<ChipSample> read_event_chips(const std::filesystem::path& dir);

}  // namespace fds::data
