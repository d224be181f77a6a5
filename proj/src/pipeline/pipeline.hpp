#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "damage/damage_map.hpp"
#include "data/prep.hpp"
#include "data/synth.hpp"
#include "gt/groundtruth.hpp"
#include "train/trainer.hpp"

// File-level steps of the damage-mapping workflow. An event directory is the
// layout written by data::write_event; a run directory holds run.json,
// weights.fdsw, trace.csv, metrics.csv and eval.json.
namespace fds::pipeline {

namespace fs = std::filesystem;

struct RunConfig {
  train::TrainConfig train;
  std::size_t tile = 64;                    // chips are cut into tile x tile pieces
  std::array<double, 3> split{0.6, 0.2, 0.2};  // by chip, before tiling
  std::size_t eval_every = 1;               // epochs between validation passes; 0 disables
  damage::Stat stat = damage::Stat::Median; // building-level evaluation
};

nlohmann::json run_config_to_json(const RunConfig& c);
/// Sections "train", "data" and "eval"; missing keys keep `base`, unknown
/// keys are a UsageError.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});

void synth(const fs::path& out, std::uint64_t seed, std::size_t chips, const data::SynthConfig& cfg);

struct ImputeSummary {
  std::size_t footprints = 0;
  std::map<std::string, std::size_t> by_source;
  std::vector<std::size_t> class_counts;  // 0..3
};
/// Writes assignments.geojson (pde, source, damage_class per footprint) and
/// bins.json (centroids, bounds, elbow curve) into `out`.
ImputeSummary impute(const fs::path& footprints, const fs::path& points, const gt::ImputeConfig& cfg, const fs::path& out);

/// Chips, footprints and building truth of an event. With `labels` (a
/// GeoJSON carrying id and damage_class, e.g. assignments.geojson) the BDA
/// and LOC rasters are rebuilt from those classes and the classes become the
/// truth; otherwise truth.geojson is used.
struct Event {
  std::vector<data::ChipSample> chips;
  std::vector<geo::Footprint> footprints;
  std::map<std::int64_t, std::uint8_t> truth;
};
Event load_event(const fs::path& dir, const std::optional<fs::path>& labels = std::nullopt);

struct TrainOutcome {
  std::size_t steps = 0;
  double final_loss = 0;
  train::EvalReport eval;
};
/// Split, tile, normalize with training statistics, train, checkpoint and
/// evaluate on the test split (validation if the test split is empty).
TrainOutcome train(const fs::path& event_dir, const RunConfig& cfg, const fs::path& out,
                   const std::optional<fs::path>& labels = std::nullopt);

/// A trained model with everything needed to reproduce its inputs.
struct Run {
  RunConfig cfg;
  data::NormStats stats;
  data::Split split;
  model::FloodDamageNet net;
};
Run load_run(const fs::path& run_dir);

/// Tiles of the named split ("train", "val", "test" or "all"), normalized.
std::vector<data::ChipSample> split_tiles(const Run& run, const Event& ev, const std::string& which);

train::EvalReport evaluate(const Run& run, const Event& ev, const std::string& which, unsigned threads);

/// Per chip, out/<chip id>/{bda,fm,loc}.json rasters stitched from tile
/// predictions, plus out/predictions.json listing the chips.
void predict(const Run& run, const fs::path& event_dir, const fs::path& out, unsigned threads);

/// Pools the BDA predictions of every chip over the footprints; the records
/// come back as an unstyled FeatureCollection.
nlohmann::json aggregate(const fs::path& pred_dir, const fs::path& footprints, damage::Stat stat,
                         const damage::QualityConfig& q, unsigned threads);

/// Styled, id-ordered damage map from aggregate's output.
nlohmann::json export_map(const fs::path& records, const fs::path& footprints, bool style = true);

}  // namespace fds::pipeline
