#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "damage/damage_map.hpp"
#include "data/chip.hpp"
#include "data/prep.hpp"
#include "loss/losses.hpp"
#include "metrics/metrics.hpp"
#include "model/network.hpp"

namespace fds::train {

struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 5e-3;
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moments per parameter, in ParameterSet id order.
struct AdamWState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t step = 0;
};

/// Decoupled weight decay: w <- w - lr*wd*w, then the bias-corrected Adam
/// update from the moments. Grads are indexed like params.ids().
void adamw_step(ParameterSet& params, std::span<const std::vector<double>> grads, AdamWState& state,
                const AdamWConfig& cfg);

/// Named encoder sizes: "default" (16/32/64/128, state 8) and "toy"
/// (8/16/32/64, state 4). Throws UsageError on an unknown name.
model::EncoderConfig encoder_preset(const std::string& name);

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 5e-3;
  std::size_t epochs = 30;
  std::size_t batch_size = 2;
  std::size_t accumulation_steps = 8;
  /// Stops after this many optimizer steps; 0 means no cap.
  std::size_t max_steps = 0;
  std::uint64_t seed = 0;
  loss::LossConfig loss;
  int wiring = 4;
  std::string preset = "default";
  /// Random rotation and flips on every drawn sample.
  bool augment = true;
  /// Shuffle the training order each epoch.
  bool shuffle = true;
  /// Replace empty BDA class weights with weights from training building counts.
  bool building_weights = true;
  /// Workers over the samples of a step; never changes results.
  unsigned threads = 1;

  std::size_t effective_batch() const { return batch_size * accumulation_steps; }
  /// Throws UsageError on a zero batch or accumulation, or lr/wd <= 0.
  void validate() const;
  model::ModelConfig model_config() const;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
/// Missing keys keep the values of `base`; unknown keys are a UsageError.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

/// Buildings per BDA class, one per 4-connected LOC component, classed by the
/// highest valid BDA label inside it.
std::vector<std::size_t> building_counts(std::span<const data::ChipSample> chips);

struct StepResult {
  double loss = 0;  // mean of the micro-batch losses
  std::vector<std::vector<double>> grads;
};

/// Loss and gradients of one effective batch, split into micro-batches of
/// batch_size in order. A micro-batch gradient is the mean over its samples,
/// scaled by 1/accumulation_steps and summed. Every sample runs its own graph,
/// so VHR availability is resolved per sample and batch composition never
/// changes a sample's output. Throws NumericError on a non-finite loss.
StepResult accumulate_gradients(const model::FloodDamageNet& net, std::span<const data::ChipSample> samples,
                                std::size_t batch_size, const loss::LossConfig& loss, unsigned threads = 1);

/// Mean per-sample composite loss, without gradients.
double dataset_loss(const model::FloodDamageNet& net, std::span<const data::ChipSample> chips,
                    const loss::LossConfig& loss, unsigned threads = 1);

/// Lower bound on the composite loss of any model whose logits are constant
/// over block x block cells (the decoder upsamples by the patch size). Per
/// cell the best constant cross-entropy puts p_k proportional to w_k n_k;
/// Lovasz terms are bounded below by zero.
double block_constant_floor(std::span<const data::ChipSample> chips, const loss::LossConfig& loss,
                            std::size_t block);

struct TracePoint {
  std::size_t step = 0, epoch = 0;
  double loss = 0;
};

/// Optimizer and data-order state across epochs. Samples must already be
/// normalized; augmentation is drawn per step from the seed.
class Trainer {
 public:
  Trainer(model::FloodDamageNet& net, TrainConfig cfg);

  /// Fixes the loss class weights from the training set; the first epoch
  /// calls it, later calls are no-ops.
  void freeze_class_weights(std::span<const data::ChipSample> samples);
  /// One pass over the data in full effective batches (the remainder is
  /// dropped). Throws UsageError when fewer samples than one effective batch.
  std::vector<TracePoint> train_epoch(std::span<const data::ChipSample> samples);
  /// Runs epochs until cfg.epochs or cfg.max_steps.
  std::vector<TracePoint> fit(std::span<const data::ChipSample> samples);

  const TrainConfig& config() const { return cfg_; }
  const loss::LossConfig& loss_config() const { return loss_; }
  std::size_t steps() const { return state_.step; }
  std::size_t epochs_done() const { return epoch_; }
  bool finished() const;

 private:
  model::FloodDamageNet& net_;
  TrainConfig cfg_;
  loss::LossConfig loss_;
  bool weights_frozen_ = false;
  AdamWState state_;
  std::size_t epoch_ = 0;
};

/// Per-pixel argmax class of each task head, as rasters on the chip grid.
struct Prediction {
  std::optional<geo::LabelRaster> bda, fm, loc;
};
std::vector<Prediction> predict(const model::FloodDamageNet& net, std::span<const data::ChipSample> chips,
                                unsigned threads = 1);

/// Building ground truth for the building-level report.
struct BuildingTruth {
  std::vector<geo::Footprint> footprints;
  std::map<std::int64_t, std::uint8_t> classes;
};

struct EvalReport {
  std::size_t chips = 0;
  double loss = 0;
  std::map<std::string, metrics::MetricSet> pixel;  // by task name
  std::optional<metrics::MetricSet> building;
  /// Buildings with truth but no valid predicted pixel; left out of `building`.
  std::size_t buildings_without_prediction = 0;
};

/// Pixel metrics per present head (BDA and LOC exclude class 0 from the
/// harmonic mean; FM keeps all classes). The building level aggregates the
/// predicted BDA raster over the footprints that reach a chip, with `stat`,
/// and compares it with the truth classes, again excluding class 0 from the
/// harmonic mean.
EvalReport evaluate(const model::FloodDamageNet& net, std::span<const data::ChipSample> chips,
                    const loss::LossConfig& loss, const BuildingTruth* truth = nullptr,
                    damage::Stat stat = damage::Stat::Median, unsigned threads = 1);
nlohmann::json report_to_json(const EvalReport& r);

/// Writes step,epoch,loss rows.
void write_trace_csv(const std::filesystem::path& path, std::span<const TracePoint> trace);

}  // namespace fds::train
