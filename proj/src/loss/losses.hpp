#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "model/network.hpp"

namespace fds::loss {

inline constexpr std::uint8_t kIgnore = 255;

/// w_k = N / N_k; absent classes get 0 and drop out of both losses.
/// Throws DataError when every count is zero.
std::vector<double> class_weights(std::span<const std::size_t> counts);

struct TaskLossConfig {
  double lambda_ce = 1.0;
  double lambda_lov = 0.5;
  /// Empty means uniform.
  std::vector<double> weights;
};

struct LossConfig {
  std::array<TaskLossConfig, 3> tasks{TaskLossConfig{1.0, 0.75, {}}, TaskLossConfig{1.0, 0.5, {}},
                                      TaskLossConfig{1.0, 0.5, {}}};

  TaskLossConfig& operator[](model::Task t) { return tasks[static_cast<std::size_t>(t)]; }
  const TaskLossConfig& operator[](model::Task t) const { return tasks[static_cast<std::size_t>(t)]; }
};

nlohmann::json loss_config_to_json(const LossConfig& c);
/// Missing keys keep their defaults; negative lambdas or weights are a UsageError.
LossConfig loss_config_from_json(const nlohmann::json& j, LossConfig base = {});

// Logits are [B, H, W, K] and labels hold B*H*W class ids (255 = ignore).
// Each sample is normalized by its own valid-pixel count, and samples are
// averaged over B, counting samples without valid pixels as zero.
// A result is absent only when no sample has a valid pixel.

/// Mean over valid pixels of -w_y log softmax(logits)_y.
std::optional<Tensor> weighted_cross_entropy(const Tensor& logits, std::span<const std::uint8_t> labels,
                                             std::span<const double> weights);

/// Lovasz-Softmax over the classes present in each sample's valid labels,
/// each class term scaled by w_c / mean of w over the present classes.
/// probs: [B, H, W, K], rows summing to one.
std::optional<Tensor> lovasz_softmax(const Tensor& probs, std::span<const std::uint8_t> labels,
                                     std::span<const double> weights);

/// Lovasz term of one class for a flat list of pixels; exposed for oracles.
double lovasz_class_term(std::span<const double> class_probs, std::span<const std::uint8_t> labels,
                         std::uint8_t cls);

std::optional<Tensor> task_loss(const Tensor& logits, std::span<const std::uint8_t> labels,
                                const TaskLossConfig& cfg);

/// Label rasters per task, each B*H*W; an empty vector means "no labels".
struct TaskLabels {
  std::array<std::vector<std::uint8_t>, 3> tasks;

  std::vector<std::uint8_t>& operator[](model::Task t) { return tasks[static_cast<std::size_t>(t)]; }
  const std::vector<std::uint8_t>& operator[](model::Task t) const { return tasks[static_cast<std::size_t>(t)]; }
};

/// Sum of the present task losses; absent tasks contribute exactly zero.
Tensor composite_loss(const model::TaskOutputs& out, const TaskLabels& labels, const LossConfig& cfg);

/// Throws DataError if a label is neither < classes nor 255.
void validate_labels(std::span<const std::uint8_t> labels, std::size_t classes);

}  // namespace fds::loss
