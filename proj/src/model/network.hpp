#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "model/ffss.hpp"

namespace fds::model {

enum class Stream { Pre, Post, Vhr, Risk };
enum class Task { Bda, Fm, Loc };

inline constexpr std::array<Stream, 4> kStreamOrder{Stream::Pre, Stream::Post, Stream::Vhr, Stream::Risk};
inline constexpr std::array<Task, 3> kTasks{Task::Bda, Task::Fm, Task::Loc};

const char* stream_name(Stream s);
const char* task_name(Task t);
Stream parse_stream(const std::string& s);
Task parse_task(const std::string& s);
std::size_t task_classes(Task t);

struct TaskWiring {
  Task task = Task::Bda;
  std::vector<Stream> streams;
  /// Used when none of `streams` is available (pre-event SAR standing in for
  /// missing VHR).
  std::vector<Stream> fallback;

  /// Present members of `streams` in canonical order, else of `fallback`.
  std::vector<Stream> resolve(bool vhr_present) const;
};

/// Per-task stream subsets; a task without wiring has no decoder.
struct Wiring {
  std::optional<TaskWiring> bda, fm, loc;

  const std::optional<TaskWiring>& get(Task t) const;
  std::optional<TaskWiring>& get(Task t);
  bool uses(Stream s) const;
};

/// Ablation rows 0-4.
Wiring ablation_wiring(int row);
nlohmann::json wiring_to_json(const Wiring& w);
/// Accepts {"row": n} or explicit {"tasks": {...}}; throws UsageError.
Wiring wiring_from_json(const nlohmann::json& j);

/// Co-registered inputs, each [B, H, W, C] with 255 as no-data:
/// SAR 4 channels, VHR 3 (undefined when absent), risk 1.
struct ModalityBundle {
  Tensor pre_sar, post_sar, vhr, risk;

  bool vhr_present() const;
};

struct TaskOutputs {
  std::optional<Tensor> bda, fm, loc;

  const std::optional<Tensor>& get(Task t) const;
  std::optional<Tensor>& get(Task t);
};

struct ModelConfig {
  EncoderConfig encoder;
  Wiring wiring = ablation_wiring(4);
  std::uint64_t seed = 0;
};

/// Semi-Siamese multimodal network with FFSS task decoders.
class FloodDamageNet {
 public:
  explicit FloodDamageNet(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  bool has_decoder(Task t) const { return decoders_[static_cast<std::size_t>(t)].has_value(); }

  TaskOutputs forward(const ParamBinding& p, const ModalityBundle& b) const;
  /// Inference with a gradient-free binding.
  TaskOutputs forward(const ModalityBundle& b) const;

  /// Names under which the parts register parameters.
  static constexpr const char* kImageEncoder = "image_encoder";
  static constexpr const char* kRiskEncoder = "risk_encoder";

 private:
  ModelConfig cfg_;
  ParameterSet params_;
  ModalityEmbedding sar_embed_, vhr_embed_, risk_embed_;
  HierarchicalEncoder image_encoder_, risk_encoder_;
  std::array<std::optional<TaskDecoder>, 3> decoders_;
};

}  // namespace fds::model
