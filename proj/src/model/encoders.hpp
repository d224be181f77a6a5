#pragma once

#include <array>
#include <string>
#include <vector>

#include "nn/layers.hpp"
#include "vss/vss.hpp"

namespace fds::model {

inline constexpr double kNoData = 255.0;
inline constexpr std::size_t kStages = 4;

enum class Modality { Sar, Vhr, Risk };

std::size_t modality_channels(Modality m);
const char* modality_name(Modality m);

/// Per-pixel validity: a pixel is invalid when any channel equals 255.
/// raster: [B, H, W, C] -> mask [B, H, W, 1] of 0/1.
Tensor validity_mask(const Tensor& raster);

/// 1x1 convolutional embedding to width C0. No-data pixels are zeroed on the
/// way in and their embedding is forced to zero, so an all-255 raster embeds
/// to exactly zero.
struct ModalityEmbedding {
  Modality kind = Modality::Sar;
  nn::Linear proj;

  static ModalityEmbedding create(ParameterSet& ps, const std::string& name, Modality kind,
                                  std::size_t c0, Rng& rng);
  Tensor operator()(const ParamBinding& p, const Tensor& raster) const;
};

struct EncoderConfig {
  std::size_t c0 = 16;
  std::array<std::size_t, kStages> dims{16, 32, 64, 128};
  std::array<std::size_t, kStages> depths{1, 1, 2, 1};
  std::size_t state = 8;
  std::size_t patch = 4;
  ssm::ScanMode mode = ssm::ScanMode::Sequential;

  /// Spatial extents must be divisible by this.
  std::size_t stride() const { return patch << (kStages - 1); }
};

/// Stage i (0-based) is [B, H / (patch * 2^i), W / (patch * 2^i), dims[i]].
struct FeaturePyramid {
  std::array<Tensor, kStages> stages;

  /// Rows [begin, end) of the batch axis at every stage.
  FeaturePyramid batch_slice(std::size_t begin, std::size_t end) const;
};

/// Four-stage VSS hierarchy: patch partition + VSS blocks, then
/// (2x2 merge + VSS blocks) three times.
struct HierarchicalEncoder {
  EncoderConfig cfg;
  ParamId patch_weight, patch_bias;
  nn::LayerNorm patch_norm;
  std::array<std::vector<vss::VssBlock>, kStages> blocks;
  std::array<ParamId, kStages - 1> merge_weight;
  std::array<ParamId, kStages - 1> merge_bias;

  static HierarchicalEncoder create(ParameterSet& ps, const std::string& name, const EncoderConfig& cfg,
                                    Rng& rng);
  /// tokens: [B, H, W, c0] with H, W divisible by cfg.stride().
  FeaturePyramid operator()(const ParamBinding& p, const Tensor& tokens) const;
};

}  // namespace fds::model
