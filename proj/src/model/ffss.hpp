#pragma once

#include <array>
#include <string>
#include <vector>

#include "model/encoders.hpp"

namespace fds::model {

/// Ordered streams at one stage, each [B, h, w, C] of identical shape.
using StreamSet = std::vector<Tensor>;

void check_streams(const StreamSet& s);

/// Streams end to end: [B, S*h, w, C]. Row-major order is stream-major.
Tensor rearrange_sequential(const StreamSet& s);
StreamSet unrearrange_sequential(const Tensor& t, std::size_t streams);

/// Token-wise interleave: [B, h, S*w, C] with column x*S + s, so row-major
/// order is (s1 t1, s2 t1, ..., s1 t2, ...).
Tensor rearrange_cross(const StreamSet& s);
StreamSet unrearrange_cross(const Tensor& t, std::size_t streams);

/// Streams stacked on the batch axis: [S*B, h, w, C].
Tensor rearrange_parallel(const StreamSet& s);
StreamSet unrearrange_parallel(const Tensor& t, std::size_t streams);

/// Three rearrangements, each through its own VSS block (4 scans each),
/// reverse-rearranged, summed over streams, concatenated (3C) and projected to C.
struct FfssBlock {
  vss::VssBlock sequential, cross, parallel;
  nn::Linear fuse;

  static FfssBlock create(ParameterSet& ps, const std::string& name, const vss::VssConfig& cfg, Rng& rng);
  Tensor operator()(const ParamBinding& p, const StreamSet& s) const;
};

/// Four FFSS stages fused top-down, then a linear classifier and nearest
/// upsampling by the patch factor.
struct TaskDecoder {
  std::size_t classes = 0;
  std::size_t upsample = 4;
  std::array<FfssBlock, kStages> ffss;
  std::array<nn::Linear, kStages - 1> lateral;  // dims[i+1] -> dims[i]
  nn::Linear head;

  static TaskDecoder create(ParameterSet& ps, const std::string& name, const EncoderConfig& enc,
                            std::size_t classes, Rng& rng);
  /// streams[k] is the pyramid of the k-th stream; returns logits [B, H, W, classes].
  Tensor operator()(const ParamBinding& p, const std::vector<FeaturePyramid>& streams) const;
};

}  // namespace fds::model
