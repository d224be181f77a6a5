#include "model/encoders.hpp"

#include "common/errors.hpp"

namespace fds::model {

std::size_t modality_channels(Modality m) {
  switch (m) {
    case Modality::Sar: return 4;
    case Modality::Vhr: return 3;
    case Modality::Risk: return 1;
  }
  return 0;
}

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::Sar: return "sar";
    case Modality::Vhr: return "vhr";
    case Modality::Risk: return "risk";
  }
  return "?";
}

Tensor validity_mask(const Tensor& raster) {
  if (raster.rank() != 4) throw ShapeError("validity_mask expects [B, H, W, C], got " + shape_string(raster.shape()));
  const std::size_t C = raster.dim(3), pixels = raster.numel() / C;
  std::vector<Real> mask(pixels, 1.0);
  auto v = raster.values();
  for (std::size_t i = 0; i < pixels; ++i)
    for (std::size_t c = 0; c < C; ++c)
      if (v[i * C + c] == kNoData) {
        mask[i] = 0.0;
        break;
      }
  return Tensor::from({raster.dim(0), raster.dim(1), raster.dim(2), 1}, std::move(mask));
}

ModalityEmbedding ModalityEmbedding::create(ParameterSet& ps, const std::string& name, Modality kind,
                                            std::size_t c0, Rng& rng) {
  return {kind, nn::Linear::create(ps, name, modality_channels(kind), c0, rng)};
}

Tensor ModalityEmbedding::operator()(const ParamBinding& p, const Tensor& raster) const {
  if (raster.rank() != 4 || raster.dim(3) != modality_channels(kind))
    throw ShapeError(std::string(modality_name(kind)) + " embedding expects [B, H, W, " +
                     std::to_string(modality_channels(kind)) + "], got " + shape_string(raster.shape()));
  const Tensor mask = validity_mask(raster);
  return mul(proj(p, mul(raster, mask)), mask);
}

FeaturePyramid FeaturePyramid::batch_slice(std::size_t begin, std::size_t end) const {
  FeaturePyramid out;
  for (std::size_t i = 0; i < kStages; ++i) out.stages[i] = slice(stages[i], 0, begin, end);
  return out;
}

HierarchicalEncoder HierarchicalEncoder::create(ParameterSet& ps, const std::string& name,
                                                const EncoderConfig& cfg, Rng& rng) {
  HierarchicalEncoder e;
  e.cfg = cfg;
  const std::size_t patch_in = cfg.patch * cfg.patch * cfg.c0;
  e.patch_weight = ps.add_uniform(name + ".patch.weight", {patch_in, cfg.dims[0]}, patch_in, rng);
  e.patch_bias = ps.add_uniform(name + ".patch.bias", {cfg.dims[0]}, patch_in, rng);
  e.patch_norm = nn::LayerNorm::create(ps, name + ".patch.norm", cfg.dims[0]);
  for (std::size_t s = 0; s < kStages; ++s) {
    if (s > 0) {
      const std::size_t in = 4 * cfg.dims[s - 1];
      const std::string m = name + ".merge" + std::to_string(s);
      e.merge_weight[s - 1] = ps.add_uniform(m + ".weight", {in, cfg.dims[s]}, in, rng);
      e.merge_bias[s - 1] = ps.add_uniform(m + ".bias", {cfg.dims[s]}, in, rng);
    }
    vss::VssConfig vc{.dim = cfg.dims[s], .state = cfg.state, .mode = cfg.mode};
    for (std::size_t d = 0; d < cfg.depths[s]; ++d)
      e.blocks[s].push_back(vss::VssBlock::create(
          ps, name + ".stage" + std::to_string(s + 1) + ".block" + std::to_string(d), vc, rng));
  }
  return e;
}

FeaturePyramid HierarchicalEncoder::operator()(const ParamBinding& p, const Tensor& tokens) const {
  if (tokens.rank() != 4 || tokens.dim(3) != cfg.c0)
    throw ShapeError("encoder expects [B, H, W, " + std::to_string(cfg.c0) + "], got " +
                     shape_string(tokens.shape()));
  if (tokens.dim(1) % cfg.stride() != 0 || tokens.dim(2) % cfg.stride() != 0)
    throw ShapeError("encoder input " + std::to_string(tokens.dim(1)) + "x" + std::to_string(tokens.dim(2)) +
                     " is not divisible by " + std::to_string(cfg.stride()));
  FeaturePyramid out;
  Tensor x = patch_norm(p, conv2d_embed(tokens, p[patch_weight], p[patch_bias], cfg.patch));
  for (std::size_t s = 0; s < kStages; ++s) {
    if (s > 0) x = downsample2x_merge(x, p[merge_weight[s - 1]], p[merge_bias[s - 1]]);
    for (const auto& blk : blocks[s]) x = blk(p, x);
    out.stages[s] = x;
  }
  return out;
}

}  // namespace fds::model
