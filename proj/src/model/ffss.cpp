#include "model/ffss.hpp"

#include "common/errors.hpp"

namespace fds::model {

void check_streams(const StreamSet& s) {
  if (s.empty()) throw ShapeError("FFSS: empty stream set");
  for (const auto& t : s) {
    if (t.rank() != 4) throw ShapeError("FFSS: streams must be [B, h, w, C], got " + shape_string(t.shape()));
    if (t.shape() != s.front().shape())
      throw ShapeError("FFSS: stream shapes differ: " + shape_string(t.shape()) + " vs " +
                       shape_string(s.front().shape()));
  }
}

Tensor rearrange_sequential(const StreamSet& s) {
  check_streams(s);
  return s.size() == 1 ? s.front() : concat(s, 1);
}

StreamSet unrearrange_sequential(const Tensor& t, std::size_t streams) {
  const std::size_t h = t.dim(1) / streams;
  StreamSet out;
  for (std::size_t k = 0; k < streams; ++k) out.push_back(streams == 1 ? t : slice(t, 1, k * h, (k + 1) * h));
  return out;
}

Tensor rearrange_cross(const StreamSet& s) {
  check_streams(s);
  if (s.size() == 1) return s.front();
  const auto& sh = s.front().shape();
  const std::size_t B = sh[0], h = sh[1], w = sh[2], C = sh[3], S = s.size();
  std::vector<Tensor> parts;
  for (const auto& t : s) parts.push_back(reshape(t, {B, h, w, 1, C}));
  return reshape(concat(parts, 3), {B, h, w * S, C});
}

StreamSet unrearrange_cross(const Tensor& t, std::size_t streams) {
  if (streams == 1) return {t};
  const std::size_t B = t.dim(0), h = t.dim(1), w = t.dim(2) / streams, C = t.dim(3);
  const Tensor split = reshape(t, {B, h, w, streams, C});
  StreamSet out;
  for (std::size_t k = 0; k < streams; ++k) out.push_back(reshape(slice(split, 3, k, k + 1), {B, h, w, C}));
  return out;
}

Tensor rearrange_parallel(const StreamSet& s) {
  check_streams(s);
  return s.size() == 1 ? s.front() : concat(s, 0);
}

StreamSet unrearrange_parallel(const Tensor& t, std::size_t streams) {
  const std::size_t B = t.dim(0) / streams;
  StreamSet out;
  for (std::size_t k = 0; k < streams; ++k) out.push_back(streams == 1 ? t : slice(t, 0, k * B, (k + 1) * B));
  return out;
}

namespace {

Tensor sum_streams(const StreamSet& s) {
  Tensor acc = s.front();
  for (std::size_t k = 1; k < s.size(); ++k) acc = add(acc, s[k]);
  return acc;
}

}  // namespace

FfssBlock FfssBlock::create(ParameterSet& ps, const std::string& name, const vss::VssConfig& cfg, Rng& rng) {
  return {vss::VssBlock::create(ps, name + ".sequential", cfg, rng),
          vss::VssBlock::create(ps, name + ".cross", cfg, rng),
          vss::VssBlock::create(ps, name + ".parallel", cfg, rng),
          nn::Linear::create(ps, name + ".fuse", 3 * cfg.dim, cfg.dim, rng)};
}

Tensor FfssBlock::operator()(const ParamBinding& p, const StreamSet& s) const {
  check_streams(s);
  const std::size_t S = s.size();
  auto seq = sum_streams(unrearrange_sequential(sequential(p, rearrange_sequential(s)), S));
  auto crs = sum_streams(unrearrange_cross(cross(p, rearrange_cross(s)), S));
  auto par = sum_streams(unrearrange_parallel(parallel(p, rearrange_parallel(s)), S));
  return fuse(p, concat({seq, crs, par}, 3));
}

TaskDecoder TaskDecoder::create(ParameterSet& ps, const std::string& name, const EncoderConfig& enc,
                                std::size_t classes, Rng& rng) {
  TaskDecoder d;
  d.classes = classes;
  d.upsample = enc.patch;
  for (std::size_t s = 0; s < kStages; ++s) {
    vss::VssConfig vc{.dim = enc.dims[s], .state = enc.state, .mode = enc.mode};
    d.ffss[s] = FfssBlock::create(ps, name + ".ffss" + std::to_string(s + 1), vc, rng);
    if (s + 1 < kStages)
      d.lateral[s] = nn::Linear::create(ps, name + ".lateral" + std::to_string(s + 1), enc.dims[s + 1],
                                        enc.dims[s], rng);
  }
  d.head = nn::Linear::create(ps, name + ".head", enc.dims[0], classes, rng);
  return d;
}

Tensor TaskDecoder::operator()(const ParamBinding& p, const std::vector<FeaturePyramid>& streams) const {
  if (streams.empty()) throw ShapeError("task decoder: no input streams");
  auto stage = [&](std::size_t s) {
    StreamSet set;
    for (const auto& pyr : streams) set.push_back(pyr.stages[s]);
    return set;
  };
  Tensor d = ffss[kStages - 1](p, stage(kStages - 1));
  for (std::size_t s = kStages - 1; s-- > 0;) d = add(lateral[s](p, upsample2x(d)), ffss[s](p, stage(s)));
  return upsample_nearest(head(p, d), upsample);
}

}  // namespace fds::model
