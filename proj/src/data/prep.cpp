#include "data/prep.hpp"

#include <algorithm>
#include <cmath>
#include <type_traits>
#include <utility>

#include "common/errors.hpp"

namespace fds::data {

namespace {

// Applies a per-layer raster operation to every raster of a chip.
template <typename Fn>
ChipSample map_layers(const ChipSample& s, Fn&& fn) {
  ChipSample o;
  o.id = s.id;
  o.grid = s.grid;
  o.pre_sar = fn(s.pre_sar, true);
  o.post_sar = fn(s.post_sar, true);
  o.vhr = fn(s.vhr, true);
  o.risk = fn(s.risk, false);
  o.bda = fn(s.bda, false);
  o.fm = fn(s.fm, false);
  o.loc = fn(s.loc, false);
  return o;
}

template <typename T>
Planar<T> window(const Planar<T>& r, std::size_t row, std::size_t col, std::size_t h, std::size_t w) {
  Planar<T> o(r.channels, h, w);
  for (std::size_t c = 0; c < r.channels; ++c)
    for (std::size_t i = 0; i < h; ++i)
      std::copy_n(&r.at(c, row + i, col), w, &o.at(c, i, 0));
  return o;
}

geo::GridSpec shifted(const geo::GridSpec& g, std::size_t row, std::size_t col, std::size_t h, std::size_t w) {
  return {w, h, g.origin_x + static_cast<double>(col) * g.pixel, g.origin_y - static_cast<double>(row) * g.pixel, g.pixel};
}

}  // namespace

ChipSample crop(const ChipSample& s, std::size_t row, std::size_t col, std::size_t size) {
  if (size == 0 || row + size > s.grid.height || col + size > s.grid.width)
    throw UsageError("crop window " + std::to_string(size) + " at (" + std::to_string(row) + ", " + std::to_string(col) +
                     ") exceeds the " + std::to_string(s.grid.height) + "x" + std::to_string(s.grid.width) + " chip");
  auto o = map_layers(s, [&](const auto& r, bool) { return window(r, row, col, size, size); });
  o.grid = shifted(s.grid, row, col, size, size);
  return o;
}

ChipSample random_crop(const ChipSample& s, std::size_t size, Rng& rng) {
  if (size == 0 || size > s.grid.height || size > s.grid.width)
    throw UsageError("crop size " + std::to_string(size) + " exceeds the chip");
  const auto row = uniform_index(rng, s.grid.height - size + 1);
  const auto col = uniform_index(rng, s.grid.width - size + 1);
  return crop(s, row, col, size);
}

std::vector<ChipSample> grid_partition(const ChipSample& s, std::size_t tile) {
  if (tile == 0 || s.grid.height % tile != 0 || s.grid.width % tile != 0)
    throw ShapeError("tile size " + std::to_string(tile) + " does not divide the chip");
  std::vector<ChipSample> out;
  for (std::size_t i = 0; i < s.grid.height / tile; ++i)
    for (std::size_t j = 0; j < s.grid.width / tile; ++j) {
      auto t = crop(s, i * tile, j * tile, tile);
      t.id = s.id + "_r" + std::to_string(i) + "_c" + std::to_string(j);
      out.push_back(std::move(t));
    }
  return out;
}

ChipSample assemble_tiles(std::span<const ChipSample> tiles, std::size_t rows, std::size_t cols, std::string id) {
  if (tiles.size() != rows * cols || tiles.empty()) throw ShapeError("tile count does not match the layout");
  const std::size_t th = tiles[0].grid.height, tw = tiles[0].grid.width;
  ChipSample o;
  o.id = std::move(id);
  o.grid = {tw * cols, th * rows, tiles[0].grid.origin_x, tiles[0].grid.origin_y, tiles[0].grid.pixel};
  auto place = [&](auto member) {
    const auto& first = tiles[0].*member;
    std::remove_cvref_t<decltype(first)> dst(first.channels, th * rows, tw * cols);
    for (std::size_t t = 0; t < tiles.size(); ++t) {
      const auto& src = tiles[t].*member;
      if (src.height != th || src.width != tw) throw ShapeError("tiles differ in size");
      for (std::size_t c = 0; c < src.channels; ++c)
        for (std::size_t r = 0; r < th; ++r)
          std::copy_n(&src.at(c, r, 0), tw, &dst.at(c, (t / cols) * th + r, (t % cols) * tw));
    }
    return dst;
  };
  o.pre_sar = place(&ChipSample::pre_sar);
  o.post_sar = place(&ChipSample::post_sar);
  o.vhr = place(&ChipSample::vhr);
  o.risk = place(&ChipSample::risk);
  o.bda = place(&ChipSample::bda);
  o.fm = place(&ChipSample::fm);
  o.loc = place(&ChipSample::loc);
  return o;
}

namespace {

// Source index whose cell contains the center of destination cell d.
std::size_t nearest_src(std::size_t d, std::size_t src, std::size_t dst) { return std::min(src - 1, (2 * d + 1) * src / (2 * dst)); }

template <typename T>
Planar<T> resample_nearest(const Planar<T>& r, std::size_t target) {
  Planar<T> o(r.channels, target, target);
  for (std::size_t c = 0; c < r.channels; ++c)
    for (std::size_t i = 0; i < target; ++i)
      for (std::size_t j = 0; j < target; ++j)
        o.at(c, i, j) = r.at(c, nearest_src(i, r.height, target), nearest_src(j, r.width, target));
  return o;
}

struct Tap {
  std::size_t i0, i1;
  double f;  // weight of i1
};

Tap bilinear_tap(std::size_t d, std::size_t src, std::size_t dst) {
  const double pos = (static_cast<double>(d) + 0.5) * static_cast<double>(src) / static_cast<double>(dst) - 0.5;
  if (pos <= 0) return {0, 0, 0.0};
  const auto i0 = static_cast<std::size_t>(std::floor(pos));
  if (i0 + 1 >= src) return {src - 1, src - 1, 0.0};
  return {i0, i0 + 1, pos - static_cast<double>(i0)};
}

FloatRaster resample_bilinear(const FloatRaster& r, std::size_t target) {
  FloatRaster o(r.channels, target, target);
  for (std::size_t i = 0; i < target; ++i) {
    const auto ty = bilinear_tap(i, r.height, target);
    for (std::size_t j = 0; j < target; ++j) {
      const auto tx = bilinear_tap(j, r.width, target);
      for (std::size_t c = 0; c < r.channels; ++c) {
        const double a = r.at(c, ty.i0, tx.i0), b = r.at(c, ty.i0, tx.i1);
        const double d = r.at(c, ty.i1, tx.i0), e = r.at(c, ty.i1, tx.i1);
        const bool gap = (a == kNoDataValue) || (tx.f > 0 && b == kNoDataValue) || (ty.f > 0 && d == kNoDataValue) ||
                         (tx.f > 0 && ty.f > 0 && e == kNoDataValue);
        if (gap) {
          o.at(c, i, j) = r.at(c, nearest_src(i, r.height, target), nearest_src(j, r.width, target));
          continue;
        }
        // a + f (b - a) keeps constant neighbourhoods exact.
        const double top = a + tx.f * (b - a), bottom = d + tx.f * (e - d);
        o.at(c, i, j) = top + ty.f * (bottom - top);
      }
    }
  }
  return o;
}

}  // namespace

ChipSample upsample_to_common(const ChipSample& s, std::size_t target) {
  if (s.grid.height != s.grid.width) throw ShapeError("resampling expects a square chip");
  if (target == 0) throw UsageError("target size must be positive");
  auto o = map_layers(s, [&](const auto& r, bool continuous) {
    using R = std::remove_cvref_t<decltype(r)>;
    if constexpr (std::is_same_v<R, FloatRaster>)
      return continuous ? resample_bilinear(r, target) : resample_nearest(r, target);
    else
      return resample_nearest(r, target);
  });
  o.grid = {target, target, s.grid.origin_x, s.grid.origin_y,
            s.grid.pixel * static_cast<double>(s.grid.width) / static_cast<double>(target)};
  return o;
}

Transform draw_transform(Rng& rng) {
  Transform t;
  t.quarter_turns = static_cast<int>(uniform_index(rng, 4));
  t.flip_h = uniform01(rng) < 0.5;
  t.flip_v = uniform01(rng) < 0.5;
  return t;
}

namespace {

template <typename T>
Planar<T> transformed(const Planar<T>& r, const Transform& t) {
  Planar<T> cur = r;
  for (int q = 0; q < ((t.quarter_turns % 4) + 4) % 4; ++q) {
    // Counter-clockwise: new (i, j) = old (j, W - 1 - i).
    Planar<T> nxt(cur.channels, cur.width, cur.height);
    for (std::size_t c = 0; c < cur.channels; ++c)
      for (std::size_t i = 0; i < nxt.height; ++i)
        for (std::size_t j = 0; j < nxt.width; ++j) nxt.at(c, i, j) = cur.at(c, j, cur.width - 1 - i);
    cur = std::move(nxt);
  }
  if (t.flip_h)
    for (std::size_t c = 0; c < cur.channels; ++c)
      for (std::size_t i = 0; i < cur.height; ++i) std::reverse(&cur.at(c, i, 0), &cur.at(c, i, 0) + cur.width);
  if (t.flip_v)
    for (std::size_t c = 0; c < cur.channels; ++c)
      for (std::size_t i = 0; i < cur.height / 2; ++i)
        std::swap_ranges(&cur.at(c, i, 0), &cur.at(c, i, 0) + cur.width, &cur.at(c, cur.height - 1 - i, 0));
  return cur;
}

}  // namespace

ChipSample apply_transform(const ChipSample& s, const Transform& t) {
  auto o = map_layers(s, [&](const auto& r, bool) { return transformed(r, t); });
  if (t.quarter_turns % 2 != 0) std::swap(o.grid.width, o.grid.height);
  return o;
}

ChipSample augment(const ChipSample& s, Rng& rng) { return apply_transform(s, draw_transform(rng)); }

Split split(std::vector<std::string> ids, const SplitSpec& spec) {
  double sum = 0;
  for (double r : spec.ratios) {
    if (!(r >= 0)) throw UsageError("split ratios must be non-negative");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw UsageError("split ratios must sum to 1");
  Rng rng(derive_seed(spec.seed, "split"));
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[uniform_index(rng, i)]);
  const auto n = static_cast<double>(ids.size());
  const auto n_train = std::min(ids.size(), static_cast<std::size_t>(std::llround(spec.ratios[0] * n)));
  const auto n_val = std::min(ids.size() - n_train, static_cast<std::size_t>(std::llround(spec.ratios[1] * n)));
  Split out;
  out.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
  return out;
}

namespace {

std::pair<double, double> channel_stats(std::span<const ChipSample> samples, const FloatRaster ChipSample::*member,
                                        std::size_t ch) {
  std::vector<double> v;
  for (const auto& s : samples) {
    const auto& r = s.*member;
    for (std::size_t i = 0; i < r.plane(); ++i) {
      const double x = r.data[ch * r.plane() + i];
      if (x != kNoDataValue) v.push_back(x);
    }
  }
  if (v.empty()) return {0.0, 1.0};
  std::sort(v.begin(), v.end());
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  const double sd = std::sqrt(var);
  return {mean, sd > 0 ? sd : 1.0};
}

void normalize_layer(FloatRaster& r, std::span<const double> mean, std::span<const double> sd) {
  for (std::size_t c = 0; c < r.channels; ++c)
    for (std::size_t i = 0; i < r.plane(); ++i) {
      double& x = r.data[c * r.plane() + i];
      if (x != kNoDataValue) x = (x - mean[c]) / sd[c];
    }
}

}  // namespace

NormStats compute_stats(std::span<const ChipSample> samples) {
  NormStats st;
  for (std::size_t c = 0; c < kSarChannels; ++c) {
    std::tie(st.pre_mean[c], st.pre_std[c]) = channel_stats(samples, &ChipSample::pre_sar, c);
    std::tie(st.post_mean[c], st.post_std[c]) = channel_stats(samples, &ChipSample::post_sar, c);
  }
  for (std::size_t c = 0; c < kVhrChannels; ++c)
    std::tie(st.vhr_mean[c], st.vhr_std[c]) = channel_stats(samples, &ChipSample::vhr, c);
  return st;
}

ChipSample normalize(const ChipSample& s, const NormStats& st) {
  ChipSample o = s;
  normalize_layer(o.pre_sar, st.pre_mean, st.pre_std);
  normalize_layer(o.post_sar, st.post_mean, st.post_std);
  normalize_layer(o.vhr, st.vhr_mean, st.vhr_std);
  return o;
}

nlohmann::json stats_to_json(const NormStats& s) {
  return {{"pre_sar", {{"mean", s.pre_mean}, {"std", s.pre_std}}},
          {"post_sar", {{"mean", s.post_mean}, {"std", s.post_std}}},
          {"vhr", {{"mean", s.vhr_mean}, {"std", s.vhr_std}}}};
}

NormStats stats_from_json(const nlohmann::json& j) {
  NormStats s;
  try {
    j.at("pre_sar").at("mean").get_to(s.pre_mean);
    j.at("pre_sar").at("std").get_to(s.pre_std);
    j.at("post_sar").at("mean").get_to(s.post_mean);
    j.at("post_sar").at("std").get_to(s.post_std);
    j.at("vhr").at("mean").get_to(s.vhr_mean);
    j.at("vhr").at("std").get_to(s.vhr_std);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("normalization stats: ") + e.what());
  }
  return s;
}

Batch to_batch(std::span<const ChipSample* const> chips) {
  if (chips.empty()) throw ShapeError("empty batch");
  const std::size_t B = chips.size(), H = chips[0]->grid.height, W = chips[0]->grid.width;
  std::vector<Real> pre(B * H * W * kSarChannels), post(pre.size()), vhr(B * H * W * kVhrChannels), risk(B * H * W);
  Batch out;
  for (auto t : model::kTasks) out.labels[t].resize(B * H * W);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& s = *chips[b];
    if (s.grid.height != H || s.grid.width != W) throw ShapeError("batch chips differ in size");
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c) {
        const std::size_t p = (b * H + r) * W + c;
        for (std::size_t k = 0; k < kSarChannels; ++k) {
          pre[p * kSarChannels + k] = s.pre_sar.at(k, r, c);
          post[p * kSarChannels + k] = s.post_sar.at(k, r, c);
        }
        for (std::size_t k = 0; k < kVhrChannels; ++k) vhr[p * kVhrChannels + k] = s.vhr.at(k, r, c);
        const auto level = s.risk.at(0, r, c);
        risk[p] = level == geo::kNoData ? kNoDataValue : level / 4.0;
        out.labels[model::Task::Bda][p] = s.bda.at(0, r, c);
        out.labels[model::Task::Fm][p] = s.fm.at(0, r, c);
        out.labels[model::Task::Loc][p] = s.loc.at(0, r, c);
      }
  }
  out.inputs.pre_sar = Tensor::from({B, H, W, kSarChannels}, std::move(pre));
  out.inputs.post_sar = Tensor::from({B, H, W, kSarChannels}, std::move(post));
  out.inputs.vhr = Tensor::from({B, H, W, kVhrChannels}, std::move(vhr));
  out.inputs.risk = Tensor::from({B, H, W, 1}, std::move(risk));
  return out;
}

Batch to_batch(std::span<const ChipSample> chips) {
  std::vector<const ChipSample*> ptrs;
  for (const auto& c : chips) ptrs.push_back(&c);
  return to_batch(std::span<const ChipSample* const>(ptrs));
}

}  // namespace fds::data
