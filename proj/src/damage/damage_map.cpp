#include "damage/damage_map.hpp"

#include <algorithm>
#include <array>
#include <map>

#include "common/errors.hpp"
#include "common/parallel.hpp"

namespace fds::damage {

const char* stat_name(Stat s) {
  switch (s) {
    case Stat::Median: return "median";
    case Stat::Mean: return "mean";
    case Stat::Mode: return "mode";
    case Stat::Max: return "max";
  }
  return "?";
}

Stat parse_stat(const std::string& s) {
  for (auto v : {Stat::Median, Stat::Mean, Stat::Mode, Stat::Max})
    if (s == stat_name(v)) return v;
  throw UsageError("unknown statistic '" + s + "' (expected median, mean, mode or max)");
}

std::uint8_t summarize(std::span<const std::uint8_t> labels, Stat stat) {
  if (labels.empty()) throw DataError("cannot summarize an empty label set");
  std::array<std::size_t, 256> hist{};
  std::uint64_t sum = 0;
  for (auto v : labels) {
    ++hist[v];
    sum += v;
  }
  const std::size_t n = labels.size();
  switch (stat) {
    case Stat::Median: {
      // Element n/2 of the sorted multiset: the middle, or the upper middle.
      std::size_t seen = 0;
      for (std::size_t c = 0; c < hist.size(); ++c) {
        seen += hist[c];
        if (seen > n / 2) return static_cast<std::uint8_t>(c);
      }
      break;
    }
    case Stat::Mean:
      // floor(sum / n + 1/2) in integers.
      return static_cast<std::uint8_t>((2 * sum + n) / (2 * n));
    case Stat::Mode: {
      std::size_t best = 0;
      for (std::size_t c = 1; c < hist.size(); ++c)
        if (hist[c] >= hist[best]) best = c;
      return static_cast<std::uint8_t>(best);
    }
    case Stat::Max:
      return *std::max_element(labels.begin(), labels.end());
  }
  throw DataError("unreachable statistic");
}

Flags quality_flags(std::size_t pixel_count, double label_variance, const QualityConfig& q) {
  return {pixel_count < q.min_pixels, label_variance > q.var_threshold};
}

namespace {

double population_variance(std::span<const std::uint8_t> v) {
  if (v.empty()) return 0.0;
  std::int64_t s = 0, s2 = 0;
  for (auto x : v) {
    s += x;
    s2 += static_cast<std::int64_t>(x) * x;
  }
  const auto n = static_cast<std::int64_t>(v.size());
  // Exact integer numerator: n * sum(x^2) - sum(x)^2.
  return static_cast<double>(n * s2 - s * s) / static_cast<double>(n * n);
}

bool reaches(const geo::BBox& b, const geo::GridSpec& g) { return b.intersects(g.extent()); }

}  // namespace

std::vector<BuildingDamageRecord> aggregate(const geo::LabelRaster& pred, std::span<const geo::Footprint> fps, Stat stat,
                                            const QualityConfig& q, unsigned threads) {
  return aggregate(std::span<const geo::LabelRaster>(&pred, 1), fps, stat, q, threads);
}

std::vector<BuildingDamageRecord> aggregate(std::span<const geo::LabelRaster> preds, std::span<const geo::Footprint> fps,
                                            Stat stat, const QualityConfig& q, unsigned threads) {
  for (const auto& pred : preds) {
    pred.grid.validate();
    if (pred.values.size() != pred.grid.width * pred.grid.height) throw ShapeError("raster payload does not match its grid");
  }
  const bool any_reach = std::any_of(fps.begin(), fps.end(), [&](const geo::Footprint& f) {
    return std::any_of(preds.begin(), preds.end(), [&](const geo::LabelRaster& p) { return reaches(f.polygon.bbox(), p.grid); });
  });
  if (!fps.empty() && !any_reach)
    throw DataError("no footprint overlaps the raster extent; check that both share one georeference");
  std::vector<BuildingDamageRecord> out(fps.size());
  parallel_for(fps.size(), threads, [&](std::size_t i) {
    std::vector<std::uint8_t> labels;
    for (const auto& pred : preds) {
      if (!reaches(fps[i].polygon.bbox(), pred.grid)) continue;
      for (auto px : geo::pixels_in(fps[i].polygon, pred.grid))
        if (pred.values[px] != geo::kNoData) labels.push_back(pred.values[px]);
    }
    auto& r = out[i];
    r.footprint_id = fps[i].id;
    r.pixel_count = labels.size();
    r.label_variance = population_variance(labels);
    if (!labels.empty()) r.damage_class = summarize(labels, stat);
    r.flags = quality_flags(r.pixel_count, r.label_variance, q);
  });
  return out;
}

const char* class_fill(std::uint8_t cls) {
  static constexpr const char* fills[] = {"#d9d9d9", "#ffd166", "#f3722c", "#d00000"};
  if (cls > 3) throw DataError("damage class " + std::to_string(cls) + " has no fill colour");
  return fills[cls];
}

nlohmann::json export_geojson(std::span<const BuildingDamageRecord> records, std::span<const geo::Footprint> fps,
                              bool style) {
  std::map<std::int64_t, const geo::Footprint*> by_id;
  for (const auto& f : fps)
    if (!by_id.emplace(f.id, &f).second) throw DataError("duplicate footprint id " + std::to_string(f.id));
  std::vector<const BuildingDamageRecord*> order;
  for (const auto& r : records) order.push_back(&r);
  std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->footprint_id < b->footprint_id; });

  nlohmann::json features = nlohmann::json::array();
  for (const auto* r : order) {
    const auto it = by_id.find(r->footprint_id);
    if (it == by_id.end()) throw DataError("record for unknown footprint " + std::to_string(r->footprint_id));
    nlohmann::json props = {
        {"id", r->footprint_id},
        {"damage_class", r->damage_class ? nlohmann::json(*r->damage_class) : nlohmann::json(nullptr)},
        {"pixel_count", r->pixel_count},
        {"label_variance", r->label_variance},
        {"flags", {{"low_coverage", r->flags.low_coverage}, {"high_disagreement", r->flags.high_disagreement}}}};
    if (style) props["fill"] = r->damage_class ? nlohmann::json(class_fill(*r->damage_class)) : nlohmann::json(nullptr);
    features.push_back(
        {{"type", "Feature"}, {"properties", props}, {"geometry", geo::polygon_to_geojson(it->second->polygon)}});
  }
  nlohmann::json fc = {{"type", "FeatureCollection"}, {"features", features}};
  if (style) {
    nlohmann::json fills;
    for (std::uint8_t c = 0; c <= 3; ++c) fills[std::to_string(c)] = class_fill(c);
    fc["style"] = {{"property", "damage_class"}, {"fill", fills}};
  }
  return fc;
}

std::vector<BuildingDamageRecord> records_from_geojson(const nlohmann::json& j) {
  if (!j.is_object() || j.value("type", "") != "FeatureCollection" || !j.contains("features"))
    throw DataError("damage map: expected a FeatureCollection");
  std::vector<BuildingDamageRecord> out;
  for (const auto& f : j["features"]) {
    try {
      const auto& p = f.at("properties");
      BuildingDamageRecord r;
      r.footprint_id = p.at("id").get<std::int64_t>();
      if (!p.at("damage_class").is_null()) r.damage_class = p["damage_class"].get<std::uint8_t>();
      r.pixel_count = p.at("pixel_count").get<std::size_t>();
      r.label_variance = p.at("label_variance").get<double>();
      r.flags.low_coverage = p.at("flags").at("low_coverage").get<bool>();
      r.flags.high_disagreement = p.at("flags").at("high_disagreement").get<bool>();
      out.push_back(r);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("damage map: ") + e.what());
    }
  }
  return out;
}

}  // namespace fds::damage
