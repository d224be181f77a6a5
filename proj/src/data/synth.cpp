#include <set>
#include "data/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "common/errors.hpp"
#include "common/rng.hpp"

namespace fds::data {

nlohmann::json synth_config_to_json(const SynthConfig& c) {
  return {{"size", c.size},
          {"pixel", c.pixel},
          {"vhr_fraction", c.vhr_fraction},
          {"water_min", c.water_min},
          {"water_max", c.water_max},
          {"claim_rate", c.claim_rate},
          {"building_density", c.building_density}};
}

SynthConfig synth_config_from_json(const nlohmann::json& j, SynthConfig c) {
  if (!j.is_object()) throw UsageError("synth config must be a JSON object");
  static const std::set<std::string> known{"size",      "pixel",      "vhr_fraction",    "water_min",
                                           "water_max", "claim_rate", "building_density"};
  for (const auto& [key, v] : j.items())
    if (!known.count(key)) throw UsageError("unknown synth config key '" + key + "'");
  try {
    c.size = j.value("size", c.size);
    c.pixel = j.value("pixel", c.pixel);
    c.vhr_fraction = j.value("vhr_fraction", c.vhr_fraction);
    c.water_min = j.value("water_min", c.water_min);
    c.water_max = j.value("water_max", c.water_max);
    c.claim_rate = j.value("claim_rate", c.claim_rate);
    c.building_density = j.value("building_density", c.building_density);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("synth config: ") + e.what());
  }
  return c;
}

namespace {

constexpr double kTwoPi = 6.283185307179586;

struct Rect {
  std::size_t r0, c0, h, w;
};

struct ChipParts {
  ChipSample chip;
  std::vector<geo::Footprint> fps;
  std::vector<std::uint8_t> cls;
  std::vector<gt::PdePoint> points;
  double water_fraction = 0;
};

// Gamma(4, 1/4) multiplicative speckle: mean of four unit exponentials.
double speckle(Rng& rng) {
  double s = 0;
  for (int i = 0; i < 4; ++i) s -= std::log(1.0 - uniform01(rng));
  return s / 4.0;
}

double quantile_threshold(std::vector<double> v, double q) {
  const auto k = std::min(v.size() - 1, static_cast<std::size_t>(q * static_cast<double>(v.size())));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

ChipParts synth_chip(std::uint64_t seed, std::size_t index, const SynthConfig& cfg, double ox, double oy) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(index)));
  const std::size_t S = cfg.size, P = S * S;
  const double L = static_cast<double>(S);

  // Smooth terrain: a handful of low-frequency waves plus faint roughness.
  std::vector<double> terrain(P, 0.0);
  struct Wave {
    double a, fx, fy, phase;
  };
  std::vector<Wave> waves;
  for (int k = 0; k < 6; ++k) {
    const double ang = uniform(rng, 0, kTwoPi), f = uniform(rng, 0.5, 2.5);
    waves.push_back({uniform(rng, 0.5, 1.0) / std::sqrt(k + 1.0), f * std::cos(ang), f * std::sin(ang), uniform(rng, 0, kTwoPi)});
  }
  for (std::size_t r = 0; r < S; ++r)
    for (std::size_t c = 0; c < S; ++c) {
      double h = 0;
      for (const auto& w : waves) h += w.a * std::sin(kTwoPi * (w.fx * c + w.fy * r) / L + w.phase);
      terrain[r * S + c] = h + 0.02 * uniform(rng, -1, 1);
    }
  const double post_frac = uniform(rng, cfg.water_min, cfg.water_max);
  const double pre_frac = post_frac * uniform(rng, 0.25, 0.5);
  const double t_post = quantile_threshold(terrain, post_frac), t_pre = quantile_threshold(terrain, pre_frac);
  std::array<double, 4> t_risk{};
  for (int k = 0; k < 4; ++k) t_risk[k] = quantile_threshold(terrain, (k + 1) / 5.0);
  const auto [tmin, tmax] = std::minmax_element(terrain.begin(), terrain.end());
  const double t_lo = *tmin, t_span = std::max(*tmax - *tmin, 1e-12);

  std::vector<bool> pre_water(P), post_water(P);
  ChipSample s;
  s.grid = {S, S, ox, oy, cfg.pixel};
  s.risk = ByteRaster(1, S, S);
  for (std::size_t i = 0; i < P; ++i) {
    pre_water[i] = terrain[i] < t_pre;
    post_water[i] = terrain[i] < t_post;
    int level = 4;
    for (double t : t_risk) level -= terrain[i] >= t;
    s.risk.data[i] = static_cast<std::uint8_t>(level);
  }

  // Buildings: rectangles on dry land with at least one pixel of clearance.
  std::vector<int> owner(P, -1);
  std::vector<Rect> rects;
  const auto attempts = static_cast<std::size_t>(static_cast<double>(P) * cfg.building_density);
  for (std::size_t a = 0; a < attempts; ++a) {
    const std::size_t h = 4 + uniform_index(rng, 5), w = 4 + uniform_index(rng, 5);
    const std::size_t r0 = 1 + uniform_index(rng, S - h - 1), c0 = 1 + uniform_index(rng, S - w - 1);
    bool ok = true;
    for (std::size_t r = r0 - 1; r <= r0 + h && ok; ++r)
      for (std::size_t c = c0 - 1; c <= c0 + w && ok; ++c) ok = owner[r * S + c] < 0 && !pre_water[r * S + c];
    if (!ok) continue;
    for (std::size_t r = r0; r < r0 + h; ++r)
      for (std::size_t c = c0; c < c0 + w; ++c) owner[r * S + c] = static_cast<int>(rects.size());
    rects.push_back({r0, c0, h, w});
  }

  // Damage grows with flood contact and mapped risk.
  ChipParts out;
  for (const auto& b : rects) {
    double wet = 0, ring = 0, risk = 0;
    for (std::size_t r = b.r0 - 1; r <= b.r0 + b.h; ++r)
      for (std::size_t c = b.c0 - 1; c <= b.c0 + b.w; ++c) {
        wet += post_water[r * S + c];
        ++ring;
      }
    for (std::size_t r = b.r0; r < b.r0 + b.h; ++r)
      for (std::size_t c = b.c0; c < b.c0 + b.w; ++c) risk += s.risk.data[r * S + c];
    risk /= static_cast<double>(b.h * b.w);
    const double score = 0.7 * wet / ring + 0.3 * risk / 4.0 + uniform(rng, -0.08, 0.08);
    out.cls.push_back(score < 0.1 ? 0 : score < 0.2 ? 1 : score < 0.5 ? 2 : 3);
  }

  s.bda = ByteRaster(1, S, S, geo::kNoData);
  s.loc = ByteRaster(1, S, S, 0);
  s.fm = ByteRaster(1, S, S, 0);
  for (std::size_t i = 0; i < P; ++i)
    if (owner[i] >= 0) {
      s.bda.data[i] = out.cls[static_cast<std::size_t>(owner[i])];
      s.loc.data[i] = 1;
    }
  for (std::size_t r = 0; r < S; ++r)
    for (std::size_t c = 0; c < S; ++c) {
      const std::size_t i = r * S + c;
      if (!post_water[i] || pre_water[i]) continue;
      bool urban = false;
      for (std::size_t rr = r > 0 ? r - 1 : 0; rr <= std::min(S - 1, r + 1) && !urban; ++rr)
        for (std::size_t cc = c > 0 ? c - 1 : 0; cc <= std::min(S - 1, c + 1) && !urban; ++cc) urban = owner[rr * S + cc] >= 0;
      s.fm.data[i] = urban ? 2 : 1;
    }

  // SAR: intensity with speckle, coherence with additive jitter. Water is
  // dark and incoherent; flooded walls brighten by double bounce; damage
  // lowers post-event coherence.
  s.pre_sar = FloatRaster(kSarChannels, S, S);
  s.post_sar = FloatRaster(kSarChannels, S, S);
  for (std::size_t r = 0; r < S; ++r)
    for (std::size_t c = 0; c < S; ++c) {
      const std::size_t i = r * S + c;
      const double t = (terrain[i] - t_lo) / t_span;
      for (int phase = 0; phase < 2; ++phase) {
        const bool post = phase == 1;
        double vv, vh, coh;
        if (owner[i] >= 0) {
          const auto cls = out.cls[static_cast<std::size_t>(owner[i])];
          const bool wet = post && post_water[i];
          vv = wet ? 0.9 : 0.55;
          vh = wet ? 0.2 : 0.15;
          coh = post ? 0.85 - 0.17 * cls : 0.85;
        } else if (post ? post_water[i] : pre_water[i]) {
          vv = 0.015;
          vh = 0.004;
          coh = 0.08;
        } else {
          vv = 0.2 * (1 + 0.3 * t);
          vh = 0.05 * (1 + 0.3 * t);
          coh = post ? 0.55 : 0.65;
        }
        auto& dst = post ? s.post_sar : s.pre_sar;
        dst.at(0, r, c) = static_cast<float>(vv * speckle(rng));
        dst.at(1, r, c) = static_cast<float>(vh * speckle(rng));
        dst.at(2, r, c) = static_cast<float>(std::clamp(coh + uniform(rng, -0.05, 0.05), 0.0, 1.0));
        dst.at(3, r, c) = static_cast<float>(std::clamp(0.9 * coh + uniform(rng, -0.05, 0.05), 0.0, 1.0));
      }
    }

  s.vhr = FloatRaster(kVhrChannels, S, S, kNoDataValue);
  if (uniform01(rng) < cfg.vhr_fraction) {
    std::vector<double> roof(rects.size());
    for (auto& g : roof) g = uniform(rng, 0.45, 0.7);
    for (std::size_t r = 0; r < S; ++r)
      for (std::size_t c = 0; c < S; ++c) {
        const std::size_t i = r * S + c;
        const double t = (terrain[i] - t_lo) / t_span;
        std::array<double, 3> rgb;
        if (owner[i] >= 0)
          rgb.fill(roof[static_cast<std::size_t>(owner[i])]);
        else if (pre_water[i])
          rgb = {0.06, 0.12, 0.22};
        else
          rgb = {0.3 + 0.1 * t, 0.42 + 0.1 * t, 0.22};
        for (std::size_t k = 0; k < 3; ++k)
          s.vhr.at(k, r, c) = static_cast<float>(std::clamp(rgb[k] + uniform(rng, -0.03, 0.03), 0.0, 1.0));
      }
  }

  // Vector layers in world meters; row 0 is the northern edge.
  const double px = cfg.pixel;
  for (std::size_t k = 0; k < rects.size(); ++k) {
    const auto& b = rects[k];
    const double x0 = ox + static_cast<double>(b.c0) * px, x1 = ox + static_cast<double>(b.c0 + b.w) * px;
    const double y1 = oy - static_cast<double>(b.r0) * px, y0 = oy - static_cast<double>(b.r0 + b.h) * px;
    out.fps.push_back(geo::rectangle(static_cast<std::int64_t>(index * 100000 + k + 1), x0, y0, x1, y1));
    const auto cls = out.cls[k];
    if (cls == 0 || uniform01(rng) >= cfg.claim_rate) continue;
    static constexpr double band_lo[] = {0.05, 0.4, 0.75};
    const double pde = band_lo[cls - 1] + uniform(rng, 0, 0.2);
    geo::Point p;
    if (uniform01(rng) < 0.8) {
      p = {uniform(rng, x0 + 0.1 * (x1 - x0), x1 - 0.1 * (x1 - x0)), uniform(rng, y0 + 0.1 * (y1 - y0), y1 - 0.1 * (y1 - y0))};
    } else {
      // Geocoded off the roof: beyond the footprint, within a short walk.
      const double ang = uniform(rng, 0, kTwoPi), d = std::hypot(x1 - x0, y1 - y0) / 2 + uniform(rng, 2, 20);
      const auto c = out.fps.back().centroid;
      p = {c.x + d * std::cos(ang), c.y + d * std::sin(ang)};
    }
    out.points.push_back({0, p.x, p.y, pde});
  }

  out.water_fraction = static_cast<double>(std::count(post_water.begin(), post_water.end(), true)) / static_cast<double>(P);
  char id[32];
  std::snprintf(id, sizeof id, "chip_%04zu", index);
  s.id = id;
  out.chip = std::move(s);
  return out;
}

}  // namespace

SynthEvent synth_event(std::uint64_t seed, std::size_t n_chips, const SynthConfig& cfg) {
  if (cfg.size == 0 || cfg.size % 64 != 0) throw UsageError("chip size must be a positive multiple of 64");
  if (!(cfg.pixel > 0)) throw UsageError("pixel size must be positive");
  if (!(cfg.water_min > 0 && cfg.water_min <= cfg.water_max && cfg.water_max < 1))
    throw UsageError("water fraction band must satisfy 0 < min <= max < 1");
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n_chips))));
  const double extent = static_cast<double>(cfg.size) * cfg.pixel;
  SynthEvent ev;
  for (std::size_t i = 0; i < n_chips; ++i) {
    auto part = synth_chip(seed, i, cfg, static_cast<double>(i % cols) * extent, 0.0 - static_cast<double>(i / cols) * extent);
    ev.chips.push_back(std::move(part.chip));
    ev.water_fraction.push_back(part.water_fraction);
    ev.footprints.insert(ev.footprints.end(), part.fps.begin(), part.fps.end());
    ev.true_class.insert(ev.true_class.end(), part.cls.begin(), part.cls.end());
    for (auto& p : part.points) {
      p.id = static_cast<std::int64_t>(ev.points.size() + 1);
      ev.points.push_back(p);
    }
  }
  return ev;
}

void write_event(const std::filesystem::path& dir, const SynthEvent& ev, std::uint64_t seed, const SynthConfig& cfg) {
  std::filesystem::create_directories(dir / "chips");
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& c : ev.chips) {
    write_chip(dir / "chips" / c.id, c);
    ids.push_back(c.id);
  }
  geo::write_json(dir / "footprints.geojson", geo::footprints_to_geojson(ev.footprints));
  gt::write_points_csv(dir / "points.csv", ev.points);
  geo::write_json(dir / "truth.geojson", gt::class_layer_to_geojson(ev.footprints, ev.true_class));
  geo::write_json(dir / "event.json", {{"seed", seed},
                                       {"config", synth_config_to_json(cfg)},
                                       {"chips", ids},
                                       {"footprints", ev.footprints.size()},
                                       {"points", ev.points.size()}});
}

std::vector<ChipSample> read_event_chips(const std::filesystem::path& dir) {
  const auto ev = geo::read_json(dir / "event.json");
  std::vector<ChipSample> chips;
  try {
    for (const auto& id : ev.at("chips")) chips.push_back(read_chip(dir / "chips" / id.get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    throw DataError((dir / "event.json").string() + ": " + e.what());
  }
  return chips;
}

}  // namespace fds::data
