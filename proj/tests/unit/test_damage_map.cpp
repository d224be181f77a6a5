#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "common/errors.hpp"
#include "common/rng.hpp"
#include "damage/damage_map.hpp"
#include "oracles.hpp"

using namespace fds;
using namespace fds::damage;
using fds::geo::Footprint;
using fds::geo::LabelRaster;
using fds::test::aggregation_oracle;
using fds::test::random_aggregation_scene;

namespace {

using Labels = std::vector<std::uint8_t>;

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("summary statistics: worked examples") {
  CHECK(summarize(Labels{0, 1, 1, 2, 3}, Stat::Median) == 1);
  CHECK(summarize(Labels{1, 2}, Stat::Median) == 2);
  CHECK(summarize(Labels{2, 1}, Stat::Median) == 2);
  CHECK(summarize(Labels{1, 2}, Stat::Mean) == 2);  // 1.5 rounds up
  CHECK(summarize(Labels{0, 0, 1}, Stat::Mean) == 0);
  CHECK(summarize(Labels{1, 1, 3, 3, 0}, Stat::Mode) == 3);
  CHECK(summarize(Labels{0, 2, 1}, Stat::Max) == 2);
  CHECK_THROWS_AS(summarize(Labels{}, Stat::Median), DataError);
  CHECK(parse_stat("mode") == Stat::Mode);
  CHECK_THROWS_AS(parse_stat("average"), UsageError);
}

TEST_CASE("quality flags") {
  const QualityConfig q;
  CHECK(quality_flags(3, 0.0, q).low_coverage);
  CHECK_FALSE(quality_flags(4, 0.0, q).low_coverage);
  CHECK(quality_flags(4, 2.25, q).high_disagreement);
  CHECK_FALSE(quality_flags(4, 0.5, q).high_disagreement);

  // {0,3,0,3} on a 2x2 footprint, and a uniform {2,2,2,2} one beside it.
  LabelRaster r{{4, 2, 0.0, 2.0, 1.0}, {0, 3, 2, 2, 0, 3, 2, 2}};
  const std::vector<Footprint> fps{geo::rectangle(1, 0, 0, 2, 2), geo::rectangle(2, 2, 0, 4, 2)};
  const auto rec = aggregate(r, fps);
  CHECK(rec[0].pixel_count == 4);
  CHECK(rec[0].label_variance == 2.25);
  CHECK(rec[0].flags == Flags{false, true});
  CHECK(rec[1].damage_class == 2);
  CHECK(rec[1].label_variance == 0.0);
  CHECK(rec[1].flags == Flags{false, false});
}

TEST_CASE("aggregation: no valid pixels and georeference mismatch") {
  LabelRaster r{{4, 4, 0.0, 4.0, 1.0}, Labels(16, geo::kNoData)};
  r.values[0] = 2;
  const std::vector<Footprint> fps{geo::rectangle(5, 1, 1, 3, 3), geo::rectangle(6, 0, 3, 1, 4)};
  const auto rec = aggregate(r, fps);
  CHECK_FALSE(rec[0].damage_class.has_value());
  CHECK(rec[0].pixel_count == 0);
  CHECK(rec[0].flags.low_coverage);
  CHECK(rec[1].damage_class == 2);

  const std::vector<Footprint> far{geo::rectangle(1, 1e5, 1e5, 1e5 + 10, 1e5 + 10)};
  CHECK_THROWS_AS(aggregate(r, far), DataError);
  CHECK(aggregate(r, {}).empty());
}

TEST_CASE("aggregation matches a per-pixel oracle for every statistic") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto s = random_aggregation_scene(seed);
    if (!fds::test::any_footprint_reaches(s)) {
      CHECK_THROWS_AS(aggregate(s.raster, s.fps), DataError);
      continue;
    }
    std::map<Stat, std::vector<BuildingDamageRecord>> by_stat;
    for (auto stat : {Stat::Median, Stat::Mean, Stat::Mode, Stat::Max}) {
      const auto rec = aggregate(s.raster, s.fps, stat);
      REQUIRE(rec.size() == s.fps.size());
      for (std::size_t i = 0; i < rec.size(); ++i) {
        const auto o = aggregation_oracle(s.raster, s.fps[i], stat);
        CHECK(rec[i].footprint_id == s.fps[i].id);
        CHECK(rec[i].damage_class == o.cls);
        CHECK(rec[i].pixel_count == o.count);
        CHECK(rec[i].label_variance == doctest::Approx(o.variance).epsilon(1e-12));
        CHECK(rec[i].flags.low_coverage == (o.count < 4));
        if (std::abs(o.variance - 0.5) > 1e-9) CHECK(rec[i].flags.high_disagreement == (o.variance > 0.5));
      }
      CHECK(aggregate(s.raster, s.fps, stat, {}, 4) == rec);
      by_stat[stat] = rec;
    }
    for (std::size_t i = 0; i < s.fps.size(); ++i) {
      const auto& med = by_stat[Stat::Median][i];
      const auto& mx = by_stat[Stat::Max][i];
      if (med.damage_class) CHECK(*med.damage_class <= *mx.damage_class);
    }
    // Reversing the footprint order reverses the records and nothing else.
    std::vector<Footprint> rev(s.fps.rbegin(), s.fps.rend());
    auto back = aggregate(s.raster, rev, Stat::Median);
    std::reverse(back.begin(), back.end());
    CHECK(back == by_stat[Stat::Median]);
  }
}

TEST_CASE("aggregation over tiles pools each footprint's pixels") {
  // Dyadic pixel size and integer origins keep every pixel center exact, so
  // tile and whole-raster containment agree.
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(seed, "tiles"));
    const std::size_t w = 24, h = 16;
    LabelRaster whole{{w, h, 10.0, 30.0, 0.5}, Labels(w * h)};
    for (auto& v : whole.values)
      v = uniform01(rng) < 0.15 ? geo::kNoData : static_cast<std::uint8_t>(uniform_index(rng, 4));
    std::vector<Footprint> fps;
    for (std::int64_t id = 1; id <= 12; ++id) {
      const double x = 10.0 + uniform(rng, -1, 12), y = 30.0 - uniform(rng, -1, 8);
      fps.push_back(geo::rectangle(id, x, y - uniform(rng, 0.3, 4), x + uniform(rng, 0.3, 5), y));
    }
    // Quadrants split at column 10 and row 6.
    std::vector<LabelRaster> tiles;
    for (auto [r0, r1] : {std::pair<std::size_t, std::size_t>{0, 6}, {6, h}})
      for (auto [c0, c1] : {std::pair<std::size_t, std::size_t>{0, 10}, {10, w}}) {
        LabelRaster t{{c1 - c0, r1 - r0, 10.0 + 0.5 * static_cast<double>(c0), 30.0 - 0.5 * static_cast<double>(r0), 0.5}, {}};
        for (std::size_t r = r0; r < r1; ++r)
          for (std::size_t c = c0; c < c1; ++c) t.values.push_back(whole.at(r, c));
        tiles.push_back(std::move(t));
      }
    for (auto stat : {Stat::Median, Stat::Mean, Stat::Mode, Stat::Max})
      CHECK(aggregate(std::span<const LabelRaster>(tiles), fps, stat) == aggregate(whole, fps, stat));
  }
  const std::vector<Footprint> far{geo::rectangle(1, 1e5, 1e5, 1e5 + 10, 1e5 + 10)};
  const std::vector<LabelRaster> one{LabelRaster{{4, 4, 0.0, 4.0, 1.0}, Labels(16, 0)}};
  CHECK_THROWS_AS(aggregate(std::span<const LabelRaster>(one), far), DataError);
}

TEST_CASE("median, mode and max stay inside the observed multiset") {
  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    Labels v(1 + uniform_index(rng, 12));
    for (auto& x : v) x = static_cast<std::uint8_t>(uniform_index(rng, 4));
    for (auto stat : {Stat::Median, Stat::Mode, Stat::Max})
      CHECK(std::find(v.begin(), v.end(), summarize(v, stat)) != v.end());
    const auto mean = summarize(v, Stat::Mean);
    CHECK(mean >= *std::min_element(v.begin(), v.end()));
    CHECK(mean <= *std::max_element(v.begin(), v.end()));
  }
}

TEST_CASE("GeoJSON export: ordering, styling, round trip, byte stability") {
  const auto s = random_aggregation_scene(3);
  const auto rec = aggregate(s.raster, s.fps);
  const auto j = export_geojson(rec, s.fps);
  REQUIRE(j["features"].size() == rec.size());
  std::int64_t prev = -1;
  for (const auto& f : j["features"]) {
    const auto id = f["properties"]["id"].get<std::int64_t>();
    CHECK(id >= prev);
    prev = id;
    const auto& cls = f["properties"]["damage_class"];
    if (!cls.is_null()) CHECK(f["properties"]["fill"] == class_fill(cls.get<std::uint8_t>()));
  }
  CHECK(j["style"]["fill"]["3"] == "#d00000");
  CHECK(j["style"]["fill"]["0"] == "#d9d9d9");

  auto parsed = records_from_geojson(j);
  auto sorted = rec;
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.footprint_id < b.footprint_id; });
  CHECK(parsed == sorted);

  const auto empty = export_geojson({}, {});
  CHECK(empty["type"] == "FeatureCollection");
  CHECK(empty["features"].empty());
  CHECK(records_from_geojson(empty).empty());
  CHECK_FALSE(export_geojson(rec, s.fps, false)["features"][0]["properties"].contains("fill"));

  const auto dir = std::filesystem::temp_directory_path() / "fds_damage_map";
  std::filesystem::remove_all(dir);
  geo::write_json(dir / "a.geojson", export_geojson(aggregate(s.raster, s.fps), s.fps));
  geo::write_json(dir / "b.geojson", export_geojson(aggregate(s.raster, s.fps), s.fps));
  CHECK(slurp(dir / "a.geojson") == slurp(dir / "b.geojson"));
  CHECK_FALSE(slurp(dir / "a.geojson").empty());

  geo::write_raster(dir / "pred.json", s.raster);
  CHECK(geo::read_raster(dir / "pred.json") == s.raster);
  std::filesystem::resize_file(dir / "pred.u8", 3);
  CHECK_THROWS_AS(geo::read_raster(dir / "pred.json"), DataError);
  std::filesystem::remove_all(dir);
}
