#include "pipeline/pipeline.hpp"

#include <fstream>
#include <set>

#include "common/errors.hpp"
#include "geo/raster.hpp"

namespace fds::pipeline {

nlohmann::json run_config_to_json(const RunConfig& c) {
  return {{"train", train::train_config_to_json(c.train)},
          {"data", {{"tile", c.tile}, {"split", c.split}}},
          {"eval", {{"every", c.eval_every}, {"stat", damage::stat_name(c.stat)}}}};
}

RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c) {
  if (!j.is_object()) throw UsageError("run config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "train") {
        c.train = train::train_config_from_json(v, c.train);
      } else if (key == "data") {
        for (const auto& [k, dv] : v.items()) {
          if (k == "tile") c.tile = dv.get<std::size_t>();
          else if (k == "split") c.split = dv.get<std::array<double, 3>>();
          else throw UsageError("unknown data config key '" + k + "'");
        }
      } else if (key == "eval") {
        for (const auto& [k, ev] : v.items()) {
          if (k == "every") c.eval_every = ev.get<std::size_t>();
          else if (k == "stat") c.stat = damage::parse_stat(ev.get<std::string>());
          else throw UsageError("unknown eval config key '" + k + "'");
        }
      } else {
        throw UsageError("unknown run config section '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("run config: ") + e.what());
  }
  if (c.tile == 0) throw UsageError("data.tile must be positive");
  return c;
}

void synth(const fs::path& out, std::uint64_t seed, std::size_t chips, const data::SynthConfig& cfg) {
  data::write_event(out, data::synth_event(seed, chips, cfg), seed, cfg);
}

namespace {

std::vector<geo::Footprint> read_footprints(const fs::path& p) {
  try {
    return geo::footprints_from_geojson(geo::read_json(p));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

}  // namespace

ImputeSummary impute(const fs::path& footprints, const fs::path& points, const gt::ImputeConfig& cfg, const fs::path& out) {
  const auto fps = read_footprints(footprints);
  const auto pts = gt::read_points_csv(points);
  const auto r = gt::run_pipeline(pts, fps, cfg);
  fs::create_directories(out);
  geo::write_json(out / "assignments.geojson", gt::assignments_to_geojson(r.assignments, fps));

  std::vector<double> pdes;
  for (const auto& a : r.assignments)
    if (a.pde) pdes.push_back(*a.pde);
  nlohmann::json bins = {{"classes", cfg.classes}, {"k", cfg.k}, {"d", cfg.d}, {"k_min", cfg.k_min}, {"d_max", cfg.d_max}};
  if (r.bins) {
    bins["centroids"] = r.bins->centroids;
    bins["upper_bounds"] = r.bins->upper_bounds;
    bins["wcss"] = r.bins->wcss;
    bins["elbow"] = gt::elbow_curve(pdes);
  } else {
    bins["centroids"] = nullptr;
  }
  geo::write_json(out / "bins.json", bins);

  ImputeSummary s;
  s.footprints = fps.size();
  s.class_counts.assign(cfg.classes + 1, 0);
  for (const auto& a : r.assignments) {
    ++s.by_source[gt::source_name(a.source)];
    ++s.class_counts.at(a.damage_class);
  }
  return s;
}

Event load_event(const fs::path& dir, const std::optional<fs::path>& labels) {
  Event ev;
  ev.chips = data::read_event_chips(dir);
  ev.footprints = read_footprints(dir / "footprints.geojson");
  ev.truth = gt::classes_from_geojson(geo::read_json(labels ? *labels : dir / "truth.geojson"));
  for (const auto& [id, cls] : ev.truth)
    if (cls > 3) throw DataError("damage class " + std::to_string(cls) + " for footprint " + std::to_string(id));
  if (labels) {
    std::vector<gt::DamageAssignment> a;
    for (const auto& f : ev.footprints) {
      const auto it = ev.truth.find(f.id);
      a.push_back({f.id, std::nullopt, gt::Source::None, it == ev.truth.end() ? std::uint8_t{0} : it->second});
    }
    for (auto& c : ev.chips) {
      c.bda.data = gt::rasterize_labels(a, ev.footprints, c.grid, gt::RasterTask::Bda);
      c.loc.data = gt::rasterize_labels(a, ev.footprints, c.grid, gt::RasterTask::Loc);
    }
  }
  return ev;
}

namespace {

std::vector<std::string> chip_ids(const Event& ev) {
  std::vector<std::string> ids;
  for (const auto& c : ev.chips) ids.push_back(c.id);
  return ids;
}

const std::vector<std::string>& pick(const data::Split& s, const std::string& which) {
  if (which == "train") return s.train;
  if (which == "val") return s.val;
  if (which == "test") return s.test;
  throw UsageError("unknown split '" + which + "' (expected train, val, test or all)");
}

std::vector<data::ChipSample> tiles_of(const Event& ev, const std::vector<std::string>& ids, std::size_t tile) {
  const std::set<std::string> wanted(ids.begin(), ids.end());
  std::vector<data::ChipSample> out;
  for (const auto& c : ev.chips)
    if (wanted.count(c.id))
      for (auto& t : data::grid_partition(c, tile)) out.push_back(std::move(t));
  return out;
}

void normalize_all(std::vector<data::ChipSample>& tiles, const data::NormStats& stats) {
  for (auto& t : tiles) t = data::normalize(t, stats);
}

double mean_loss(const std::vector<train::TracePoint>& t) {
  double s = 0;
  for (const auto& p : t) s += p.loss;
  return t.empty() ? 0.0 : s / static_cast<double>(t.size());
}

double harmonic(const metrics::MetricSet& m) { return m.standard.harmonic_mean; }

}  // namespace

TrainOutcome train(const fs::path& event_dir, const RunConfig& cfg, const fs::path& out,
                   const std::optional<fs::path>& labels) {
  cfg.train.validate();
  const auto ev = load_event(event_dir, labels);
  const auto split = data::split(chip_ids(ev), {cfg.split, cfg.train.seed});
  auto train_tiles = tiles_of(ev, split.train, cfg.tile);
  auto val_tiles = tiles_of(ev, split.val, cfg.tile);
  auto test_tiles = tiles_of(ev, split.test, cfg.tile);
  const auto stats = data::compute_stats(train_tiles);
  normalize_all(train_tiles, stats);
  normalize_all(val_tiles, stats);
  normalize_all(test_tiles, stats);

  fs::create_directories(out);
  model::FloodDamageNet net(cfg.train.model_config());
  train::Trainer trainer(net, cfg.train);
  const train::BuildingTruth truth{ev.footprints, ev.truth};

  std::vector<train::TracePoint> trace;
  std::ofstream metrics_csv(out / "metrics.csv");
  metrics_csv << "epoch,step,train_loss,val_loss,val_bda_hmean_f1,val_building_hmean_f1\n";
  while (!trainer.finished()) {
    const auto t = trainer.train_epoch(train_tiles);
    trace.insert(trace.end(), t.begin(), t.end());
    const std::size_t epoch = trainer.epochs_done();
    if (cfg.eval_every != 0 && !val_tiles.empty() && (epoch % cfg.eval_every == 0 || trainer.finished())) {
      const auto r = train::evaluate(net, val_tiles, trainer.loss_config(), &truth, cfg.stat, cfg.train.threads);
      const auto bda = r.pixel.find("bda");
      nlohmann::json row = {epoch, trainer.steps(), mean_loss(t), r.loss,
                            bda == r.pixel.end() ? nlohmann::json(nullptr) : nlohmann::json(harmonic(bda->second)),
                            r.building ? nlohmann::json(harmonic(*r.building)) : nlohmann::json(nullptr)};
      for (std::size_t i = 0; i < row.size(); ++i) metrics_csv << (i ? "," : "") << row[i].dump();
      metrics_csv << '\n';
    }
  }
  if (!metrics_csv) throw DataError("write failed: " + (out / "metrics.csv").string());

  // The checkpoint stores float32; rounding first makes the in-memory model
  // the one a later load reproduces.
  net.params().round_to_float();
  save_checkpoint(net.params(), out / "weights.fdsw");
  train::write_trace_csv(out / "trace.csv", trace);

  auto saved = cfg;
  saved.train.loss = trainer.loss_config();
  // The worker count never changes results, so it stays out of the record.
  auto saved_json = run_config_to_json(saved);
  saved_json["train"].erase("threads");
  geo::write_json(out / "run.json", {{"config", saved_json},
                                     {"stats", data::stats_to_json(stats)},
                                     {"split", {{"train", split.train}, {"val", split.val}, {"test", split.test}}},
                                     {"steps", trainer.steps()},
                                     {"labels", labels ? labels->filename().string() : std::string("truth.geojson")}});

  TrainOutcome o;
  o.steps = trainer.steps();
  o.final_loss = trace.empty() ? 0.0 : trace.back().loss;
  const auto& eval_tiles = !test_tiles.empty() ? test_tiles : val_tiles;
  if (!eval_tiles.empty()) {
    o.eval = train::evaluate(net, eval_tiles, trainer.loss_config(), &truth, cfg.stat, cfg.train.threads);
    auto j = train::report_to_json(o.eval);
    j["split"] = !test_tiles.empty() ? "test" : "val";
    geo::write_json(out / "eval.json", j);
  }
  return o;
}

Run load_run(const fs::path& run_dir) {
  const auto j = geo::read_json(run_dir / "run.json");
  try {
    auto cfg = run_config_from_json(j.at("config"));
    data::Split split;
    split.train = j.at("split").at("train").get<std::vector<std::string>>();
    split.val = j.at("split").at("val").get<std::vector<std::string>>();
    split.test = j.at("split").at("test").get<std::vector<std::string>>();
    Run run{cfg, data::stats_from_json(j.at("stats")), std::move(split), model::FloodDamageNet(cfg.train.model_config())};
    load_checkpoint(run.net.params(), run_dir / "weights.fdsw");
    return run;
  } catch (const nlohmann::json::exception& e) {
    throw DataError((run_dir / "run.json").string() + ": " + e.what());
  }
}

std::vector<data::ChipSample> split_tiles(const Run& run, const Event& ev, const std::string& which) {
  auto tiles = tiles_of(ev, which == "all" ? chip_ids(ev) : pick(run.split, which), run.cfg.tile);
  normalize_all(tiles, run.stats);
  return tiles;
}

train::EvalReport evaluate(const Run& run, const Event& ev, const std::string& which, unsigned threads) {
  const auto tiles = split_tiles(run, ev, which);
  if (tiles.empty()) throw UsageError("split '" + which + "' has no chips");
  const train::BuildingTruth truth{ev.footprints, ev.truth};
  return train::evaluate(run.net, tiles, run.cfg.train.loss, &truth, run.cfg.stat, threads);
}

void predict(const Run& run, const fs::path& event_dir, const fs::path& out, unsigned threads) {
  const auto chips = data::read_event_chips(event_dir);
  fs::create_directories(out);
  nlohmann::json index = nlohmann::json::array();
  const std::size_t T = run.cfg.tile;
  for (const auto& chip : chips) {
    auto tiles = data::grid_partition(chip, T);
    normalize_all(tiles, run.stats);
    const auto preds = train::predict(run.net, tiles, threads);
    const std::size_t cols = chip.grid.width / T;
    nlohmann::json heads = nlohmann::json::array();
    for (auto task : model::kTasks) {
      if (!run.net.has_decoder(task)) continue;
      geo::LabelRaster full{chip.grid, std::vector<std::uint8_t>(chip.grid.width * chip.grid.height, geo::kNoData)};
      for (std::size_t t = 0; t < preds.size(); ++t) {
        const auto& p = task == model::Task::Bda ? preds[t].bda : task == model::Task::Fm ? preds[t].fm : preds[t].loc;
        const std::size_t r0 = (t / cols) * T, c0 = (t % cols) * T;
        for (std::size_t r = 0; r < T; ++r)
          for (std::size_t c = 0; c < T; ++c) full.values[(r0 + r) * chip.grid.width + c0 + c] = p->values[r * T + c];
      }
      const std::string name = model::task_name(task);
      geo::write_raster(out / chip.id / (name + ".json"), full);
      heads.push_back(name);
    }
    index.push_back({{"id", chip.id}, {"tasks", heads}});
  }
  geo::write_json(out / "predictions.json", {{"chips", index}});
}

nlohmann::json aggregate(const fs::path& pred_dir, const fs::path& footprints, damage::Stat stat,
                         const damage::QualityConfig& q, unsigned threads) {
  const auto index = geo::read_json(pred_dir / "predictions.json");
  std::vector<geo::LabelRaster> rasters;
  try {
    for (const auto& c : index.at("chips")) {
      const auto tasks = c.at("tasks").get<std::vector<std::string>>();
      if (std::find(tasks.begin(), tasks.end(), "bda") == tasks.end())
        throw DataError((pred_dir / "predictions.json").string() + ": chip " + c.at("id").get<std::string>() +
                        " has no bda prediction");
      rasters.push_back(geo::read_raster(pred_dir / c.at("id").get<std::string>() / "bda.json"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError((pred_dir / "predictions.json").string() + ": " + e.what());
  }
  const auto fps = read_footprints(footprints);
  const auto records = damage::aggregate(rasters, fps, stat, q, threads);
  auto j = damage::export_geojson(records, fps, false);
  j["stat"] = damage::stat_name(stat);
  return j;
}

nlohmann::json export_map(const fs::path& records, const fs::path& footprints, bool style) {
  const auto j = geo::read_json(records);
  std::vector<damage::BuildingDamageRecord> recs;
  try {
    recs = damage::records_from_geojson(j);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(records.string() + ": " + e.what());
  }
  auto out = damage::export_geojson(recs, read_footprints(footprints), style);
  if (j.contains("stat")) out["stat"] = j["stat"];
  return out;
}

}  // namespace fds::pipeline
