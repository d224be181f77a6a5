#include "fds/fds.h"

#include <cstdlib>
#include <cstring>
#include <optional>
#include <string>

#include "common/errors.hpp"
#include "common/parallel.hpp"
#include "pipeline/pipeline.hpp"
#include "selftest/selftest.hpp"

struct fds_run {
  fds::pipeline::Run run;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
fds_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return FDS_OK;
  } catch (const fds::UsageError& e) {
    g_last_error = e.what();
    return FDS_ERR_USAGE;
  } catch (const fds::ShapeError& e) {
    g_last_error = e.what();
    return FDS_ERR_USAGE;
  } catch (const fds::NumericError& e) {
    g_last_error = e.what();
    return FDS_ERR_NUMERIC;
  } catch (const fds::DataError& e) {
    g_last_error = e.what();
    return FDS_ERR_DATA;
  } catch (const nlohmann::json::exception& e) {
    g_last_error = std::string("malformed JSON: ") + e.what();
    return FDS_ERR_DATA;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return FDS_ERR_DATA;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return FDS_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return FDS_ERR_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw fds::UsageError(what);
}

nlohmann::json parse_json(const char* text, const char* what) {
  if (!text || !*text) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw fds::UsageError(std::string(what) + ": " + e.what());
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void emit(char** out, const nlohmann::json& j) {
  if (out) *out = dup_string(j.dump(2));
}

unsigned workers(unsigned threads) { return threads == 0 ? fds::default_thread_count() : threads; }

std::optional<std::filesystem::path> optional_path(const char* p) {
  if (!p || !*p) return std::nullopt;
  return std::filesystem::path(p);
}

fds::gt::ImputeConfig impute_config(const nlohmann::json& j) {
  fds::gt::ImputeConfig c;
  if (!j.is_object()) throw fds::UsageError("impute config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "k") c.k = v.get<std::size_t>();
      else if (key == "d") c.d = v.get<double>();
      else if (key == "k_min") c.k_min = v.get<std::size_t>();
      else if (key == "d_max") c.d_max = v.get<double>();
      else if (key == "classes") c.classes = v.get<std::size_t>();
      else throw fds::UsageError("unknown impute config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw fds::UsageError(std::string("impute config: ") + e.what());
  }
  if (c.k == 0 || c.k_min == 0 || !(c.d > 0) || !(c.d_max > 0) || c.classes == 0)
    throw fds::UsageError("impute config: k, k_min, d, d_max and classes must be positive");
  return c;
}

}  // namespace

extern "C" {

const char* fds_version(void) { return "0.1.0"; }

const char* fds_last_error(void) { return g_last_error.c_str(); }

void fds_string_free(char* s) { std::free(s); }

fds_status fds_synth(const char* out_dir, uint64_t seed, size_t chips, const char* config_json) {
  return guarded([&] {
    require(out_dir, "out_dir is required");
    require(chips > 0, "chips must be positive");
    const auto cfg = fds::data::synth_config_from_json(parse_json(config_json, "synth config"));
    fds::pipeline::synth(out_dir, seed, chips, cfg);
  });
}

fds_status fds_impute(const char* footprints, const char* points_csv, const char* config_json, const char* out_dir,
                      char** summary_json) {
  return guarded([&] {
    require(footprints && points_csv && out_dir, "footprints, points and out_dir are required");
    const auto s = fds::pipeline::impute(footprints, points_csv, impute_config(parse_json(config_json, "impute config")),
                                         out_dir);
    emit(summary_json, {{"footprints", s.footprints}, {"by_source", s.by_source}, {"class_counts", s.class_counts}});
  });
}

fds_status fds_train(const char* event_dir, const char* config_json, const char* labels, const char* out_dir,
                     char** summary_json) {
  return guarded([&] {
    require(event_dir && out_dir, "event_dir and out_dir are required");
    const auto cfg = fds::pipeline::run_config_from_json(parse_json(config_json, "run config"));
    const auto o = fds::pipeline::train(event_dir, cfg, out_dir, optional_path(labels));
    emit(summary_json, {{"steps", o.steps}, {"final_loss", o.final_loss}, {"eval", fds::train::report_to_json(o.eval)}});
  });
}

fds_status fds_run_load(const char* run_dir, fds_run** out) {
  return guarded([&] {
    require(run_dir && out, "run_dir and out are required");
    *out = nullptr;
    *out = new fds_run{fds::pipeline::load_run(run_dir)};
  });
}

void fds_run_free(fds_run* run) { delete run; }

fds_status fds_run_evaluate(const fds_run* run, const char* event_dir, const char* labels, const char* split,
                            unsigned threads, char** report_json) {
  return guarded([&] {
    require(run && event_dir, "run and event_dir are required");
    const auto ev = fds::pipeline::load_event(event_dir, optional_path(labels));
    const std::string which = split ? split : "test";
    auto j = fds::train::report_to_json(fds::pipeline::evaluate(run->run, ev, which, workers(threads)));
    j["split"] = which;
    emit(report_json, j);
  });
}

fds_status fds_run_predict(const fds_run* run, const char* event_dir, const char* out_dir, unsigned threads) {
  return guarded([&] {
    require(run && event_dir && out_dir, "run, event_dir and out_dir are required");
    fds::pipeline::predict(run->run, event_dir, out_dir, workers(threads));
  });
}

fds_status fds_run_predict_tile(const fds_run* run, size_t height, size_t width, const float* pre_sar,
                                const float* post_sar, const float* vhr, const uint8_t* risk, uint8_t* bda, uint8_t* fm,
                                uint8_t* loc) {
  return guarded([&] {
    require(run && pre_sar && post_sar && risk, "run, pre_sar, post_sar and risk are required");
    require(height > 0 && width > 0, "tile extents must be positive");
    namespace d = fds::data;
    d::ChipSample s;
    s.id = "tile";
    s.grid = {width, height, 0.0, static_cast<double>(height), 1.0};
    const std::size_t P = height * width;
    auto floats = [&](const float* src, std::size_t channels) {
      d::FloatRaster r(channels, height, width, d::kNoDataValue);
      if (src)
        for (std::size_t i = 0; i < channels * P; ++i) r.data[i] = src[i];
      return r;
    };
    s.pre_sar = floats(pre_sar, d::kSarChannels);
    s.post_sar = floats(post_sar, d::kSarChannels);
    s.vhr = floats(vhr, d::kVhrChannels);
    s.risk = d::ByteRaster(1, height, width);
    std::memcpy(s.risk.data.data(), risk, P);
    s.bda = s.fm = s.loc = d::ByteRaster(1, height, width, fds::geo::kNoData);
    s.validate();
    const std::vector<d::ChipSample> one{d::normalize(s, run->run.stats)};
    const auto pred = fds::train::predict(run->run.net, one, 1);
    auto copy = [&](const std::optional<fds::geo::LabelRaster>& src, uint8_t* dst) {
      if (!dst) return;
      if (src) std::memcpy(dst, src->values.data(), P);
      else std::memset(dst, fds::geo::kNoData, P);
    };
    copy(pred[0].bda, bda);
    copy(pred[0].fm, fm);
    copy(pred[0].loc, loc);
  });
}

fds_status fds_aggregate(const char* pred_dir, const char* footprints, const char* stat, size_t min_pixels,
                         double var_threshold, unsigned threads, const char* out_geojson) {
  return guarded([&] {
    require(pred_dir && footprints && out_geojson, "pred_dir, footprints and out_geojson are required");
    require(var_threshold >= 0, "var_threshold must be non-negative");
    const auto s = fds::damage::parse_stat(stat ? stat : "median");
    const fds::damage::QualityConfig q{min_pixels, var_threshold};
    fds::geo::write_json(out_geojson, fds::pipeline::aggregate(pred_dir, footprints, s, q, workers(threads)));
  });
}

fds_status fds_aggregate_raster(const uint8_t* labels, size_t width, size_t height, double origin_x, double origin_y,
                                double pixel, const char* footprints_geojson, const char* stat, char** geojson_out) {
  return guarded([&] {
    require(labels && footprints_geojson && geojson_out, "labels, footprints and geojson_out are required");
    fds::geo::LabelRaster r{{width, height, origin_x, origin_y, pixel}, std::vector<std::uint8_t>(labels, labels + width * height)};
    const auto fps = fds::geo::footprints_from_geojson(nlohmann::json::parse(footprints_geojson));
    const auto s = fds::damage::parse_stat(stat ? stat : "median");
    auto j = fds::damage::export_geojson(fds::damage::aggregate(r, fps, s), fps, false);
    j["stat"] = fds::damage::stat_name(s);
    *geojson_out = dup_string(j.dump(2));
  });
}

fds_status fds_export(const char* records, const char* footprints, int style, const char* out_geojson) {
  return guarded([&] {
    require(records && footprints && out_geojson, "records, footprints and out_geojson are required");
    fds::geo::write_json(out_geojson, fds::pipeline::export_map(records, footprints, style != 0));
  });
}

fds_status fds_selftest(int* passed, char** report_json) {
  return guarded([&] {
    const auto checks = fds::selftest::run();
    if (passed) *passed = fds::selftest::all_passed(checks) ? 1 : 0;
    emit(report_json, fds::selftest::to_json(checks));
  });
}

}  // extern "C"
